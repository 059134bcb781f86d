#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitbis {

// ---------------------------------------------------------------------------
// Errors. Everything the library throws derives from Error, so callers can
// catch one type at the boundary and map it to an exit code.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct NonIntegralOutput : Error { using Error::Error; };
struct NonScalarOutput : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };
struct BiasGridMismatch : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct CropTooLarge : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Shape: up to rank 5, extents strictly positive.
// ---------------------------------------------------------------------------

struct Shape {
  static constexpr std::int64_t kMaxRank = 5;

  std::vector<std::int64_t> dims;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> d) : dims(d) { validate(); }
  explicit Shape(std::vector<std::int64_t> d) : dims(std::move(d)) { validate(); }

  std::int64_t rank() const { return static_cast<std::int64_t>(dims.size()); }
  std::int64_t operator[](std::int64_t i) const { return dims[static_cast<std::size_t>(i)]; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return dims != o.dims; }

  std::string str() const;

 private:
  void validate() const;
};

// Row-major strides for a shape.
std::vector<std::int64_t> row_major_strides(const Shape& s);

class Tape;

// ---------------------------------------------------------------------------
// Tensor: f64 values in row-major order. The data buffer is shared; ops never
// mutate their inputs. A tensor either lives on a tape (node >= 0) or is a
// constant (tape == nullptr, node == -1).
// ---------------------------------------------------------------------------

struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  std::int64_t node = -1;

  Tensor() = default;

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor from(const Shape& s, std::vector<double> values);

  bool defined() const { return data != nullptr; }
  std::int64_t numel() const { return shape.numel(); }

  const std::vector<double>& values() const { return *data; }
  std::vector<double>& mutable_values() { return *data; }

  double at(std::initializer_list<std::int64_t> idx) const;
  bool all_finite() const;
};

// ---------------------------------------------------------------------------
// Tape: reverse-mode record of one forward pass. Ops append nodes in
// topological order; backward() walks the nodes once, in reverse, and each
// node's closure accumulates into the gradient buffers of its inputs.
// ---------------------------------------------------------------------------

class Tape {
 public:
  // Closure args: the tape (to reach input gradient buffers) and this node's
  // accumulated gradient.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  // A leaf wraps an externally owned buffer. With requires_grad the leaf
  // gets a node (and therefore a gradient); otherwise it is a constant.
  Tensor leaf(const Shape& s, std::shared_ptr<std::vector<double>> data,
              bool requires_grad);

  std::int64_t record(const Shape& s, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse
  // order. The loss must be a scalar living on this tape.
  void backward(const Tensor& loss);

  // Gradient of a tensor after backward(). Zero-filled if the tensor never
  // received any gradient.
  const std::vector<double>& grad(const Tensor& t);

  // Accumulation target for a node, allocated lazily.
  std::vector<double>& grad_buffer(std::int64_t node);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    BackwardFn backward;
    std::vector<double> grad;  // empty until touched
  };
  std::vector<Node> nodes_;
};

}  // namespace vitbis
