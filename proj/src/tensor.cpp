#include "vitbis/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vitbis {

void Shape::validate() const {
  if (rank() > kMaxRank) {
    throw ShapeMismatch("shape rank " + std::to_string(rank()) +
                        " exceeds maximum rank " + std::to_string(kMaxRank));
  }
  for (std::int64_t d : dims) {
    if (d <= 0) throw ShapeMismatch("shape extent must be positive, got " + std::to_string(d));
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ",";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(static_cast<std::size_t>(s.rank()), 1);
  for (std::int64_t i = s.rank() - 2; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i + 1)] * s[i + 1];
  }
  return st;
}

Tensor Tensor::zeros(const Shape& s) {
  Tensor t;
  t.shape = s;
  t.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.numel()), 0.0);
  return t;
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t = zeros(s);
  for (double& x : *t.data) x = v;
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != s.numel()) {
    throw ShapeMismatch("value count " + std::to_string(values.size()) +
                        " does not match shape " + s.str());
  }
  Tensor t;
  t.shape = s;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<std::int64_t>(idx.size()) != shape.rank()) {
    throw ShapeMismatch("index rank does not match tensor rank");
  }
  const auto strides = row_major_strides(shape);
  std::int64_t off = 0;
  std::size_t k = 0;
  for (std::int64_t i : idx) {
    if (i < 0 || i >= shape[static_cast<std::int64_t>(k)]) {
      throw ShapeMismatch("index out of range");
    }
    off += i * strides[k++];
  }
  return (*data)[static_cast<std::size_t>(off)];
}

bool Tensor::all_finite() const {
  for (double v : *data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tape::leaf(const Shape& s, std::shared_ptr<std::vector<double>> data,
                  bool requires_grad) {
  if (!data || static_cast<std::int64_t>(data->size()) != s.numel()) {
    throw ShapeMismatch("leaf buffer does not match shape " + s.str());
  }
  Tensor t;
  t.shape = s;
  t.data = std::move(data);
  if (requires_grad) {
    t.tape = this;
    t.node = record(s, BackwardFn{});
  }
  return t;
}

std::int64_t Tape::record(const Shape& s, BackwardFn backward) {
  nodes_.push_back(Node{s, std::move(backward), {}});
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buffer(std::int64_t node) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.shape.numel()), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape != this || loss.node < 0) {
    throw NonScalarOutput("backward target does not live on this tape");
  }
  if (loss.numel() != 1) {
    throw NonScalarOutput("backward requires a scalar, got shape " + loss.shape.str());
  }
  grad_buffer(loss.node)[0] = 1.0;
  for (std::int64_t i = loss.node; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

const std::vector<double>& Tape::grad(const Tensor& t) {
  if (t.tape != this || t.node < 0) {
    throw ShapeMismatch("gradient requested for a tensor not on this tape");
  }
  return grad_buffer(t.node);
}

}  // namespace vitbis
