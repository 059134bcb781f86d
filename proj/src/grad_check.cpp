#include "vitbis/grad_check.hpp"

#include <cmath>

#include "vitbis/rng.hpp"

namespace vitbis {

namespace {

// Forward evaluation without gradients: every input becomes a constant leaf.
double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    leaves.push_back(tape.leaf(in.shape, in.data, /*requires_grad=*/false));
  }
  Tensor y = f(tape, leaves);
  if (y.numel() != 1) {
    throw NonScalarOutput("grad_check function must return a scalar, got " +
                          y.shape.str());
  }
  return (*y.data)[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           double h, double tol,
                           std::int64_t max_coords_per_input,
                           std::uint64_t seed) {
  // Analytic pass.
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    leaves.push_back(tape.leaf(in.shape, in.data, /*requires_grad=*/true));
  }
  Tensor y = f(tape, leaves);
  if (y.numel() != 1) {
    throw NonScalarOutput("grad_check function must return a scalar, got " +
                          y.shape.str());
  }
  tape.backward(y);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) analytic.push_back(tape.grad(leaf));

  GradCheckReport report;
  SplitMix64 rng(seed);
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    std::vector<double>& buf = *inputs[ii].data;
    const std::int64_t n = static_cast<std::int64_t>(buf.size());

    std::vector<std::int64_t> coords;
    if (max_coords_per_input > 0 && n > max_coords_per_input) {
      for (std::int64_t c = 0; c < max_coords_per_input; ++c) {
        coords.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n))));
      }
    } else {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t c = 0; c < n; ++c) coords[static_cast<std::size_t>(c)] = c;
    }

    for (std::int64_t c : coords) {
      const double saved = buf[static_cast<std::size_t>(c)];
      buf[static_cast<std::size_t>(c)] = saved + h;
      const double up = eval_scalar(f, inputs);
      buf[static_cast<std::size_t>(c)] = saved - h;
      const double down = eval_scalar(f, inputs);
      buf[static_cast<std::size_t>(c)] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[ii][static_cast<std::size_t>(c)];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-4});
      ++report.coords_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_input = static_cast<std::int64_t>(ii);
        report.worst_coord = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace vitbis
