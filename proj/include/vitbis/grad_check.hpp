#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vitbis/tensor.hpp"

namespace vitbis {

// Builds a scalar loss on the given tape from leaves bound to the checker's
// input buffers. The leaves arrive in the same order as the inputs.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
  // Location of the worst coordinate, for debugging.
  std::int64_t worst_input = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference gradient check. Analytic gradients come from one tape
// backward pass; numeric gradients from (f(x+h) - f(x-h)) / 2h evaluated
// without a tape. Relative error uses an absolute floor so coordinates with
// tiny true gradients compare against the step-size noise fairly:
//   err = |a - n| / max(|a|, |n|, 1e-4).
// max_coords_per_input > 0 restricts the numeric sweep to that many
// uniformly sampled coordinates per input (seeded, reproducible).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           double h = 1e-5, double tol = 1e-4,
                           std::int64_t max_coords_per_input = 0,
                           std::uint64_t seed = 0);

}  // namespace vitbis
