#pragma once

#include <cstdint>
#include <vector>

#include "vitbis/model.hpp"

namespace vitbis {

struct OptimConfig {
  double lr = 1.5e-4;
  double weight_decay = 5e-3;
  std::int64_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t max_steps = 300;
  // Decoupled decay subtracts lr*wd*p alongside the Adam update; the coupled
  // variant instead folds wd*p into the gradient before the moments.
  bool coupled_weight_decay = false;

  void validate() const;  // throws ConfigMismatch
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t t = 0;

  void init(const std::vector<Param>& params);
  bool matches(const std::vector<Param>& params) const;
};

// One Adam step with bias correction. Returns false (and leaves parameters,
// moments, and t untouched) when any gradient entry is non-finite, so a bad
// step can be skipped and logged rather than poisoning the run.
bool adam_step(std::vector<Param>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               const OptimConfig& cfg);

}  // namespace vitbis
