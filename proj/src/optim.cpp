#include "vitbis/optim.hpp"

#include <cmath>

namespace vitbis {

void OptimConfig::validate() const {
  if (lr < 0.0) throw ConfigMismatch("lr must be non-negative");
  if (weight_decay < 0.0) throw ConfigMismatch("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigMismatch("batch_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigMismatch("betas must lie in [0,1)");
  }
  if (adam_eps <= 0.0) throw ConfigMismatch("adam_eps must be positive");
  if (max_steps < 1) throw ConfigMismatch("max_steps must be positive");
}

void AdamState::init(const std::vector<Param>& params) {
  m.clear();
  v.clear();
  t = 0;
  for (const Param& p : params) {
    m.emplace_back(p.value->size(), 0.0);
    v.emplace_back(p.value->size(), 0.0);
  }
}

bool AdamState::matches(const std::vector<Param>& params) const {
  if (m.size() != params.size() || v.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m[i].size() != params[i].value->size()) return false;
    if (v[i].size() != params[i].value->size()) return false;
  }
  return true;
}

bool adam_step(std::vector<Param>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               const OptimConfig& cfg) {
  cfg.validate();
  if (grads.size() != params.size() || !state.matches(params)) {
    throw ShapeMismatch("optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params[i].value->size()) {
      throw ShapeMismatch("gradient size mismatch for " + params[i].name);
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) return false;
    }
  }

  const std::int64_t t = ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& p = *params[i].value;
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    const std::vector<double>& grad = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double p0 = p[j];
      double g = grad[j];
      if (cfg.coupled_weight_decay) g += cfg.weight_decay * p0;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double update = cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      if (!cfg.coupled_weight_decay) update += cfg.lr * cfg.weight_decay * p0;
      p[j] = p0 - update;
    }
  }
  return true;
}

}  // namespace vitbis
