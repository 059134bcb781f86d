#include "vitbis/losses.hpp"

#include <cmath>

#include "vitbis/ops.hpp"

namespace vitbis {

namespace {

void check_same_shape(const Tensor& p, const Tensor& y) {
  if (p.shape != y.shape) {
    throw ShapeMismatch("loss inputs " + p.shape.str() + " vs " + y.shape.str());
  }
}

void check_binary(const Tensor& y) {
  for (double v : *y.data) {
    if (v != 0.0 && v != 1.0) {
      throw DomainError("targets must be exactly 0 or 1");
    }
  }
}

void check_unit_range(const Tensor& p) {
  for (double v : *p.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("probabilities must lie in [0,1]");
    }
  }
}

}  // namespace

Tensor bce_loss(const Tensor& p, const Tensor& y) {
  check_same_shape(p, y);
  check_unit_range(p);
  check_binary(y);
  Tensor pc = clamp(p, kProbFloor, 1.0 - kProbFloor);
  Tensor pos = mul(y, log(pc));
  Tensor neg = mul(sub(1.0, y), log(sub(1.0, pc)));
  return scale(reduce_mean(add(pos, neg)), -1.0);
}

Tensor dice_loss(const Tensor& p, const Tensor& y, double eps,
                 bool verbatim_numerator) {
  check_same_shape(p, y);
  check_unit_range(p);
  check_binary(y);
  const double k = verbatim_numerator ? 1.0 : 2.0;
  Tensor inter = add(scale(reduce_sum(mul(p, y)), k), eps);
  Tensor denom = add(add(reduce_sum(p), reduce_sum(y)), eps);
  return sub(1.0, div(inter, denom));
}

Tensor combined_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg) {
  return add(bce_loss(p, y), dice_loss(p, y, cfg.epsilon));
}

Tensor voxelwise_combined_loss(const Tensor& probs, const Tensor& onehot,
                               const LossConfig& cfg, bool trainable) {
  if (probs.shape.rank() != 2) {
    throw ShapeMismatch("voxel-wise loss expects [voxels, classes]");
  }
  check_same_shape(probs, onehot);
  const std::int64_t I = probs.shape[0], J = probs.shape[1];
  // Rows must be distributions; targets one-hot.
  for (std::int64_t i = 0; i < I; ++i) {
    double psum = 0.0, gsum = 0.0;
    for (std::int64_t j = 0; j < J; ++j) {
      const double pv = (*probs.data)[i * J + j];
      const double gv = (*onehot.data)[i * J + j];
      if (!(pv >= 0.0 && pv <= 1.0)) throw DomainError("probabilities must lie in [0,1]");
      if (gv != 0.0 && gv != 1.0) throw DomainError("targets must be one-hot");
      psum += pv;
      gsum += gv;
    }
    if (std::abs(psum - 1.0) > 1e-6) {
      throw DomainError("probability rows must sum to 1");
    }
    if (gsum != 1.0) throw DomainError("targets must be one-hot");
  }

  Tensor gy = reduce_sum(mul(onehot, probs), 0);                       // [J]
  Tensor gg = reduce_sum(mul(onehot, onehot), 0);
  Tensor yy = reduce_sum(mul(probs, probs), 0);
  Tensor dice_sum = reduce_sum(div(gy, add(gg, yy)));                  // scalar
  Tensor dice_term = scale(dice_sum, cfg.alpha * 2.0 / static_cast<double>(J));

  Tensor ce_sum = reduce_sum(mul(onehot, log(clamp(probs, kProbFloor, 1.0 - kProbFloor))));
  const double ce_sign = trainable ? -1.0 : 1.0;
  Tensor ce_term = scale(ce_sum, ce_sign * cfg.beta / static_cast<double>(I));

  return add(sub(1.0, dice_term), ce_term);
}

}  // namespace vitbis
