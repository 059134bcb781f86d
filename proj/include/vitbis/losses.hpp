#pragma once

#include "vitbis/tensor.hpp"

namespace vitbis {

struct LossConfig {
  double alpha = 0.5;    // dice-term weight in the voxel-wise loss
  double beta = 0.5;     // cross-entropy weight in the voxel-wise loss
  double epsilon = 1e-4; // dice smoothing
};

// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before any log.
inline constexpr double kProbFloor = 1e-7;

// Mean binary cross entropy over all elements. p in [0,1], y binary.
Tensor bce_loss(const Tensor& p, const Tensor& y);

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps). With verbatim_numerator
// the leading 2 is dropped, which caps the best achievable overlap score at
// 1/2; kept selectable for comparison.
Tensor dice_loss(const Tensor& p, const Tensor& y, double eps = 1e-4,
                 bool verbatim_numerator = false);

// bce_loss + dice_loss, exactly.
Tensor combined_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg = {});

// Voxel-wise combined loss over row-normalized class probabilities
// Y [I,J] against one-hot targets G [I,J]:
//   1 - alpha * (2/J) * sum_j sum_i(G*Y) / (sum_i G^2 + sum_i Y^2)
//     + beta * (1/I) * sum(G * log Y)
// As written the cross-entropy term rewards low confidence; the trainable
// variant flips its sign so both terms shrink together.
Tensor voxelwise_combined_loss(const Tensor& probs, const Tensor& onehot,
                               const LossConfig& cfg = {}, bool trainable = false);

}  // namespace vitbis
