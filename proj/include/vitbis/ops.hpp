#pragma once

#include <vector>

#include "vitbis/tensor.hpp"

namespace vitbis {

// Differentiable ops over f64 tensors. Every op computes its result eagerly
// and, when an input lives on a tape, records a backward closure. Inputs are
// never mutated. Binary ops broadcast the second operand along leading axes:
// after stripping leading extents of 1 from b, b's shape must equal the
// trailing dims of a.

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [m,k]@[k,n]; [B,m,k]@[k,n]; [B,m,k]@[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x [B,Cin,H,W], w [Cout,Cin,k,k], bias [Cout] or undefined. Cross
// correlation (no kernel flip). Throws NonIntegralOutput when the output
// extent (H + 2*pad - k) / stride + 1 is not integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t stride = 1, std::int64_t pad = 0);

// x [B,Cin,H,W], w [Cin,Cout,k,k], output [B,Cout,stride*H,stride*W].
// Kernel size must be 2*stride (padding stride/2), the exact adjoint of
// conv2d with the same stride, so x2 upsampling is k=4, s=2, p=1.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::int64_t stride);

// x [B,C,H,W] -> [B,C,factor*H,factor*W], half-pixel centers, edges clamped.
Tensor bilinear_upsample(const Tensor& x, std::int64_t factor);

// x [B,C,H,W] -> [B,C,H/factor,W/factor], mean over factor x factor windows.
Tensor avg_pool2d(const Tensor& x, std::int64_t factor);

// Normalizes along `axis` (negative counts from the end). Subtracts the
// slice max before exponentiation.
Tensor softmax(const Tensor& x, std::int64_t axis);

// Normalizes the last axis; gamma and beta are 1-d of that extent.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

Tensor gelu(const Tensor& x);   // exact erf form
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);    // requires strictly positive input
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
std::vector<Tensor> split(const Tensor& x, const std::vector<std::int64_t>& sizes,
                          std::int64_t axis);

Tensor reshape(const Tensor& x, const Shape& s);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& perm);

Tensor reduce_sum(const Tensor& x);                      // -> [1]
Tensor reduce_sum(const Tensor& x, std::int64_t axis);   // removes axis
Tensor reduce_mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, std::int64_t axis);

// table [R,C], rows of indices into table -> [N,C]. Backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& rows);

// x [B,C,H,W] -> [B, (H/P)*(W/P), C*P*P]: flattened non-overlapping patches
// in row-major patch-grid order; within a patch, channel-major then rows.
Tensor patchify(const Tensor& x, std::int64_t patch);

}  // namespace vitbis
