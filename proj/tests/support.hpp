#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <utility>
#include <vector>

#include "vitbis/config.hpp"
#include "vitbis/metrics.hpp"
#include "vitbis/rng.hpp"
#include "vitbis/tensor.hpp"

namespace testsupport {

using vitbis::LabelMask;
using vitbis::Shape;
using vitbis::SplitMix64;
using vitbis::Tensor;
using i64 = std::int64_t;

inline Tensor rand_tensor(SplitMix64& rng, const Shape& s, double lo = -1.0,
                          double hi = 1.0) {
  Tensor t = Tensor::zeros(s);
  for (double& v : *t.data) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor rand_binary(SplitMix64& rng, const Shape& s, double p = 0.5) {
  Tensor t = Tensor::zeros(s);
  for (double& v : *t.data) v = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

inline bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return a.empty() ||
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// ---------------------------------------------------------------------------
// Scalar-loop loss references. Written with plain loops and no tensor ops so
// a library defect cannot cancel out of both sides.
// ---------------------------------------------------------------------------

inline double ref_bce(const std::vector<double>& p, const std::vector<double>& y,
                      double floor = 1e-7) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pc = std::min(std::max(p[i], floor), 1.0 - floor);
    acc += y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  return -acc / static_cast<double>(p.size());
}

inline double ref_dice_loss(const std::vector<double>& p,
                            const std::vector<double>& y, double eps,
                            bool verbatim_numerator = false) {
  double inter = 0.0, ps = 0.0, ys = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    ps += p[i];
    ys += y[i];
  }
  const double k = verbatim_numerator ? 1.0 : 2.0;
  return 1.0 - (k * inter + eps) / (ps + ys + eps);
}

inline double ref_voxelwise(const std::vector<double>& probs,
                            const std::vector<double>& onehot, i64 I, i64 J,
                            double alpha, double beta, bool trainable,
                            double floor = 1e-7) {
  double dice_sum = 0.0;
  for (i64 j = 0; j < J; ++j) {
    double gy = 0.0, gg = 0.0, yy = 0.0;
    for (i64 i = 0; i < I; ++i) {
      const double g = onehot[static_cast<std::size_t>(i * J + j)];
      const double y = probs[static_cast<std::size_t>(i * J + j)];
      gy += g * y;
      gg += g * g;
      yy += y * y;
    }
    dice_sum += gy / (gg + yy);
  }
  double ce = 0.0;
  for (i64 i = 0; i < I; ++i) {
    for (i64 j = 0; j < J; ++j) {
      const double g = onehot[static_cast<std::size_t>(i * J + j)];
      double y = probs[static_cast<std::size_t>(i * J + j)];
      y = std::min(std::max(y, floor), 1.0 - floor);
      ce += g * std::log(y);
    }
  }
  const double sign = trainable ? -1.0 : 1.0;
  return 1.0 - alpha * (2.0 / static_cast<double>(J)) * dice_sum +
         sign * beta / static_cast<double>(I) * ce;
}

// ---------------------------------------------------------------------------
// Metric references: counting loops and an all-pairs distance sweep.
// ---------------------------------------------------------------------------

inline double ref_dice_score(const LabelMask& a, const LabelMask& b,
                             std::int32_t cls) {
  i64 na = 0, nb = 0, ni = 0;
  for (i64 r = 0; r < a.rows; ++r) {
    for (i64 c = 0; c < a.cols; ++c) {
      const bool pa = a.at(r, c) == cls;
      const bool pb = b.at(r, c) == cls;
      na += pa;
      nb += pb;
      ni += pa && pb;
    }
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

// Directed nearest-neighbour distances from every pixel of {mask==cls in
// `from`} to the pixel set in `to`, by exhaustive pairing.
inline std::vector<double> ref_directed_distances(const LabelMask& from,
                                                  const LabelMask& to,
                                                  std::int32_t cls) {
  std::vector<std::pair<i64, i64>> src, dst;
  for (i64 r = 0; r < from.rows; ++r) {
    for (i64 c = 0; c < from.cols; ++c) {
      if (from.at(r, c) == cls) src.push_back({r, c});
      if (to.at(r, c) == cls) dst.push_back({r, c});
    }
  }
  std::vector<double> out;
  out.reserve(src.size());
  const double sr = from.spacing_r, sc = from.spacing_c;
  for (const auto& [r, c] : src) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [tr, tc] : dst) {
      const double dr = static_cast<double>(r - tr) * sr;
      const double dc = static_cast<double>(c - tc) * sc;
      best = std::min(best, dr * dr + dc * dc);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

inline double ref_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t k = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(v.size())));
  return v[k - 1];
}

// NaN when either class region is empty, matching the undefined sentinel.
inline double ref_hd95(const LabelMask& a, const LabelMask& b, std::int32_t cls) {
  auto ab = ref_directed_distances(a, b, cls);
  auto ba = ref_directed_distances(b, a, cls);
  if (ab.empty() || ba.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return std::max(ref_quantile(ab, 0.95), ref_quantile(ba, 0.95));
}

inline LabelMask rand_mask(SplitMix64& rng, i64 rows, i64 cols, i64 classes,
                           double fg_prob = 0.4) {
  LabelMask m = LabelMask::filled(rows, cols, 0);
  for (i64 r = 0; r < rows; ++r) {
    for (i64 c = 0; c < cols; ++c) {
      if (rng.uniform() < fg_prob) {
        m.at(r, c) = static_cast<std::int32_t>(
            1 + rng.uniform_int(static_cast<std::uint64_t>(classes - 1)));
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Brute-force global-attention reference: double loops over all position
// pairs with its own stable softmax.
// ---------------------------------------------------------------------------

struct GsaRef {
  std::vector<double> attention;  // [B, n, n] with n = H*W
  std::vector<double> output;     // [B, C, H, W]
};

inline GsaRef ref_gsa(const std::vector<double>& x, i64 B, i64 C, i64 H, i64 W,
                      const std::vector<double>& wm, const std::vector<double>& bm,
                      i64 cm, const std::vector<double>& wn,
                      const std::vector<double>& bn,
                      const std::vector<double>& ww,
                      const std::vector<double>& bw) {
  const i64 n = H * W;
  auto pix = [&](const std::vector<double>& buf, i64 b, i64 ch, i64 i) {
    return buf[static_cast<std::size_t>((b * C + ch) * n + i)];
  };
  // 1x1 projections at every position.
  auto proj = [&](const std::vector<double>& w, const std::vector<double>& bias,
                  i64 rows) {
    std::vector<double> out(static_cast<std::size_t>(B * rows * n));
    for (i64 b = 0; b < B; ++b) {
      for (i64 o = 0; o < rows; ++o) {
        for (i64 i = 0; i < n; ++i) {
          double acc = bias[static_cast<std::size_t>(o)];
          for (i64 ch = 0; ch < C; ++ch) {
            acc += w[static_cast<std::size_t>(o * C + ch)] * pix(x, b, ch, i);
          }
          out[static_cast<std::size_t>((b * rows + o) * n + i)] = acc;
        }
      }
    }
    return out;
  };
  const auto m = proj(wm, bm, cm);
  const auto nf = proj(wn, bn, cm);
  const auto w = proj(ww, bw, C);

  GsaRef ref;
  ref.attention.assign(static_cast<std::size_t>(B * n * n), 0.0);
  ref.output.assign(static_cast<std::size_t>(B * C * n), 0.0);
  for (i64 b = 0; b < B; ++b) {
    for (i64 j = 0; j < n; ++j) {
      std::vector<double> logits(static_cast<std::size_t>(n));
      double mx = -std::numeric_limits<double>::infinity();
      for (i64 i = 0; i < n; ++i) {
        double dot = 0.0;
        for (i64 ch = 0; ch < cm; ++ch) {
          dot += m[static_cast<std::size_t>((b * cm + ch) * n + i)] *
                 nf[static_cast<std::size_t>((b * cm + ch) * n + j)];
        }
        logits[static_cast<std::size_t>(i)] = dot;
        mx = std::max(mx, dot);
      }
      double z = 0.0;
      for (i64 i = 0; i < n; ++i) {
        z += std::exp(logits[static_cast<std::size_t>(i)] - mx);
      }
      for (i64 i = 0; i < n; ++i) {
        const double a = std::exp(logits[static_cast<std::size_t>(i)] - mx) / z;
        ref.attention[static_cast<std::size_t>((b * n + i) * n + j)] = a;
        for (i64 ch = 0; ch < C; ++ch) {
          ref.output[static_cast<std::size_t>((b * C + ch) * n + j)] +=
              a * w[static_cast<std::size_t>((b * C + ch) * n + i)];
        }
      }
    }
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Parameter count computed from the published layer list alone (split sizes,
// stage widths, and hidden widths re-derived locally).
// ---------------------------------------------------------------------------

inline i64 ref_param_count(const vitbis::ModelConfig& c) {
  auto ms = [](i64 ch) {
    const i64 third = ch / 3;
    const i64 first = ch - 2 * third;
    return first * first + first + third * third * 9 + third +
           third * third * 25 + third;
  };
  const i64 d = c.embed_dim;
  const i64 grid = c.in_h / c.patch_size;
  const i64 tokens = grid * (c.in_w / c.patch_size);
  i64 total = c.patch_size * c.patch_size * c.in_ch * d + tokens * d + ms(d);

  const i64 hidden =
      static_cast<i64>(std::llround(c.mlp_ratio * static_cast<double>(d)));
  i64 block = 2 * d + 4 * d * d + 2 * d + d * hidden + hidden + hidden * d + d;
  if (c.use_relative_bias && grid == c.in_w / c.patch_size) {
    const i64 M = c.window_size > 0 ? c.window_size : grid;
    block += (2 * M - 1) * (2 * M - 1) * c.num_heads;
  }
  total += c.num_stacks * c.depth * block;

  if (c.use_gsa) {
    const i64 cm = std::max<i64>(1, d / 8);
    total += 2 * (cm * d + cm) + d * d + d;
  }
  total += c.reduced_channels * d + c.reduced_channels;

  i64 cin = c.reduced_channels;
  for (i64 n = 1; n <= c.num_stacks; ++n) {
    const i64 wn = std::max<i64>(c.reduced_channels >> n, 4);
    if (c.upsample_mode == vitbis::UpsampleMode::transposed_conv) {
      total += 2 * cin * cin * 16;
    }
    total += cin * cin * 9 + cin;        // processed-path conv
    total += wn * d + wn;                // skip projection
    total += wn * (2 * cin + wn) * 9 + wn;  // fuse conv
    cin = wn;
  }
  total += ms(cin);
  total += c.num_classes * cin + c.num_classes;
  return total;
}

// ---------------------------------------------------------------------------
// A small, fast run description shared by the training-loop tests.
// ---------------------------------------------------------------------------

inline vitbis::RunConfig tiny_run_config(std::uint64_t seed = 11) {
  vitbis::RunConfig cfg;
  cfg.seed = seed;
  cfg.model.patch_size = 4;
  cfg.model.embed_dim = 16;
  cfg.model.depth = 1;
  cfg.model.num_heads = 2;
  cfg.model.mlp_ratio = 2.0;
  cfg.model.reduced_channels = 8;
  cfg.model.num_classes = 2;
  cfg.model.num_stacks = 3;
  cfg.model.in_h = 16;
  cfg.model.in_w = 16;
  cfg.model.in_ch = 1;
  cfg.optim.batch_size = 2;
  cfg.optim.max_steps = 4;
  cfg.data.image_size = 16;
  cfg.data.num_classes = 2;
  cfg.data.count = 2;
  cfg.eval_images = 0;
  cfg.train.eval_on_train = true;
  return cfg;
}

}  // namespace testsupport
