#pragma once

#include <array>
#include <vector>

#include "vitbis/metrics.hpp"
#include "vitbis/rng.hpp"
#include "vitbis/tensor.hpp"

namespace vitbis {

// ---------------------------------------------------------------------------
// Synthetic dataset: each image is a background plus a few axis-aligned
// ellipses and rectangles painted in order (later shapes overwrite earlier
// ones), each with a class label and an intensity drawn from its class band,
// followed by Gaussian pixel noise.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::int64_t image_size = 32;
  std::int64_t num_classes = 2;
  std::int64_t min_shapes = 1, max_shapes = 3;
  // Per-class [lo, hi] intensity bands, index 0 = background. Empty selects
  // defaults: background [0.05, 0.25], foreground classes evenly partition
  // [0.4, 1.0].
  std::vector<std::array<double, 2>> class_intensity;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  std::int64_t count = 8;

  void validate() const;  // throws InvalidSpec
  std::array<double, 2> intensity_band(std::int64_t cls) const;
};

struct ShapeSpec {
  enum Kind { ellipse, rectangle };
  Kind kind;
  std::int32_t cls;
  double cy, cx;  // center, pixel units
  double ry, rx;  // semi-axes / half-extents, pixel units
  double intensity;
};

struct Sample {
  Tensor image;    // [1, S, S]
  LabelMask mask;  // S x S
};

// Inclusion test at integer pixel centers.
bool shape_contains(const ShapeSpec& s, std::int64_t r, std::int64_t c);

// Draws the shape list for one image. Draw order per shape: kind, class,
// cy, cx, ry, rx, intensity. The count is min_shapes + uniform_int over the
// range first.
std::vector<ShapeSpec> sample_shapes(const SyntheticSpec& spec, SplitMix64& rng);

// Paints class labels in list order onto the mask.
void rasterize_shapes(const std::vector<ShapeSpec>& shapes, LabelMask& mask);

// One image, reproducible from (spec.seed, index) alone. Draw order:
// background intensity, then sample_shapes, then one normal per pixel in
// row-major order. Pixel values are clamped to [0, 1] after noise.
Sample generate_sample(const SyntheticSpec& spec, std::uint64_t index);

std::vector<Sample> generate_dataset(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Augmentation. Draw order inside augment(): crop oy, crop ox (only when
// cropping is active), horizontal-flip uniform, vertical-flip uniform,
// intensity scale, intensity shift. The pipeline applies crop, then flips,
// then the intensity map x -> scale*x + shift (no clamping).
// ---------------------------------------------------------------------------

struct AugmentConfig {
  std::int64_t crop_size = 0;  // 0 disables cropping
  double flip_prob = 0.5;
  double shift_lo = -0.05, shift_hi = 0.05;
  double scale_lo = 0.5, scale_hi = 1.0;

  void validate() const;  // throws ConfigMismatch
};

Sample crop_pair(const Sample& s, std::int64_t oy, std::int64_t ox,
                 std::int64_t size);
Sample flip_pair(const Sample& s, bool flip_h, bool flip_v);
Tensor adjust_intensity(const Tensor& image, double scale_factor, double shift);

Sample augment(const Sample& s, const AugmentConfig& cfg, SplitMix64& rng);

}  // namespace vitbis
