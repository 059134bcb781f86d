#include "vitbis/data.hpp"

#include <algorithm>
#include <cmath>

namespace vitbis {

void SyntheticSpec::validate() const {
  if (image_size < 4) throw InvalidSpec("image_size must be at least 4");
  if (num_classes < 2) throw InvalidSpec("num_classes must be at least 2");
  if (min_shapes < 1 || max_shapes < min_shapes) {
    throw InvalidSpec("shape count range is empty");
  }
  if (noise_sigma < 0.0) throw InvalidSpec("noise_sigma must be non-negative");
  if (count < 1) throw InvalidSpec("count must be positive");
  if (!class_intensity.empty()) {
    if (static_cast<std::int64_t>(class_intensity.size()) != num_classes) {
      throw InvalidSpec("class_intensity must list every class");
    }
    for (const auto& band : class_intensity) {
      if (!(0.0 <= band[0] && band[0] <= band[1] && band[1] <= 1.0)) {
        throw InvalidSpec("intensity bands must satisfy 0 <= lo <= hi <= 1");
      }
    }
  }
}

std::array<double, 2> SyntheticSpec::intensity_band(std::int64_t cls) const {
  if (!class_intensity.empty()) {
    return class_intensity[static_cast<std::size_t>(cls)];
  }
  if (cls == 0) return {0.05, 0.25};
  const double fg = static_cast<double>(num_classes - 1);
  const double lo = 0.4 + 0.6 * static_cast<double>(cls - 1) / fg;
  const double hi = 0.4 + 0.6 * static_cast<double>(cls) / fg;
  return {lo, hi};
}

bool shape_contains(const ShapeSpec& s, std::int64_t r, std::int64_t c) {
  const double dr = static_cast<double>(r) - s.cy;
  const double dc = static_cast<double>(c) - s.cx;
  if (s.kind == ShapeSpec::rectangle) {
    return std::abs(dr) <= s.ry && std::abs(dc) <= s.rx;
  }
  const double a = dr / s.ry, b = dc / s.rx;
  return a * a + b * b <= 1.0;
}

std::vector<ShapeSpec> sample_shapes(const SyntheticSpec& spec, SplitMix64& rng) {
  const double S = static_cast<double>(spec.image_size);
  const std::int64_t count =
      spec.min_shapes +
      static_cast<std::int64_t>(rng.uniform_int(
          static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
  std::vector<ShapeSpec> shapes;
  shapes.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = rng.uniform_int(2) == 0 ? ShapeSpec::ellipse : ShapeSpec::rectangle;
    s.cls = 1 + static_cast<std::int32_t>(
                    rng.uniform_int(static_cast<std::uint64_t>(spec.num_classes - 1)));
    s.cy = rng.uniform(0.2, 0.8) * S;
    s.cx = rng.uniform(0.2, 0.8) * S;
    s.ry = rng.uniform(0.08, 0.3) * S;
    s.rx = rng.uniform(0.08, 0.3) * S;
    const auto band = spec.intensity_band(s.cls);
    s.intensity = rng.uniform(band[0], band[1]);
    shapes.push_back(s);
  }
  return shapes;
}

void rasterize_shapes(const std::vector<ShapeSpec>& shapes, LabelMask& mask) {
  for (const ShapeSpec& s : shapes) {
    const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cy - s.ry)));
    const std::int64_t r1 = std::min<std::int64_t>(mask.rows - 1, static_cast<std::int64_t>(std::ceil(s.cy + s.ry)));
    const std::int64_t c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cx - s.rx)));
    const std::int64_t c1 = std::min<std::int64_t>(mask.cols - 1, static_cast<std::int64_t>(std::ceil(s.cx + s.rx)));
    for (std::int64_t r = r0; r <= r1; ++r) {
      for (std::int64_t c = c0; c <= c1; ++c) {
        if (shape_contains(s, r, c)) mask.at(r, c) = s.cls;
      }
    }
  }
}

Sample generate_sample(const SyntheticSpec& spec, std::uint64_t index) {
  spec.validate();
  SplitMix64 rng = image_rng(spec.seed, index);
  const std::int64_t S = spec.image_size;

  const auto bg = spec.intensity_band(0);
  const double background = rng.uniform(bg[0], bg[1]);
  const auto shapes = sample_shapes(spec, rng);

  Sample sample;
  sample.mask = LabelMask::filled(S, S, 0);
  rasterize_shapes(shapes, sample.mask);

  sample.image = Tensor::zeros({1, S, S});
  std::vector<double>& px = *sample.image.data;
  for (std::int64_t r = 0; r < S; ++r) {
    for (std::int64_t c = 0; c < S; ++c) {
      double v = background;
      // Painter's order: the last shape covering the pixel wins.
      for (const ShapeSpec& s : shapes) {
        if (shape_contains(s, r, c)) v = s.intensity;
      }
      px[static_cast<std::size_t>(r * S + c)] = v;
    }
  }
  for (std::int64_t i = 0; i < S * S; ++i) {
    double v = px[static_cast<std::size_t>(i)] + rng.normal(spec.noise_sigma);
    px[static_cast<std::size_t>(i)] = std::clamp(v, 0.0, 1.0);
  }
  return sample;
}

std::vector<Sample> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t i = 0; i < spec.count; ++i) {
    out.push_back(generate_sample(spec, static_cast<std::uint64_t>(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

void AugmentConfig::validate() const {
  if (crop_size < 0) throw ConfigMismatch("crop_size must be non-negative");
  if (flip_prob < 0.0 || flip_prob > 1.0) {
    throw ConfigMismatch("flip_prob must lie in [0,1]");
  }
  if (shift_lo > shift_hi || scale_lo > scale_hi) {
    throw ConfigMismatch("augment ranges are empty");
  }
}

Sample crop_pair(const Sample& s, std::int64_t oy, std::int64_t ox,
                 std::int64_t size) {
  const std::int64_t H = s.image.shape[1], W = s.image.shape[2];
  if (size > H || size > W) {
    throw CropTooLarge("crop " + std::to_string(size) + " exceeds image " +
                       std::to_string(H) + "x" + std::to_string(W));
  }
  if (oy < 0 || ox < 0 || oy + size > H || ox + size > W) {
    throw CropTooLarge("crop window leaves the image");
  }
  Sample out;
  out.image = Tensor::zeros({1, size, size});
  out.mask = LabelMask::filled(size, size, 0, s.mask.spacing_r, s.mask.spacing_c);
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      (*out.image.data)[static_cast<std::size_t>(r * size + c)] =
          (*s.image.data)[static_cast<std::size_t>((oy + r) * W + (ox + c))];
      out.mask.at(r, c) = s.mask.at(oy + r, ox + c);
    }
  }
  return out;
}

Sample flip_pair(const Sample& s, bool flip_h, bool flip_v) {
  const std::int64_t H = s.image.shape[1], W = s.image.shape[2];
  Sample out;
  out.image = Tensor::zeros({1, H, W});
  out.mask = LabelMask::filled(H, W, 0, s.mask.spacing_r, s.mask.spacing_c);
  for (std::int64_t r = 0; r < H; ++r) {
    for (std::int64_t c = 0; c < W; ++c) {
      const std::int64_t sr = flip_v ? H - 1 - r : r;
      const std::int64_t sc = flip_h ? W - 1 - c : c;
      (*out.image.data)[static_cast<std::size_t>(r * W + c)] =
          (*s.image.data)[static_cast<std::size_t>(sr * W + sc)];
      out.mask.at(r, c) = s.mask.at(sr, sc);
    }
  }
  return out;
}

Tensor adjust_intensity(const Tensor& image, double scale_factor, double shift) {
  Tensor out = Tensor::zeros(image.shape);
  for (std::size_t i = 0; i < image.data->size(); ++i) {
    (*out.data)[i] = scale_factor * (*image.data)[i] + shift;
  }
  return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  const std::int64_t H = s.image.shape[1], W = s.image.shape[2];
  Sample out = s;
  if (cfg.crop_size > 0) {
    if (cfg.crop_size > H || cfg.crop_size > W) {
      throw CropTooLarge("crop_size exceeds image size");
    }
    const std::int64_t oy = static_cast<std::int64_t>(
        rng.uniform_int(static_cast<std::uint64_t>(H - cfg.crop_size + 1)));
    const std::int64_t ox = static_cast<std::int64_t>(
        rng.uniform_int(static_cast<std::uint64_t>(W - cfg.crop_size + 1)));
    out = crop_pair(out, oy, ox, cfg.crop_size);
  }
  const bool fh = rng.uniform() < cfg.flip_prob;
  const bool fv = rng.uniform() < cfg.flip_prob;
  if (fh || fv) out = flip_pair(out, fh, fv);
  const double sc = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const double sh = rng.uniform(cfg.shift_lo, cfg.shift_hi);
  out.image = adjust_intensity(out.image, sc, sh);
  return out;
}

}  // namespace vitbis
