#pragma once

#include <cstdint>

namespace vitbis {

// SplitMix64 (Steele, Lea & Flood, "Fast splittable pseudorandom number
// generators", OOPSLA 2014). One 64-bit word of state and three rounds of
// xor-shift-multiply per output, so streams are identical on every platform
// and trivially checkpointable.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53 usable bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, so the result is unbiased and
  // does not depend on platform-specific 128-bit arithmetic.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller. The second variate of each pair is
  // deliberately discarded to keep the draw count per call fixed at two.
  double normal();

  double normal(double sigma) { return sigma * normal(); }

  // Truncated normal: rejection-sample a standard normal until |z| <= 2,
  // then scale by sigma.
  double trunc_normal(double sigma);

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Every random purpose draws from its own generator seeded at a fixed offset
// from the root seed, so adding draws to one consumer never shifts another.
namespace stream {
inline constexpr std::uint64_t kInit = 0x1000;      // parameter initialization
inline constexpr std::uint64_t kData = 0x2000;      // synthetic dataset
inline constexpr std::uint64_t kAugment = 0x3000;   // augmentation pipeline
inline constexpr std::uint64_t kSampling = 0x4000;  // batch index sampling
// Stride between per-image seeds inside the data stream (golden-ratio step,
// same constant SplitMix64 uses internally, so consecutive seeds decorrelate).
inline constexpr std::uint64_t kImageStride = 0x9E3779B97F4A7C15ull;
}  // namespace stream

inline SplitMix64 derived_rng(std::uint64_t root_seed, std::uint64_t offset) {
  return SplitMix64(root_seed + offset);
}

// Generator for one image of a dataset: depends only on the dataset seed and
// the image index, so images are reproducible individually.
inline SplitMix64 image_rng(std::uint64_t data_seed, std::uint64_t index) {
  return SplitMix64(data_seed + (index + 1) * stream::kImageStride);
}

}  // namespace vitbis
