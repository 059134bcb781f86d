#include "vitbis/rng.hpp"

#include <cmath>

namespace vitbis {

std::uint64_t SplitMix64::uniform_int(std::uint64_t n) {
  if (n == 0) return 0;
  // Largest multiple of n that fits in 64 bits; rejecting values at or above
  // it removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double SplitMix64::normal() {
  // (0, 1] so the log is finite.
  const double u1 =
      (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double SplitMix64::trunc_normal(double sigma) {
  double z = normal();
  while (z < -2.0 || z > 2.0) z = normal();
  return sigma * z;
}

}  // namespace vitbis
