#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace cascade {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives a seed for a sub-stream identified by `ids`; the same inputs always give the
/// same seed, so parallel workers can draw reproducibly regardless of scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t id : ids) h = mix64(h ^ mix64(id + 0x632BE59BD9B4E019ull));
  return h;
}

/// Counter-based uniform draw in [0, 1).
inline double uniform_at(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept {
  return static_cast<double>(derive_seed(seed, ids) >> 11) * 0x1.0p-53;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  /// Uniform in [0, 1) with 53 random bits; independent of the library's distribution code.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller on our own uniforms.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cascade
