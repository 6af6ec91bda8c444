#pragma once
#include <cmath>
#include <cstdint>
#include <random>

namespace aseg {

/// splitmix64 step; used to derive independent seeds from a base seed so that
/// consumers (weight init, sampling, per-phantom seeds) get decorrelated
/// streams without sharing state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seed for the index-th consumer derived from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t s = base;
  std::uint64_t out = 0;
  for (std::uint64_t i = 0; i <= index; ++i) out = splitmix64(s);
  return out;
}

/// Deterministic random source. All distribution transforms are implemented
/// here (rather than via std::uniform_real_distribution etc.) because the
/// standard distributions are not bit-reproducible across library
/// implementations, and reproducibility from a seed is part of the contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive, rejection-sampled (no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t n = static_cast<std::uint64_t>(hi - lo) + 1;
    if (n == 0) return static_cast<std::int64_t>(next_u64());  // full range
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % n);
  }

  /// Standard normal via Box-Muller. Uses two uniforms per call and discards
  /// the second variate: slightly wasteful but stateless, which keeps draw
  /// order trivially reproducible.
  double normal() {
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace aseg
