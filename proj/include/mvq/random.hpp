#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "mvq/core.hpp"

namespace mvq {

/// Deterministic RNG. Raw bits come from std::mt19937_64 (whose output
/// sequence is fixed by the standard); all distribution mappings are done
/// here with fixed arithmetic instead of std::uniform_real_distribution /
/// std::normal_distribution, so identical seeds give identical streams on
/// every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }

  /// Standard normal via Box-Muller; generates pairs, caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  /// Uniform integer in [0, n). n must be > 0 and small against 2^64,
  /// so the modulo bias is negligible for simulation purposes.
  std::uint64_t uniform_index(std::uint64_t n) {
    return gen_() % n;
  }

  /// splitmix64-style mixer for deriving independent stream seeds from a
  /// master seed, so adding draws to one stream never shifts another.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mvq
