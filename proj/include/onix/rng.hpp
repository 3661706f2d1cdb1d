#pragma once

#include <cmath>
#include <cstdint>

namespace onix {

/// Counter-based random generator built on the SplitMix64 finalizer.
///
/// Output i of a stream with seed s is mix64(s + (i+1)*GOLDEN), i.e. a pure
/// function of (seed, counter). Streams are reproducible across platforms
/// and compilers, independent of call batching, and cheap to fork.
///
/// Seed splitting rule: the derived seed for sub-stream k of a master seed
/// is master ^ k (the generator's internal mixing decorrelates the streams).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Derived seed for sub-stream k (objects, epochs, views, ...).
  static std::uint64_t split(std::uint64_t master, std::uint64_t k) {
    return master ^ k;
  }

  std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

  /// Uniform double in [0, 1): top 53 bits of the next word.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n >= 1. Rejection-free modulo is fine here;
  /// n is always tiny compared to 2^64 so the bias is negligible and the
  /// result stays platform-stable.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (two uniforms per call, no caching so
  /// the stream position stays a pure function of the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace onix
