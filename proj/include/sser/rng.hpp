#pragma once

#include <cstdint>
#include <random>

namespace sser {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream. Every consumer receives one explicitly; there is no
/// global generator. Uniform variates are produced from the raw 64-bit output
/// so results do not depend on the standard library's distribution classes.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  /// Uniform in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Child stream keyed by (this stream's seed, tag). Deterministic and
  /// independent of how many variates were drawn from the parent.
  Rng derive(std::uint64_t tag) const { return Rng(mix64(seed_ ^ mix64(tag + 0x51ed27f1ULL))); }

  Rng derive(std::uint64_t tag_a, std::uint64_t tag_b) const { return derive(mix64(tag_a) ^ tag_b); }

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace sser
