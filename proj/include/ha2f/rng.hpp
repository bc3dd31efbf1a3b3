#pragma once

#include <cstdint>
#include <string_view>

namespace ha2f {

/// Deterministic splitmix64 generator. Self-contained so streams are
/// reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range.
  int uniform_int(int lo, int hi);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  double normal();

 private:
  uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Fans one root seed out into independent purpose-labeled streams.
uint64_t derive_seed(uint64_t root, std::string_view label);
uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index);

}  // namespace ha2f
