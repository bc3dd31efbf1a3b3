#include "ha2f/rng.hpp"

#include <cmath>

namespace ha2f {

int Rng::uniform_int(int lo, int hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1ull;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 6.283185307179586476925286766559 * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

namespace {

uint64_t mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace

uint64_t derive_seed(uint64_t root, std::string_view label) {
  uint64_t h = mix(0x243f6a8885a308d3ull, root);
  for (char c : label) h = mix(h, static_cast<uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index) {
  return mix(derive_seed(root, label), index);
}

}  // namespace ha2f
