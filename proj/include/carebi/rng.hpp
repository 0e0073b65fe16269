#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "carebi/common.hpp"
#include "carebi/dist.hpp"

namespace carebi::rng {

// splitmix64 finalizer; mixes tag hashes into the master seed so that every
// named stream ("g", "item:x3", "boot:17", ...) is decorrelated.
inline uint64_t mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t derive(uint64_t master, std::string_view tag) {
  return mix(master ^ fnv1a64(tag));
}

inline uint64_t derive(uint64_t master, std::string_view tag, uint64_t index) {
  return mix(derive(master, tag) ^ mix(index));
}

// Deterministic stream over mt19937_64 (bit-exact across platforms by the
// standard). Uniforms and normals are produced by fixed recipes rather than
// std::*_distribution, whose output is implementation-defined; golden files
// depend on this.
class Stream {
 public:
  explicit Stream(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform on (0,1): 53-bit mantissa, offset half a step from 0
  double next_uniform() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1p-53;
  }

  // standard normal via inverse CDF of the uniform above
  double next_normal() { return dist::norm_quantile(next_uniform()); }

  // unbiased integer on [0, n) by rejection
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace carebi::rng
