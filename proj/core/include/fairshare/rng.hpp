#pragma once

#include <cmath>
#include <cstdint>

namespace fairshare {

// Counter-based splittable generator (SplitMix64). Each stream is keyed by
// (seed, stream); the state walks a Weyl sequence and every output is a hash
// of the counter, so replications never share state and a stream can be
// reproduced from its key alone.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : state_(mix(seed + GOLDEN) ^ mix(stream + 2 * GOLDEN)) {}

  uint64_t next_u64() { return mix(state_ += GOLDEN); }

  // Uniform on (0,1), never exactly 0 or 1, safe under log().
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  // Stable key derivation for per-cell seeds: derive(seed, a, b) is
  // independent of any draws made from other keys.
  static uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return mix(mix(seed + GOLDEN) + mix(a + 2 * GOLDEN) + mix(b + 3 * GOLDEN));
  }

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL;
  uint64_t state_ = 0;
};

}  // namespace fairshare
