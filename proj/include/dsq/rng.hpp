#pragma once

#include <cmath>
#include <cstdint>

#include "dsq/types.hpp"

namespace dsq {

// Deterministic pseudo-random stream (splitmix64 core).
//
// Every source of randomness in a run is a fresh substream keyed by
// (seed, kind, node, t), so two independent implementations of the same
// iteration (the node-wise engine and the matrix oracle) consume identical
// gradient and compressor draws without sharing any state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; caches the spare deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n); rejection sampling.
  Index uniform_index(Index n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~0ull - (~0ull % un);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<Index>(x % un);
  }

  template <typename Scalar = double>
  VectorX<Scalar> normal_vector(Index d) {
    VectorX<Scalar> v(d);
    for (Index i = 0; i < d; ++i) v[i] = static_cast<Scalar>(normal());
    return v;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class StreamKind : std::uint64_t {
  Gradient = 1,
  Compress = 2,
  Problem = 3,
  Probe = 4,
  Partition = 5,
  Calibrate = 6,
};

inline std::uint64_t derive_key(std::uint64_t seed, std::uint64_t kind,
                                std::uint64_t node, std::uint64_t t) {
  RandomStream s(seed ^ 0xd1b54a32d192ed03ull);
  std::uint64_t k = s.next_u64();
  k = RandomStream(k ^ (kind * 0x9e3779b97f4a7c15ull)).next_u64();
  k = RandomStream(k ^ (node + 0x8cb92ba72f3d8dd7ull)).next_u64();
  k = RandomStream(k ^ (t + 0x2545f4914f6cdd1dull)).next_u64();
  return k;
}

inline RandomStream substream(std::uint64_t seed, StreamKind kind,
                              std::uint64_t node = 0, std::uint64_t t = 0) {
  return RandomStream(derive_key(seed, static_cast<std::uint64_t>(kind), node, t));
}

}  // namespace dsq
