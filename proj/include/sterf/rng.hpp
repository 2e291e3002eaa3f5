#pragma once

#include <cmath>
#include <cstdint>

#include "sterf/tensor.hpp"

namespace sterf {

// Deterministic, documented random stack so runs reproduce bit-for-bit
// across platforms and implementations:
//
//   * SplitMix64 expands a user seed into stream states and sub-seeds.
//   * xoshiro256++ generates the uniform stream.
//   * Box-Muller maps uniform pairs to standard normals.
//
// std::mt19937/std::normal_distribution are avoided on purpose: the C++
// standard does not pin their output across library implementations.

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

// Sub-seed k of a parent seed is the (k+1)-th SplitMix64 output. Used to
// give every sample of the measurement protocol its own stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  SplitMix64 sm(seed);
  std::uint64_t s = 0;
  for (std::uint64_t i = 0; i <= k; ++i) s = sm.next();
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& s : s_) s = sm.next();
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in (0, 1]; never 0 so log() below is safe.
  double next_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the sine partner of each pair is
  // cached so consecutive draws consume exactly one uniform pair.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// I.i.d. N(0,1) tensor; identical (shape, seed) gives identical bits.
inline Tensor5 randn(Shape5 shape, std::uint64_t seed) {
  Tensor5 out(shape);  // validates dims
  Rng rng(seed);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = rng.next_normal();
  return out;
}

}  // namespace sterf
