// SPDX-License-Identifier: Apache-2.0
//
// Small self-contained PCG32 generator. The standard <random> distributions
// are implementation-defined, so every seeded sequence here is produced by
// fully specified arithmetic and reproduces bit-identically across builds.

#pragma once

#include "gemreg/core.hpp"

#include <cmath>
#include <cstdint>

namespace gemreg {

class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double canonical() {
    std::uint64_t bits = (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // rejection sampling keeps the distribution exact
    const std::uint64_t limit = (~0ULL / span) * span;
    std::uint64_t v;
    do {
      v = (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
  }

  /// Standard normal via Box-Muller (no cached spare).
  double normal() {
    double u1 = canonical();
    while (u1 <= 0) u1 = canonical();
    const double u2 = canonical();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec3 normal_vec3() { return Vec3(normal(), normal(), normal()); }

  Vec3 unit_vector() {
    Vec3 v;
    double n;
    do {
      v = normal_vec3();
      n = v.norm();
    } while (n < 1e-12);
    return v / n;
  }

  /// Uniform inside the unit ball.
  Vec3 in_unit_ball() { return unit_vector() * std::cbrt(canonical()); }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

/// Derive an independent child seed (splitmix64 step).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gemreg
