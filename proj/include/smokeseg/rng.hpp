#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace smokeseg {

/// splitmix64 finalizer; stateless integer mixing for lattice noise and
/// per-record seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

/// Uniform double in [0,1) from a 64-bit word (53-bit mantissa).
inline double to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * (1.0 / 9007199254740992.0);
}

/// Uniform in [0,1) driven by mt19937_64; drawn in double regardless of the
/// tensor scalar type so float and double builds see identical values.
inline double uniform01(std::mt19937_64& rng) { return to_unit(rng()); }

/// Standard normal via Box-Muller (one draw per call, cosine branch only,
/// so the consumption pattern stays fixed).
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  // keep u1 away from 0 so log stays finite
  u1 = 0.5 / 9007199254740992.0 + u1 * (1.0 - 1.0 / 9007199254740992.0);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Normal(0, std) truncated at +/- 2 std, by rejection.
inline double truncated_normal(std::mt19937_64& rng, double stddev) {
  for (;;) {
    double z = standard_normal(rng);
    if (z >= -2.0 && z <= 2.0) return z * stddev;
  }
}

}  // namespace smokeseg
