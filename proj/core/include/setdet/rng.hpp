#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace setdet {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over the bytes of `s`. Stable across platforms, unlike std::hash.
constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent stream for one (seed, sample, epoch) triple. Streams do not
/// depend on the order in which samples are visited.
inline Rng sample_stream(std::uint64_t seed, std::string_view sample_id,
                         std::uint64_t epoch) {
  return Rng(mix64(mix64(seed) ^ mix64(hash_string(sample_id) + epoch)));
}

inline Rng derived_stream(std::uint64_t seed, std::uint64_t salt) {
  return Rng(mix64(mix64(seed) + salt));
}

/// Uniform double in [lo, hi) from the raw 64-bit output. std::uniform_real_distribution
/// is implementation-defined, this is not.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Uniform integer in [0, n). Slight modulo bias is irrelevant at these sizes.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return rng() % n; }

inline bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

/// Standard normal via Box-Muller, portable across standard libraries.
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform(rng, 0.0, 1.0);  // (0, 1]
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace setdet
