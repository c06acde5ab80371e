#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mfg {

// Counter-based Gaussian stream. Every draw is a pure function of
// (seed, role, world, path, step, component), so adding paths, worlds or
// threads never perturbs existing increments, and regeneration is bit-exact.
//
// Core generator: Philox4x32-10 (Salmon et al.), keyed by a 64-bit hash of
// (seed, role, world) and counted by (path, step, component).

namespace rng {

enum class Role : std::uint64_t {
  Common = 0x634f4d4dull,       // common-noise Brownian increments
  Idiosyncratic = 0x49444f49ull,  // per-path Brownian increments
  Initial = 0x494e4954ull,      // initial-state sampling
  Cloud = 0x434c4f55ull,        // randomized certification clouds
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, Role role, std::uint64_t world) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ static_cast<std::uint64_t>(role));
  k = splitmix64(k ^ world);
  return k;
}

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& c, std::array<std::uint32_t, 2>& k) {
  constexpr std::uint64_t m0 = 0xD2511F53ull;
  constexpr std::uint64_t m1 = 0xCD9E8D57ull;
  const std::uint64_t p0 = m0 * c[0];
  const std::uint64_t p1 = m1 * c[2];
  const std::array<std::uint32_t, 4> out = {
      static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
      static_cast<std::uint32_t>(p1),
      static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
      static_cast<std::uint32_t>(p0)};
  c = out;
  k[0] += 0x9E3779B9u;  // golden ratio
  k[1] += 0xBB67AE85u;  // sqrt(3) - 1
}

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                                  std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) philox_round(counter, key);
  return counter;
}

}  // namespace detail

// Uniform in (0,1), never exactly 0 or 1.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ull << 53) - 1)) + 0.5) * 0x1p-53;
}

// Uniform (0,1) draw at logical coordinates (path, step, component).
inline double uniform_unit(std::uint64_t key, std::uint64_t path, std::uint64_t step,
                           std::uint32_t component) {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
      static_cast<std::uint32_t>(step), component | 0x80000000u};
  const std::array<std::uint32_t, 2> k = {static_cast<std::uint32_t>(key),
                                          static_cast<std::uint32_t>(key >> 32)};
  const auto w = detail::philox4x32_10(ctr, k);
  return to_unit(w[0], w[1]);
}

// Standard normal draw at logical coordinates (path, step, component).
inline double standard_normal(std::uint64_t key, std::uint64_t path, std::uint64_t step,
                              std::uint32_t component) {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
      static_cast<std::uint32_t>(step), component};
  const std::array<std::uint32_t, 2> k = {static_cast<std::uint32_t>(key),
                                          static_cast<std::uint32_t>(key >> 32)};
  const auto w = detail::philox4x32_10(ctr, k);
  const double u1 = to_unit(w[0], w[1]);
  const double u2 = to_unit(w[2], w[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace rng
}  // namespace mfg
