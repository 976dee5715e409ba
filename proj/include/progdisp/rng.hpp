#pragma once

#include <cstdint>
#include <random>

namespace progdisp {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic substream `stream` of a master seed. Streams with different
/// indices (or different domains) are statistically independent.
inline Rng make_stream(std::uint64_t seed, std::uint64_t domain, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed ^ splitmix64(domain + 0x632BE59BD9B4E019ULL));
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
  return Rng(seq);
}

namespace streams {
inline constexpr std::uint64_t kSimParams = 1;
inline constexpr std::uint64_t kSimPatients = 2;
inline constexpr std::uint64_t kChains = 3;
inline constexpr std::uint64_t kBootstrap = 4;
inline constexpr std::uint64_t kInit = 5;
}  // namespace streams

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace progdisp
