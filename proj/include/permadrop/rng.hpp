#pragma once

#include <cstdint>
#include <random>

namespace permadrop {

/// splitmix64 finalizer. Adjacent integer seeds map to unrelated states.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Engine for one logical stream; `stream` separates independent uses of
/// the same user seed (masks, weights, shuffles, ...).
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x5851f42d4c957f2dULL)));
}

/// Uniform double in [0, 1) from the top 53 bits; independent of the
/// standard library's distribution implementations.
inline double uniform01(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

namespace stream {
inline constexpr std::uint64_t weights = 1;
inline constexpr std::uint64_t masks = 2;
inline constexpr std::uint64_t shuffle = 3;
inline constexpr std::uint64_t data = 4;
inline constexpr std::uint64_t sim_init = 5;
inline constexpr std::uint64_t split = 6;
}  // namespace stream

}  // namespace permadrop
