#pragma once

#include <cstdint>
#include <random>

namespace amcl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream for a sub-component: hash(seed xor stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(seed ^ stream);
}

// Stream tags for derive_seed. Members use their index directly.
inline constexpr std::uint64_t kFusionStream = 0x46555349ULL;
inline constexpr std::uint64_t kShuffleStream = 0x53485546ULL;
inline constexpr std::uint64_t kShareStream = 0x53484152ULL;

}  // namespace amcl
