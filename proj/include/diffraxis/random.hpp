#pragma once

#include <cstdint>
#include <random>

namespace diffraxis {

// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed-splitting rule: stream `index` under master `seed` is seeded with
/// splitmix64(splitmix64(seed) ^ index). Streams are independent of how work is
/// batched, so replicate r always sees the same draws.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ index);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::uint64_t index) {
  return Engine(stream_seed(seed, index));
}

}  // namespace diffraxis
