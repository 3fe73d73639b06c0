#pragma once

#include <cstdint>
#include <random>

namespace decomp::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Independent stream for one work item, derived from the run seed only.
inline std::mt19937_64 stream_for(std::uint64_t seed, std::uint64_t item) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(item + 0x51ed270b27e1c1a5ull)));
}

}  // namespace decomp::detail
