#pragma once

// All randomness flows from one root seed through named sub-stream
// derivation, so components stay deterministic regardless of how work is
// ordered around them.

#include <cstdint>
#include <random>
#include <string_view>

namespace sslct {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the label, mixed with the parent seed and an index.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : label) {
    h ^= (std::uint64_t)(unsigned char)c;
    h *= 1099511628211ULL;
  }
  return splitmix64(seed ^ splitmix64(h ^ splitmix64(index)));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view label,
                                std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, label, index));
}

}  // namespace sslct
