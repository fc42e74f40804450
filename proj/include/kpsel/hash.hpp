#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace kpsel {

// Stable 64-bit hashing. Unlike std::hash these values are identical across
// platforms and runs, so they can key deterministic random streams and tag
// output files.

constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view text) {
  return hash_combine(seed, fnv1a64(text));
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

std::string hex64(std::uint64_t value);

}  // namespace kpsel
