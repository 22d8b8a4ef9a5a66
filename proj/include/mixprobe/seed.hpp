#pragma once

#include <cstdint>
#include <string_view>

namespace mixprobe {

namespace seed_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace seed_detail

/// Deterministic child seed for (global seed, component, index). Streams
/// for different components never collide, so adding a component leaves
/// the others' randomness untouched.
inline std::uint64_t derive_seed(std::uint64_t global_seed,
                                 std::string_view component,
                                 std::uint64_t index = 0) {
  std::uint64_t h = seed_detail::splitmix64(global_seed);
  h = seed_detail::splitmix64(h ^ seed_detail::fnv1a(component));
  return seed_detail::splitmix64(h ^ index);
}

}  // namespace mixprobe
