#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace seqrisk {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent seed for a sub-task from a parent seed and a list of
/// integer coordinates (subject index, fold, epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t s = mix64(parent);
  for (auto c : coords) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                                 std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t s = mix64(parent ^ hash_tag(tag));
  for (auto c : coords) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

/// A 64-bit Mersenne twister fully seeded from one 64-bit value.
inline std::mt19937_64 make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace seqrisk
