// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace taskfuse {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

// Order-sensitive seed derivation: derive_seed(a, b, c) != derive_seed(a, c, b).
constexpr std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, Rest... rest);

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t value, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(value + 0x632be59bd9b4e019ULL)), rest...);
}

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, Rest... rest) {
  return derive_seed(mix64(seed ^ hash_string(label)), rest...);
}

using Rng = std::mt19937_64;

}  // namespace taskfuse
