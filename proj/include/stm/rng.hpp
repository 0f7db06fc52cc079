#pragma once

// Counter-based deterministic random numbers (SplitMix64 in counter mode).
// Every stream is keyed by (seed, name); element i is a pure function of
// (key, i), so streams never perturb each other and generation is
// order-independent and bit-stable across platforms.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace stm {

inline constexpr uint64_t kSplitMixGamma = 0x9e3779b97f4a7c15ull;

constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// i-th output of a SplitMix64 sequence seeded at `key`, computed directly.
constexpr uint64_t counter_rand(uint64_t key, uint64_t i) {
  return mix64(key + (i + 1) * kSplitMixGamma);
}

constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr uint64_t fnv1a64(const uint8_t* data, size_t n,
                           uint64_t h = 0xcbf29ce484222325ull) {
  for (size_t i = 0; i < n; i++) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Stream key for one named tensor under one model seed.
constexpr uint64_t stream_key(uint64_t seed, std::string_view name) {
  return mix64(mix64(seed) ^ fnv1a64(name));
}

// Top 24 bits -> float in [-1, 1). Exact in single precision.
constexpr float to_symmetric_unit(uint64_t bits) {
  int32_t u = static_cast<int32_t>(bits >> 40) - (1 << 23);
  return static_cast<float>(u) * 0x1.0p-23f;
}

// Top 53 bits -> double in [0, 1).
constexpr double to_unit(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

struct CounterRng {
  uint64_t key;
  uint64_t n = 0;

  explicit CounterRng(uint64_t key) : key(key) {}
  CounterRng(uint64_t seed, std::string_view name) : key(stream_key(seed, name)) {}

  uint64_t next_u64() { return counter_rand(key, n++); }
  float next_symmetric() { return to_symmetric_unit(next_u64()); }
  double next_unit() { return to_unit(next_u64()); }

  // Box-Muller over the counter stream.
  double next_gaussian() {
    double u1 = 1.0 - to_unit(next_u64());  // (0, 1]
    double u2 = to_unit(next_u64());
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

}  // namespace stm
