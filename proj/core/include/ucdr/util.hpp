#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <iostream>
#include <random>
#include <span>
#include <string>

namespace ucdr {

// Builds an mt19937 whose state depends on a base seed plus a list of salt
// values, so independent streams (per cell, per epoch, per module) never
// alias even when the base seed is small.
inline std::mt19937 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salts = {}) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (std::uint64_t s : salts) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937(seq);
}

// FNV-1a over raw bytes; used for artifact hashes and change audits.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a64_span(std::span<const T> values, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(values.data(), values.size() * sizeof(T), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

template <typename Range>
bool all_finite(const Range& values) {
  for (auto v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline void warn(const std::string& message) {
  std::cerr << "warning: " << message << "\n";
}

}  // namespace ucdr
