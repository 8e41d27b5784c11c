#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace siflip {

using Rng = std::mt19937_64;

/// Stable 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  return fnv1a(s.data(), s.size(), h);
}

/// Independent RNG stream keyed by (master seed, purpose tag, index).  Streams
/// never depend on how many draws other streams have consumed, which keeps
/// parallel and serial generation identical.
inline Rng derive_stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  const std::uint64_t t = fnv1a(tag);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace siflip
