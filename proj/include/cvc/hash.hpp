#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cvc {

// 64-bit FNV-1a. Used for config and normalization-stats identities.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), via zlib.
std::uint32_t crc32(std::span<const std::uint8_t> data);

}  // namespace cvc
