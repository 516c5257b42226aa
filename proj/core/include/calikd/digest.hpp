#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace calikd {

/// FNV-1a 64-bit hash, used for config digests and artifact checksums.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// 16-digit lowercase hex form of fnv1a64.
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace calikd
