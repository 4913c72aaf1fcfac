#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace confex {

/// 64-bit FNV-1a digest rendered as 16 hex digits. Used to content-address
/// models and pipeline artifacts; not a cryptographic hash.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace confex
