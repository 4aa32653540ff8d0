#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace g2 {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Contract violations (bad dimensions, out-of-range arguments).
[[noreturn]] inline void fail_param(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_param(msg);
}

/// FNV-1a, used for config hashing and manifest digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) {
  return fnv1a(s.data(), s.size());
}

}  // namespace g2
