#pragma once

#include "kinofe/types.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

namespace kinofe::detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  return v;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (is.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kinofe::detail
