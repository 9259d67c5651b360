#pragma once

// Little-endian primitives shared by the binary file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "hawk/error.hpp"

namespace hawk::binio {

template <class T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> raw{};
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  os.write(reinterpret_cast<const char*>(raw.data()), sizeof(T));
}

/// Reads one value; throws FormatError on a short read naming `what`.
template <class T>
T get(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(T)> raw{};
  is.read(reinterpret_cast<char*>(raw.data()), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const char* format) {
  char got[4] = {};
  is.read(got, 4);
  if (is.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("not a ") + format + " file (bad magic)");
  }
}

/// True when the stream is at end of file.
inline bool at_eof(std::istream& is) {
  return is.peek() == std::char_traits<char>::eof();
}

}  // namespace hawk::binio
