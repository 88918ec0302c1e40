#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "jex/error.hpp"

// Little-endian primitive readers/writers for the binary file formats.
namespace jex::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw DataError("truncated payload while reading " + what);
  }
  return v;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  is.read(buf, 4);
  if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) throw DataError("bad magic");
}

inline void read_exact(std::istream& is, void* dst, std::size_t bytes, const std::string& what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (is.gcount() != static_cast<std::streamsize>(bytes)) {
    throw DataError("truncated payload while reading " + what);
  }
}

}  // namespace jex::binio
