#pragma once

// Little-endian readers/writers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hkd/error.hpp"

namespace hkd::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void write_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<long>(s.size())); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s);
}

inline void write_f32(std::ostream& os, const float* v, std::size_t n) {
  os.write(reinterpret_cast<const char*>(v), static_cast<long>(n * sizeof(float)));
}

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void expect_magic(const char* magic, std::size_t n) {
    std::string got(n, '\0');
    is_.read(got.data(), static_cast<long>(n));
    if (!is_ || std::memcmp(got.data(), magic, n) != 0) throw DataError(what_ + ": bad magic");
  }

  std::uint32_t u32(const char* field) {
    std::uint32_t v = 0;
    is_.read(reinterpret_cast<char*>(&v), 4);
    if (!is_) throw DataError(what_ + ": truncated while reading " + field);
    return v;
  }

  std::string bytes(std::size_t n, const char* field) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<long>(n));
    if (!is_) throw DataError(what_ + ": truncated while reading " + field);
    return s;
  }

  std::string string(const char* field) { return bytes(u32(field), field); }

  std::vector<float> f32(std::size_t n, const char* field) {
    std::vector<float> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<long>(n * sizeof(float)));
    if (!is_) throw DataError(what_ + ": truncated while reading " + field);
    return v;
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace hkd::binio
