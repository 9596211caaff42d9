#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "arq/error.hpp"

namespace arq::io {

/// Little-endian primitive writer.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(std::string_view s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  template <typename UInt>
  void uint(UInt v) {
    unsigned char buf[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os_.write(reinterpret_cast<const char*>(buf), sizeof(UInt));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f64_array(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

 private:
  std::ostream& os_;
};

/// Little-endian primitive reader. Every short read throws FormatError naming
/// the field being read.
class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  std::string bytes(std::size_t n, std::string_view field) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) truncated(field);
    return s;
  }

  template <typename UInt>
  UInt uint(std::string_view field) {
    unsigned char buf[sizeof(UInt)];
    is_.read(reinterpret_cast<char*>(buf), sizeof(UInt));
    if (static_cast<std::size_t>(is_.gcount()) != sizeof(UInt)) truncated(field);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(static_cast<UInt>(buf[i]) << (8 * i));
    return v;
  }
  std::uint8_t u8(std::string_view f) { return uint<std::uint8_t>(f); }
  std::uint16_t u16(std::string_view f) { return uint<std::uint16_t>(f); }
  std::uint32_t u32(std::string_view f) { return uint<std::uint32_t>(f); }
  std::uint64_t u64(std::string_view f) { return uint<std::uint64_t>(f); }
  double f64(std::string_view f) { return std::bit_cast<double>(u64(f)); }

  std::vector<double> f64_array(std::string_view field, std::uint64_t max_len = (1ULL << 32)) {
    const std::uint64_t n = u64(field);
    if (n > max_len) throw FormatError(source_ + ": implausible length for " + std::string(field));
    std::vector<double> v(n);
    for (auto& x : v) x = f64(field);
    return v;
  }

  std::string string(std::string_view field) {
    const std::uint32_t n = u32(field);
    if (n > (1U << 20)) throw FormatError(source_ + ": implausible string length for " + std::string(field));
    return bytes(n, field);
  }

  /// Reads and checks a fixed magic string.
  void expect_magic(std::string_view magic, std::string_view kind) {
    std::string got(magic.size(), '\0');
    is_.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (static_cast<std::size_t>(is_.gcount()) != magic.size() || got != magic) {
      throw FormatError(source_ + ": not an " + std::string(kind) + " file");
    }
  }

  void expect_version(std::uint32_t supported, std::string_view kind) {
    const std::uint32_t v = u32("version");
    if (v != supported) {
      throw FormatError(source_ + ": unsupported " + std::string(kind) + " format version " +
                        std::to_string(v) + " (expected " + std::to_string(supported) + ")");
    }
  }

  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw FormatError(source_ + ": trailing bytes");
  }

  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void truncated(std::string_view field) {
    throw FormatError(source_ + ": truncated while reading " + std::string(field));
  }

  std::istream& is_;
  std::string source_;
};

}  // namespace arq::io
