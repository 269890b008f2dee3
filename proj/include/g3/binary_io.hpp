#pragma once

// Little-endian primitives shared by the G3NN, G3IX and G3EM file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g3/errors.hpp"

namespace g3::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume little-endian");

using Magic = std::array<char, 4>;

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void magic(const Magic& m) { raw(m.data(), m.size()); }
  void u8(std::uint8_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }

  // u32 byte length followed by UTF-8 bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void check() const {
    if (!out_) throw Error("write failed");
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  void expect_magic(const Magic& m) {
    Magic got{};
    raw(got.data(), got.size());
    if (got != m) {
      throw FormatError("bad magic: expected " + std::string(m.data(), m.size()));
    }
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  void f32s(std::span<float> v) { raw(v.data(), v.size_bytes()); }

  std::string str(std::size_t max_len = 1u << 24) {
    const std::uint32_t n = u32();
    if (n > max_len) throw FormatError("string length out of range");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  template <typename T>
  T pod() {
    T v{};
    raw(&v, sizeof v);
    return v;
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("truncated file");
  }
  std::istream& in_;
};

}  // namespace g3::io
