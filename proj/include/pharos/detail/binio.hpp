#pragma once

// Little-endian byte encoding shared by all on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "pharos/errors.hpp"

namespace pharos::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  // u32 length followed by the raw bytes.
  void prefixed(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::string& str() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  void require(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw FormatError(std::string("truncated input while reading ") + what,
                        pos_);
  }

  void magic(std::string_view expected) {
    require(expected.size(), "magic");
    if (data_.substr(pos_, expected.size()) != expected)
      throw FormatError("bad magic, expected \"" + std::string(expected) + "\"",
                        pos_);
    pos_ += expected.size();
  }

  std::string_view bytes(std::size_t n, const char* what) {
    require(n, what);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t u8(const char* what) {
    require(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    require(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::string_view prefixed(const char* what) {
    auto n = u32(what);
    return bytes(n, what);
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// FNV-1a, 64-bit. Used for payload checksums and run manifests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace pharos::detail
