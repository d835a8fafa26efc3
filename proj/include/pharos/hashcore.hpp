#pragma once

// Binary hash codes over {-1,+1}, packed 64 signs per word.
//
// Bit layout: sign k lives in word k/64 at bit k%64 (little-endian within the
// word); +1 is stored as 1 and -1 as 0. Bits past K in the last word are 0.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pharos {

inline constexpr int kMaxBits = 4096;

inline constexpr std::size_t words_for_bits(int bits) {
  return (static_cast<std::size_t>(bits) + 63) / 64;
}

// Non-owning view of one packed code.
class CodeView {
 public:
  CodeView() = default;
  CodeView(std::span<const std::uint64_t> words, int bits)
      : words_(words), bits_(bits) {}

  int bits() const { return bits_; }
  std::span<const std::uint64_t> words() const { return words_; }
  int at(int k) const {
    return ((words_[static_cast<std::size_t>(k) / 64] >> (k % 64)) & 1U) ? 1
                                                                         : -1;
  }

 private:
  std::span<const std::uint64_t> words_;
  int bits_ = 0;
};

class HashCode {
 public:
  HashCode() = default;
  // All -1.
  explicit HashCode(int bits);
  static HashCode from_signs(std::span<const int> signs);
  static HashCode from_view(CodeView v);

  int bits() const { return bits_; }
  int at(int k) const { return view().at(k); }
  void set(int k, int sign);
  std::vector<int> to_signs() const;

  std::span<const std::uint64_t> words() const { return words_; }
  CodeView view() const { return {words_, bits_}; }
  operator CodeView() const { return view(); }  // NOLINT

  HashCode negated() const;

  bool operator==(const HashCode&) const = default;

 private:
  int bits_ = 0;
  std::vector<std::uint64_t> words_;
};

// Element k is +1 when h[k] >= 0, -1 otherwise.
HashCode sign_quantize(std::span<const double> h);

int hamming(CodeView a, CodeView b);
int inner(CodeView a, CodeView b);
HashCode negate(CodeView a);

// N codes of equal length in one contiguous block.
class CodeTable {
 public:
  CodeTable() = default;
  explicit CodeTable(int bits);

  int bits() const { return bits_; }
  std::size_t size() const { return rows_; }
  bool empty() const { return rows_ == 0; }
  std::size_t words_per_row() const { return stride_; }

  CodeView row(std::size_t i) const {
    return {std::span(words_).subspan(i * stride_, stride_), bits_};
  }
  HashCode code(std::size_t i) const { return HashCode::from_view(row(i)); }
  std::span<const std::uint64_t> raw() const { return words_; }

  void push_back(CodeView code);
  void reserve(std::size_t rows) { words_.reserve(rows * stride_); }
  // Rows `ids` in the given order.
  CodeTable select(std::span<const std::size_t> ids) const;

  bool operator==(const CodeTable&) const = default;

 private:
  int bits_ = 0;
  std::size_t stride_ = 0;
  std::size_t rows_ = 0;
  std::vector<std::uint64_t> words_;
};

// ".phc": "PHC1" | K u32 | N u64 | N rows of ceil(K/64) u64 words, all LE.
std::string encode_codes(const CodeTable& table);
// Decodes a .phc block starting at the reader's position.
namespace detail {
class ByteReader;
}
CodeTable decode_codes(detail::ByteReader& reader);
CodeTable decode_codes(std::string_view bytes);

void save_codes(const std::filesystem::path& path, const CodeTable& table);
CodeTable load_codes(const std::filesystem::path& path);

}  // namespace pharos
