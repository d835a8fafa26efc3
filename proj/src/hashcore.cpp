#include "pharos/hashcore.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pharos/detail/binio.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

void check_bits(int bits) {
  if (bits < 1 || bits > kMaxBits)
    throw InvalidInput("hash code length must be in [1, " +
                       std::to_string(kMaxBits) + "], got " +
                       std::to_string(bits));
}

void check_same_length(CodeView a, CodeView b) {
  if (a.bits() != b.bits())
    throw DimensionError("hash code length mismatch: " +
                         std::to_string(a.bits()) + " vs " +
                         std::to_string(b.bits()));
}

std::uint64_t tail_mask(int bits) {
  const int rem = bits % 64;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

}  // namespace

HashCode::HashCode(int bits) : bits_(bits) {
  check_bits(bits);
  words_.assign(words_for_bits(bits), 0);
}

HashCode HashCode::from_signs(std::span<const int> signs) {
  HashCode code(static_cast<int>(signs.size()));
  for (std::size_t k = 0; k < signs.size(); ++k) {
    if (signs[k] != 1 && signs[k] != -1)
      throw InvalidInput("hash code element must be -1 or +1");
    code.set(static_cast<int>(k), signs[k]);
  }
  return code;
}

HashCode HashCode::from_view(CodeView v) {
  HashCode code(v.bits());
  std::copy(v.words().begin(), v.words().end(), code.words_.begin());
  return code;
}

void HashCode::set(int k, int sign) {
  auto& w = words_[static_cast<std::size_t>(k) / 64];
  const std::uint64_t bit = std::uint64_t{1} << (k % 64);
  if (sign > 0)
    w |= bit;
  else
    w &= ~bit;
}

std::vector<int> HashCode::to_signs() const {
  std::vector<int> out(static_cast<std::size_t>(bits_));
  for (int k = 0; k < bits_; ++k) out[static_cast<std::size_t>(k)] = at(k);
  return out;
}

HashCode sign_quantize(std::span<const double> h) {
  HashCode code(static_cast<int>(h.size()));
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (!std::isfinite(h[k]))
      throw InvalidInput("sign_quantize: non-finite value at index " +
                         std::to_string(k));
    if (h[k] >= 0.0) code.set(static_cast<int>(k), 1);
  }
  return code;
}

int hamming(CodeView a, CodeView b) {
  check_same_length(a, b);
  int d = 0;
  const auto wa = a.words();
  const auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) d += std::popcount(wa[i] ^ wb[i]);
  return d;
}

int inner(CodeView a, CodeView b) { return a.bits() - 2 * hamming(a, b); }

HashCode HashCode::negated() const {
  HashCode out = *this;
  for (auto& w : out.words_) w = ~w;
  if (!out.words_.empty()) out.words_.back() &= tail_mask(bits_);
  return out;
}

HashCode negate(CodeView a) { return HashCode::from_view(a).negated(); }

CodeTable::CodeTable(int bits) : bits_(bits), stride_(words_for_bits(bits)) {
  check_bits(bits);
}

void CodeTable::push_back(CodeView code) {
  check_same_length(CodeView({}, bits_), code);
  words_.insert(words_.end(), code.words().begin(), code.words().end());
  ++rows_;
}

CodeTable CodeTable::select(std::span<const std::size_t> ids) const {
  CodeTable out(bits_);
  out.reserve(ids.size());
  for (auto i : ids) {
    if (i >= rows_) throw InvalidInput("code table row out of range");
    out.push_back(row(i));
  }
  return out;
}

std::string encode_codes(const CodeTable& table) {
  detail::ByteWriter w;
  w.bytes("PHC1");
  w.u32(static_cast<std::uint32_t>(table.bits()));
  w.u64(table.size());
  for (auto word : table.raw()) w.u64(word);
  return w.take();
}

CodeTable decode_codes(detail::ByteReader& r) {
  r.magic("PHC1");
  const auto header_at = r.offset();
  const auto bits = r.u32("code length");
  if (bits < 1 || bits > static_cast<std::uint32_t>(kMaxBits))
    throw FormatError("code length out of range: " + std::to_string(bits),
                      header_at);
  const auto rows = r.u64("row count");
  CodeTable table(static_cast<int>(bits));
  const auto stride = table.words_per_row();
  if (rows > r.remaining() / (8 * stride))
    throw FormatError("truncated code rows: header declares " +
                          std::to_string(rows) + " rows",
                      r.offset());
  table.reserve(rows);
  std::vector<std::uint64_t> row(stride);
  const auto mask = tail_mask(static_cast<int>(bits));
  for (std::uint64_t i = 0; i < rows; ++i) {
    for (auto& w : row) w = r.u64("code word");
    if (row.back() & ~mask)
      throw FormatError("nonzero padding bits in code row " + std::to_string(i),
                        r.offset() - 8);
    table.push_back(CodeView(row, static_cast<int>(bits)));
  }
  return table;
}

CodeTable decode_codes(std::string_view bytes) {
  detail::ByteReader r(bytes);
  auto table = decode_codes(r);
  if (!r.done()) throw FormatError("trailing bytes after code table", r.offset());
  return table;
}

void save_codes(const std::filesystem::path& path, const CodeTable& table) {
  detail::write_file(path, encode_codes(table));
}

CodeTable load_codes(const std::filesystem::path& path) {
  return decode_codes(detail::read_file(path));
}

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

}  // namespace detail
}  // namespace pharos
