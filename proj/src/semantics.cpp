#include "pharos/semantics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>

#include "pharos/detail/binio.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

void check_classes(const LabelVector& a, const LabelVector& b) {
  if (a.classes() != b.classes())
    throw DimensionError("label vector length mismatch: " +
                         std::to_string(a.classes()) + " vs " +
                         std::to_string(b.classes()));
}

// Adds w * b to sums for every coordinate, as 2 * (w over set bits) - w.
void accumulate(std::vector<double>& sums, CodeView code, double w) {
  const auto words = code.words();
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto bits = words[i];
    while (bits) {
      const int k = static_cast<int>(i * 64) + std::countr_zero(bits);
      sums[static_cast<std::size_t>(k)] += 2.0 * w;
      bits &= bits - 1;
    }
  }
  for (auto& s : sums) s -= w;
}

}  // namespace

LabelVector::LabelVector(int classes) : classes_(classes) {
  if (classes < 1) throw InvalidInput("label vector needs at least one class");
  words_.assign((static_cast<std::size_t>(classes) + 63) / 64, 0);
}

LabelVector LabelVector::from_bits(std::span<const std::uint8_t> bits) {
  LabelVector y(static_cast<int>(bits.size()));
  for (std::size_t c = 0; c < bits.size(); ++c) {
    if (bits[c] > 1) throw InvalidInput("label entries must be 0 or 1");
    if (bits[c]) y.set(static_cast<int>(c));
  }
  return y;
}

void LabelVector::set(int c, bool on) {
  auto& w = words_[static_cast<std::size_t>(c) / 64];
  const std::uint64_t bit = std::uint64_t{1} << (c % 64);
  w = on ? (w | bit) : (w & ~bit);
}

int LabelVector::count() const {
  int n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

std::vector<std::uint8_t> LabelVector::to_bits() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(classes_));
  for (int c = 0; c < classes_; ++c) out[static_cast<std::size_t>(c)] = has(c);
  return out;
}

int intersection(const LabelVector& a, const LabelVector& b) {
  check_classes(a, b);
  int n = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i)
    n += std::popcount(a.words()[i] & b.words()[i]);
  return n;
}

bool shares_label(const LabelVector& a, const LabelVector& b) {
  return intersection(a, b) > 0;
}

double dice_similarity(const LabelVector& a, const LabelVector& b) {
  const int common = intersection(a, b);
  const int na = a.count();
  const int nb = b.count();
  if (na == 0 || nb == 0)
    throw InvalidInput("dice_similarity: label vector has no active class");
  return 2.0 * common / static_cast<double>(na + nb);
}

double pair_weight(double similarity, PairRole role) {
  if (!(similarity >= 0.0 && similarity <= 1.0))
    throw InvalidInput("pair_weight: similarity must lie in [0, 1]");
  return role == PairRole::positive ? similarity : 1.0 - similarity;
}

Partition partition_pool(const LabelVector& query,
                         std::span<const LabelVector> pool) {
  Partition p;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (shares_label(query, pool[i]) ? p.positives : p.negatives).push_back(i);
  return p;
}

std::string_view to_string(WeightScheme scheme) {
  return scheme == WeightScheme::dice ? "dice" : "label-free";
}

WeightScheme parse_weight_scheme(std::string_view name) {
  if (name == "dice") return WeightScheme::dice;
  if (name == "label-free") return WeightScheme::label_free;
  throw ConfigError("unknown weight scheme \"" + std::string(name) +
                    "\" (expected dice or label-free)");
}

void WeightedPool::validate() const {
  if (!codes) throw InvalidInput("weighted pool has no code table");
  if (positive_ids.size() != positive_weights.size() ||
      negative_ids.size() != negative_weights.size())
    throw InvalidInput("weighted pool: ids and weights differ in length");
  std::vector<std::uint8_t> seen(codes->size(), 0);
  auto mark = [&](std::span<const std::size_t> ids, std::uint8_t tag) {
    for (auto i : ids) {
      if (i >= codes->size())
        throw InvalidInput("weighted pool: row id out of range");
      if (seen[i] & ~tag)
        throw InvalidInput("weighted pool: row " + std::to_string(i) +
                           " is both positive and negative");
      seen[i] |= tag;
    }
  };
  mark(positive_ids, 1);
  mark(negative_ids, 2);
  for (double w : positive_weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidInput("weighted pool: weights must be finite and >= 0");
  for (double w : negative_weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidInput("weighted pool: weights must be finite and >= 0");
}

WeightedPool build_pool(const LabelVector& query, const CodeTable& codes,
                        std::span<const LabelVector> labels,
                        WeightScheme scheme) {
  if (labels.size() != codes.size())
    throw DimensionError("pool codes and labels differ in row count");
  WeightedPool pool;
  pool.codes = &codes;
  pool.scheme = scheme;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool positive = shares_label(query, labels[i]);
    double s = positive ? 1.0 : 0.0;
    if (scheme == WeightScheme::dice) s = dice_similarity(query, labels[i]);
    if (positive) {
      pool.positive_ids.push_back(i);
      pool.positive_weights.push_back(pair_weight(s, PairRole::positive));
    } else {
      pool.negative_ids.push_back(i);
      pool.negative_weights.push_back(pair_weight(s, PairRole::negative));
    }
  }
  return pool;
}

std::vector<double> pharos_sums(const WeightedPool& pool) {
  if (!pool.codes || pool.empty())
    throw InvalidInput("pharos generation needs a non-empty pool");
  const auto bits = static_cast<std::size_t>(pool.bits());
  std::vector<double> pos(bits, 0.0);
  std::vector<double> neg(bits, 0.0);
  for (std::size_t n = 0; n < pool.positive_ids.size(); ++n)
    accumulate(pos, pool.codes->row(pool.positive_ids[n]),
               pool.positive_weights[n]);
  for (std::size_t n = 0; n < pool.negative_ids.size(); ++n)
    accumulate(neg, pool.codes->row(pool.negative_ids[n]),
               pool.negative_weights[n]);

  const auto np = static_cast<double>(pool.positive_ids.size());
  const auto nn = static_cast<double>(pool.negative_ids.size());
  std::vector<double> sums(bits);
  for (std::size_t k = 0; k < bits; ++k) {
    if (np > 0 && nn > 0)
      sums[k] = nn * pos[k] - np * neg[k];
    else if (np > 0)
      sums[k] = pos[k];
    else
      sums[k] = -neg[k];
  }
  return sums;
}

PharosCode pgm_pharos(const WeightedPool& pool) {
  const auto sums = pharos_sums(pool);
  PharosCode out{sign_quantize(sums), {}};
  out.provenance.positives = pool.positive_ids.size();
  out.provenance.negatives = pool.negative_ids.size();
  out.provenance.scheme = pool.scheme;
  for (double s : sums) out.provenance.ties += (s == 0.0);
  return out;
}

LabelGroupedPool::LabelGroupedPool(const CodeTable& codes,
                                   std::span<const LabelVector> labels)
    : bits_(codes.bits()), size_(codes.size()) {
  if (labels.size() != codes.size())
    throw DimensionError("pool codes and labels differ in row count");
  std::map<std::vector<std::uint64_t>, std::size_t> slot;
  const auto bits = static_cast<std::size_t>(bits_);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::vector<std::uint64_t> key(labels[i].words().begin(), labels[i].words().end());
    auto [it, fresh] = slot.try_emplace(key, groups_.size());
    if (fresh) groups_.push_back({labels[i], 0, std::vector<std::int64_t>(bits, 0)});
    auto& g = groups_[it->second];
    ++g.count;
    const auto row = codes.row(i);
    for (std::size_t k = 0; k < bits; ++k) g.code_sum[k] += row.at(static_cast<int>(k));
  }
}

std::vector<double> LabelGroupedPool::sums(const LabelVector& query, WeightScheme scheme,
                                           PharosProvenance* provenance) const {
  if (size_ == 0) throw InvalidInput("pharos generation needs a non-empty pool");
  const auto bits = static_cast<std::size_t>(bits_);
  std::vector<double> pos(bits, 0.0), neg(bits, 0.0);
  std::size_t np = 0, nn = 0;
  for (const auto& g : groups_) {
    const bool positive = shares_label(query, g.labels);
    double s = positive ? 1.0 : 0.0;
    if (scheme == WeightScheme::dice) s = dice_similarity(query, g.labels);
    const double w = pair_weight(s, positive ? PairRole::positive : PairRole::negative);
    auto& side = positive ? pos : neg;
    (positive ? np : nn) += g.count;
    for (std::size_t k = 0; k < bits; ++k)
      side[k] += w * static_cast<double>(g.code_sum[k]);
  }
  std::vector<double> out(bits);
  for (std::size_t k = 0; k < bits; ++k) {
    if (np > 0 && nn > 0)
      out[k] = static_cast<double>(nn) * pos[k] - static_cast<double>(np) * neg[k];
    else if (np > 0)
      out[k] = pos[k];
    else
      out[k] = -neg[k];
  }
  if (provenance) {
    provenance->positives = np;
    provenance->negatives = nn;
    provenance->scheme = scheme;
    provenance->ties = static_cast<int>(std::count(out.begin(), out.end(), 0.0));
  }
  return out;
}

PharosCode LabelGroupedPool::pharos(const LabelVector& query, WeightScheme scheme) const {
  PharosCode out;
  out.code = sign_quantize(sums(query, scheme, &out.provenance));
  return out;
}

PharosCode pharos_for_query(const LabelVector& query, const CodeTable& codes,
                            std::span<const LabelVector> labels,
                            WeightScheme scheme) {
  return pgm_pharos(build_pool(query, codes, labels, scheme));
}

double psi_objective(CodeView b, const WeightedPool& pool) {
  if (!pool.codes) throw InvalidInput("psi_objective: pool has no code table");
  if (b.bits() != pool.bits())
    throw DimensionError("psi_objective: code length differs from pool");
  const auto& P = pool.positive_ids;
  const auto& N = pool.negative_ids;
  std::vector<double> dp(P.size());
  std::vector<double> dn(N.size());
  for (std::size_t i = 0; i < P.size(); ++i)
    dp[i] = pool.positive_weights[i] * hamming(b, pool.codes->row(P[i]));
  for (std::size_t j = 0; j < N.size(); ++j)
    dn[j] = pool.negative_weights[j] * hamming(b, pool.codes->row(N[j]));

  double psi = 0.0;
  if (!P.empty() && !N.empty()) {
    for (std::size_t i = 0; i < P.size(); ++i)
      for (std::size_t j = 0; j < N.size(); ++j) psi += dp[i] - dn[j];
  } else {
    for (double d : dp) psi += d;
    for (double d : dn) psi -= d;
  }
  return psi;
}

HashCode pharos_bruteforce(const WeightedPool& pool) {
  const int bits = pool.bits();
  if (bits > kBruteForceMaxBits)
    throw GuardError("pharos_bruteforce: K=" + std::to_string(bits) +
                     " exceeds the enumeration guard of " +
                     std::to_string(kBruteForceMaxBits));
  if (pool.empty()) throw InvalidInput("pharos_bruteforce: empty pool");
  HashCode best;
  double best_psi = std::numeric_limits<double>::infinity();
  for (std::uint64_t v = 0; v < (std::uint64_t{1} << bits); ++v) {
    const std::uint64_t word = v;
    const CodeView candidate(std::span(&word, 1), bits);
    const double psi = psi_objective(candidate, pool);
    if (psi < best_psi) {
      best_psi = psi;
      best = HashCode::from_view(candidate);
    }
  }
  return best;
}

HashCode anchor_code(std::span<const HashCode> codes) {
  if (codes.empty()) throw InvalidInput("anchor_code: empty code list");
  const int bits = codes.front().bits();
  std::vector<double> votes(static_cast<std::size_t>(bits), 0.0);
  for (const auto& c : codes) {
    if (c.bits() != bits)
      throw DimensionError("anchor_code: code lengths differ");
    accumulate(votes, c, 1.0);
  }
  return sign_quantize(votes);
}

std::string encode_labels(std::span<const LabelVector> labels, int classes) {
  detail::ByteWriter w;
  w.bytes("PHL1");
  w.u32(static_cast<std::uint32_t>(classes));
  w.u64(labels.size());
  for (const auto& y : labels) {
    if (y.classes() != classes)
      throw DimensionError("encode_labels: label vector length mismatch");
    for (int c = 0; c < classes; ++c) w.u8(y.has(c) ? 1 : 0);
  }
  return w.take();
}

std::vector<LabelVector> decode_labels(detail::ByteReader& r) {
  r.magic("PHL1");
  const auto at = r.offset();
  const auto classes = r.u32("class count");
  if (classes < 1) throw FormatError("class count must be positive", at);
  const auto rows = r.u64("row count");
  if (rows > r.remaining() / classes)
    throw FormatError("truncated label rows: header declares " +
                          std::to_string(rows) + " rows",
                      r.offset());
  std::vector<LabelVector> out;
  out.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto row_at = r.offset();
    const auto raw = r.bytes(classes, "label row");
    LabelVector y(static_cast<int>(classes));
    for (std::uint32_t c = 0; c < classes; ++c) {
      const auto v = static_cast<std::uint8_t>(raw[c]);
      if (v > 1) throw FormatError("label byte is not 0/1", row_at + c);
      if (v) y.set(static_cast<int>(c));
    }
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<LabelVector> decode_labels(std::string_view bytes) {
  detail::ByteReader r(bytes);
  auto out = decode_labels(r);
  if (!r.done()) throw FormatError("trailing bytes after label table", r.offset());
  return out;
}

void save_labels(const std::filesystem::path& path,
                 std::span<const LabelVector> labels, int classes) {
  detail::write_file(path, encode_labels(labels, classes));
}

std::vector<LabelVector> load_labels(const std::filesystem::path& path) {
  return decode_labels(detail::read_file(path));
}

}  // namespace pharos
