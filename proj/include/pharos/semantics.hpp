#pragma once

// Label semantics and pharos code generation.
//
// A pharos code is the hash code closest (in weighted Hamming terms) to the
// codes of a query's positive samples and farthest from its negatives. The
// closed form is the coordinate-wise sign of
//
//   sum_i sum_j (w_i * b_i - w_j * b_j)  =  Nn * sum_i w_i b_i - Np * sum_j w_j b_j
//
// over positives i and negatives j. When one side is empty the surviving
// single sum is used as-is (no multiplication by a zero count).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pharos/hashcore.hpp"

namespace pharos {

// Multi-label annotation over C classes, packed like HashCode (bit c set when
// class c is present).
class LabelVector {
 public:
  LabelVector() = default;
  explicit LabelVector(int classes);
  static LabelVector from_bits(std::span<const std::uint8_t> bits);

  int classes() const { return classes_; }
  bool has(int c) const {
    return (words_[static_cast<std::size_t>(c) / 64] >> (c % 64)) & 1U;
  }
  void set(int c, bool on = true);
  int count() const;
  std::vector<std::uint8_t> to_bits() const;
  std::span<const std::uint64_t> words() const { return words_; }

  bool operator==(const LabelVector&) const = default;

 private:
  int classes_ = 0;
  std::vector<std::uint64_t> words_;
};

// |a ∩ b|.
int intersection(const LabelVector& a, const LabelVector& b);
bool shares_label(const LabelVector& a, const LabelVector& b);

// 2|a ∩ b| / (|a| + |b|). Throws InvalidInput on an all-zero vector.
double dice_similarity(const LabelVector& a, const LabelVector& b);

enum class PairRole { positive, negative };
// positive: w = s; negative: w = 1 - s.
double pair_weight(double similarity, PairRole role);

struct Partition {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};
Partition partition_pool(const LabelVector& query,
                         std::span<const LabelVector> pool);

enum class WeightScheme {
  dice,        // s from the Dice coefficient of the label sets
  label_free,  // s_i = 1 for positives, s_j = 0 for negatives
};
std::string_view to_string(WeightScheme scheme);
WeightScheme parse_weight_scheme(std::string_view name);

// Positive and negative rows of a shared code table, with their weights.
struct WeightedPool {
  const CodeTable* codes = nullptr;
  std::vector<std::size_t> positive_ids;
  std::vector<double> positive_weights;
  std::vector<std::size_t> negative_ids;
  std::vector<double> negative_weights;
  WeightScheme scheme = WeightScheme::dice;

  int bits() const { return codes ? codes->bits() : 0; }
  bool empty() const { return positive_ids.empty() && negative_ids.empty(); }
  // Throws on mismatched weight arrays, out-of-range ids, overlapping sides or
  // negative weights.
  void validate() const;
};

// Partitions `labels` against the query and weights each side by `scheme`.
WeightedPool build_pool(const LabelVector& query, const CodeTable& codes,
                        std::span<const LabelVector> labels,
                        WeightScheme scheme = WeightScheme::dice);

struct PharosProvenance {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  WeightScheme scheme = WeightScheme::dice;
  // Coordinates whose weighted sum was exactly zero (resolved to +1).
  int ties = 0;
};

struct PharosCode {
  HashCode code;
  PharosProvenance provenance;
};

// Per-coordinate weighted sums whose signs form the pharos code.
std::vector<double> pharos_sums(const WeightedPool& pool);

// Pharos Generation Method: sign of pharos_sums with sign(0) = +1.
PharosCode pgm_pharos(const WeightedPool& pool);

// Convenience: build_pool followed by pgm_pharos.
PharosCode pharos_for_query(const LabelVector& query, const CodeTable& codes,
                            std::span<const LabelVector> labels,
                            WeightScheme scheme = WeightScheme::dice);

// A pool indexed by distinct label set. Every member of a group gets the same
// weight for a given query, so each group contributes weight * (integer sum of
// its member codes) and a query costs O(groups * K) instead of O(N * K).
// Agrees with pharos_for_query up to floating-point summation order.
class LabelGroupedPool {
 public:
  LabelGroupedPool(const CodeTable& codes, std::span<const LabelVector> labels);
  int bits() const { return bits_; }
  std::size_t size() const { return size_; }
  std::size_t groups() const { return groups_.size(); }
  std::vector<double> sums(const LabelVector& query, WeightScheme scheme,
                           PharosProvenance* provenance = nullptr) const;
  PharosCode pharos(const LabelVector& query, WeightScheme scheme) const;

 private:
  struct Group {
    LabelVector labels;
    std::size_t count = 0;
    std::vector<std::int64_t> code_sum;  // sum of member signs per bit
  };
  int bits_ = 0;
  std::size_t size_ = 0;
  std::vector<Group> groups_;
};

// The literal double sum
//   psi(b) = sum_i sum_j [ w_i D_H(b, b_i) - w_j D_H(b, b_j) ],
// evaluated pair by pair. With one side empty, the other side's single sum.
double psi_objective(CodeView b, const WeightedPool& pool);

inline constexpr int kBruteForceMaxBits = 16;

// argmin of psi_objective over all 2^K codes, smallest packed integer on ties.
// Throws GuardError for K > 16.
HashCode pharos_bruteforce(const WeightedPool& pool);

// Coordinate-wise majority vote, sign(0) = +1.
HashCode anchor_code(std::span<const HashCode> codes);

// ".phl": "PHL1" | C u32 | N u64 | N rows of C bytes (0/1).
std::string encode_labels(std::span<const LabelVector> labels, int classes);
namespace detail {
class ByteReader;
}
std::vector<LabelVector> decode_labels(detail::ByteReader& reader);
std::vector<LabelVector> decode_labels(std::string_view bytes);
void save_labels(const std::filesystem::path& path,
                 std::span<const LabelVector> labels, int classes);
std::vector<LabelVector> load_labels(const std::filesystem::path& path);

}  // namespace pharos
