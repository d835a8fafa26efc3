#pragma once

// Hamming-ranking retrieval and its evaluation metrics.
//
// Ranking is by Hamming distance ascending, ties by database id ascending.
// Relevance of a database item to a query is "shares at least one label".
// AP over a ranked list of length N is
//   AP = (1/R_N) sum_k rel(k) * (relevant in top k) / k,
// where R_N counts the relevant items in the list (AP = 0 when R_N = 0).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pharos/hashcore.hpp"
#include "pharos/semantics.hpp"

namespace pharos {

class Index {
 public:
  Index(CodeTable codes, std::vector<LabelVector> labels);

  std::size_t size() const { return codes_.size(); }
  int bits() const { return codes_.bits(); }
  const CodeTable& codes() const { return codes_; }
  const std::vector<LabelVector>& labels() const { return labels_; }

 private:
  CodeTable codes_;
  std::vector<LabelVector> labels_;
};

// Top min(topn, N) ids.
std::vector<std::size_t> rank(CodeView query, const Index& index, std::size_t topn);

double average_precision(std::span<const std::uint8_t> relevance);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

struct MetricsReport {
  double map = 0.0;
  std::vector<double> per_query_ap;
  std::vector<CurvePoint> pr;  // (recall, precision)
  std::vector<CurvePoint> pn;  // (N, precision)
  std::size_t pr_dropped = 0;  // queries with no relevant database item
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

// Query codes with their labels.
struct QuerySet {
  const CodeTable* codes = nullptr;
  std::span<const LabelVector> labels;

  std::size_t size() const { return labels.size(); }
};

MetricsReport map_at_n(const QuerySet& queries, const Index& index,
                       std::size_t topn = 5000, int workers = 1);

// Macro-averaged precision/recall at every rank cutoff 1..N over the full
// database ranking. Queries without any relevant item are excluded and
// counted in `dropped`.
std::vector<CurvePoint> pr_curve(const QuerySet& queries, const Index& index,
                                 std::size_t* dropped = nullptr, int workers = 1);

// Mean precision within the top N for each grid point (clamped to N).
std::vector<CurvePoint> p_at_topn(const QuerySet& queries, const Index& index,
                                  std::span<const std::size_t> grid, int workers = 1);

// map_at_n plus both curves.
MetricsReport evaluate_retrieval(const QuerySet& queries, const Index& index,
                                 std::size_t topn,
                                 std::span<const std::size_t> grid,
                                 int workers = 1);

// {"map", "per_query_ap", "config", "pr_dropped"}.
nlohmann::ordered_json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);
std::string pr_csv(const MetricsReport& report);  // "recall,precision"
std::string pn_csv(const MetricsReport& report);  // "topn,precision"

// Shortest round-trip decimal rendering used in CSV output.
std::string format_real(double v);

}  // namespace pharos
