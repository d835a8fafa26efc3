#include "pharos/retrieval.hpp"

#include <algorithm>
#include <charconv>

#include "pharos/detail/parallel.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

void check_queries(const QuerySet& q, const Index& index) {
  if (!q.codes) throw InvalidInput("query set has no codes");
  if (q.codes->size() != q.labels.size())
    throw DimensionError("query codes and labels differ in row count");
  if (q.codes->bits() != index.bits())
    throw DimensionError("query code length " + std::to_string(q.codes->bits()) +
                         " does not match index code length " +
                         std::to_string(index.bits()));
}

std::vector<std::uint8_t> relevance(const LabelVector& query, const Index& index,
                                    std::span<const std::size_t> ids) {
  std::vector<std::uint8_t> rel(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k)
    rel[k] = shares_label(query, index.labels()[ids[k]]);
  return rel;
}

}  // namespace

Index::Index(CodeTable codes, std::vector<LabelVector> labels)
    : codes_(std::move(codes)), labels_(std::move(labels)) {
  if (codes_.size() != labels_.size())
    throw DimensionError("index codes and labels differ in row count");
}

std::vector<std::size_t> rank(CodeView query, const Index& index, std::size_t topn) {
  if (topn < 1) throw InvalidInput("rank: topN must be >= 1");
  if (query.bits() != index.bits())
    throw DimensionError("rank: query code length does not match index");
  const auto& codes = index.codes();
  const std::size_t n = codes.size();
  const auto bits = static_cast<std::size_t>(index.bits());

  // Counting sort on distance keeps ids ascending within each bucket.
  std::vector<std::uint16_t> dist(n);
  std::vector<std::size_t> count(bits + 2, 0);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = static_cast<std::uint16_t>(hamming(query, codes.row(i)));
    ++count[dist[i] + 1];
  }
  for (std::size_t d = 1; d < count.size(); ++d) count[d] += count[d - 1];
  const std::size_t keep = std::min(topn, n);
  std::vector<std::size_t> out(keep);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t slot = count[dist[i]]++;
    if (slot < keep) out[slot] = i;
  }
  return out;
}

double average_precision(std::span<const std::uint8_t> relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (!relevance[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

MetricsReport map_at_n(const QuerySet& queries, const Index& index,
                       std::size_t topn, int workers) {
  check_queries(queries, index);
  if (queries.size() == 0) throw InvalidInput("map_at_n: empty query set");
  if (topn < 1) throw InvalidInput("map_at_n: topN must be >= 1");
  MetricsReport report;
  report.per_query_ap.resize(queries.size());
  detail::parallel_for(queries.size(), workers, [&](std::size_t q) {
    const auto ids = rank(queries.codes->row(q), index, topn);
    report.per_query_ap[q] = average_precision(relevance(queries.labels[q], index, ids));
  });
  double total = 0.0;
  for (double ap : report.per_query_ap) total += ap;
  report.map = total / static_cast<double>(queries.size());
  report.config["topn"] = topn;
  return report;
}

std::vector<CurvePoint> pr_curve(const QuerySet& queries, const Index& index,
                                 std::size_t* dropped, int workers) {
  check_queries(queries, index);
  const std::size_t n = index.size();
  // Per query cumulative hits at each cutoff; zero-relevant queries stay empty.
  std::vector<std::vector<std::uint32_t>> cumulative(queries.size());
  detail::parallel_for(queries.size(), workers, [&](std::size_t q) {
    const auto ids = rank(queries.codes->row(q), index, n);
    const auto rel = relevance(queries.labels[q], index, ids);
    std::vector<std::uint32_t> cum(n);
    std::uint32_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) cum[k] = hits += rel[k];
    if (hits > 0) cumulative[q] = std::move(cum);
  });
  std::size_t kept = 0;
  for (const auto& c : cumulative) kept += !c.empty();
  if (dropped) *dropped = queries.size() - kept;
  std::vector<CurvePoint> curve;
  if (kept == 0) return curve;
  curve.resize(n);
  for (const auto& cum : cumulative) {
    if (cum.empty()) continue;
    const double total = cum.back();
    for (std::size_t k = 0; k < n; ++k) {
      curve[k].x += cum[k] / total;
      curve[k].y += cum[k] / static_cast<double>(k + 1);
    }
  }
  for (auto& p : curve) {
    p.x /= static_cast<double>(kept);
    p.y /= static_cast<double>(kept);
  }
  return curve;
}

std::vector<CurvePoint> p_at_topn(const QuerySet& queries, const Index& index,
                                  std::span<const std::size_t> grid, int workers) {
  check_queries(queries, index);
  if (queries.size() == 0) throw InvalidInput("p_at_topn: empty query set");
  std::size_t deepest = 1;
  for (auto g : grid) {
    if (g < 1) throw InvalidInput("p_at_topn: grid points must be >= 1");
    deepest = std::max(deepest, std::min(g, index.size()));
  }
  std::vector<std::vector<double>> per_query(queries.size());
  detail::parallel_for(queries.size(), workers, [&](std::size_t q) {
    const auto ids = rank(queries.codes->row(q), index, deepest);
    const auto rel = relevance(queries.labels[q], index, ids);
    std::vector<std::uint32_t> cum(rel.size());
    std::uint32_t hits = 0;
    for (std::size_t k = 0; k < rel.size(); ++k) cum[k] = hits += rel[k];
    for (auto g : grid) {
      const std::size_t at = std::min(g, index.size());
      per_query[q].push_back(at == 0 ? 0.0 : cum[at - 1] / static_cast<double>(at));
    }
  });
  std::vector<CurvePoint> curve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    curve[i].x = static_cast<double>(std::min(grid[i], index.size()));
    for (const auto& pq : per_query) curve[i].y += pq[i];
    curve[i].y /= static_cast<double>(queries.size());
  }
  return curve;
}

MetricsReport evaluate_retrieval(const QuerySet& queries, const Index& index,
                                 std::size_t topn,
                                 std::span<const std::size_t> grid, int workers) {
  auto report = map_at_n(queries, index, topn, workers);
  report.pr = pr_curve(queries, index, &report.pr_dropped, workers);
  report.pn = p_at_topn(queries, index, grid, workers);
  return report;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["map"] = report.map;
  j["per_query_ap"] = report.per_query_ap;
  j["pr_dropped"] = report.pr_dropped;
  j["config"] = report.config;
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.map = j.at("map").get<double>();
    r.per_query_ap = j.at("per_query_ap").get<std::vector<double>>();
    r.pr_dropped = j.value("pr_dropped", std::size_t{0});
    r.config = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics JSON: ") + e.what(), 0);
  }
  return r;
}

std::string format_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string pr_csv(const MetricsReport& report) {
  std::string out = "recall,precision\n";
  for (const auto& p : report.pr) out += format_real(p.x) + "," + format_real(p.y) + "\n";
  return out;
}

std::string pn_csv(const MetricsReport& report) {
  std::string out = "topn,precision\n";
  for (const auto& p : report.pn)
    out += std::to_string(static_cast<std::size_t>(p.x)) + "," + format_real(p.y) + "\n";
  return out;
}

}  // namespace pharos
