#include "pharos/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "pharos/detail/binio.hpp"
#include "pharos/detail/rng.hpp"
#include "pharos/errors.hpp"
#include "pharos/retrieval.hpp"

namespace pharos {
namespace {

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0)
    for (double& x : v) x /= norm;
}

nlohmann::ordered_json params_json(const SyntheticParams& p) {
  nlohmann::ordered_json j;
  j["classes"] = p.classes;
  j["dim"] = p.dim;
  j["n_train"] = p.n_train;
  j["n_db"] = p.n_db;
  j["n_query"] = p.n_query;
  j["label_density"] = p.label_density;
  j["noise_sigma"] = p.noise_sigma;
  j["seed"] = p.seed;
  return j;
}

SyntheticParams params_from_json(const nlohmann::json& j) {
  SyntheticParams p;
  p.classes = j.at("classes").get<int>();
  p.dim = j.at("dim").get<int>();
  p.n_train = j.at("n_train").get<std::size_t>();
  p.n_db = j.at("n_db").get<std::size_t>();
  p.n_query = j.at("n_query").get<std::size_t>();
  p.label_density = j.at("label_density").get<double>();
  p.noise_sigma = j.at("noise_sigma").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

void SyntheticParams::validate() const {
  if (classes < 2) throw ConfigError("synthetic data: need at least 2 classes");
  if (classes > 64) throw ConfigError("synthetic data: at most 64 classes");
  if (dim < classes) throw ConfigError("synthetic data: dim must be >= classes");
  if (n_train < 1 || n_db < 1 || n_query < 1)
    throw ConfigError("synthetic data: split sizes must be >= 1");
  if (n_train > n_db)
    throw ConfigError("synthetic data: training set is drawn from the database, "
                      "so n_train must be <= n_db");
  if (!(label_density > 0.0 && label_density <= 1.0))
    throw ConfigError("synthetic data: label density must be in (0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("synthetic data: noise sigma must be >= 0");
}

std::vector<std::size_t> Dataset::database_ids() const {
  std::vector<std::size_t> ids(n_db);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

std::vector<std::size_t> Dataset::query_ids() const {
  std::vector<std::size_t> ids(n_query);
  std::iota(ids.begin(), ids.end(), n_db);
  return ids;
}

void Dataset::validate() const {
  if (rows() != n_db + n_query) throw InvalidInput("dataset: split sizes do not cover rows");
  if (features.size() != rows() * dim) throw InvalidInput("dataset: feature matrix size mismatch");
  for (const auto& y : labels) {
    if (y.classes() != classes) throw InvalidInput("dataset: label length mismatch");
    if (y.count() == 0) throw InvalidInput("dataset: row without labels");
  }
  for (float v : features)
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidInput("dataset: feature outside [0,1]");
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    if (train_ids[i] >= n_db) throw InvalidInput("dataset: training row outside database");
    if (i > 0 && train_ids[i] <= train_ids[i - 1])
      throw InvalidInput("dataset: training ids must be strictly ascending");
  }
}

std::vector<std::vector<double>> class_prototypes(const SyntheticParams& params) {
  detail::Rng rng(detail::derive_seed(params.seed, 0));
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(params.classes),
                                          std::vector<double>(static_cast<std::size_t>(params.dim)));
  for (auto& p : protos) {
    for (auto& v : p) v = rng.normal();
    normalize(p);
  }
  return protos;
}

Dataset gen_synthetic(const SyntheticParams& params) {
  params.validate();
  const auto protos = class_prototypes(params);
  detail::Rng rng(detail::derive_seed(params.seed, 1));

  Dataset data;
  data.params = params;
  data.classes = params.classes;
  data.dim = static_cast<std::size_t>(params.dim);
  data.n_db = params.n_db;
  data.n_query = params.n_query;
  const std::size_t rows = params.n_db + params.n_query;
  data.features.resize(rows * data.dim);
  data.labels.reserve(rows);

  std::vector<double> mean(data.dim);
  for (std::size_t r = 0; r < rows; ++r) {
    LabelVector y(params.classes);
    while (y.count() == 0)
      for (int c = 0; c < params.classes; ++c)
        y.set(c, rng.uniform() < params.label_density);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (int c = 0; c < params.classes; ++c)
      if (y.has(c))
        for (std::size_t k = 0; k < data.dim; ++k) mean[k] += protos[static_cast<std::size_t>(c)][k];
    normalize(mean);
    for (std::size_t k = 0; k < data.dim; ++k) {
      double v = 0.5 + 0.5 * mean[k];
      if (params.noise_sigma > 0) v += params.noise_sigma * rng.normal();
      data.features[r * data.dim + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    data.labels.push_back(std::move(y));
  }

  detail::Rng split_rng(detail::derive_seed(params.seed, 2));
  std::vector<std::size_t> db = data.database_ids();
  split_rng.shuffle(std::span(db));
  data.train_ids.assign(db.begin(), db.begin() + static_cast<std::ptrdiff_t>(params.n_train));
  std::sort(data.train_ids.begin(), data.train_ids.end());
  return data;
}

std::vector<double> gather_features(const Dataset& data, std::span<const std::size_t> ids) {
  std::vector<double> out;
  out.reserve(ids.size() * data.dim);
  for (auto i : ids) {
    if (i >= data.rows()) throw InvalidInput("dataset row out of range");
    for (float v : data.row(i)) out.push_back(v);
  }
  return out;
}

std::vector<LabelVector> gather_labels(const Dataset& data, std::span<const std::size_t> ids) {
  std::vector<LabelVector> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(data.labels.at(i));
  return out;
}

TrainingSet training_set(const Dataset& data) {
  TrainingSet set;
  set.dim = data.dim;
  set.features = gather_features(data, data.train_ids);
  set.labels = gather_labels(data, data.train_ids);
  return set;
}

std::string encode_dataset(const Dataset& data) {
  data.validate();
  detail::ByteWriter payload;
  for (float v : data.features) payload.f32(v);
  payload.bytes(encode_labels(data.labels, data.classes));

  nlohmann::ordered_json header;
  header["rows"] = data.rows();
  header["dim"] = data.dim;
  header["classes"] = data.classes;
  header["seed"] = data.params.seed;
  header["params"] = params_json(data.params);
  header["splits"] = {{"database", {0, data.n_db}},
                      {"query", {data.n_db, data.n_db + data.n_query}}};
  header["train_ids"] = data.train_ids;
  header["checksum"] = detail::hex64(detail::fnv1a64(payload.str()));

  detail::ByteWriter w;
  w.bytes("PHF1");
  w.prefixed(header.dump());
  w.bytes(payload.str());
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.magic("PHF1");
  const auto header_at = r.offset();
  const auto text = r.prefixed("dataset header");
  const auto payload_at = r.offset();
  Dataset data;
  std::string checksum;
  try {
    const auto header = nlohmann::json::parse(text);
    data.params = params_from_json(header.at("params"));
    data.dim = header.at("dim").get<std::size_t>();
    data.classes = header.at("classes").get<int>();
    const auto db = header.at("splits").at("database");
    const auto q = header.at("splits").at("query");
    data.n_db = db.at(1).get<std::size_t>() - db.at(0).get<std::size_t>();
    data.n_query = q.at(1).get<std::size_t>() - q.at(0).get<std::size_t>();
    data.train_ids = header.at("train_ids").get<std::vector<std::size_t>>();
    checksum = header.at("checksum").get<std::string>();
    if (header.at("rows").get<std::size_t>() != data.n_db + data.n_query)
      throw FormatError("dataset header: rows do not match splits", header_at);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what(), header_at);
  }
  if (detail::hex64(detail::fnv1a64(bytes.substr(payload_at))) != checksum)
    throw FormatError("dataset checksum mismatch (file truncated or modified)", payload_at);

  const std::size_t rows = data.n_db + data.n_query;
  if (data.dim == 0 || rows > r.remaining() / (4 * data.dim))
    throw FormatError("truncated feature block", r.offset());
  data.features.resize(rows * data.dim);
  for (auto& v : data.features) v = r.f32("feature");
  const auto labels_at = r.offset();
  data.labels = decode_labels(r);
  if (!r.done()) throw FormatError("trailing bytes after dataset", r.offset());
  if (data.labels.size() != rows)
    throw FormatError("label row count does not match header", labels_at);
  try {
    data.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(e.what(), payload_at);
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  detail::write_file(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(detail::read_file(path));
}

std::string export_csv(const Dataset& data) {
  std::string out = "split";
  for (int c = 0; c < data.classes; ++c) out += ",y" + std::to_string(c);
  for (std::size_t k = 0; k < data.dim; ++k) out += ",x" + std::to_string(k);
  out += "\n";
  std::vector<std::uint8_t> is_train(data.rows(), 0);
  for (auto i : data.train_ids) is_train[i] = 1;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    out += r >= data.n_db ? "query" : (is_train[r] ? "train" : "database");
    for (int c = 0; c < data.classes; ++c) out += data.labels[r].has(c) ? ",1" : ",0";
    for (float v : data.row(r)) out += "," + format_real(v);
    out += "\n";
  }
  return out;
}

Dataset import_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (lines.empty()) throw FormatError("CSV is empty", 0);
  const auto header = split_csv(lines[0]);
  if (header.empty() || header[0] != "split") throw FormatError("CSV header must start with 'split'", 0);
  int classes = 0;
  std::size_t dim = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (!header[i].empty() && header[i][0] == 'y' && dim == 0)
      ++classes;
    else if (!header[i].empty() && header[i][0] == 'x')
      ++dim;
    else
      throw FormatError("unexpected CSV column '" + std::string(header[i]) + "'", 0);
  }
  if (classes < 1 || dim < 1) throw FormatError("CSV needs y* and x* columns", 0);

  struct Row {
    int split;
    LabelVector y;
    std::vector<float> x;
  };
  std::vector<Row> rows;
  std::size_t offset = lines[0].size() + 1;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto cells = split_csv(lines[l]);
    if (cells.size() != header.size())
      throw FormatError("CSV line " + std::to_string(l + 1) + " has wrong column count", offset);
    Row row{0, LabelVector(classes), {}};
    if (cells[0] == "database") row.split = 0;
    else if (cells[0] == "train") row.split = 1;
    else if (cells[0] == "query") row.split = 2;
    else throw FormatError("CSV line " + std::to_string(l + 1) + ": unknown split", offset);
    for (int c = 0; c < classes; ++c) {
      const auto cell = cells[1 + static_cast<std::size_t>(c)];
      if (cell != "0" && cell != "1")
        throw FormatError("CSV line " + std::to_string(l + 1) + ": label must be 0/1", offset);
      row.y.set(c, cell == "1");
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const auto cell = cells[1 + static_cast<std::size_t>(classes) + k];
      float v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw FormatError("CSV line " + std::to_string(l + 1) + ": bad feature value", offset);
      row.x.push_back(v);
    }
    rows.push_back(std::move(row));
    offset += lines[l].size() + 1;
  }
  // Database (including train) rows first, then queries, preserving order.
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return (a.split == 2) < (b.split == 2); });
  Dataset data;
  data.classes = classes;
  data.dim = dim;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].split == 2) ++data.n_query;
    else ++data.n_db;
    if (rows[i].split == 1) data.train_ids.push_back(i);
    data.features.insert(data.features.end(), rows[i].x.begin(), rows[i].x.end());
    data.labels.push_back(std::move(rows[i].y));
  }
  data.params.classes = classes;
  data.params.dim = static_cast<int>(dim);
  data.params.n_db = data.n_db;
  data.params.n_query = data.n_query;
  data.params.n_train = data.train_ids.size();
  try {
    data.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("CSV: ") + e.what(), 0);
  }
  return data;
}

}  // namespace pharos
