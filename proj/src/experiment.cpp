#include "pharos/experiment.hpp"

#include <chrono>
#include <set>

#include "pharos/detail/binio.hpp"
#include "pharos/detail/parallel.hpp"
#include "pharos/detail/rng.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const char kSchema[] = R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "pharos experiment configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "workers": {"type": "integer", "minimum": 0},
    "data": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "classes": {"type": "integer", "minimum": 2, "maximum": 64},
        "dim": {"type": "integer", "minimum": 2},
        "n_train": {"type": "integer", "minimum": 1},
        "n_db": {"type": "integer", "minimum": 1},
        "n_query": {"type": "integer", "minimum": 1},
        "label_density": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "noise_sigma": {"type": "number", "minimum": 0}
      }
    },
    "model": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "bits": {"type": "integer", "minimum": 1, "maximum": 4096},
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "epochs": {"type": "integer", "minimum": 0},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 2},
        "alpha": {"type": "number", "minimum": 0}
      }
    },
    "attack": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "method": {"enum": ["pga", "pga-dagger", "pga-weighted", "hag", "anchor-targeted"]},
        "epsilon": {"type": "string", "pattern": "^[0-9]+(/[0-9]+|\\.[0-9]*)?$"},
        "eta": {"type": "string", "pattern": "^[0-9]+(/[0-9]+|\\.[0-9]*)?$"},
        "steps": {"type": "integer", "minimum": 0},
        "t": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 0},
        "pool": {"enum": ["train", "database"]},
        "weights": {"enum": ["dice", "label-free"]},
        "pool_cap": {"type": "integer", "minimum": 0},
        "adv_inner_steps": {"type": "integer", "minimum": 0}
      }
    },
    "eval": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "topn": {"type": "integer", "minimum": 1},
        "pn_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}}
      }
    }
  }
})";

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!known.contains(key))
      throw ConfigError("config: unknown field '" + where + (where.empty() ? "" : ".") + key + "'");
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: field '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

std::string_view to_string(PoolSource source) {
  return source == PoolSource::train ? "train" : "database";
}

PoolSource parse_pool_source(std::string_view name) {
  if (name == "train") return PoolSource::train;
  if (name == "database") return PoolSource::database;
  throw ConfigError("unknown pool source \"" + std::string(name) + "\" (expected train or database)");
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
  attack.seed = s;
}

int ExperimentConfig::effective_workers() const {
  return workers > 0 ? workers : detail::default_workers();
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  attack.validate();
  if (workers < 0) throw ConfigError("config: workers must be >= 0");
  if (adv_inner_steps < 0) throw ConfigError("config: adv_inner_steps must be >= 0");
  if (topn < 1) throw ConfigError("config: topn must be >= 1");
  for (auto g : pn_grid)
    if (g < 1) throw ConfigError("config: pn_grid entries must be >= 1");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  reject_unknown(j, {"seed", "workers", "data", "model", "attack", "eval"}, "");
  std::uint64_t seed = c.seed;
  read(j, "seed", seed, "");
  c.apply_seed(seed);
  read(j, "workers", c.workers, "");
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"classes", "dim", "n_train", "n_db", "n_query", "label_density", "noise_sigma"}, "data");
    read(d, "classes", c.data.classes, "data");
    read(d, "dim", c.data.dim, "data");
    read(d, "n_train", c.data.n_train, "data");
    read(d, "n_db", c.data.n_db, "data");
    read(d, "n_query", c.data.n_query, "data");
    read(d, "label_density", c.data.label_density, "data");
    read(d, "noise_sigma", c.data.noise_sigma, "data");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"bits", "hidden", "epochs", "learning_rate", "momentum", "weight_decay", "batch_size", "alpha"}, "model");
    read(m, "bits", c.train.bits, "model");
    read(m, "hidden", c.train.hidden, "model");
    read(m, "epochs", c.train.epochs, "model");
    read(m, "learning_rate", c.train.learning_rate, "model");
    read(m, "momentum", c.train.momentum, "model");
    read(m, "weight_decay", c.train.weight_decay, "model");
    read(m, "batch_size", c.train.batch_size, "model");
    read(m, "alpha", c.train.quantization_weight, "model");
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    reject_unknown(a, {"method", "epsilon", "eta", "steps", "t", "pool", "weights", "pool_cap", "adv_inner_steps"}, "attack");
    std::string text;
    if (a.contains("method")) {
      read(a, "method", text, "attack");
      c.attack.method = parse_attack_method(text);
    }
    if (a.contains("epsilon")) {
      read(a, "epsilon", text, "attack");
      c.attack.epsilon = Budget::parse(text);
    }
    if (a.contains("eta")) {
      read(a, "eta", text, "attack");
      c.attack.eta = Budget::parse(text);
    }
    read(a, "steps", c.attack.steps, "attack");
    read(a, "t", c.attack.margin, "attack");
    if (a.contains("pool")) {
      read(a, "pool", text, "attack");
      c.pool = parse_pool_source(text);
    }
    if (a.contains("weights")) {
      read(a, "weights", text, "attack");
      c.weights = parse_weight_scheme(text);
    }
    read(a, "pool_cap", c.pool_cap, "attack");
    read(a, "adv_inner_steps", c.adv_inner_steps, "attack");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown(e, {"topn", "pn_grid"}, "eval");
    read(e, "topn", c.topn, "eval");
    read(e, "pn_grid", c.pn_grid, "eval");
  }
  c.validate();
  return c;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["data"] = {{"classes", c.data.classes},
               {"dim", c.data.dim},
               {"n_train", c.data.n_train},
               {"n_db", c.data.n_db},
               {"n_query", c.data.n_query},
               {"label_density", c.data.label_density},
               {"noise_sigma", c.data.noise_sigma}};
  j["model"] = {{"bits", c.train.bits},
                {"hidden", c.train.hidden},
                {"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"alpha", c.train.quantization_weight}};
  j["attack"] = {{"method", to_string(c.attack.method)},
                 {"epsilon", c.attack.epsilon.str()},
                 {"eta", c.attack.eta.str()},
                 {"steps", c.attack.steps},
                 {"t", c.attack.margin},
                 {"pool", to_string(c.pool)},
                 {"weights", to_string(c.weights)},
                 {"pool_cap", c.pool_cap},
                 {"adv_inner_steps", c.adv_inner_steps}};
  j["eval"] = {{"topn", c.topn}, {"pn_grid", c.pn_grid}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

const char* config_schema() { return kSchema; }

PharosPool build_pharos_pool(const HashNet& net, const Dataset& data,
                             PoolSource source, std::size_t cap,
                             std::uint64_t seed, int workers) {
  std::vector<std::size_t> ids =
      source == PoolSource::train ? data.train_ids : data.database_ids();
  if (ids.empty()) throw InvalidInput("pharos pool is empty");
  if (cap > 0 && cap < ids.size()) {
    detail::Rng rng(detail::derive_seed(seed, 3));
    rng.shuffle(std::span(ids));
    ids.resize(cap);
    std::sort(ids.begin(), ids.end());
  }
  const auto features = gather_features(data, ids);
  return {encode_rows(net, features, data.dim, workers), gather_labels(data, ids)};
}

std::vector<PharosCode> pharos_codes(std::span<const LabelVector> queries,
                                     const PharosPool& pool, WeightScheme scheme,
                                     int workers) {
  const LabelGroupedPool grouped(pool.codes, pool.labels);
  std::vector<PharosCode> out(queries.size());
  detail::parallel_for(queries.size(), workers, [&](std::size_t q) {
    out[q] = grouped.pharos(queries[q], scheme);
  });
  return out;
}

HashCode targeted_anchor(const LabelVector& query, CodeView own,
                         const PharosPool& pool, std::uint64_t seed) {
  std::vector<int> candidates;
  for (int c = 0; c < query.classes(); ++c)
    if (!query.has(c)) candidates.push_back(c);
  if (!candidates.empty()) {
    detail::Rng rng(seed);
    const int target = candidates[rng.below(candidates.size())];
    std::vector<HashCode> members;
    for (std::size_t i = 0; i < pool.labels.size(); ++i)
      if (pool.labels[i].has(target)) members.push_back(pool.codes.code(i));
    if (!members.empty()) return anchor_code(members);
  }
  return negate(own);
}

AttackRun run_attack(const HashNet& net, const Dataset& data,
                     std::span<const std::size_t> query_ids,
                     const PharosPool& pool, const AttackConfig& config,
                     WeightScheme scheme, int workers) {
  config.validate();
  if (data.dim != static_cast<std::size_t>(net.input_dim()))
    throw DimensionError("dataset dim " + std::to_string(data.dim) +
                         " does not match model input " + std::to_string(net.input_dim()));
  if (pool.codes.bits() != net.bits())
    throw DimensionError("pharos pool code length does not match model");
  const std::size_t n = query_ids.size();
  const auto features = gather_features(data, query_ids);
  const auto labels = gather_labels(data, query_ids);
  auto row = [&](std::size_t i) { return std::span(features).subspan(i * data.dim, data.dim); };

  AttackRun run;
  auto start = Clock::now();
  std::vector<HashCode> targets(n);
  switch (config.method) {
    case AttackMethod::pga:
    case AttackMethod::pga_dagger:
    case AttackMethod::pga_weighted: {
      auto pharos = pharos_codes(labels, pool, scheme, workers);
      for (std::size_t i = 0; i < n; ++i) targets[i] = std::move(pharos[i].code);
      break;
    }
    case AttackMethod::hag:
      break;  // own code is computed inside attack_hag
    case AttackMethod::anchor_targeted:
      detail::parallel_for(n, workers, [&](std::size_t i) {
        const auto own = sign_quantize(net.forward(row(i)));
        targets[i] = targeted_anchor(labels[i], own, pool,
                                     detail::derive_seed(config.seed ^ 0x7461726765740000ULL, i));
      });
      break;
  }
  run.target_seconds = seconds_since(start);

  run.results.resize(n);
  run.seconds.resize(n);
  start = Clock::now();
  detail::parallel_for(n, workers, [&](std::size_t i) {
    const auto t0 = Clock::now();
    AttackConfig cfg = config;
    cfg.seed = detail::derive_seed(config.seed, i);
    switch (config.method) {
      case AttackMethod::hag:
        run.results[i] = attack_hag(net, row(i), cfg);
        break;
      case AttackMethod::anchor_targeted:
        run.results[i] = attack_targeted(net, row(i), targets[i], cfg);
        break;
      default:
        run.results[i] = pgd_attack(net, row(i), targets[i], cfg);
    }
    run.seconds[i] = seconds_since(t0);
  });
  run.attack_seconds = seconds_since(start);

  run.set.config = config;
  run.set.dim = data.dim;
  run.set.codes = CodeTable(net.bits());
  run.set.codes.reserve(n);
  run.set.inputs.reserve(n * data.dim);
  for (const auto& r : run.results) {
    for (double v : r.x) run.set.inputs.push_back(static_cast<float>(v));
    run.set.codes.push_back(r.code);
  }
  return run;
}

nlohmann::ordered_json timing_json(const AttackRun& run) {
  nlohmann::ordered_json j;
  const auto n = static_cast<double>(std::max<std::size_t>(1, run.results.size()));
  const double total = run.target_seconds + run.attack_seconds;
  j["method"] = to_string(run.set.config.method);
  j["queries"] = run.results.size();
  j["target_seconds"] = run.target_seconds;
  j["attack_seconds"] = run.attack_seconds;
  j["seconds_per_image"] = total / n;
  j["target_share"] = total > 0 ? run.target_seconds / total : 0.0;
  j["per_sample_seconds"] = run.seconds;
  return j;
}

Index build_index(const HashNet& net, const Dataset& data, int workers) {
  const auto ids = data.database_ids();
  return Index(encode_rows(net, gather_features(data, ids), data.dim, workers),
               gather_labels(data, ids));
}

MetricsReport evaluate_codes(const CodeTable& query_codes,
                             std::span<const LabelVector> query_labels,
                             const Index& index, std::size_t topn,
                             std::span<const std::size_t> grid, int workers,
                             bool with_curves) {
  const QuerySet q{&query_codes, query_labels};
  if (with_curves) return evaluate_retrieval(q, index, topn, grid, workers);
  return map_at_n(q, index, topn, workers);
}

}  // namespace pharos
