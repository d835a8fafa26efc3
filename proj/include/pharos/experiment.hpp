#pragma once

// Orchestration shared by the command-line tool and the acceptance suite:
// experiment configuration, pharos pools, batched attacks, evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pharos/adv_train.hpp"
#include "pharos/attack.hpp"
#include "pharos/data.hpp"
#include "pharos/model.hpp"
#include "pharos/retrieval.hpp"
#include "pharos/semantics.hpp"

namespace pharos {

enum class PoolSource { train, database };
std::string_view to_string(PoolSource source);
PoolSource parse_pool_source(std::string_view name);

struct ExperimentConfig {
  std::uint64_t seed = 42;
  int workers = 0;  // 0: available parallelism
  SyntheticParams data;
  TrainConfig train;
  AttackConfig attack;
  PoolSource pool = PoolSource::train;
  WeightScheme weights = WeightScheme::dice;
  std::size_t pool_cap = 0;  // 0: whole pool
  int adv_inner_steps = 10;
  std::size_t topn = 5000;
  std::vector<std::size_t> pn_grid{1, 10, 50, 100, 200, 500, 1000, 2000, 5000};

  // Seeds every stage from `seed`.
  void apply_seed(std::uint64_t s);
  int effective_workers() const;
  void validate() const;
};

// Strict parse: unknown keys, wrong types and out-of-range values throw
// ConfigError naming the offending field. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);
// The published JSON schema for the configuration file.
const char* config_schema();

// Codes and labels a pharos code is computed against.
struct PharosPool {
  CodeTable codes;
  std::vector<LabelVector> labels;
};

PharosPool build_pharos_pool(const HashNet& net, const Dataset& data,
                             PoolSource source, std::size_t cap,
                             std::uint64_t seed, int workers);

std::vector<PharosCode> pharos_codes(std::span<const LabelVector> queries,
                                     const PharosPool& pool, WeightScheme scheme,
                                     int workers);

// Anchor code of a randomly chosen label absent from the query's labels.
// Falls back to the negated own code when no such label exists in the pool.
HashCode targeted_anchor(const LabelVector& query, CodeView own,
                         const PharosPool& pool, std::uint64_t seed);

struct AttackRun {
  AdversarialSet set;
  std::vector<AdvResult> results;
  std::vector<double> seconds;  // per query, attack only
  double target_seconds = 0.0;  // pharos / anchor / own-code precomputation
  double attack_seconds = 0.0;
};

// Attacks each query row. Sample i uses the RNG stream derive(seed, i).
AttackRun run_attack(const HashNet& net, const Dataset& data,
                     std::span<const std::size_t> query_ids,
                     const PharosPool& pool, const AttackConfig& config,
                     WeightScheme scheme, int workers);

nlohmann::ordered_json timing_json(const AttackRun& run);

// Database index under `net`.
Index build_index(const HashNet& net, const Dataset& data, int workers);

MetricsReport evaluate_codes(const CodeTable& query_codes,
                             std::span<const LabelVector> query_labels,
                             const Index& index, std::size_t topn,
                             std::span<const std::size_t> grid, int workers,
                             bool with_curves = true);

}  // namespace pharos
