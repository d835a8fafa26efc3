#pragma once

// Synthetic multi-label retrieval data.
//
// C unit-norm class prototypes are drawn once. Every item draws each class
// independently with probability `label_density` (re-drawing empty sets); its
// feature is clamp(0.5 + 0.5 * unit(mean of active prototypes) + N(0, sigma^2))
// per coordinate. Rows [0, n_db) form the database, [n_db, n_db + n_query) the
// queries, and the training set is a seeded subset of the database.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pharos/model.hpp"
#include "pharos/semantics.hpp"

namespace pharos {

struct SyntheticParams {
  int classes = 8;
  int dim = 64;
  std::size_t n_train = 2000;
  std::size_t n_db = 8000;
  std::size_t n_query = 500;
  double label_density = 0.2;
  double noise_sigma = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const SyntheticParams&) const = default;
};

struct Dataset {
  SyntheticParams params;
  int classes = 0;
  std::size_t dim = 0;
  std::size_t n_db = 0;
  std::size_t n_query = 0;
  std::vector<float> features;  // rows x dim
  std::vector<LabelVector> labels;
  std::vector<std::size_t> train_ids;  // database rows, ascending

  std::size_t rows() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span(features).subspan(i * dim, dim);
  }
  std::vector<std::size_t> database_ids() const;
  std::vector<std::size_t> query_ids() const;

  // Throws InvalidInput when an invariant does not hold.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

// Unit-norm class prototypes for `params`, as drawn by gen_synthetic.
std::vector<std::vector<double>> class_prototypes(const SyntheticParams& params);

Dataset gen_synthetic(const SyntheticParams& params);

// Double-precision rows for `ids`.
std::vector<double> gather_features(const Dataset& data, std::span<const std::size_t> ids);
std::vector<LabelVector> gather_labels(const Dataset& data, std::span<const std::size_t> ids);
TrainingSet training_set(const Dataset& data);

// ".phf": "PHF1" | u32-prefixed JSON header | rows x dim f32 LE | .phl block.
// The header carries an FNV-1a checksum of everything after it.
std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// CSV with header "split,y0..y{C-1},x0..x{D-1}"; split is one of
// database|train|query (train rows are database rows used for training).
std::string export_csv(const Dataset& data);
Dataset import_csv(std::string_view text);

}  // namespace pharos
