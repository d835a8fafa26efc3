#pragma once

// Adversarial training: at every epoch the training set is re-encoded and a
// pharos code is computed for each item against the whole training pool;
// each mini-batch is then attacked with the configured method and the network
// minimizes
//
//   L_adv = L_ori(clean batch) - sum_i (1/K) b*_i . f(x'_i)
//
// which pulls adversarial outputs back toward the item's true semantics.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pharos/attack.hpp"
#include "pharos/model.hpp"
#include "pharos/semantics.hpp"

namespace pharos {

struct AdvTrainOptions {
  int inner_steps = 10;
  WeightScheme scheme = WeightScheme::dice;
};

// What one optimizer step saw, reported before the parameters change.
struct AdvBatchRecord {
  int epoch = 0;
  std::size_t iteration = 0;
  std::vector<std::size_t> ids;
  std::vector<HashCode> targets;
  std::vector<std::vector<double>> adversarial;
  double original_loss = 0.0;
  double alignment = 0.0;  // sum_i (1/K) b*_i . f(x'_i)
  double loss = 0.0;
};

using AdvObserver = std::function<void(const HashNet&, const AdvBatchRecord&)>;

// sum_i (1/K) b_i . h_i.
double code_alignment(std::span<const std::vector<double>> outputs,
                      std::span<const HashCode> targets);

HashNet adv_train(const TrainingSet& data, const AttackConfig& attack,
                  const TrainConfig& config, const AdvTrainOptions& options = {},
                  std::vector<double>* epoch_loss = nullptr,
                  const AdvObserver& observer = {});

}  // namespace pharos
