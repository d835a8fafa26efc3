#pragma once

// A small fully connected hashing network: D -> hidden... -> K, tanh after
// every layer, so outputs lie strictly inside (-1, 1)^K. The network exposes
// exact reverse-mode gradients with respect to its input (for attacks) and to
// its parameters (for training).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pharos/hashcore.hpp"
#include "pharos/semantics.hpp"

namespace pharos {

struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs

  bool operator==(const DenseLayer&) const = default;
};

// Cache of one forward pass: activations[0] is the input,
// activations[l + 1] is tanh output of layer l.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;
  std::span<const double> output() const { return activations.back(); }
};

class HashNet {
 public:
  HashNet() = default;
  // Glorot-uniform weights and zero biases drawn from `seed`.
  HashNet(int input_dim, std::vector<int> hidden, int bits, std::uint64_t seed);
  // Every parameter zero.
  static HashNet zeros(int input_dim, std::vector<int> hidden, int bits);

  int input_dim() const { return input_dim_; }
  int bits() const { return bits_; }
  const std::vector<int>& hidden() const { return hidden_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  double quantization_weight() const { return quantization_weight_; }
  void set_quantization_weight(double alpha) { quantization_weight_ = alpha; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  std::vector<double> forward(std::span<const double> x) const;
  ForwardTrace forward_trace(std::span<const double> x) const;

  // d(upstream . forward(x)) / dx.
  std::vector<double> input_gradient(std::span<const double> x,
                                     std::span<const double> upstream) const;
  std::vector<double> input_gradient(const ForwardTrace& trace,
                                     std::span<const double> upstream) const;

  // Adds d(upstream . output) / d(parameters) into `grad` (flat, in
  // parameter order: per layer weights then bias). The trace must come from
  // forward_trace on this net.
  void accumulate_parameter_gradient(const ForwardTrace& trace,
                                     std::span<const double> upstream,
                                     std::span<double> grad) const;

  // Flat parameter access in declared order.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  bool operator==(const HashNet&) const = default;

 private:
  void check_input(std::span<const double> x) const;
  // Backpropagates upstream through all layers. When `param_grad` is non-empty
  // parameter gradients are accumulated into it. Returns the input gradient.
  std::vector<double> backward(const ForwardTrace& trace,
                               std::span<const double> upstream,
                               std::span<double> param_grad) const;

  int input_dim_ = 0;
  int bits_ = 0;
  std::vector<int> hidden_;
  std::uint64_t seed_ = 0;
  double quantization_weight_ = 0.1;
  std::vector<DenseLayer> layers_;
};

// ".phm": "PHM1" | u32-length-prefixed JSON header | raw f64 LE parameters.
std::string encode_model(const HashNet& net);
HashNet decode_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const HashNet& net);
HashNet load_model(const std::filesystem::path& path);

// Row-major feature matrix with its labels; the input to training.
struct TrainingSet {
  std::size_t dim = 0;
  std::vector<double> features;  // rows x dim
  std::vector<LabelVector> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span(features).subspan(i * dim, dim);
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 32;
  int epochs = 50;
  std::uint64_t seed = 42;
  double quantization_weight = 0.1;
  int bits = 32;
  std::vector<int> hidden{256};

  void validate() const;
};

// Pairwise likelihood loss summed over the unordered pairs of a mini-batch plus
// the quantization penalty:
//   L = sum_{i<j} [log(1 + e^T_ij) - s_ij T_ij] + alpha * sum_i |h_i - sign(h_i)|^2
// with T_ij = h_i.h_j / 2 and s_ij = 1 when the items share a label.
// `grad_h` (batch x K) receives dL/dh when non-null.
double pairwise_loss(std::span<const std::vector<double>> outputs,
                     std::span<const LabelVector> labels, double alpha,
                     std::vector<std::vector<double>>* grad_h);

// Momentum SGD with weight decay; velocity += grad + wd * theta.
class SgdMomentum {
 public:
  SgdMomentum(std::size_t parameters, const TrainConfig& config);
  void step(std::span<double> theta, std::span<const double> grad);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<double> velocity_;
};

// Trains from a fresh Glorot-initialized net. Deterministic given config.seed.
// `epoch_loss` (optional) receives the mean batch loss of every epoch.
HashNet train_pairwise(const TrainingSet& data, const TrainConfig& config,
                       std::vector<double>* epoch_loss = nullptr);

// sign_quantize(forward(x)) for every row.
CodeTable encode_rows(const HashNet& net, std::span<const double> features,
                      std::size_t dim, int workers = 1);

}  // namespace pharos
