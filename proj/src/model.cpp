#include "pharos/model.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "pharos/detail/binio.hpp"
#include "pharos/detail/parallel.hpp"
#include "pharos/detail/rng.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

std::vector<int> layer_widths(int input_dim, const std::vector<int>& hidden,
                              int bits) {
  if (input_dim < 1) throw InvalidInput("input dimension must be positive");
  if (bits < 1 || bits > kMaxBits)
    throw InvalidInput("output bits must be in [1, 4096]");
  std::vector<int> widths{input_dim};
  for (int h : hidden) {
    if (h < 1) throw InvalidInput("hidden widths must be positive");
    widths.push_back(h);
  }
  widths.push_back(bits);
  return widths;
}

void dense_tanh(const DenseLayer& layer, std::span<const double> in,
                std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(layer.outputs));
  const auto n_in = static_cast<std::size_t>(layer.inputs);
  for (std::size_t o = 0; o < out.size(); ++o) {
    const double* w = layer.weights.data() + o * n_in;
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in[i];
    out[o] = std::tanh(acc);
  }
}

}  // namespace

HashNet::HashNet(int input_dim, std::vector<int> hidden, int bits,
                 std::uint64_t seed)
    : HashNet(zeros(input_dim, std::move(hidden), bits)) {
  seed_ = seed;
  detail::Rng rng(seed);
  for (auto& layer : layers_) {
    const double limit = std::sqrt(6.0 / (layer.inputs + layer.outputs));
    for (auto& w : layer.weights) w = rng.uniform(-limit, limit);
  }
}

HashNet HashNet::zeros(int input_dim, std::vector<int> hidden, int bits) {
  const auto widths = layer_widths(input_dim, hidden, bits);
  HashNet net;
  net.input_dim_ = input_dim;
  net.bits_ = bits;
  net.hidden_ = std::move(hidden);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    layer.inputs = widths[l];
    layer.outputs = widths[l + 1];
    layer.weights.assign(static_cast<std::size_t>(layer.inputs) * layer.outputs, 0.0);
    layer.bias.assign(static_cast<std::size_t>(layer.outputs), 0.0);
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

std::size_t HashNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

void HashNet::check_input(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(input_dim_))
    throw DimensionError("network expects input of dimension " +
                         std::to_string(input_dim_) + ", got " +
                         std::to_string(x.size()));
}

ForwardTrace HashNet::forward_trace(std::span<const double> x) const {
  check_input(x);
  ForwardTrace trace;
  trace.activations.resize(layers_.size() + 1);
  trace.activations[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l)
    dense_tanh(layers_[l], trace.activations[l], trace.activations[l + 1]);
  return trace;
}

std::vector<double> HashNet::forward(std::span<const double> x) const {
  auto trace = forward_trace(x);
  return std::move(trace.activations.back());
}

std::vector<double> HashNet::backward(const ForwardTrace& trace,
                                      std::span<const double> upstream,
                                      std::span<double> param_grad) const {
  if (upstream.size() != static_cast<std::size_t>(bits_))
    throw DimensionError("upstream gradient must have length " +
                         std::to_string(bits_));
  // Parameter offsets per layer.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    offset[l + 1] = offset[l] + layers_[l].weights.size() + layers_[l].bias.size();

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& out = trace.activations[l + 1];
    const auto& in = trace.activations[l];
    const auto n_in = static_cast<std::size_t>(layer.inputs);
    // Through tanh: d/dz = (1 - y^2).
    for (std::size_t o = 0; o < delta.size(); ++o) delta[o] *= 1.0 - out[o] * out[o];
    if (!param_grad.empty()) {
      double* gw = param_grad.data() + offset[l];
      double* gb = gw + layer.weights.size();
      for (std::size_t o = 0; o < delta.size(); ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* row = gw + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) row[i] += d * in[i];
        gb[o] += d;
      }
    }
    next.assign(n_in, 0.0);
    for (std::size_t o = 0; o < delta.size(); ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* w = layer.weights.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) next[i] += d * w[i];
    }
    delta.swap(next);
  }
  return delta;
}

std::vector<double> HashNet::input_gradient(
    std::span<const double> x, std::span<const double> upstream) const {
  return backward(forward_trace(x), upstream, {});
}

std::vector<double> HashNet::input_gradient(
    const ForwardTrace& trace, std::span<const double> upstream) const {
  return backward(trace, upstream, {});
}

void HashNet::accumulate_parameter_gradient(const ForwardTrace& trace,
                                            std::span<const double> upstream,
                                            std::span<double> grad) const {
  if (grad.size() != parameter_count())
    throw DimensionError("parameter gradient buffer has wrong size");
  backward(trace, upstream, grad);
}

std::vector<double> HashNet::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void HashNet::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count())
    throw DimensionError("parameter vector has wrong size");
  std::size_t at = 0;
  for (auto& l : layers_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.weights.size(), l.weights.begin());
    at += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.begin());
    at += l.bias.size();
  }
}

std::string encode_model(const HashNet& net) {
  nlohmann::ordered_json header;
  header["input_dim"] = net.input_dim();
  header["hidden"] = net.hidden();
  header["bits"] = net.bits();
  header["hidden_activation"] = "tanh";
  header["output_activation"] = "tanh";
  header["seed"] = net.seed();
  header["alpha"] = net.quantization_weight();
  header["parameters"] = net.parameter_count();
  detail::ByteWriter w;
  w.bytes("PHM1");
  w.prefixed(header.dump());
  for (double p : net.parameters()) w.f64(p);
  return w.take();
}

HashNet decode_model(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.magic("PHM1");
  const auto header_at = r.offset();
  const auto text = r.prefixed("model header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what(),
                      header_at);
  }
  HashNet net;
  try {
    if (header.at("hidden_activation") != "tanh" ||
        header.at("output_activation") != "tanh")
      throw FormatError("unsupported activation in model header", header_at);
    net = HashNet::zeros(header.at("input_dim").get<int>(),
                         header.at("hidden").get<std::vector<int>>(),
                         header.at("bits").get<int>());
    if (header.at("parameters").get<std::size_t>() != net.parameter_count())
      throw FormatError("parameter count does not match declared dims", header_at);
    std::vector<double> flat(net.parameter_count());
    for (auto& p : flat) p = r.f64("parameter");
    net.set_parameters(flat);
    net.set_quantization_weight(header.at("alpha").get<double>());
    net.set_seed(header.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header field error: ") + e.what(),
                      header_at);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("model header dims invalid: ") + e.what(),
                      header_at);
  }
  if (!r.done()) throw FormatError("trailing bytes after parameters", r.offset());
  return net;
}

void save_model(const std::filesystem::path& path, const HashNet& net) {
  detail::write_file(path, encode_model(net));
}

HashNet load_model(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(momentum >= 0 && momentum < 1) ||
      !(weight_decay >= 0))
    throw ConfigError("train config: rates must be positive, momentum in [0,1)");
  if (batch_size < 2) throw ConfigError("train config: batch size must be >= 2");
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (!(quantization_weight >= 0))
    throw ConfigError("train config: quantization weight must be >= 0");
  if (bits < 1 || bits > kMaxBits) throw ConfigError("train config: bad bit count");
}

double pairwise_loss(std::span<const std::vector<double>> outputs,
                     std::span<const LabelVector> labels, double alpha,
                     std::vector<std::vector<double>>* grad_h) {
  const std::size_t n = outputs.size();
  if (n != labels.size()) throw DimensionError("pairwise_loss: batch size mismatch");
  if (n < 2) throw InvalidInput("pairwise_loss: need at least two samples");
  const std::size_t bits = outputs[0].size();
  if (grad_h) grad_h->assign(n, std::vector<double>(bits, 0.0));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double theta =
          0.5 * std::inner_product(outputs[i].begin(), outputs[i].end(),
                                   outputs[j].begin(), 0.0);
      const double s = shares_label(labels[i], labels[j]) ? 1.0 : 0.0;
      // log(1 + e^x), stable for large |x|.
      const double softplus =
          theta > 0 ? theta + std::log1p(std::exp(-theta)) : std::log1p(std::exp(theta));
      loss += softplus - s * theta;
      if (grad_h) {
        const double sigma = 1.0 / (1.0 + std::exp(-theta));
        const double g = 0.5 * (sigma - s);
        auto& gi = (*grad_h)[i];
        auto& gj = (*grad_h)[j];
        for (std::size_t k = 0; k < bits; ++k) {
          gi[k] += g * outputs[j][k];
          gj[k] += g * outputs[i][k];
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < bits; ++k) {
      const double h = outputs[i][k];
      const double r = h - (h >= 0 ? 1.0 : -1.0);
      loss += alpha * r * r;
      if (grad_h) (*grad_h)[i][k] += 2.0 * alpha * r;
    }
  }
  return loss;
}

SgdMomentum::SgdMomentum(std::size_t parameters, const TrainConfig& config)
    : lr_(config.learning_rate),
      momentum_(config.momentum),
      weight_decay_(config.weight_decay),
      velocity_(parameters, 0.0) {}

void SgdMomentum::step(std::span<double> theta, std::span<const double> grad) {
  for (std::size_t p = 0; p < theta.size(); ++p) {
    velocity_[p] = momentum_ * velocity_[p] + grad[p] + weight_decay_ * theta[p];
    theta[p] -= lr_ * velocity_[p];
  }
}

HashNet train_pairwise(const TrainingSet& data, const TrainConfig& config,
                       std::vector<double>* epoch_loss) {
  config.validate();
  if (data.size() == 0) throw InvalidInput("train_pairwise: empty dataset");
  if (data.size() < static_cast<std::size_t>(config.batch_size))
    throw InvalidInput("train_pairwise: fewer samples than one batch");

  HashNet net(static_cast<int>(data.dim), config.hidden, config.bits, config.seed);
  net.set_quantization_weight(config.quantization_weight);
  SgdMomentum opt(net.parameter_count(), config);
  detail::Rng order_rng(detail::derive_seed(config.seed, 1));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> theta = net.parameters();
  std::vector<double> grad(theta.size());
  std::vector<ForwardTrace> traces;
  std::vector<std::vector<double>> outputs;
  std::vector<LabelVector> batch_labels;
  std::vector<std::vector<double>> grad_h;

  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(std::span(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      traces.clear();
      outputs.clear();
      batch_labels.clear();
      for (std::size_t b = start; b < end; ++b) {
        traces.push_back(net.forward_trace(data.row(order[b])));
        outputs.emplace_back(traces.back().output().begin(),
                             traces.back().output().end());
        batch_labels.push_back(data.labels[order[b]]);
      }
      total += pairwise_loss(outputs, batch_labels, config.quantization_weight, &grad_h);
      ++batches;
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < traces.size(); ++b)
        net.accumulate_parameter_gradient(traces[b], grad_h[b], grad);
      opt.step(theta, grad);
      net.set_parameters(theta);
    }
    if (!std::isfinite(total)) throw NumericalError("training loss diverged");
    if (epoch_loss) epoch_loss->push_back(total / static_cast<double>(batches));
  }
  return net;
}

CodeTable encode_rows(const HashNet& net, std::span<const double> features,
                      std::size_t dim, int workers) {
  if (dim != static_cast<std::size_t>(net.input_dim()))
    throw DimensionError("encode: feature dimension " + std::to_string(dim) +
                         " does not match network input " +
                         std::to_string(net.input_dim()));
  const std::size_t rows = dim == 0 ? 0 : features.size() / dim;
  std::vector<HashCode> codes(rows);
  detail::parallel_for(rows, workers, [&](std::size_t i) {
    codes[i] = sign_quantize(net.forward(features.subspan(i * dim, dim)));
  });
  CodeTable table(net.bits());
  table.reserve(rows);
  for (const auto& c : codes) table.push_back(c);
  return table;
}

}  // namespace pharos
