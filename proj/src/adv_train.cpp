#include "pharos/adv_train.hpp"

#include <cmath>
#include <numeric>

#include "pharos/detail/rng.hpp"
#include "pharos/errors.hpp"

namespace pharos {

double code_alignment(std::span<const std::vector<double>> outputs,
                      std::span<const HashCode> targets) {
  if (outputs.size() != targets.size() || outputs.empty())
    throw DimensionError("code_alignment: batch size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    total -= loss_pga_dagger(outputs[i], targets[i]);
  return total;
}

HashNet adv_train(const TrainingSet& data, const AttackConfig& attack,
                  const TrainConfig& config, const AdvTrainOptions& options,
                  std::vector<double>* epoch_loss, const AdvObserver& observer) {
  config.validate();
  attack.validate();
  if (options.inner_steps < 0) throw ConfigError("inner attack steps must be >= 0");
  if (data.size() == 0) throw InvalidInput("adv_train: empty dataset");
  if (data.size() < static_cast<std::size_t>(config.batch_size))
    throw InvalidInput("adv_train: fewer samples than one batch");

  HashNet net(static_cast<int>(data.dim), config.hidden, config.bits, config.seed);
  net.set_quantization_weight(config.quantization_weight);
  SgdMomentum opt(net.parameter_count(), config);
  detail::Rng order_rng(detail::derive_seed(config.seed, 1));

  AttackConfig inner = attack;
  inner.steps = options.inner_steps;

  const std::size_t n = data.size();
  const auto bits = static_cast<double>(config.bits);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> theta = net.parameters();
  std::vector<double> grad(theta.size());
  std::size_t iteration = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const CodeTable codes = encode_rows(net, data.features, data.dim);
    const LabelGroupedPool pool(codes, data.labels);
    std::vector<HashCode> pharos(n);
    for (std::size_t i = 0; i < n; ++i) pharos[i] = pool.pharos(data.labels[i], options.scheme).code;

    order_rng.shuffle(std::span(order));
    double total = 0.0;
    std::size_t batches = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start + 1 < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      AdvBatchRecord rec;
      rec.epoch = epoch;
      rec.iteration = iteration;
      std::vector<ForwardTrace> clean, adv;
      std::vector<std::vector<double>> clean_out, adv_out;
      std::vector<LabelVector> labels;
      for (std::size_t b = start; b < end; ++b) {
        const auto id = order[b];
        rec.ids.push_back(id);
        rec.targets.push_back(pharos[id]);
        labels.push_back(data.labels[id]);
        AttackConfig cfg = inner;
        cfg.seed = detail::derive_seed(attack.seed, iteration * batch + (b - start));
        auto res = pgd_attack(net, data.row(id), pharos[id], cfg);
        rec.adversarial.push_back(std::move(res.x));
        clean.push_back(net.forward_trace(data.row(id)));
        clean_out.emplace_back(clean.back().output().begin(), clean.back().output().end());
        adv.push_back(net.forward_trace(rec.adversarial.back()));
        adv_out.emplace_back(adv.back().output().begin(), adv.back().output().end());
      }
      std::vector<std::vector<double>> grad_h;
      rec.original_loss = pairwise_loss(clean_out, labels, config.quantization_weight, &grad_h);
      rec.alignment = code_alignment(adv_out, rec.targets);
      rec.loss = rec.original_loss - rec.alignment;
      if (observer) observer(net, rec);

      std::fill(grad.begin(), grad.end(), 0.0);
      const double scale = 1.0 / bits;
      std::vector<double> up(static_cast<std::size_t>(config.bits));
      for (std::size_t b = 0; b < rec.ids.size(); ++b) {
        net.accumulate_parameter_gradient(clean[b], grad_h[b], grad);
        for (std::size_t k = 0; k < up.size(); ++k)
          up[k] = -rec.targets[b].at(static_cast<int>(k)) * scale;
        net.accumulate_parameter_gradient(adv[b], up, grad);
      }
      opt.step(theta, grad);
      net.set_parameters(theta);
      total += rec.loss;
      ++batches;
      ++iteration;
    }
    if (!std::isfinite(total)) throw NumericalError("adversarial training diverged");
    if (epoch_loss) epoch_loss->push_back(total / static_cast<double>(batches));
  }
  return net;
}

}  // namespace pharos
