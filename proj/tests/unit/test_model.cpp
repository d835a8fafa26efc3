#include <cmath>
#include <random>

#include "doctest.h"
#include "pharos/adv_train.hpp"
#include "pharos/errors.hpp"
#include "pharos/model.hpp"
#include "support.hpp"

using namespace pharos;

namespace {

// Plain matrix arithmetic over the layer tables.
std::vector<double> oracle_forward(const HashNet& net, std::vector<double> a) {
  for (const auto& layer : net.layers()) {
    std::vector<double> z(static_cast<std::size_t>(layer.outputs));
    for (int o = 0; o < layer.outputs; ++o) {
      double acc = layer.bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < layer.inputs; ++i)
        acc += layer.weights[static_cast<std::size_t>(o * layer.inputs + i)] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = std::tanh(acc);
    }
    a = std::move(z);
  }
  return a;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// |analytic - numeric| <= 1e-4 * max(|analytic|, |numeric|, 1e-4).
bool close_relative(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) <= 1e-4 * scale;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = testing::uniform(rng, lo, hi);
  return v;
}

TrainingSet tiny_set(std::uint64_t seed, std::size_t n, std::size_t dim, int classes) {
  std::mt19937_64 rng(seed);
  TrainingSet set;
  set.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    set.labels.push_back(testing::random_labels(rng, classes));
    for (std::size_t d = 0; d < dim; ++d) set.features.push_back(testing::uniform(rng));
  }
  return set;
}

}  // namespace

TEST_CASE("zero network outputs zero and encodes to all +1") {
  const auto net = HashNet::zeros(5, {7}, 12);
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5};
  for (double h : net.forward(x)) CHECK(h == 0.0);
  const auto codes = encode_rows(net, x, 5);
  REQUIRE(codes.size() == 1);
  for (int k = 0; k < 12; ++k) CHECK(codes.row(0).at(k) == 1);
}

TEST_CASE("forward matches an independent recomputation and stays in (-1, 1)") {
  const HashNet net(64, {256}, 32, 42);
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_vector(rng, 64, 0.0, 1.0);
    const auto h = net.forward(x);
    const auto ref = oracle_forward(net, x);
    for (std::size_t k = 0; k < h.size(); ++k) {
      CHECK(std::abs(h[k] - ref[k]) <= 1e-12);
      CHECK(std::abs(h[k]) < 1.0);
    }
  }
  CHECK(net.parameter_count() == 64 * 256 + 256 + 256 * 32 + 32);
  CHECK_THROWS_AS(net.forward(std::vector<double>(63, 0.0)), DimensionError);
}

TEST_CASE("Glorot initialization bounds and determinism") {
  const HashNet a(10, {20}, 8, 5), b(10, {20}, 8, 5), c(10, {20}, 8, 6);
  CHECK(a == b);
  CHECK(a.parameters() != c.parameters());
  for (const auto& layer : a.layers()) {
    const double limit = std::sqrt(6.0 / (layer.inputs + layer.outputs));
    for (double w : layer.weights) CHECK(std::abs(w) <= limit);
    for (double v : layer.bias) CHECK(v == 0.0);
  }
}

TEST_CASE("input gradient on a hand-computed 2x2 layer") {
  auto net = HashNet::zeros(2, {}, 2);
  net.layers()[0].weights = {0.5, -0.3, 0.2, 0.8};
  const std::vector<double> x{0.4, 0.7};
  const double z0 = 0.5 * 0.4 - 0.3 * 0.7;
  const double z1 = 0.2 * 0.4 + 0.8 * 0.7;
  const double d0 = 1.0 - std::tanh(z0) * std::tanh(z0);
  const double d1 = 1.0 - std::tanh(z1) * std::tanh(z1);

  auto g = net.input_gradient(x, std::vector<double>{1.0, 0.0});
  CHECK(g[0] == doctest::Approx(d0 * 0.5).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(d0 * -0.3).epsilon(1e-14));
  g = net.input_gradient(x, std::vector<double>{0.0, 1.0});
  CHECK(g[0] == doctest::Approx(d1 * 0.2).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(d1 * 0.8).epsilon(1e-14));

  g = net.input_gradient(x, std::vector<double>{0.0, 0.0});
  CHECK(g == std::vector<double>{0.0, 0.0});
}

TEST_CASE("input gradients match central finite differences") {
  std::mt19937_64 rng(100);
  const double step = 1e-5;
  int cases = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int dim = 2 + static_cast<int>(rng() % 12);
    const int bits = 1 + static_cast<int>(rng() % 16);
    std::vector<int> hidden;
    for (int l = static_cast<int>(rng() % 3); l > 0; --l) hidden.push_back(2 + static_cast<int>(rng() % 10));
    HashNet net(dim, hidden, bits, rng());
    for (auto& layer : net.layers())
      for (auto& b : layer.bias) b = testing::uniform(rng, -0.5, 0.5);
    const auto x = random_vector(rng, static_cast<std::size_t>(dim), 0.0, 1.0);
    const auto up = random_vector(rng, static_cast<std::size_t>(bits), -1.0, 1.0);
    const auto g = net.input_gradient(x, up);
    for (int i = 0; i < dim; ++i) {
      auto xp = x, xm = x;
      xp[static_cast<std::size_t>(i)] += step;
      xm[static_cast<std::size_t>(i)] -= step;
      const double fd = (dot(net.forward(xp), up) - dot(net.forward(xm), up)) / (2 * step);
      REQUIRE(close_relative(g[static_cast<std::size_t>(i)], fd));
    }
    ++cases;
  }
  CHECK(cases >= 50);
}

TEST_CASE("parameter gradients match central finite differences") {
  std::mt19937_64 rng(200);
  const double step = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    HashNet net(4, {5}, 3, rng());
    const auto x = random_vector(rng, 4, 0.0, 1.0);
    const auto up = random_vector(rng, 3, -1.0, 1.0);
    std::vector<double> grad(net.parameter_count(), 0.0);
    net.accumulate_parameter_gradient(net.forward_trace(x), up, grad);
    auto theta = net.parameters();
    for (std::size_t p = 0; p < theta.size(); ++p) {
      auto probe = net;
      auto t = theta;
      t[p] += step;
      probe.set_parameters(t);
      const double fp = dot(probe.forward(x), up);
      t[p] -= 2 * step;
      probe.set_parameters(t);
      const double fm = dot(probe.forward(x), up);
      REQUIRE(close_relative(grad[p], (fp - fm) / (2 * step)));
    }
  }
}

TEST_CASE("pairwise loss matches a direct evaluation and its gradient") {
  std::mt19937_64 rng(300);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    const std::size_t bits = 1 + rng() % 8;
    std::vector<std::vector<double>> h(n);
    std::vector<LabelVector> labels;
    for (auto& row : h) row = random_vector(rng, bits, -0.99, 0.99);
    for (std::size_t i = 0; i < n; ++i) labels.push_back(testing::random_labels(rng, 4));

    // s_ij from the pool partition of item i.
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto part = partition_pool(labels[i], labels);
      std::vector<bool> positive(n, false);
      for (auto p : part.positives) positive[p] = true;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double theta = 0.5 * dot(h[i], h[j]);
        expected += std::log(1.0 + std::exp(theta)) - (positive[j] ? theta : 0.0);
      }
      for (double v : h[i]) expected += 0.1 * (v - (v >= 0 ? 1.0 : -1.0)) * (v - (v >= 0 ? 1.0 : -1.0));
    }
    std::vector<std::vector<double>> grad;
    const double got = pairwise_loss(h, labels, 0.1, &grad);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));

    const double step = 1e-6;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < bits; ++k) {
        if (std::abs(h[i][k]) < 1e-3) continue;  // sign kink
        auto hp = h, hm = h;
        hp[i][k] += step;
        hm[i][k] -= step;
        const double fd = (pairwise_loss(hp, labels, 0.1, nullptr) - pairwise_loss(hm, labels, 0.1, nullptr)) / (2 * step);
        REQUIRE(close_relative(grad[i][k], fd));
      }
  }
  std::vector<std::vector<double>> one{{0.1}};
  std::vector<LabelVector> one_label{testing::labels_of({1})};
  CHECK_THROWS_AS(pairwise_loss(one, one_label, 0.1, nullptr), InvalidInput);
}

TEST_CASE("momentum SGD step") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.5;
  cfg.weight_decay = 0.01;
  SgdMomentum opt(1, cfg);
  std::vector<double> theta{1.0};
  const std::vector<double> g{2.0};
  opt.step(theta, g);
  // v = 2 + 0.01 * 1 = 2.01; theta = 1 - 0.201
  CHECK(theta[0] == doctest::Approx(0.799).epsilon(1e-14));
  opt.step(theta, g);
  // v = 0.5 * 2.01 + 2 + 0.01 * 0.799
  CHECK(theta[0] == doctest::Approx(0.799 - 0.1 * (1.005 + 2.0 + 0.00799)).epsilon(1e-14));
}

TEST_CASE("model serialization round-trip") {
  HashNet net(6, {9, 4}, 70, 17);
  net.set_quantization_weight(0.25);
  const auto bytes = encode_model(net);
  const auto back = decode_model(bytes);
  CHECK(back == net);
  CHECK(encode_model(back) == bytes);
  const std::vector<double> x{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  CHECK(back.forward(x) == net.forward(x));

  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(decode_model(bad), FormatError);
  CHECK_THROWS_AS(decode_model(std::string_view(bytes).substr(0, bytes.size() - 8)), FormatError);
  CHECK_THROWS_AS(decode_model(bytes + "zz"), FormatError);
  CHECK_THROWS_AS(decode_model(std::string_view(bytes).substr(0, 10)), FormatError);
}

TEST_CASE("encoding rows matches single-sample encoding for any worker count") {
  const HashNet net(8, {16}, 24, 3);
  std::mt19937_64 rng(8);
  const auto features = random_vector(rng, 8 * 50, 0.0, 1.0);
  const auto one = encode_rows(net, features, 8, 1);
  const auto many = encode_rows(net, features, 8, 3);
  CHECK(one == many);
  CHECK(encode_codes(one) == encode_codes(encode_rows(net, features, 8, 1)));
  for (std::size_t i = 0; i < 50; ++i) {
    const auto h = net.forward(std::span(features).subspan(i * 8, 8));
    CHECK(HashCode::from_view(one.row(i)) == sign_quantize(h));
  }
  CHECK_THROWS_AS(encode_rows(net, features, 7), DimensionError);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto data = tiny_set(1, 96, 6, 3);
  TrainConfig cfg;
  cfg.bits = 8;
  cfg.hidden = {16};
  cfg.epochs = 15;
  cfg.batch_size = 16;
  std::vector<double> l1, l2;
  const auto a = train_pairwise(data, cfg, &l1);
  const auto b = train_pairwise(data, cfg, &l2);
  CHECK(a.parameters() == b.parameters());
  CHECK(l1 == l2);
  REQUIRE(l1.size() == 15);
  CHECK(l1.back() < l1.front());

  TrainingSet empty;
  empty.dim = 6;
  CHECK_THROWS_AS(train_pairwise(empty, cfg), InvalidInput);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_pairwise(data, cfg), ConfigError);
}

TEST_CASE("code alignment with own codes is a quantization pull") {
  std::mt19937_64 rng(9);
  std::vector<std::vector<double>> h(5);
  std::vector<HashCode> own;
  double expected = 0.0;
  for (auto& row : h) {
    row = random_vector(rng, 12, -1.0, 1.0);
    own.push_back(sign_quantize(row));
    for (double v : row) expected += std::abs(v) / 12.0;
  }
  CHECK(code_alignment(h, own) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("adversarial training loss is recomputable from the batch") {
  const auto data = tiny_set(2, 40, 5, 3);
  TrainConfig cfg;
  cfg.bits = 8;
  cfg.hidden = {10};
  cfg.epochs = 2;
  cfg.batch_size = 8;
  AttackConfig attack;
  attack.seed = 4;
  AdvTrainOptions opts;
  opts.inner_steps = 3;
  int seen = 0;
  auto check = [&](const HashNet& net, const AdvBatchRecord& rec) {
    if (rec.iteration == 0) {
      std::vector<std::vector<double>> clean, adv;
      std::vector<LabelVector> labels;
      for (std::size_t b = 0; b < rec.ids.size(); ++b) {
        clean.push_back(oracle_forward(net, std::vector<double>(data.row(rec.ids[b]).begin(), data.row(rec.ids[b]).end())));
        adv.push_back(oracle_forward(net, rec.adversarial[b]));
        labels.push_back(data.labels[rec.ids[b]]);
      }
      const double original = pairwise_loss(clean, labels, cfg.quantization_weight, nullptr);
      double alignment = 0.0;
      for (std::size_t b = 0; b < adv.size(); ++b)
        for (int k = 0; k < 8; ++k) alignment += rec.targets[b].at(k) * adv[b][static_cast<std::size_t>(k)] / 8.0;
      CHECK(rec.original_loss == doctest::Approx(original).epsilon(1e-12));
      CHECK(rec.alignment == doctest::Approx(alignment).epsilon(1e-12));
      CHECK(rec.loss == doctest::Approx(original - alignment).epsilon(1e-12));
    }
    for (std::size_t b = 0; b < rec.ids.size(); ++b) {
      const auto x = data.row(rec.ids[b]);
      for (std::size_t d = 0; d < x.size(); ++d) {
        CHECK(std::abs(rec.adversarial[b][d] - x[d]) <= attack.epsilon.value() + 1e-9);
        CHECK(rec.adversarial[b][d] >= 0.0);
        CHECK(rec.adversarial[b][d] <= 1.0);
      }
    }
    ++seen;
  };
  std::vector<double> l1, l2;
  const auto a = adv_train(data, attack, cfg, opts, &l1, check);
  CHECK(seen == 10);
  const auto b = adv_train(data, attack, cfg, opts, &l2);
  CHECK(a.parameters() == b.parameters());
  CHECK(l1 == l2);
}
