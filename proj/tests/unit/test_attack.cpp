#include <cmath>
#include <random>

#include "doctest.h"
#include "pharos/attack.hpp"
#include "pharos/errors.hpp"
#include "support.hpp"

using namespace pharos;

namespace {

HashCode code_of(std::initializer_list<int> s) { return HashCode::from_signs(std::vector<int>(s)); }

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = testing::uniform(rng, lo, hi);
  return v;
}

bool close_relative(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) <= 1e-4 * scale;
}

double loss_of(LossForm form, std::span<const double> h, CodeView b, double t) {
  switch (form) {
    case LossForm::alignment: return loss_pga_dagger(h, b);
    case LossForm::weighted: return loss_weighted(h, b, t);
    case LossForm::masked: return loss_pga(h, b, t);
  }
  return 0.0;
}

// Independent evaluation of the per-bit weighting and mask.
struct Frozen {
  std::vector<double> coef;  // d/dh of the loss with weights held fixed
};

Frozen frozen_coefficients(LossForm form, std::span<const double> h, CodeView b, double t) {
  const auto k = h.size();
  Frozen f{std::vector<double>(k, 0.0)};
  std::size_t active = 0;
  for (std::size_t i = 0; i < k; ++i) active += b.at(static_cast<int>(i)) * h[i] > t;
  for (std::size_t i = 0; i < k; ++i) {
    const double bi = b.at(static_cast<int>(i));
    const double u = bi * h[i];
    const double w = u > t ? u - 2 * t : -t * t;
    switch (form) {
      case LossForm::alignment: f.coef[i] = -bi / static_cast<double>(k); break;
      case LossForm::weighted: f.coef[i] = -w * bi / static_cast<double>(k); break;
      case LossForm::masked:
        f.coef[i] = (u > t && active > 0) ? -w * bi / static_cast<double>(active) : 0.0;
        break;
    }
  }
  return f;
}

AttackConfig config(AttackMethod method, int steps, std::uint64_t seed) {
  AttackConfig c;
  c.method = method;
  c.steps = steps;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("budgets are exact rationals") {
  CHECK(Budget::parse("8/255") == Budget{8, 255});
  CHECK(Budget::parse("8/255").str() == "8/255");
  CHECK(Budget::parse("16/510").str() == "8/255");
  CHECK(Budget::parse("0.5") == Budget{1, 2});
  CHECK(Budget::parse("0.03").str() == "3/100");
  CHECK(Budget::parse("2") == Budget{2, 1});
  CHECK(Budget::parse("8/255").value() == 8.0 / 255.0);
  CHECK(Budget{1, 255} < Budget{8, 255});
  for (const char* bad : {"", "abc", "1/0", "-1/255", "1/-2", "1/2/3", "0.1.2", "1e-3"})
    CHECK_THROWS_AS(Budget::parse(bad), ConfigError);
}

TEST_CASE("attack configuration validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  c.eta = Budget{9, 255};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.eta = Budget{0, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (double t : {-1.0, 0.0, 0.3}) {
    c = AttackConfig{};
    c.margin = t;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  CHECK(parse_attack_method("pga-dagger") == AttackMethod::pga_dagger);
  CHECK(to_string(AttackMethod::anchor_targeted) == "anchor-targeted");
  CHECK_THROWS_AS(parse_attack_method("fgsm"), ConfigError);
  CHECK(loss_form(AttackMethod::pga) == LossForm::masked);
  CHECK(loss_form(AttackMethod::pga_weighted) == LossForm::weighted);
  CHECK(loss_form(AttackMethod::hag) == LossForm::alignment);
}

TEST_CASE("alignment loss") {
  const auto b = code_of({1, -1, 1, 1});
  CHECK(loss_pga_dagger(std::vector<double>(4, 0.0), b) == 0.0);
  std::vector<double> h;
  for (int k = 0; k < 4; ++k) h.push_back(-0.999 * b.at(k));
  CHECK(loss_pga_dagger(h, b) == doctest::Approx(0.999).epsilon(1e-15));
  CHECK_THROWS_AS(loss_pga_dagger(std::vector<double>(3, 0.0), b), DimensionError);
}

TEST_CASE("bit alignment, weights and mask") {
  const auto b = code_of({1, -1, 1});
  const std::vector<double> h{0.9, 0.9, -0.2};
  CHECK(bit_alignment(h, b) == std::vector<double>{0.9, -0.9, -0.2});
  std::vector<double> aligned;
  for (int k = 0; k < 3; ++k) aligned.push_back(0.9 * b.at(k));
  for (double u : bit_alignment(aligned, b)) CHECK(u == doctest::Approx(0.9));

  const auto w = weight_vector(std::vector<double>{0.5, -0.9, -0.8}, -0.8);
  CHECK(w[0] == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(-0.64).epsilon(1e-15));
  CHECK(w[2] == doctest::Approx(-0.64).epsilon(1e-15));  // boundary takes the "otherwise" branch

  auto m = mask_vector(std::vector<double>(5, 0.0), -0.8);
  CHECK(m.active == 5);
  m = mask_vector(std::vector<double>(5, -0.99), -0.8);
  CHECK(m.active == 0);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto u = random_vector(rng, 20, -1.0, 1.0);
    const double t = testing::uniform(rng, -0.99, -0.01);
    const auto mk = mask_vector(u, t);
    int count = 0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      count += u[k] > t;
      CHECK(mk.bits[k] == (u[k] > t ? 1 : 0));
    }
    CHECK(mk.active == count);
  }
}

TEST_CASE("masked and weighted losses on hand instances") {
  const auto b = code_of({1});
  const std::vector<double> h{0.5};
  CHECK(loss_pga(h, b, -0.8) == doctest::Approx(-1.05).epsilon(1e-15));
  CHECK(loss_weighted(h, b, -0.8) == doctest::Approx(-1.05).epsilon(1e-15));

  // Every bit past the margin: pi = 0.
  const auto b2 = code_of({1, -1});
  const std::vector<double> far{-0.95, 0.95};
  CHECK(loss_pga(far, b2, -0.8) == 0.0);
  const auto lg = evaluate_loss(LossForm::masked, far, b2, -0.8);
  CHECK(lg.value == 0.0);
  CHECK(lg.grad == std::vector<double>{0.0, 0.0});

  // h = 0: u = 0, w = -2t, value 0.
  CHECK(loss_weighted(std::vector<double>(6, 0.0), HashCode(6), -0.8) == 0.0);

  // With all u > t the two forms coincide up to 1/K vs 1/pi (equal here).
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto code = testing::random_code(rng, 16);
    std::vector<double> hv(16);
    for (int k = 0; k < 16; ++k) hv[static_cast<std::size_t>(k)] = code.at(k) * testing::uniform(rng, -0.7, 0.99);
    CHECK(loss_pga(hv, code, -0.8) == doctest::Approx(loss_weighted(hv, code, -0.8)).epsilon(1e-13));
  }
}

TEST_CASE("loss gradients equal the frozen-weight coefficients") {
  std::mt19937_64 rng(3);
  for (auto form : {LossForm::alignment, LossForm::weighted, LossForm::masked}) {
    for (int trial = 0; trial < 100; ++trial) {
      const int bits = 1 + static_cast<int>(rng() % 24);
      const auto b = testing::random_code(rng, bits);
      const auto h = random_vector(rng, static_cast<std::size_t>(bits), -0.99, 0.99);
      const double t = testing::uniform(rng, -0.95, -0.05);
      const auto lg = evaluate_loss(form, h, b, t);
      const auto ref = frozen_coefficients(form, h, b, t);
      CHECK(lg.value == doctest::Approx(loss_of(form, h, b, t)).epsilon(1e-14));
      for (std::size_t k = 0; k < h.size(); ++k) CHECK(lg.grad[k] == doctest::Approx(ref.coef[k]).epsilon(1e-14));
    }
  }
}

TEST_CASE("masked coordinates have zero partial derivatives") {
  std::mt19937_64 rng(4);
  const double t = -0.8, step = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int bits = 4 + static_cast<int>(rng() % 12);
    const auto b = testing::random_code(rng, bits);
    std::vector<double> h(static_cast<std::size_t>(bits));
    for (int k = 0; k < bits; ++k) {
      // Keep every u_k at least 0.01 away from the margin.
      const double u = (rng() % 3 == 0) ? testing::uniform(rng, -0.99, t - 0.01) : testing::uniform(rng, t + 0.01, 0.99);
      h[static_cast<std::size_t>(k)] = u * b.at(k);
    }
    const auto lg = evaluate_loss(LossForm::masked, h, b, t);
    for (int k = 0; k < bits; ++k) {
      const auto i = static_cast<std::size_t>(k);
      if (b.at(k) * h[i] > t) continue;
      auto hp = h, hm = h;
      hp[i] += step;
      hm[i] -= step;
      CHECK(lg.grad[i] == 0.0);
      CHECK(loss_pga(hp, b, t) == loss_pga(hm, b, t));
    }
  }
}

TEST_CASE("loss gradients through the network match finite differences") {
  std::mt19937_64 rng(5);
  const double step = 1e-5;
  int cases = 0;
  for (auto form : {LossForm::alignment, LossForm::weighted, LossForm::masked}) {
    for (int trial = 0; trial < 20; ++trial) {
      const int dim = 3 + static_cast<int>(rng() % 8);
      const int bits = 2 + static_cast<int>(rng() % 10);
      const HashNet net(dim, {12}, bits, rng());
      const auto x = random_vector(rng, static_cast<std::size_t>(dim), 0.0, 1.0);
      const auto b = testing::random_code(rng, bits);
      const double t = -0.8;
      const auto h = net.forward(x);
      bool near_boundary = false;
      for (int k = 0; k < bits; ++k) near_boundary |= std::abs(b.at(k) * h[static_cast<std::size_t>(k)] - t) < 1e-3;
      if (near_boundary) continue;
      const auto lg = evaluate_loss(form, h, b, t);
      const auto g = net.input_gradient(x, lg.grad);
      // Finite differences of the loss with weights held at x.
      auto surrogate = [&](const std::vector<double>& xs) {
        const auto hs = net.forward(xs);
        double v = 0.0;
        for (std::size_t k = 0; k < hs.size(); ++k) v += lg.grad[k] * hs[k];
        return v;
      };
      for (int i = 0; i < dim; ++i) {
        auto xp = x, xm = x;
        xp[static_cast<std::size_t>(i)] += step;
        xm[static_cast<std::size_t>(i)] -= step;
        const double fd = (surrogate(xp) - surrogate(xm)) / (2 * step);
        REQUIRE(close_relative(g[static_cast<std::size_t>(i)], fd));
        if (form == LossForm::alignment) {
          const double fd_true = (loss_pga_dagger(net.forward(xp), b) - loss_pga_dagger(net.forward(xm), b)) / (2 * step);
          REQUIRE(close_relative(g[static_cast<std::size_t>(i)], fd_true));
        }
      }
      ++cases;
    }
  }
  CHECK(cases >= 50);
}

TEST_CASE("single PGD step with a positive gradient") {
  auto net = HashNet::zeros(6, {}, 1);
  for (auto& w : net.layers()[0].weights) w = 0.3;
  const std::vector<double> x{0.0, 0.2, 0.5, 0.98, 0.995, 1.0};
  const auto target = code_of({-1});  // loss = h, gradient positive everywhere
  auto cfg = config(AttackMethod::pga_dagger, 0, 9);
  const auto start = pgd_attack(net, x, target, cfg);
  cfg.steps = 1;
  const auto one = pgd_attack(net, x, target, cfg);
  const double eps = cfg.epsilon.value(), eta = cfg.eta.value();
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(one.x[i] == doctest::Approx(std::min({start.x[i] + eta, x[i] + eps, 1.0})).epsilon(1e-15));
  CHECK(one.loss_trace.size() == 2);
  CHECK(one.loss_trace[0] == start.loss_trace[0]);
  CHECK(one.loss_trace[1] > one.loss_trace[0]);
}

TEST_CASE("zero gradient leaves the random start in place") {
  const auto net = HashNet::zeros(5, {3}, 4);
  const std::vector<double> x{0.1, 0.3, 0.5, 0.7, 0.9};
  const auto b = code_of({1, -1, 1, -1});
  auto cfg = config(AttackMethod::pga_dagger, 0, 5);
  const auto start = pgd_attack(net, x, b, cfg);
  cfg.steps = 7;
  const auto later = pgd_attack(net, x, b, cfg);
  CHECK(later.x == start.x);
  CHECK(later.loss_trace.size() == 8);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(start.x[i] - x[i]) <= cfg.epsilon.value() + 1e-12);
}

TEST_CASE("constraints hold for every method") {
  std::mt19937_64 rng(6);
  for (auto method : {AttackMethod::pga, AttackMethod::pga_dagger, AttackMethod::pga_weighted,
                      AttackMethod::hag, AttackMethod::anchor_targeted}) {
    for (int trial = 0; trial < 20; ++trial) {
      const HashNet net(10, {16}, 12, rng());
      auto x = random_vector(rng, 10, 0.0, 1.0);
      x[0] = 0.0;
      x[1] = 1.0;
      const auto b = testing::random_code(rng, 12);
      auto cfg = config(method, 20, rng());
      cfg.epsilon = Budget{8, 255};
      cfg.eta = Budget{2, 255};
      AdvResult r;
      if (method == AttackMethod::hag) r = attack_hag(net, x, cfg);
      else if (method == AttackMethod::anchor_targeted) r = attack_targeted(net, x, b, cfg);
      else r = pgd_attack(net, x, b, cfg);
      double linf = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(r.x[i] >= 0.0);
        CHECK(r.x[i] <= 1.0);
        linf = std::max(linf, std::abs(r.x[i] - x[i]));
      }
      CHECK(linf <= cfg.epsilon.value() + 1e-9);
      CHECK(r.linf == linf);
      CHECK(r.loss_trace.size() == 21);
      CHECK(r.code == sign_quantize(net.forward(r.x)));
    }
  }
}

TEST_CASE("attacks are reproducible and baselines reduce to the engine") {
  const HashNet net(8, {10}, 16, 77);
  std::mt19937_64 rng(7);
  const auto x = random_vector(rng, 8, 0.0, 1.0);
  const auto anchor = testing::random_code(rng, 16);
  auto cfg = config(AttackMethod::anchor_targeted, 15, 3);
  const auto a = attack_targeted(net, x, anchor, cfg);
  const auto b = pgd_attack(net, x, negate(anchor), cfg);
  CHECK(a.x == b.x);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(attack_targeted(net, x, anchor, cfg).x == a.x);

  cfg.method = AttackMethod::hag;
  const auto own = sign_quantize(net.forward(x));
  const auto hag = attack_hag(net, x, cfg);
  CHECK(hag.loss_trace == pgd_attack(net, x, own, cfg).loss_trace);

  cfg.steps = 0;
  const auto start3 = attack_hag(net, x, cfg);
  cfg.seed = 4;
  CHECK(attack_hag(net, x, cfg).x != start3.x);

  // Anchor equal to the current code, no steps: only the start moves x.
  cfg = config(AttackMethod::anchor_targeted, 0, 1);
  const auto still = attack_targeted(net, x, own, cfg);
  CHECK(still.linf <= cfg.epsilon.value());
}

TEST_CASE("targeted attacks approach the anchor on aggregate") {
  std::mt19937_64 rng(8);
  int total_before = 0, total_after = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const HashNet net(6, {12}, 8, rng());
    const auto x = random_vector(rng, 6, 0.2, 0.8);
    const auto anchor = testing::random_code(rng, 8);
    auto cfg = config(AttackMethod::anchor_targeted, 50, rng());
    cfg.epsilon = Budget{1, 5};
    cfg.eta = Budget{1, 100};
    const auto r = attack_targeted(net, x, anchor, cfg);
    const int before = hamming(sign_quantize(net.forward(x)), anchor);
    const int after = hamming(r.code, anchor);
    total_before += before;
    total_after += after;
  }
  CHECK(total_after < total_before);
}

TEST_CASE("attack input validation") {
  const HashNet net(3, {4}, 4, 1);
  const auto b = code_of({1, 1, -1, -1});
  const auto cfg = config(AttackMethod::pga, 2, 0);
  CHECK_THROWS_AS(pgd_attack(net, std::vector<double>{0.1, 0.2}, b, cfg), DimensionError);
  CHECK_THROWS_AS(pgd_attack(net, std::vector<double>{0.1, 0.2, 1.5}, b, cfg), InvalidInput);
  CHECK_THROWS_AS(pgd_attack(net, std::vector<double>{0.1, 0.2, 0.3}, code_of({1}), cfg), DimensionError);
  auto bad = cfg;
  bad.margin = 0.5;
  CHECK_THROWS_AS(pgd_attack(net, std::vector<double>{0.1, 0.2, 0.3}, b, bad), ConfigError);
}

TEST_CASE("adversarial set serialization") {
  std::mt19937_64 rng(9);
  AdversarialSet set;
  set.config = config(AttackMethod::pga_weighted, 12, 99);
  set.config.epsilon = Budget{4, 255};
  set.dim = 5;
  set.codes = CodeTable(20);
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 5; ++d) set.inputs.push_back(static_cast<float>(testing::uniform(rng)));
    set.codes.push_back(testing::random_code(rng, 20));
  }
  const auto bytes = encode_adversarial(set);
  const auto back = decode_adversarial(bytes);
  CHECK(back.inputs == set.inputs);
  CHECK(back.codes == set.codes);
  CHECK(back.config.epsilon.str() == "4/255");
  CHECK(back.config.method == AttackMethod::pga_weighted);
  CHECK(back.config.seed == 99);
  CHECK(encode_adversarial(back) == bytes);
  CHECK_THROWS_AS(decode_adversarial(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_adversarial("PHA2" + bytes.substr(4)), FormatError);
}
