#pragma once

// Projected-gradient attacks against a HashNet and the pharos-guided loss
// family. All losses are maximized by the attack.
//
//   alignment (PgA-dagger, HAG, targeted):  L = -(1/K) b.h
//   weighted  (ablation):                   L = -(1/K) w.u
//   masked    (PgA, the default):           L = -(1/pi) (m o w).u
//
// where u = b o h, w_k = u_k - 2t if u_k > t else -t^2, m_k = [u_k > t] and
// pi = sum m. Gradients treat w and m as constants within a step.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pharos/hashcore.hpp"
#include "pharos/model.hpp"

namespace pharos {

// Exact non-negative rational p/q used for pixel budgets ("8/255").
struct Budget {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  // Accepts "p/q", integers, and plain decimals ("0.03" -> 3/100).
  static Budget parse(std::string_view text);

  friend bool operator==(const Budget& a, const Budget& b) {
    return a.num * b.den == b.num * a.den;
  }
  friend bool operator<(const Budget& a, const Budget& b) {
    return a.num * b.den < b.num * a.den;
  }
  friend bool operator<=(const Budget& a, const Budget& b) { return !(b < a); }
};

enum class AttackMethod { pga, pga_dagger, pga_weighted, hag, anchor_targeted };
std::string_view to_string(AttackMethod method);
AttackMethod parse_attack_method(std::string_view name);

enum class LossForm { masked, weighted, alignment };
LossForm loss_form(AttackMethod method);

struct AttackConfig {
  Budget epsilon{8, 255};
  Budget eta{1, 255};
  int steps = 100;
  double margin = -0.8;  // t
  AttackMethod method = AttackMethod::pga;
  std::uint64_t seed = 0;

  // Throws ConfigError unless 0 < eta <= epsilon, steps >= 0, -1 < t < 0.
  void validate() const;
};

struct AdvResult {
  std::vector<double> x;           // adversarial input, in [0, 1]^D
  std::vector<double> loss_trace;  // loss at x'_0 .. x'_T
  HashCode code;                   // sign of the final network output
  double linf = 0.0;               // max |x' - x|
};

double loss_pga_dagger(std::span<const double> h, CodeView target);
std::vector<double> bit_alignment(std::span<const double> h, CodeView target);
std::vector<double> weight_vector(std::span<const double> u, double t);

struct Mask {
  std::vector<std::uint8_t> bits;
  int active = 0;  // pi
};
Mask mask_vector(std::span<const double> u, double t);

// 0 when no bit is above the margin (pi = 0).
double loss_pga(std::span<const double> h, CodeView target, double t);
double loss_weighted(std::span<const double> h, CodeView target, double t);

struct LossGradient {
  double value = 0.0;
  // dL/dh with the weighting and mask frozen at h.
  std::vector<double> grad;
};
LossGradient evaluate_loss(LossForm form, std::span<const double> h,
                           CodeView target, double t);

AdvResult pgd_attack(const HashNet& net, std::span<const double> x,
                     CodeView target, const AttackConfig& config);

// Pushes the code away from the sample's own code (alignment loss).
AdvResult attack_hag(const HashNet& net, std::span<const double> x,
                     const AttackConfig& config);

// Pulls the code toward `anchor` by pushing away from its negation.
AdvResult attack_targeted(const HashNet& net, std::span<const double> x,
                          CodeView anchor, const AttackConfig& config);

// A batch of adversarial examples as stored on disk.
struct AdversarialSet {
  AttackConfig config;
  std::size_t dim = 0;
  std::vector<float> inputs;  // rows x dim
  CodeTable codes;

  std::size_t size() const { return codes.size(); }
};

// ".pha": "PHA1" | u32-prefixed JSON header {n, dim, epsilon, eta, steps, t,
// method, seed} | n x dim f32 LE | codes in .phc layout.
std::string encode_adversarial(const AdversarialSet& set);
AdversarialSet decode_adversarial(std::string_view bytes);
void save_adversarial(const std::filesystem::path& path, const AdversarialSet& set);
AdversarialSet load_adversarial(const std::filesystem::path& path);

}  // namespace pharos
