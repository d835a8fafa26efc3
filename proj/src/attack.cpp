#include "pharos/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "pharos/detail/binio.hpp"
#include "pharos/detail/rng.hpp"
#include "pharos/errors.hpp"

namespace pharos {
namespace {

void check_lengths(std::span<const double> h, CodeView target) {
  if (h.size() != static_cast<std::size_t>(target.bits()))
    throw DimensionError("output length " + std::to_string(h.size()) +
                         " does not match code length " +
                         std::to_string(target.bits()));
}

void check_margin(double t) {
  if (!(t > -1.0 && t < 0.0))
    throw InvalidInput("margin t must satisfy -1 < t < 0");
}

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("cannot parse budget \"" + std::string(whole) + "\"");
  return v;
}

double sign_step(double g) { return g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0); }

}  // namespace

std::string Budget::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

Budget Budget::parse(std::string_view text) {
  Budget b;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    b.num = parse_int(text.substr(0, slash), text);
    b.den = parse_int(text.substr(slash + 1), text);
  } else if (auto dot = text.find('.'); dot != std::string_view::npos) {
    const auto whole = text.substr(0, dot);
    const auto frac = text.substr(dot + 1);
    if (frac.size() > 15) throw ConfigError("budget has too many decimals");
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    const std::int64_t w = whole.empty() ? 0 : parse_int(whole, text);
    const std::int64_t f = frac.empty() ? 0 : parse_int(frac, text);
    b.num = w * scale + f;
    b.den = scale;
  } else {
    b.num = parse_int(text, text);
  }
  if (b.den <= 0 || b.num < 0)
    throw ConfigError("budget must be a non-negative rational: \"" +
                      std::string(text) + "\"");
  const auto g = std::gcd(b.num, b.den);
  if (g > 1) {
    b.num /= g;
    b.den /= g;
  }
  return b;
}

std::string_view to_string(AttackMethod method) {
  switch (method) {
    case AttackMethod::pga: return "pga";
    case AttackMethod::pga_dagger: return "pga-dagger";
    case AttackMethod::pga_weighted: return "pga-weighted";
    case AttackMethod::hag: return "hag";
    case AttackMethod::anchor_targeted: return "anchor-targeted";
  }
  return "?";
}

AttackMethod parse_attack_method(std::string_view name) {
  for (auto m : {AttackMethod::pga, AttackMethod::pga_dagger,
                 AttackMethod::pga_weighted, AttackMethod::hag,
                 AttackMethod::anchor_targeted})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown attack method \"" + std::string(name) +
                    "\" (expected pga, pga-dagger, pga-weighted, hag or "
                    "anchor-targeted)");
}

LossForm loss_form(AttackMethod method) {
  switch (method) {
    case AttackMethod::pga: return LossForm::masked;
    case AttackMethod::pga_weighted: return LossForm::weighted;
    default: return LossForm::alignment;
  }
}

void AttackConfig::validate() const {
  if (!(Budget{0, 1} < eta) || !(eta <= epsilon))
    throw ConfigError("attack config: need 0 < eta <= epsilon (eta=" +
                      eta.str() + ", epsilon=" + epsilon.str() + ")");
  if (steps < 0) throw ConfigError("attack config: steps must be >= 0");
  if (!(margin > -1.0 && margin < 0.0))
    throw ConfigError("attack config: margin t must satisfy -1 < t < 0");
}

double loss_pga_dagger(std::span<const double> h, CodeView target) {
  check_lengths(h, target);
  double dot = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) dot += target.at(static_cast<int>(k)) * h[k];
  return -dot / static_cast<double>(h.size());
}

std::vector<double> bit_alignment(std::span<const double> h, CodeView target) {
  check_lengths(h, target);
  std::vector<double> u(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) u[k] = target.at(static_cast<int>(k)) * h[k];
  return u;
}

std::vector<double> weight_vector(std::span<const double> u, double t) {
  check_margin(t);
  std::vector<double> w(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) w[k] = u[k] > t ? u[k] - 2.0 * t : -t * t;
  return w;
}

Mask mask_vector(std::span<const double> u, double t) {
  check_margin(t);
  Mask m;
  m.bits.resize(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    m.bits[k] = u[k] > t;
    m.active += m.bits[k];
  }
  return m;
}

LossGradient evaluate_loss(LossForm form, std::span<const double> h,
                           CodeView target, double t) {
  check_lengths(h, target);
  const auto n = h.size();
  LossGradient out;
  out.grad.assign(n, 0.0);
  if (form == LossForm::alignment) {
    for (std::size_t k = 0; k < n; ++k) {
      const double b = target.at(static_cast<int>(k));
      out.value -= b * h[k];
      out.grad[k] = -b / static_cast<double>(n);
    }
    out.value /= static_cast<double>(n);
    return out;
  }
  const auto u = bit_alignment(h, target);
  const auto w = weight_vector(u, t);
  double scale = static_cast<double>(n);
  std::vector<std::uint8_t> active(n, 1);
  if (form == LossForm::masked) {
    auto m = mask_vector(u, t);
    if (m.active == 0) return out;
    scale = m.active;
    active = std::move(m.bits);
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!active[k]) continue;
    const double b = target.at(static_cast<int>(k));
    out.value -= w[k] * u[k];
    out.grad[k] = -w[k] * b / scale;
  }
  out.value /= scale;
  return out;
}

double loss_pga(std::span<const double> h, CodeView target, double t) {
  return evaluate_loss(LossForm::masked, h, target, t).value;
}

double loss_weighted(std::span<const double> h, CodeView target, double t) {
  return evaluate_loss(LossForm::weighted, h, target, t).value;
}

AdvResult pgd_attack(const HashNet& net, std::span<const double> x,
                     CodeView target, const AttackConfig& config) {
  config.validate();
  if (x.size() != static_cast<std::size_t>(net.input_dim()))
    throw DimensionError("attack input has dimension " + std::to_string(x.size()) +
                         ", network expects " + std::to_string(net.input_dim()));
  if (target.bits() != net.bits())
    throw DimensionError("attack target code length does not match network");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("attack input must lie in [0,1]");

  const double eps = config.epsilon.value();
  const double eta = config.eta.value();
  const LossForm form = loss_form(config.method);
  const auto d = x.size();

  std::vector<double> lo(d), hi(d);
  for (std::size_t i = 0; i < d; ++i) {
    lo[i] = std::max(0.0, x[i] - eps);
    hi[i] = std::min(1.0, x[i] + eps);
  }

  AdvResult res;
  res.x.resize(d);
  detail::Rng rng(config.seed);
  for (std::size_t i = 0; i < d; ++i)
    res.x[i] = std::clamp(x[i] + rng.uniform(-eps, eps), lo[i], hi[i]);

  res.loss_trace.reserve(static_cast<std::size_t>(config.steps) + 1);
  for (int step = 0;; ++step) {
    const auto trace = net.forward_trace(res.x);
    const auto loss = evaluate_loss(form, trace.output(), target, config.margin);
    if (!std::isfinite(loss.value)) throw NumericalError("attack loss is not finite");
    res.loss_trace.push_back(loss.value);
    if (step == config.steps) {
      res.code = sign_quantize(trace.output());
      break;
    }
    const auto g = net.input_gradient(trace, loss.grad);
    for (std::size_t i = 0; i < d; ++i)
      res.x[i] = std::clamp(res.x[i] + eta * sign_step(g[i]), lo[i], hi[i]);
  }
  for (std::size_t i = 0; i < d; ++i)
    res.linf = std::max(res.linf, std::abs(res.x[i] - x[i]));
  return res;
}

AdvResult attack_hag(const HashNet& net, std::span<const double> x,
                     const AttackConfig& config) {
  AttackConfig cfg = config;
  cfg.method = AttackMethod::hag;
  const HashCode own = sign_quantize(net.forward(x));
  return pgd_attack(net, x, own, cfg);
}

AdvResult attack_targeted(const HashNet& net, std::span<const double> x,
                          CodeView anchor, const AttackConfig& config) {
  return pgd_attack(net, x, negate(anchor), config);
}

std::string encode_adversarial(const AdversarialSet& set) {
  if (set.inputs.size() != set.size() * set.dim)
    throw DimensionError("adversarial set: inputs and codes disagree in rows");
  nlohmann::ordered_json header;
  header["n"] = set.size();
  header["dim"] = set.dim;
  header["epsilon"] = set.config.epsilon.str();
  header["eta"] = set.config.eta.str();
  header["steps"] = set.config.steps;
  header["t"] = set.config.margin;
  header["method"] = to_string(set.config.method);
  header["seed"] = set.config.seed;
  detail::ByteWriter w;
  w.bytes("PHA1");
  w.prefixed(header.dump());
  for (float v : set.inputs) w.f32(v);
  w.bytes(encode_codes(set.codes));
  return w.take();
}

AdversarialSet decode_adversarial(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.magic("PHA1");
  const auto header_at = r.offset();
  const auto text = r.prefixed("adversarial header");
  AdversarialSet set;
  std::size_t n = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    n = header.at("n").get<std::size_t>();
    set.dim = header.at("dim").get<std::size_t>();
    set.config.epsilon = Budget::parse(header.at("epsilon").get<std::string>());
    set.config.eta = Budget::parse(header.at("eta").get<std::string>());
    set.config.steps = header.at("steps").get<int>();
    set.config.margin = header.at("t").get<double>();
    set.config.method = parse_attack_method(header.at("method").get<std::string>());
    set.config.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad adversarial header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad adversarial header: ") + e.what(), header_at);
  }
  if (set.dim != 0 && n > r.remaining() / (4 * set.dim))
    throw FormatError("truncated adversarial inputs", r.offset());
  set.inputs.resize(n * set.dim);
  for (auto& v : set.inputs) v = r.f32("adversarial input");
  set.codes = decode_codes(r);
  if (set.codes.size() != n)
    throw FormatError("adversarial code count does not match header", r.offset());
  if (!r.done()) throw FormatError("trailing bytes after adversarial set", r.offset());
  return set;
}

void save_adversarial(const std::filesystem::path& path, const AdversarialSet& set) {
  detail::write_file(path, encode_adversarial(set));
}

AdversarialSet load_adversarial(const std::filesystem::path& path) {
  return decode_adversarial(detail::read_file(path));
}

}  // namespace pharos
