#include "pharos/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "pharos/adv_train.hpp"
#include "pharos/detail/binio.hpp"
#include "pharos/errors.hpp"
#include "pharos/experiment.hpp"

namespace pharos::cli {
namespace fs = std::filesystem;
namespace {

// Missing or malformed input artifact; maps to exit code 2.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = ".";

  std::string data_path;
  std::string model_path;
  std::string adv_path;
  std::string split = "query";
  std::string tag;
  std::vector<std::string> metrics;
  std::vector<std::string> timing;

  std::optional<int> bits;
  std::optional<int> epochs;
  std::optional<std::string> epsilon;
  std::optional<std::string> eta;
  std::optional<int> steps;
  std::optional<double> margin;
  std::optional<std::string> method;
  std::optional<std::size_t> topn;
  std::optional<int> inner_steps;
  std::optional<std::string> pool;
  std::optional<std::string> weights;
};

ExperimentConfig effective_config(const Options& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path))
      throw ArtifactError("config file not found: " + o.config_path);
    c = load_config(o.config_path);
  }
  if (o.seed) c.apply_seed(*o.seed);
  if (o.workers) c.workers = *o.workers;
  if (o.bits) c.train.bits = *o.bits;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.epsilon) c.attack.epsilon = Budget::parse(*o.epsilon);
  if (o.eta) c.attack.eta = Budget::parse(*o.eta);
  if (o.steps) c.attack.steps = *o.steps;
  if (o.margin) c.attack.margin = *o.margin;
  if (o.method) c.attack.method = parse_attack_method(*o.method);
  if (o.topn) c.topn = *o.topn;
  if (o.inner_steps) c.adv_inner_steps = *o.inner_steps;
  if (o.pool) c.pool = parse_pool_source(*o.pool);
  if (o.weights) c.weights = parse_weight_scheme(*o.weights);
  c.validate();
  return c;
}

template <typename Fn>
auto load_artifact(const std::string& path, const char* kind, Fn&& loader) {
  if (path.empty()) throw ConfigError(std::string("missing required --") + kind + " <file>");
  if (!fs::exists(path)) throw ArtifactError(std::string(kind) + " file not found: " + path);
  try {
    return loader(fs::path(path));
  } catch (const FormatError& e) {
    throw ArtifactError(path + ": " + e.what());
  } catch (const IoError& e) {
    throw ArtifactError(path + ": " + e.what());
  }
}

struct Manifest {
  nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();

  static nlohmann::ordered_json entry(const fs::path& p, std::string_view bytes) {
    return {{"file", p.filename().string()}, {"fnv1a64", detail::hex64(detail::fnv1a64(bytes))}};
  }
  void input(const fs::path& p) { inputs.push_back(entry(p, detail::read_file(p))); }
  void output(const fs::path& p, std::string_view bytes) {
    detail::write_file(p, bytes);
    outputs.push_back(entry(p, bytes));
  }
  void write(const fs::path& dir, const std::string& command, const ExperimentConfig& c,
             nlohmann::ordered_json extra = nullptr) const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["config"] = config_to_json(c);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    if (!extra.is_null()) j["details"] = std::move(extra);
    detail::write_file(dir / ("manifest_" + command + ".json"), j.dump(2) + "\n");
  }
};

Dataset load_data(const Options& o) {
  return load_artifact(o.data_path, "data", [](const fs::path& p) { return load_dataset(p); });
}

HashNet load_net(const Options& o, const Dataset& data) {
  auto net = load_artifact(o.model_path, "model", [](const fs::path& p) { return load_model(p); });
  if (static_cast<std::size_t>(net.input_dim()) != data.dim)
    throw ArtifactError(o.model_path + ": field input_dim=" + std::to_string(net.input_dim()) +
                        " does not match dataset dim=" + std::to_string(data.dim) + " of " +
                        o.data_path);
  return net;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = gen_synthetic(c.data);
  Manifest m;
  m.output(dir / "dataset.phf", encode_dataset(data));
  m.write(dir, "gen-data", c);
  out << "wrote " << (dir / "dataset.phf").string() << " (" << data.rows() << " rows)\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = load_data(o);
  std::vector<double> losses;
  const auto net = train_pairwise(training_set(data), c.train, &losses);
  Manifest m;
  m.input(o.data_path);
  m.output(dir / "model.phm", encode_model(net));
  m.write(dir, "train", c, {{"epoch_loss", losses}});
  out << "wrote " << (dir / "model.phm").string() << " (" << net.parameter_count()
      << " parameters)\n";
  return kOk;
}

int cmd_advtrain(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = load_data(o);
  std::vector<double> losses;
  AdvTrainOptions opts;
  opts.inner_steps = c.adv_inner_steps;
  opts.scheme = c.weights;
  const auto net = adv_train(training_set(data), c.attack, c.train, opts, &losses);
  Manifest m;
  m.input(o.data_path);
  m.output(dir / "model_adv.phm", encode_model(net));
  m.write(dir, "advtrain", c, {{"epoch_loss", losses}});
  out << "wrote " << (dir / "model_adv.phm").string() << "\n";
  return kOk;
}

int cmd_encode(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = load_data(o);
  const auto net = load_net(o, data);
  std::vector<std::size_t> ids;
  if (o.split == "query") ids = data.query_ids();
  else if (o.split == "database") ids = data.database_ids();
  else if (o.split == "train") ids = data.train_ids;
  else throw ConfigError("--split must be query, database or train");
  const auto codes = encode_rows(net, gather_features(data, ids), data.dim, c.effective_workers());
  const auto file = dir / ("codes_" + o.split + ".phc");
  Manifest m;
  m.input(o.data_path);
  m.input(o.model_path);
  m.output(file, encode_codes(codes));
  m.write(dir, "encode", c);
  out << "wrote " << file.string() << " (" << codes.size() << " codes)\n";
  return kOk;
}

int cmd_attack(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = load_data(o);
  const auto net = load_net(o, data);
  const int workers = c.effective_workers();
  const auto pool = build_pharos_pool(net, data, c.pool, c.pool_cap, c.seed, workers);
  const auto run = run_attack(net, data, data.query_ids(), pool, c.attack, c.weights, workers);
  const std::string method(to_string(c.attack.method));
  const auto file = dir / ("adv_" + method + ".pha");
  Manifest m;
  m.input(o.data_path);
  m.input(o.model_path);
  m.output(file, encode_adversarial(run.set));
  m.write(dir, "attack", c);
  detail::write_file(dir / ("timing_" + method + ".json"), timing_json(run).dump(2) + "\n");
  out << "wrote " << file.string() << " (" << run.results.size() << " queries, "
      << (run.target_seconds + run.attack_seconds) / std::max<std::size_t>(1, run.results.size())
      << " s/image)\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  const auto data = load_data(o);
  const auto net = load_net(o, data);
  const int workers = c.effective_workers();
  const auto qids = data.query_ids();
  const auto qlabels = gather_labels(data, qids);
  CodeTable qcodes;
  std::string tag = o.tag;
  nlohmann::ordered_json attack_echo = nullptr;
  Manifest m;
  m.input(o.data_path);
  m.input(o.model_path);
  if (!o.adv_path.empty()) {
    auto adv = load_artifact(o.adv_path, "adv", [](const fs::path& p) { return load_adversarial(p); });
    if (adv.dim != data.dim)
      throw ArtifactError(o.adv_path + ": field dim=" + std::to_string(adv.dim) +
                          " does not match dataset dim=" + std::to_string(data.dim));
    if (adv.size() != qids.size())
      throw ArtifactError(o.adv_path + ": field n=" + std::to_string(adv.size()) +
                          " does not match the " + std::to_string(qids.size()) + " dataset queries");
    if (adv.codes.bits() != net.bits())
      throw ArtifactError(o.adv_path + ": code length " + std::to_string(adv.codes.bits()) +
                          " does not match model bits " + std::to_string(net.bits()));
    qcodes = std::move(adv.codes);
    if (tag.empty()) tag = std::string(to_string(adv.config.method));
    attack_echo = {{"method", to_string(adv.config.method)},
                   {"epsilon", adv.config.epsilon.str()},
                   {"eta", adv.config.eta.str()},
                   {"steps", adv.config.steps},
                   {"t", adv.config.margin},
                   {"seed", adv.config.seed}};
    m.input(o.adv_path);
  } else {
    qcodes = encode_rows(net, gather_features(data, qids), data.dim, workers);
    if (tag.empty()) tag = "clean";
  }
  const auto index = build_index(net, data, workers);
  auto report = evaluate_codes(qcodes, qlabels, index, c.topn, c.pn_grid, workers);
  report.config["tag"] = tag;
  report.config["seed"] = c.seed;
  report.config["data_seed"] = data.params.seed;
  report.config["bits"] = net.bits();
  report.config["attack"] = attack_echo;
  m.output(dir / ("metrics_" + tag + ".json"), metrics_to_json(report).dump(2) + "\n");
  m.output(dir / ("pr_" + tag + ".csv"), pr_csv(report));
  m.output(dir / ("pn_" + tag + ".csv"), pn_csv(report));
  m.write(dir, "eval", c);
  out << tag << " MAP@" << c.topn << " = " << report.map << "\n";
  return kOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto c = effective_config(o);
  const fs::path dir = o.out;
  if (o.metrics.empty()) throw ConfigError("report needs at least one --metrics <file>");
  struct Row {
    std::string tag;
    double map;
    std::size_t queries;
  };
  std::vector<Row> rows;
  Manifest m;
  for (const auto& path : o.metrics) {
    auto j = load_artifact(path, "metrics", [](const fs::path& p) {
      try {
        return nlohmann::json::parse(detail::read_file(p));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("not valid JSON: ") + e.what(), 0);
      }
    });
    MetricsReport r;
    try {
      r = metrics_from_json(j);
    } catch (const FormatError& e) {
      throw ArtifactError(path + ": " + e.what());
    }
    if (r.per_query_ap.empty()) throw ArtifactError(path + ": field per_query_ap is empty");
    // Re-aggregate rather than trusting the stored mean.
    double total = 0.0;
    for (double ap : r.per_query_ap) total += ap;
    const std::string tag = r.config.contains("tag") ? r.config["tag"].get<std::string>()
                                                     : fs::path(path).stem().string();
    rows.push_back({tag, total / static_cast<double>(r.per_query_ap.size()), r.per_query_ap.size()});
    m.input(path);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if ((a.tag == "clean") != (b.tag == "clean")) return a.tag == "clean";
    return a.map > b.map;
  });
  const auto clean = std::find_if(rows.begin(), rows.end(), [](const Row& r) { return r.tag == "clean"; });

  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::string csv = "method,map,queries,map_drop\n";
  for (const auto& r : rows) {
    const double drop = clean != rows.end() ? clean->map - r.map : 0.0;
    table.push_back({{"method", r.tag}, {"map", r.map}, {"queries", r.queries}, {"map_drop", drop}});
    csv += r.tag + "," + format_real(r.map) + "," + std::to_string(r.queries) + "," + format_real(drop) + "\n";
  }
  nlohmann::ordered_json report;
  report["rows"] = table;
  m.output(dir / "report.json", report.dump(2) + "\n");
  m.output(dir / "report.csv", csv);
  m.write(dir, "report", c);

  if (!o.timing.empty()) {
    std::string tcsv = "method,seconds_per_image,target_share\n";
    for (const auto& path : o.timing) {
      auto j = load_artifact(path, "timing", [](const fs::path& p) {
        try {
          return nlohmann::json::parse(detail::read_file(p));
        } catch (const nlohmann::json::exception& e) {
          throw FormatError(std::string("not valid JSON: ") + e.what(), 0);
        }
      });
      try {
        tcsv += j.at("method").get<std::string>() + "," +
                format_real(j.at("seconds_per_image").get<double>()) + "," +
                format_real(j.at("target_share").get<double>()) + "\n";
      } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(path + ": " + e.what());
      }
    }
    detail::write_file(dir / "report_timing.csv", tcsv);
  }
  for (const auto& r : rows) out << r.tag << "\t" << r.map << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Adversarial robustness toolkit for hashing-based retrieval", "pharos"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.add_option("--config", o.config_path, "Experiment configuration (JSON)");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--workers", o.workers, "Worker threads (default: available parallelism)");
  app.add_option("--out", o.out, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "Train a hashing network");
  auto* encode = app.add_subcommand("encode", "Encode a split to hash codes");
  auto* attack = app.add_subcommand("attack", "Attack every query");
  auto* eval = app.add_subcommand("eval", "Evaluate retrieval (clean or adversarial)");
  auto* advtrain = app.add_subcommand("advtrain", "Adversarially train a hashing network");
  auto* report = app.add_subcommand("report", "Aggregate metric files into a comparison table");

  for (auto* sub : {gen, train, encode, attack, eval, advtrain, report}) sub->fallthrough();
  for (auto* sub : {train, encode, attack, eval, advtrain})
    sub->add_option("--data", o.data_path, "Dataset file (.phf)");
  for (auto* sub : {encode, attack, eval})
    sub->add_option("--model", o.model_path, "Model file (.phm)");
  for (auto* sub : {train, advtrain}) {
    sub->add_option("--bits", o.bits, "Hash code length K");
    sub->add_option("--epochs", o.epochs, "Training epochs");
  }
  for (auto* sub : {attack, advtrain}) {
    sub->add_option("--epsilon", o.epsilon, "Perturbation budget, e.g. 8/255");
    sub->add_option("--eta", o.eta, "Step size, e.g. 1/255");
    sub->add_option("--t", o.margin, "Margin t in (-1, 0)");
    sub->add_option("--method", o.method, "pga | pga-dagger | pga-weighted | hag | anchor-targeted");
    sub->add_option("--weights", o.weights, "dice | label-free");
  }
  attack->add_option("--steps", o.steps, "PGD iterations T");
  attack->add_option("--pool", o.pool, "Pharos pool: train | database");
  advtrain->add_option("--inner-steps", o.inner_steps, "Attack steps per training batch");
  encode->add_option("--split", o.split, "query | database | train");
  eval->add_option("--adv", o.adv_path, "Adversarial set (.pha); omit for clean queries");
  eval->add_option("--tag", o.tag, "Row name in reports (default: method or 'clean')");
  eval->add_option("--topn", o.topn, "MAP cutoff");
  report->add_option("--metrics", o.metrics, "Metric files to aggregate")->expected(1, -1);
  report->add_option("--timing", o.timing, "Attack timing files")->expected(1, -1);

  std::vector<std::string> argv_store{"pharos"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*train) return cmd_train(o, out);
    if (*encode) return cmd_encode(o, out);
    if (*attack) return cmd_attack(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*advtrain) return cmd_advtrain(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const GuardError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace pharos::cli
