// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "graphpl/data.hpp"
#include "graphpl/eval.hpp"
#include "graphpl/federation.hpp"
#include "graphpl/training.hpp"

namespace graphpl {

inline constexpr const char* kToolVersion = "0.1.0";

/// Unreadable or malformed configuration file.
class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown key in a configuration file.
class UnknownKeyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct ExperimentConfig {
  // [data]
  SyntheticSpec data;
  std::size_t samples_per_client = 400;
  std::size_t test_samples = 1000;
  std::size_t classes_per_client = 5;
  bool export_dataset = false;
  // [patchwork]
  std::size_t clients = 5;
  DropPolicy drop = DropPolicy::exactly(1);
  std::size_t max_retries = 1000;
  // [train]
  TrainConfig train;
  std::size_t global_rounds = 20;
  // [model]
  ModelSpec model;
  // [eval]
  bool eval_gq = true;
  bool eval_rq = true;
  bool eval_sweep = true;
  bool eval_collapse = true;
  std::vector<double> scales{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t eval_every = 0;  // 0: final round only
  int sweep_missing = -1;      // -1: last modality
  // [run]
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out_dir = "results";

  int resolved_sweep_missing() const {
    return sweep_missing < 0 ? static_cast<int>(data.modalities) - 1 : sweep_missing;
  }

  /// Copies shared sizes into the module configs and checks every constraint.
  void finalize() {
    model.modalities = data.modalities;
    model.vae.input_dim = data.dim;
    model.vae.beta = train.beta;
    model.fusion.latent_dim = model.vae.latent_dim;
    data.seed = seed;
    validate();
  }

  void validate() const {
    data.validate();
    if (data.modalities < 2) throw ConfigError("data.modalities must be >= 2");
    if (samples_per_client < 1) throw ConfigError("data.samples_per_client must be >= 1");
    if (test_samples < 1) throw ConfigError("data.test_samples must be >= 1");
    if (clients < 1) throw ConfigError("patchwork.clients must be >= 1");
    if (classes_per_client < 1 || classes_per_client > data.classes) {
      throw ConfigError("data.classes_per_client must lie in [1, classes]");
    }
    if (clients * classes_per_client < data.classes) {
      throw ConfigError("data.classes_per_client too small for every class to reach a client");
    }
    drop.validate(data.modalities);
    train.validate();
    if (global_rounds < 1) throw ConfigError("train.global_rounds must be >= 1");
    model.validate();
    if (workers < 1) throw ConfigError("run.workers must be >= 1");
    if (scales.empty() || std::find(scales.begin(), scales.end(), 0.0) == scales.end()) {
      throw ConfigError("eval.scales must include 0");
    }
    for (double s : scales)
      if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("eval.scales must lie in [0, 1]");
    if (sweep_missing >= static_cast<int>(data.modalities)) throw ConfigError("eval.sweep_missing out of range");
  }

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

namespace detail {

inline std::string fmt_double(double v) { return fmt::format("{}", v); }

inline std::string join_scales(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

/// Typed reads from a section; each read marks its key as known.
class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  template <typename T>
  void read(const std::string& path, T& out) {
    known_.insert(path);
    auto node = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(path, '.'));
    if (!node) return;
    try {
      out = parse<T>(*node);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("invalid value '" + *node + "' for key " + path);
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw UnknownKeyError("unknown key " + section + " (keys must live in a section)");
      for (const auto& [key, _] : body) {
        const std::string path = section + "." + key;
        if (!known_.contains(path)) throw UnknownKeyError("unknown key " + path);
      }
    }
  }

 private:
  template <typename T>
  static T parse(const std::string& s) {
    if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw ConfigError("expected a boolean, got '" + s + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, double>) {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } else if constexpr (std::is_same_v<T, int>) {
      std::size_t pos = 0;
      int v = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } else {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      std::size_t pos = 0;
      unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return static_cast<T>(v);
    }
  }

  const boost::property_tree::ptree& tree_;
  std::set<std::string> known_;
};

}  // namespace detail

/// Parses INI text; absent keys keep their defaults.
inline ExperimentConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigFileError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  ExperimentConfig cfg;
  detail::IniReader r(tree);
  r.read("data.modalities", cfg.data.modalities);
  r.read("data.classes", cfg.data.classes);
  r.read("data.dim", cfg.data.dim);
  r.read("data.sigma", cfg.data.sigma);
  r.read("data.prototype_scale", cfg.data.prototype_scale);
  r.read("data.margin", cfg.data.margin);
  r.read("data.samples_per_client", cfg.samples_per_client);
  r.read("data.test_samples", cfg.test_samples);
  r.read("data.classes_per_client", cfg.classes_per_client);
  r.read("data.export", cfg.export_dataset);

  std::string mode = cfg.drop.mode == DropPolicy::Mode::kExactly ? "exactly" : "probabilistic";
  r.read("patchwork.clients", cfg.clients);
  r.read("patchwork.mode", mode);
  r.read("patchwork.drop_count", cfg.drop.count);
  r.read("patchwork.drop_probability", cfg.drop.probability);
  r.read("patchwork.max_retries", cfg.max_retries);
  if (mode == "exactly") {
    cfg.drop.mode = DropPolicy::Mode::kExactly;
  } else if (mode == "probabilistic") {
    cfg.drop.mode = DropPolicy::Mode::kProbabilistic;
  } else {
    throw ConfigError("patchwork.mode must be 'exactly' or 'probabilistic'");
  }

  r.read("train.lambda", cfg.train.lambda);
  r.read("train.beta", cfg.train.beta);
  r.read("train.learning_rate", cfg.train.learning_rate);
  r.read("train.batch_size", cfg.train.batch_size);
  r.read("train.local_steps", cfg.train.local_steps);
  r.read("train.global_rounds", cfg.global_rounds);

  std::string method = to_string(cfg.model.method);
  std::string likelihood = to_string(cfg.model.vae.likelihood);
  r.read("model.method", method);
  r.read("model.likelihood", likelihood);
  r.read("model.latent_dim", cfg.model.vae.latent_dim);
  r.read("model.hidden_dim", cfg.model.vae.hidden_dim);
  r.read("model.blocks", cfg.model.fusion.blocks);
  r.read("model.groups", cfg.model.fusion.groups);
  r.read("model.ffn_hidden", cfg.model.fusion.ffn_hidden);
  cfg.model.method = fusion_method_from_string(method);
  cfg.model.vae.likelihood = likelihood_from_string(likelihood);

  std::string scales = detail::join_scales(cfg.scales);
  r.read("eval.gq", cfg.eval_gq);
  r.read("eval.rq", cfg.eval_rq);
  r.read("eval.sweep", cfg.eval_sweep);
  r.read("eval.collapse", cfg.eval_collapse);
  r.read("eval.scales", scales);
  r.read("eval.every", cfg.eval_every);
  r.read("eval.sweep_missing", cfg.sweep_missing);
  cfg.scales.clear();
  std::stringstream ss(scales);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      cfg.scales.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("invalid value '" + item + "' in eval.scales");
    }
  }

  r.read("run.seed", cfg.seed);
  r.read("run.workers", cfg.workers);
  r.read("run.out", cfg.out_dir);

  r.reject_unknown();
  cfg.finalize();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigFileError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

/// Canonical INI text covering every key.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::fmt_double;
  std::string s;
  s += "[data]\n";
  s += fmt::format("modalities={}\nclasses={}\ndim={}\nsigma={}\nprototype_scale={}\nmargin={}\n", c.data.modalities,
                   c.data.classes, c.data.dim, fmt_double(c.data.sigma), fmt_double(c.data.prototype_scale),
                   fmt_double(c.data.margin));
  s += fmt::format("samples_per_client={}\ntest_samples={}\nclasses_per_client={}\nexport={}\n", c.samples_per_client,
                   c.test_samples, c.classes_per_client, c.export_dataset);
  s += "\n[patchwork]\n";
  s += fmt::format("clients={}\nmode={}\ndrop_count={}\ndrop_probability={}\nmax_retries={}\n", c.clients,
                   c.drop.mode == DropPolicy::Mode::kExactly ? "exactly" : "probabilistic", c.drop.count,
                   fmt_double(c.drop.probability), c.max_retries);
  s += "\n[train]\n";
  s += fmt::format("lambda={}\nbeta={}\nlearning_rate={}\nbatch_size={}\nlocal_steps={}\nglobal_rounds={}\n",
                   fmt_double(c.train.lambda), fmt_double(c.train.beta), fmt_double(c.train.learning_rate),
                   c.train.batch_size, c.train.local_steps, c.global_rounds);
  s += "\n[model]\n";
  s += fmt::format("method={}\nlikelihood={}\nlatent_dim={}\nhidden_dim={}\nblocks={}\ngroups={}\nffn_hidden={}\n",
                   to_string(c.model.method), to_string(c.model.vae.likelihood), c.model.vae.latent_dim,
                   c.model.vae.hidden_dim, c.model.fusion.blocks, c.model.fusion.groups, c.model.fusion.ffn_hidden);
  s += "\n[eval]\n";
  s += fmt::format("gq={}\nrq={}\nsweep={}\ncollapse={}\nscales={}\nevery={}\nsweep_missing={}\n", c.eval_gq, c.eval_rq,
                   c.eval_sweep, c.eval_collapse, detail::join_scales(c.scales), c.eval_every, c.sweep_missing);
  s += "\n[run]\n";
  s += fmt::format("seed={}\nworkers={}\nout={}\n", c.seed, c.workers, c.out_dir);
  return s;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

struct ExperimentResult {
  FederationResult federation;
  std::string checksum;
  double gq = 0.0;
  std::map<int, double> gq_per_missing;
  RepresentationQuality rq;
  RepresentationQuality rq_untrained;
  SweepResult sweep;
  CollapseDiagnostic collapse;
  std::vector<std::set<int>> observed;
  double seconds = 0.0;
};

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string csv_num(double v) { return fmt::format("{}", v); }

}  // namespace detail

/// Data, model, and evaluation state built from a config, before training.
struct ExperimentSetup {
  Prototypes prototypes;
  Dataset train_pool;
  Dataset test;
  std::vector<std::set<int>> observed;
  std::vector<ClientState> clients;
  GlobalModel initial;
};

/// Every stochastic choice is keyed off cfg.seed.
inline ExperimentSetup prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentSetup s;
  s.prototypes = make_prototypes(cfg.data);
  Rng data_rng = derive_rng(cfg.seed, {0x64617461ULL});
  s.train_pool = generate(cfg.data, s.prototypes, cfg.samples_per_client * cfg.clients, data_rng);
  Rng test_rng = derive_rng(cfg.seed, {0x74657374ULL});
  s.test = generate(cfg.data, s.prototypes, cfg.test_samples, test_rng);

  Rng split_rng = derive_rng(cfg.seed, {0x73706c6974ULL});
  auto split = split_heterogeneous(s.train_pool.labels, cfg.data.classes, cfg.clients, cfg.classes_per_client, split_rng);
  std::vector<Dataset> shards;
  for (const auto& idx : split.indices) shards.push_back(s.train_pool.subset(idx));

  Rng patch_rng = derive_rng(cfg.seed, {0x7061746368ULL});
  s.observed = build_patchwork(cfg.clients, cfg.data.modalities, cfg.drop, patch_rng, cfg.max_retries);
  s.initial = init_global(cfg.model, cfg.seed);
  s.clients = make_clients(cfg.model, s.observed, std::move(shards), s.initial, cfg.seed);
  return s;
}

inline NoiseSource eval_noise(const ExperimentConfig& cfg) { return NoiseSource(derive_rng(cfg.seed, {0x6576616cULL})(), 0); }

inline std::uint64_t corruption_seed(const ExperimentConfig& cfg) { return derive_rng(cfg.seed, {0x636f7272ULL})(); }

/// Runs data generation, federated training, and evaluation. Artifacts are
/// written under cfg.out_dir unless `write_artifacts` is false.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_artifacts = true) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const std::string config_text = serialize_config(cfg);
  const std::string config_hash = sha256_hex(config_text);

  fs::path out(cfg.out_dir);
  nlohmann::json manifest;
  auto write_manifest = [&] {
    std::ofstream os(out / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest in '" + out.string() + "'");
    os << manifest.dump(2) << '\n';
  };
  if (write_artifacts) {
    fs::create_directories(out);
    std::ofstream(out / "config.ini") << config_text;
    manifest = {{"config_hash", config_hash},
                {"seed", cfg.seed},
                {"method", to_string(cfg.model.method)},
                {"tool_version", kToolVersion},
                {"started_at", detail::utc_now()},
                {"finished_at", nullptr},
                {"status", "running"},
                {"artifacts", {{"config", "config.ini"}}}};
    write_manifest();
  }

  ExperimentSetup setup = prepare_experiment(cfg);
  if (write_artifacts && cfg.export_dataset) {
    std::ofstream os(out / "dataset.csv");
    write_dataset_csv(os, setup.train_pool);
    manifest["artifacts"]["dataset"] = "dataset.csv";
  }

  const NoiseSource noise = eval_noise(cfg);
  const std::uint64_t split_seed = derive_rng(cfg.seed, {0x7271ULL})();
  const OracleClassifier oracle(setup.prototypes);
  ExperimentResult result;
  result.observed = setup.observed;
  if (cfg.eval_rq) {
    result.rq_untrained = representation_quality(setup.clients, cfg.data.modalities, cfg.data.classes, noise, split_seed);
  }

  FederationConfig fcfg{cfg.global_rounds, cfg.train, cfg.workers};
  fcfg.train.seed = cfg.seed;
  std::map<std::size_t, std::pair<double, RepresentationQuality>> evals;
  auto hook = [&](std::size_t round, const GlobalModel& global, std::span<ClientState> clients) {
    const bool due = round == cfg.global_rounds || (cfg.eval_every > 0 && round % cfg.eval_every == 0);
    if (!due) return;
    double gq = std::numeric_limits<double>::quiet_NaN();
    RepresentationQuality rq;
    if (cfg.eval_gq) gq = leave_one_out_gq(full_bundle(cfg.model, global), setup.test, oracle, noise);
    if (cfg.eval_rq) rq = representation_quality(clients, cfg.data.modalities, cfg.data.classes, noise, split_seed);
    evals[round] = {gq, rq};
  };
  result.federation = run_federation(setup.clients, fcfg, setup.initial, hook);
  result.checksum = checksum(result.federation.global);

  const ModelBundle final_model = full_bundle(cfg.model, result.federation.global);
  if (cfg.eval_gq) {
    for (std::size_t m = 0; m < cfg.data.modalities; ++m) {
      result.gq_per_missing[static_cast<int>(m)] =
          generation_quality(final_model, setup.test, {static_cast<int>(m)}, oracle, noise);
    }
    result.gq = evals.at(cfg.global_rounds).first;
  }
  if (cfg.eval_rq) result.rq = evals.at(cfg.global_rounds).second;
  const int target = cfg.resolved_sweep_missing();
  if (cfg.eval_sweep) {
    result.sweep = robustness_sweep(final_model, setup.test, cfg.scales, target, oracle, noise, corruption_seed(cfg));
  }
  if (cfg.eval_collapse) {
    result.collapse = collapse_diagnostic(final_model, setup.test, target, oracle, noise, corruption_seed(cfg));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (write_artifacts) {
    {
      std::ofstream os(out / "metrics.csv");
      os << "round,client_id,mean_local_loss,gq,rq\n";
      for (const auto& m : result.federation.metrics) {
        std::string gq, rq;
        if (auto it = evals.find(m.round); it != evals.end()) {
          if (cfg.eval_gq) gq = detail::csv_num(it->second.first);
          if (cfg.eval_rq)
            for (const auto& c : it->second.second.clients)
              if (c.client_id == m.client_id) rq = detail::csv_num(c.accuracy);
        }
        os << m.round << ',' << m.client_id << ',' << detail::csv_num(m.mean_local_loss) << ',' << gq << ',' << rq << '\n';
      }
    }
    save_checkpoint((out / "checkpoint.gpl").string(), result.federation.global);
    manifest["artifacts"]["metrics"] = "metrics.csv";
    manifest["artifacts"]["checkpoint"] = "checkpoint.gpl";
    if (cfg.eval_sweep) {
      std::ofstream os(out / "sweep.csv");
      os << "method,seed,noised_modality,scale,gq\n";
      for (std::size_t i = 0; i < result.sweep.scales.size(); ++i)
        for (std::size_t k = 0; k < result.sweep.noised.size(); ++k)
          os << result.sweep.method << ',' << cfg.seed << ',' << result.sweep.noised[k] << ','
             << detail::csv_num(result.sweep.scales[i]) << ',' << detail::csv_num(result.sweep.gq[i][k]) << '\n';
      manifest["artifacts"]["sweep"] = "sweep.csv";
    }
    {
      std::ofstream os(out / "summary.csv");
      os << "method,seed,gq,rq_mean,collapse_score\n";
      os << to_string(cfg.model.method) << ',' << cfg.seed << ',' << (cfg.eval_gq ? detail::csv_num(result.gq) : "")
         << ',' << (cfg.eval_rq ? detail::csv_num(result.rq.mean) : "") << ','
         << (cfg.eval_collapse && result.collapse.defined ? detail::csv_num(result.collapse.score) : "") << '\n';
      manifest["artifacts"]["summary"] = "summary.csv";
    }
    manifest["checksum"] = result.checksum;
    if (cfg.eval_rq) manifest["untrained_rq_mean"] = result.rq_untrained.mean;
    manifest["finished_at"] = detail::utc_now();
    manifest["status"] = "ok";
    write_manifest();
  }
  return result;
}

}  // namespace graphpl
