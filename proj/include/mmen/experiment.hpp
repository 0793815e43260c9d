#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmen/checkpoint.hpp"
#include "mmen/data.hpp"
#include "mmen/metrics.hpp"
#include "mmen/trainer.hpp"

namespace mmen {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  enum class Kind { two_moons, shifted_blobs, idx };
  Kind kind = Kind::two_moons;
  std::uint64_t seed = 0;
  // two_moons
  std::size_t n = 500;
  double noise = 0.1;
  double rotation_deg = 45.0;
  // shifted_blobs
  std::size_t classes = 12;
  std::size_t per_class = 40;
  double shift_x = 1.0, shift_y = 0.0;
  double spread = 0.4;
  // idx
  std::string source_images, source_labels, target_images, target_labels;
  std::size_t max_n = 2000;
  std::size_t downsample_to = 16;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  BundleSpec model;
  TrainConfig train;
  std::vector<Variant> variants;
  std::string output_dir;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return it.key() == k;
        }) == allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

inline DatasetConfig parse_dataset(const nlohmann::json& j) {
  DatasetConfig d;
  const std::string kind = get_or<std::string>(j, "kind", "");
  if (kind == "two_moons") {
    d.kind = DatasetConfig::Kind::two_moons;
    reject_unknown_keys(j, {"kind", "seed", "n", "noise", "rotation_deg"}, "dataset");
    d.n = get_or<std::size_t>(j, "n", d.n);
    d.noise = get_or<double>(j, "noise", d.noise);
    d.rotation_deg = get_or<double>(j, "rotation_deg", d.rotation_deg);
    if (d.n < 2) throw ConfigError("dataset.n must be >= 2");
    if (d.noise < 0.0) throw ConfigError("dataset.noise must be >= 0");
  } else if (kind == "shifted_blobs") {
    d.kind = DatasetConfig::Kind::shifted_blobs;
    reject_unknown_keys(
        j, {"kind", "seed", "classes", "per_class", "shift_x", "shift_y", "spread"},
        "dataset");
    d.classes = get_or<std::size_t>(j, "classes", d.classes);
    d.per_class = get_or<std::size_t>(j, "per_class", d.per_class);
    d.shift_x = get_or<double>(j, "shift_x", d.shift_x);
    d.shift_y = get_or<double>(j, "shift_y", d.shift_y);
    d.spread = get_or<double>(j, "spread", d.spread);
    if (d.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (d.per_class < 1) throw ConfigError("dataset.per_class must be >= 1");
    if (d.spread <= 0.0) throw ConfigError("dataset.spread must be > 0");
  } else if (kind == "idx") {
    d.kind = DatasetConfig::Kind::idx;
    reject_unknown_keys(j,
                        {"kind", "seed", "source_images", "source_labels", "target_images",
                         "target_labels", "max_n", "downsample_to"},
                        "dataset");
    d.source_images = get_or<std::string>(j, "source_images", "");
    d.source_labels = get_or<std::string>(j, "source_labels", "");
    d.target_images = get_or<std::string>(j, "target_images", "");
    d.target_labels = get_or<std::string>(j, "target_labels", "");
    d.max_n = get_or<std::size_t>(j, "max_n", d.max_n);
    d.downsample_to = get_or<std::size_t>(j, "downsample_to", d.downsample_to);
    for (const std::string* p :
         {&d.source_images, &d.source_labels, &d.target_images, &d.target_labels}) {
      if (p->empty()) throw ConfigError("dataset: idx requires all four file paths");
      if (!std::filesystem::exists(*p)) {
        throw ConfigError("dataset: file does not exist: " + *p);
      }
    }
    if (d.downsample_to == 0) throw ConfigError("dataset.downsample_to must be >= 1");
  } else {
    throw ConfigError("dataset.kind must be one of two_moons|shifted_blobs|idx, got '" +
                      kind + "'");
  }
  d.seed = get_or<std::uint64_t>(j, "seed", d.seed);
  return d;
}

inline BundleSpec parse_model(const nlohmann::json& j) {
  reject_unknown_keys(j, {"g_hidden", "feature_dim", "head_hidden"}, "model");
  BundleSpec m;
  m.g_hidden = get_or<std::vector<std::size_t>>(j, "g_hidden", m.g_hidden);
  m.feature_dim = get_or<std::size_t>(j, "feature_dim", m.feature_dim);
  m.head_hidden = get_or<std::vector<std::size_t>>(j, "head_hidden", m.head_hidden);
  if (m.feature_dim == 0) throw ConfigError("model.feature_dim must be >= 1");
  for (std::size_t h : m.g_hidden) {
    if (h == 0) throw ConfigError("model.g_hidden entries must be >= 1");
  }
  for (std::size_t h : m.head_hidden) {
    if (h == 0) throw ConfigError("model.head_hidden entries must be >= 1");
  }
  return m;
}

inline TrainConfig parse_train(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"lambda", "k", "epochs", "pretrain_epochs", "batch_source",
                       "batch_target", "optimizer", "learning_rate", "seed",
                       "detach_pseudo_labels", "d_step_first", "carry_optimizer_state"},
                      "train");
  TrainConfig t;
  t.lambda = get_or<double>(j, "lambda", t.lambda);
  t.k = get_or<int>(j, "k", t.k);
  t.epochs = get_or<int>(j, "epochs", t.epochs);
  t.pretrain_epochs = get_or<int>(j, "pretrain_epochs", t.pretrain_epochs);
  t.batch_source = get_or<std::size_t>(j, "batch_source", t.batch_source);
  t.batch_target = get_or<std::size_t>(j, "batch_target", t.batch_target);
  const std::string opt = get_or<std::string>(j, "optimizer", "adam");
  if (opt == "adam") {
    t.optimizer = OptimizerKind::adam;
  } else if (opt == "sgd") {
    t.optimizer = OptimizerKind::sgd;
  } else {
    throw ConfigError("train.optimizer must be adam|sgd, got '" + opt + "'");
  }
  t.learning_rate = get_or<double>(j, "learning_rate", t.learning_rate);
  t.seed = get_or<std::uint64_t>(j, "seed", t.seed);
  t.detach_pseudo_labels = get_or<bool>(j, "detach_pseudo_labels", false);
  t.d_step_first = get_or<bool>(j, "d_step_first", false);
  t.carry_optimizer_state = get_or<bool>(j, "carry_optimizer_state", false);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return t;
}

}  // namespace detail

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse error in " + path + ": " + e.what());
  }
  detail::reject_unknown_keys(j, {"dataset", "model", "train", "variants", "output_dir"},
                              "config root");
  if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset' block");
  if (!j.contains("output_dir")) throw ConfigError("config: missing 'output_dir'");
  if (!j.contains("variants")) throw ConfigError("config: missing 'variants' list");

  ExperimentConfig cfg;
  cfg.dataset = detail::parse_dataset(j.at("dataset"));
  cfg.model = j.contains("model") ? detail::parse_model(j.at("model")) : BundleSpec{};
  cfg.train = j.contains("train") ? detail::parse_train(j.at("train")) : TrainConfig{};
  cfg.output_dir = j.at("output_dir").get<std::string>();
  for (const auto& v : j.at("variants")) {
    try {
      cfg.variants.push_back(variant_from_name(v.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("variants: ") + e.what());
    }
  }
  if (cfg.variants.empty()) throw ConfigError("config: variants list is empty");
  return cfg;
}

inline DomainPair build_dataset(const DatasetConfig& d) {
  switch (d.kind) {
    case DatasetConfig::Kind::two_moons: {
      DomainDataset source = make_two_moons(d.n, d.noise, mix_seed(d.seed, 100));
      DomainDataset target =
          rotate_domain(make_two_moons(d.n, d.noise, mix_seed(d.seed, 101)), d.rotation_deg);
      target.tag = DomainTag::target;
      return DomainPair(std::move(source), std::move(target));
    }
    case DatasetConfig::Kind::shifted_blobs:
      return make_shifted_blobs(d.classes, d.per_class, d.shift_x, d.shift_y, d.spread,
                                d.seed);
    case DatasetConfig::Kind::idx: {
      DomainDataset source =
          load_idx(d.source_images, d.source_labels, d.max_n, d.downsample_to);
      DomainDataset target =
          load_idx(d.target_images, d.target_labels, d.max_n, d.downsample_to);
      target.tag = DomainTag::target;
      const std::size_t k = std::max(source.class_count, target.class_count);
      source.class_count = k;
      target.class_count = k;
      return DomainPair(std::move(source), std::move(target));
    }
  }
  throw ConfigError("unreachable dataset kind");
}

// MMEN_OUTPUT_DIR overrides the config's output directory.
inline std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("MMEN_OUTPUT_DIR")) {
    if (*env) return env;
  }
  return cfg.output_dir;
}

namespace detail {

inline void write_summary_csv(const std::string& path,
                              const std::vector<Variant>& variants,
                              const std::vector<MetricsRecord>& finals,
                              const std::vector<bool>& failed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "variant,accuracy,acc_c,acc_d,h_target,target_xent_true,mean_ccd\n";
  char buf[256];
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (failed[i]) {
      out << variant_name(variants[i]) << ",NaN,NaN,NaN,NaN,NaN,NaN\n";
      continue;
    }
    const MetricsRecord& r = finals[i];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  variant_name(variants[i]), headline_accuracy(variants[i], r), r.acc_c,
                  r.acc_d, r.h_target, r.target_xent_true, r.mean_ccd);
    out << buf;
  }
}

}  // namespace detail

// Trains every listed variant into output_dir/<variant>/ (metrics.csv,
// checkpoint.bin, features.csv, ccd.csv) and writes summary.csv with one row
// per variant in config order. Divergent variants are reported, marked NaN
// in the summary, and do not stop the remaining variants.
inline int cmd_run(const std::string& config_path) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const std::filesystem::path out_dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(out_dir);
  DomainPair pair = build_dataset(cfg.dataset);

  std::vector<MetricsRecord> finals(cfg.variants.size());
  std::vector<bool> failed(cfg.variants.size(), false);
  int failures = 0;
  for (std::size_t i = 0; i < cfg.variants.size(); ++i) {
    const Variant v = cfg.variants[i];
    TrainConfig tc = cfg.train;
    tc.variant = v;
    const std::filesystem::path dir = out_dir / variant_name(v);
    std::filesystem::create_directories(dir);
    try {
      TrainResult r = train(pair, cfg.model, tc);
      r.log.write_csv((dir / "metrics.csv").string());
      save_checkpoint((dir / "checkpoint.bin").string(), r.model);
      dump_features(r.model.bundle, pair, (dir / "features.csv").string());
      if (pair.has_target_labels()) {
        CcdReport final_ccd = ccd(generator_features(r.model.bundle, pair.source().features),
                                  pair.source().labels,
                                  generator_features(r.model.bundle, pair.target_features()),
                                  pair.diagnostic_target_labels(), pair.class_count(),
                                  &r.ccd_reference, static_cast<std::size_t>(tc.epochs));
        write_ccd_csv(final_ccd, (dir / "ccd.csv").string());
      }
      finals[i] = r.model.final_metrics;
    } catch (const TrainDivergence& e) {
      std::cerr << "variant " << variant_name(v) << ": " << e.what() << "\n";
      failed[i] = true;
      ++failures;
    }
  }
  detail::write_summary_csv((out_dir / "summary.csv").string(), cfg.variants, finals, failed);
  return failures == 0 ? 0 : 1;
}

// Table-shaped sweep: rows k, columns lambda, cells are final target
// accuracy; divergent cells print as NaN and flag a nonzero exit.
inline int cmd_sweep(const std::string& config_path, const std::vector<int>& k_values,
                     const std::vector<double>& lambda_values, bool parallel = false) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (k_values.empty() || lambda_values.empty()) {
    throw ConfigError("sweep: need at least one k and one lambda");
  }
  for (int k : k_values) {
    if (k < 1) throw ConfigError("sweep: k values must be >= 1");
  }
  for (double l : lambda_values) {
    if (l < 0.0) throw ConfigError("sweep: lambda values must be >= 0");
  }
  const std::filesystem::path out_dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(out_dir);
  DomainPair pair = build_dataset(cfg.dataset);
  SweepResult result = sweep(pair, cfg.model, cfg.train, k_values, lambda_values, parallel);
  result.write_csv((out_dir / "sweep.csv").string());
  return result.any_failed ? 1 : 0;
}

// Loads a checkpoint, rebuilds the config's dataset and reports both heads'
// target accuracies plus the entropy diagnostics.
inline int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
                    std::ostream& out = std::cout) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  TrainedModel model = load_checkpoint(checkpoint_path);
  DomainPair pair = build_dataset(cfg.dataset);
  if (pair.feature_dim() != model.bundle.g.input_dim()) {
    throw std::invalid_argument(
        "eval: dataset feature dim " + std::to_string(pair.feature_dim()) +
        " does not match model input dim " + std::to_string(model.bundle.g.input_dim()));
  }
  if (pair.class_count() != model.bundle.class_count()) {
    throw std::invalid_argument(
        "eval: dataset class count " + std::to_string(pair.class_count()) +
        " does not match model class count " + std::to_string(model.bundle.class_count()));
  }
  EvalRecord rec = evaluate(model.bundle, pair);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "acc_c=%.6f\nacc_d=%.6f\nh_target=%.6f\nxent_true_target=%.6f\n",
                rec.accuracy_classifier, rec.accuracy_discriminator, rec.h_target,
                rec.xent_true_target);
  out << buf;
  return 0;
}

inline int cmd_dump_features(const std::string& checkpoint_path,
                             const std::string& config_path, const std::string& out_path) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  TrainedModel model = load_checkpoint(checkpoint_path);
  DomainPair pair = build_dataset(cfg.dataset);
  if (pair.feature_dim() != model.bundle.g.input_dim()) {
    throw std::invalid_argument(
        "dump-features: dataset feature dim " + std::to_string(pair.feature_dim()) +
        " does not match model input dim " + std::to_string(model.bundle.g.input_dim()));
  }
  dump_features(model.bundle, pair, out_path);
  return 0;
}

}  // namespace mmen
