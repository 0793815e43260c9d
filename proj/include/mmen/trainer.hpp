#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mmen/data.hpp"
#include "mmen/metrics.hpp"
#include "mmen/net.hpp"
#include "mmen/objectives.hpp"
#include "mmen/optim.hpp"

namespace mmen {

enum class Variant { source_only, dann, g_plus_d, mmen };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::source_only: return "source_only";
    case Variant::dann: return "dann";
    case Variant::g_plus_d: return "g_plus_d";
    case Variant::mmen: return "mmen";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& name) {
  if (name == "source_only") return Variant::source_only;
  if (name == "dann") return Variant::dann;
  if (name == "g_plus_d") return Variant::g_plus_d;
  if (name == "mmen") return Variant::mmen;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

struct TrainConfig {
  double lambda = 0.1;
  int k = 4;
  int epochs = 150;
  int pretrain_epochs = 10;
  std::size_t batch_source = 128;
  std::size_t batch_target = 128;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Variant variant = Variant::mmen;
  bool detach_pseudo_labels = false;
  bool d_step_first = false;
  bool carry_optimizer_state = false;

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (k < 1) throw std::invalid_argument("TrainConfig: k must be >= 1");
    if (epochs < 0 || pretrain_epochs < 0) {
      throw std::invalid_argument("TrainConfig: negative epoch count");
    }
    if (batch_source == 0 || batch_target == 0) {
      throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
    }
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning rate <= 0");
  }
};

// Architecture knobs for the three MLPs; input dim and class count come
// from the dataset.
struct BundleSpec {
  std::vector<std::size_t> g_hidden{32};
  std::size_t feature_dim = 16;
  std::vector<std::size_t> head_hidden{16};
};

struct MetricsRecord {
  int epoch = 0;
  double h_target = 0.0;
  double l_c_source = 0.0;
  double target_xent_true = 0.0;
  double acc_c = 0.0;
  double acc_d = 0.0;
  double mean_ccd = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRecord> rows;

  const MetricsRecord& final_record() const {
    if (rows.empty()) throw std::runtime_error("MetricsLog: empty log");
    return rows.back();
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("MetricsLog: cannot open " + path);
    out << "epoch,h_target,l_c_source,target_xent_true,acc_c,acc_d,mean_ccd\n";
    char buf[256];
    for (const MetricsRecord& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch,
                    r.h_target, r.l_c_source, r.target_xent_true, r.acc_c, r.acc_d,
                    r.mean_ccd);
      out << buf;
    }
  }
};

struct TrainedModel {
  ModelBundle bundle;
  TrainConfig config;
  MetricsRecord final_metrics;
};

struct TrainResult {
  TrainedModel model;
  MetricsLog log;
  CcdReport ccd_reference;
};

// Raised when any training loss goes non-finite. Aborting beats clamping
// here: a silent clamp would hide exactly the minimax instability the
// sweep is meant to expose.
class TrainDivergence : public std::runtime_error {
 public:
  TrainDivergence(std::string loss_name, int epoch)
      : std::runtime_error("training diverged: " + loss_name + " is non-finite at epoch " +
                           std::to_string(epoch)),
        loss_name_(std::move(loss_name)),
        epoch_(epoch) {}

  const std::string& loss_name() const { return loss_name_; }
  int epoch() const { return epoch_; }

 private:
  std::string loss_name_;
  int epoch_;
};

inline Optimizer make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) return Optimizer::sgd(cfg.learning_rate);
  return Optimizer::adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
}

inline ModelBundle build_bundle(std::size_t input_dim, std::size_t class_count,
                                const BundleSpec& arch, std::uint64_t seed, Variant variant) {
  NetworkSpec g_spec{input_dim, arch.g_hidden, arch.feature_dim, Activation::relu,
                     mix_seed(seed, 11)};
  NetworkSpec d_spec{arch.feature_dim, arch.head_hidden, class_count, Activation::relu,
                     mix_seed(seed, 12)};
  NetworkSpec c_spec{arch.feature_dim, arch.head_hidden, class_count, Activation::relu,
                     mix_seed(seed, 13)};
  std::optional<Network> domain;
  if (variant == Variant::dann) {
    NetworkSpec dom_spec{arch.feature_dim, arch.head_hidden, 2, Activation::relu,
                         mix_seed(seed, 14)};
    domain = Network::build(dom_spec, Role::domain_classifier);
  }
  return ModelBundle(Network::build(g_spec, Role::generator),
                     Network::build(d_spec, Role::discriminator),
                     Network::build(c_spec, Role::classifier), std::move(domain));
}

namespace detail {

inline std::vector<Tensor> concat_params(std::initializer_list<const Network*> nets) {
  std::vector<Tensor> out;
  for (const Network* n : nets) {
    auto p = n->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// parameters moved by the k generator-side sub-steps
inline std::vector<Tensor> generator_side_params(const ModelBundle& b, Variant v) {
  if (v == Variant::g_plus_d) return b.g.parameters();
  return concat_params({&b.g, &b.c});
}

// parameters moved by the single adversary sub-step
inline std::vector<Tensor> adversary_params(const ModelBundle& b, Variant v) {
  if (v == Variant::dann) return b.domain->parameters();
  return b.d.parameters();
}

inline std::vector<Tensor> all_params(const ModelBundle& b) {
  auto out = concat_params({&b.g, &b.d, &b.c});
  if (b.domain) {
    auto p = b.domain->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Source classification term as each variant trains it: both heads for
// mmen/source_only, discriminator head only for g_plus_d, classifier head
// only for dann.
inline Tensor source_loss(Tape& tape, const ModelBundle& b, Variant v, const Tensor& feats_s,
                          const Tensor& y) {
  switch (v) {
    case Variant::g_plus_d:
      return head_cross_entropy(tape, b.d.forward(tape, feats_s), y);
    case Variant::dann:
      return head_cross_entropy(tape, b.c.forward(tape, feats_s), y);
    default:
      return classification_loss(tape, b.c.forward(tape, feats_s),
                                 b.d.forward(tape, feats_s), y);
  }
}

}  // namespace detail

// One adversarial step on a batch pair: k sub-steps descending the
// generator-side objective (adversary parameters held), then one sub-step
// descending the adversary objective (generator side held). The entropy
// branch is skipped entirely at lambda = 0, which makes the mmen trajectory
// coincide bit-for-bit with source_only.
inline LossReport adversarial_step(ModelBundle& bundle, const BatchPair& batch,
                                   const TrainConfig& cfg, Optimizer& opt) {
  const Tensor y = one_hot(batch.y_s, bundle.class_count());
  const auto gc_params = detail::generator_side_params(bundle, cfg.variant);
  const auto adv_params = detail::adversary_params(bundle, cfg.variant);
  const auto everything = detail::all_params(bundle);
  const bool uses_entropy =
      (cfg.variant == Variant::mmen || cfg.variant == Variant::g_plus_d) && cfg.lambda > 0.0;

  auto run_substep = [&](const std::vector<Tensor>& params, const char* name, auto&& build) {
    Tape tape;
    Tensor objective = build(tape);
    if (!std::isfinite(objective.item())) throw TrainDivergence(name, 0);
    zero_grads(everything);
    tape.backward(objective);
    opt.step(params);
    zero_grads(everything);
  };

  auto generator_substep = [&] {
    run_substep(gc_params, "generator objective", [&](Tape& tape) {
      Tensor feats_s = bundle.g.forward(tape, batch.x_s);
      Tensor obj = detail::source_loss(tape, bundle, cfg.variant, feats_s, y);
      if (uses_entropy) {
        Tensor feats_t = bundle.g.forward(tape, batch.x_t);
        Tensor h = pseudo_label_entropy(tape, bundle.d.forward(tape, feats_t),
                                        cfg.detach_pseudo_labels);
        obj = tape.add(obj, tape.scale(h, cfg.lambda));
      } else if (cfg.variant == Variant::dann && cfg.lambda > 0.0) {
        Tensor rev_s = tape.gradient_reverse(feats_s, cfg.lambda);
        Tensor rev_t = tape.gradient_reverse(bundle.g.forward(tape, batch.x_t), cfg.lambda);
        obj = tape.add(obj, dann_domain_loss(tape, rev_s, rev_t, *bundle.domain));
      }
      return obj;
    });
  };

  auto adversary_substep = [&] {
    run_substep(adv_params, "adversary objective", [&](Tape& tape) {
      if (cfg.variant == Variant::dann) {
        Tensor feats_s = bundle.g.forward(tape, batch.x_s);
        Tensor feats_t = bundle.g.forward(tape, batch.x_t);
        return dann_domain_loss(tape, feats_s, feats_t, *bundle.domain);
      }
      Tensor feats_s = bundle.g.forward(tape, batch.x_s);
      Tensor obj = detail::source_loss(tape, bundle, cfg.variant, feats_s, y);
      if (uses_entropy) {
        Tensor feats_t = bundle.g.forward(tape, batch.x_t);
        Tensor h = pseudo_label_entropy(tape, bundle.d.forward(tape, feats_t),
                                        cfg.detach_pseudo_labels);
        obj = tape.add(obj, tape.scale(h, -cfg.lambda));
      }
      return obj;
    });
  };

  if (cfg.d_step_first) adversary_substep();
  for (int i = 0; i < cfg.k; ++i) generator_substep();
  if (!cfg.d_step_first) adversary_substep();

  // losses measured after the full step, forward only
  Tape tape;
  Tensor feats_s = bundle.g.forward(tape, batch.x_s);
  const double l_c = detail::source_loss(tape, bundle, cfg.variant, feats_s, y).item();
  Tensor feats_t = bundle.g.forward(tape, batch.x_t);
  const double h = pseudo_label_entropy(tape, bundle.d.forward(tape, feats_t)).item();
  return LossReport{l_c, h, g_objective(l_c, h, cfg.lambda), cfg.lambda};
}

// Joint source-only phase: all heads minimize the classification loss.
inline void pretrain(ModelBundle& bundle, const DomainDataset& source, const TrainConfig& cfg,
                     Optimizer& opt) {
  if (source.labels.empty() || source.size() == 0) {
    throw std::invalid_argument("pretrain: source dataset is empty or unlabeled");
  }
  if (cfg.batch_source > source.size()) {
    throw std::invalid_argument("pretrain: batch size " + std::to_string(cfg.batch_source) +
                                " exceeds source size " + std::to_string(source.size()));
  }
  const auto params = cfg.variant == Variant::g_plus_d
                          ? detail::concat_params({&bundle.g, &bundle.d})
                          : detail::concat_params({&bundle.g, &bundle.d, &bundle.c});
  const std::size_t bs = cfg.batch_source;
  const std::size_t nb = source.size() / bs;
  const std::size_t d = source.dim();
  std::vector<std::size_t> perm(source.size());
  for (int e = 0; e < cfg.pretrain_epochs; ++e) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e), 2));
    rng.shuffle(perm);
    for (std::size_t b = 0; b < nb; ++b) {
      Tensor x = Tensor::zeros({bs, d});
      std::vector<int> yl(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t src = perm[b * bs + i];
        yl[i] = source.labels[src];
        for (std::size_t j = 0; j < d; ++j) x.at(i, j) = source.features.at(src, j);
      }
      Tensor y = one_hot(yl, bundle.class_count());
      Tape tape;
      Tensor feats = bundle.g.forward(tape, x);
      Tensor loss = detail::source_loss(
          tape, bundle, cfg.variant == Variant::g_plus_d ? Variant::g_plus_d : Variant::mmen,
          feats, y);
      if (!std::isfinite(loss.item())) throw TrainDivergence("pretrain loss", e);
      zero_grads(params);
      tape.backward(loss);
      opt.step(params);
      zero_grads(params);
    }
  }
}

inline void pretrain(ModelBundle& bundle, const DomainDataset& source,
                     const TrainConfig& cfg) {
  Optimizer opt = make_optimizer(cfg);
  pretrain(bundle, source, cfg, opt);
}

namespace detail {

inline MetricsRecord evaluate_epoch(const ModelBundle& bundle, const DomainPair& pair,
                                    const TrainConfig& cfg, int epoch,
                                    const CcdReport* reference) {
  MetricsRecord rec;
  rec.epoch = epoch;
  EvalRecord er = evaluate(bundle, pair);
  rec.h_target = er.h_target;
  rec.target_xent_true = er.xent_true_target;
  rec.acc_c = er.accuracy_classifier;
  rec.acc_d = er.accuracy_discriminator;
  {
    Tape tape;
    Tensor feats = bundle.g.forward(tape, pair.source().features);
    Tensor y = one_hot(pair.source().labels, bundle.class_count());
    rec.l_c_source = source_loss(tape, bundle, cfg.variant, feats, y).item();
  }
  if (pair.has_target_labels()) {
    CcdReport rep = ccd(generator_features(bundle, pair.source().features),
                        pair.source().labels, generator_features(bundle, pair.target_features()),
                        pair.diagnostic_target_labels(), pair.class_count(), reference, epoch);
    rec.mean_ccd = reference ? rep.mean_normalized() : rep.mean_distance();
  }
  return rec;
}

}  // namespace detail

// Full procedure: source pretraining, then `epochs` passes of adversarial
// steps over freshly shuffled batch pairs, with one metrics row per epoch
// (epoch 0 is the post-pretrain state).
inline TrainResult train(const DomainPair& pair, const BundleSpec& arch,
                         const TrainConfig& cfg) {
  cfg.validate();
  ModelBundle bundle =
      build_bundle(pair.feature_dim(), pair.class_count(), arch, cfg.seed, cfg.variant);

  Optimizer pre_opt = make_optimizer(cfg);
  pretrain(bundle, pair.source(), cfg, pre_opt);

  CcdReport reference;
  const bool have_ccd = pair.has_target_labels();
  if (have_ccd) {
    reference = ccd(generator_features(bundle, pair.source().features), pair.source().labels,
                    generator_features(bundle, pair.target_features()),
                    pair.diagnostic_target_labels(), pair.class_count(), nullptr, 0);
  }

  MetricsLog log;
  log.rows.push_back(
      detail::evaluate_epoch(bundle, pair, cfg, 0, have_ccd ? &reference : nullptr));

  Optimizer opt = cfg.carry_optimizer_state ? std::move(pre_opt) : make_optimizer(cfg);
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto batches = batch_iter(pair, cfg.batch_source, cfg.batch_target, cfg.seed,
                                    static_cast<std::size_t>(e));
    for (const BatchPair& batch : batches) {
      try {
        adversarial_step(bundle, batch, cfg, opt);
      } catch (const TrainDivergence& div) {
        throw TrainDivergence(div.loss_name(), e + 1);
      }
    }
    log.rows.push_back(
        detail::evaluate_epoch(bundle, pair, cfg, e + 1, have_ccd ? &reference : nullptr));
  }

  TrainedModel model{std::move(bundle), cfg, log.final_record()};
  return TrainResult{std::move(model), std::move(log), std::move(reference)};
}

// The head each variant predicts with: g_plus_d has no trained classifier,
// every other variant follows the classifier head.
inline double headline_accuracy(Variant v, const MetricsRecord& rec) {
  return v == Variant::g_plus_d ? rec.acc_d : rec.acc_c;
}

struct SweepResult {
  std::vector<int> k_values;
  std::vector<double> lambda_values;
  std::vector<std::vector<double>> accuracy;  // [k][lambda], NaN marks divergence
  bool any_failed = false;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("SweepResult: cannot open " + path);
    char buf[64];
    out << "k";
    for (double l : lambda_values) {
      std::snprintf(buf, sizeof(buf), "%g", l);
      out << ",lambda=" << buf;
    }
    out << "\n";
    for (std::size_t i = 0; i < k_values.size(); ++i) {
      out << k_values[i];
      for (std::size_t j = 0; j < lambda_values.size(); ++j) {
        if (std::isnan(accuracy[i][j])) {
          out << ",NaN";
        } else {
          std::snprintf(buf, sizeof(buf), "%.6f", accuracy[i][j]);
          out << "," << buf;
        }
      }
      out << "\n";
    }
  }
};

// One full train per (k, lambda) cell, every cell using the base config's
// seed. Divergent cells are marked NaN and the sweep continues. Cells are
// independent, so opting into parallel runs them across hardware threads.
inline SweepResult sweep(const DomainPair& pair, const BundleSpec& arch,
                         const TrainConfig& base, const std::vector<int>& k_values,
                         const std::vector<double>& lambda_values, bool parallel = false) {
  if (k_values.empty() || lambda_values.empty()) {
    throw std::invalid_argument("sweep: empty k or lambda grid");
  }
  SweepResult result;
  result.k_values = k_values;
  result.lambda_values = lambda_values;
  result.accuracy.assign(k_values.size(),
                         std::vector<double>(lambda_values.size(),
                                             std::numeric_limits<double>::quiet_NaN()));
  std::atomic<bool> failed{false};

  auto run_cell = [&](std::size_t ki, std::size_t li) {
    TrainConfig cfg = base;
    cfg.k = k_values[ki];
    cfg.lambda = lambda_values[li];
    try {
      TrainResult r = train(pair, arch, cfg);
      result.accuracy[ki][li] = headline_accuracy(cfg.variant, r.model.final_metrics);
    } catch (const TrainDivergence&) {
      failed = true;
    }
  };

  const std::size_t cells = k_values.size() * lambda_values.size();
  if (!parallel) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c / lambda_values.size(),
                                                     c % lambda_values.size());
  } else {
    std::atomic<std::size_t> next{0};
    const std::size_t workers =
        std::min<std::size_t>(cells, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < cells; c = next.fetch_add(1)) {
          run_cell(c / lambda_values.size(), c % lambda_values.size());
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  result.any_failed = failed.load();
  return result;
}

}  // namespace mmen
