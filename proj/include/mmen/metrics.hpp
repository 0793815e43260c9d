#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmen/data.hpp"
#include "mmen/net.hpp"
#include "mmen/objectives.hpp"
#include "mmen/tensor.hpp"

namespace mmen {

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
  if (predictions.size() != truth.size() || predictions.empty()) {
    throw std::invalid_argument("accuracy: got " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(truth.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Per-class Euclidean distance between source and target feature means.
// normalized entries divide by a reference report (the post-pretrain model);
// classes empty in either domain are marked absent and excluded from means.
struct CcdReport {
  std::vector<double> per_class_distance;
  std::vector<double> normalizer;  // reference distances, 0 when no reference
  std::vector<double> normalized;  // distance / normalizer where defined
  std::vector<bool> absent;
  std::size_t epoch = 0;

  double mean_distance() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < per_class_distance.size(); ++k) {
      if (absent[k]) continue;
      s += per_class_distance[k];
      ++n;
    }
    if (n == 0) throw std::runtime_error("CcdReport: all classes absent");
    return s / static_cast<double>(n);
  }

  double mean_normalized() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < normalized.size(); ++k) {
      if (absent[k] || normalizer[k] <= 0.0) continue;
      s += normalized[k];
      ++n;
    }
    if (n == 0) throw std::runtime_error("CcdReport: no class has a usable normalizer");
    return s / static_cast<double>(n);
  }
};

inline CcdReport ccd(const Tensor& features_s, const std::vector<int>& labels_s,
                     const Tensor& features_t, const std::vector<int>& labels_t_true,
                     std::size_t class_count, const CcdReport* reference = nullptr,
                     std::size_t epoch = 0) {
  if (features_s.cols() != features_t.cols()) {
    throw std::invalid_argument("ccd: feature dims disagree: " + features_s.shape_str() +
                                " vs " + features_t.shape_str());
  }
  const std::size_t d = features_s.cols();
  auto class_means = [&](const Tensor& f, const std::vector<int>& y) {
    std::vector<std::vector<double>> mean(class_count, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(class_count, 0);
    for (std::size_t i = 0; i < f.rows(); ++i) {
      const int k = y[i];
      if (k < 0 || static_cast<std::size_t>(k) >= class_count) continue;
      ++count[k];
      for (std::size_t j = 0; j < d; ++j) mean[k][j] += f.at(i, j);
    }
    for (std::size_t k = 0; k < class_count; ++k) {
      if (count[k] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) mean[k][j] /= static_cast<double>(count[k]);
    }
    return std::pair(mean, count);
  };
  auto [mean_s, count_s] = class_means(features_s, labels_s);
  auto [mean_t, count_t] = class_means(features_t, labels_t_true);

  CcdReport rep;
  rep.epoch = epoch;
  rep.per_class_distance.resize(class_count, 0.0);
  rep.normalizer.resize(class_count, 0.0);
  rep.normalized.resize(class_count, 0.0);
  rep.absent.resize(class_count, false);
  bool any_present = false;
  for (std::size_t k = 0; k < class_count; ++k) {
    if (count_s[k] == 0 || count_t[k] == 0) {
      rep.absent[k] = true;
      continue;
    }
    any_present = true;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = mean_s[k][j] - mean_t[k][j];
      sq += diff * diff;
    }
    rep.per_class_distance[k] = std::sqrt(sq);
    if (reference && !reference->absent[k]) {
      rep.normalizer[k] = reference->per_class_distance[k];
      if (rep.normalizer[k] > 0.0) {
        rep.normalized[k] = rep.per_class_distance[k] / rep.normalizer[k];
      }
    }
  }
  if (!any_present) throw std::invalid_argument("ccd: every class is absent in some domain");
  return rep;
}

struct EvalRecord {
  double accuracy_classifier = 0.0;
  double accuracy_discriminator = 0.0;
  double h_target = 0.0;
  double xent_true_target = 0.0;
};

// Full-target-set entropy of the discriminator head plus the cross-entropy
// of its predictions against the held-out true labels. Evaluation only; the
// true labels never enter a gradient path.
inline std::pair<double, double> entropy_eval(const ModelBundle& bundle,
                                              const Tensor& target_features_input,
                                              const std::vector<int>& true_labels) {
  Tape tape;
  Tensor feats = bundle.g.forward(tape, target_features_input);
  Tensor logits = bundle.d.forward(tape, feats);
  const double h = pseudo_label_entropy(tape, logits).item();
  double xent = 0.0;
  if (!true_labels.empty()) {
    Tensor y = one_hot(true_labels, bundle.class_count());
    xent = head_cross_entropy(tape, logits, y).item();
  }
  return {h, xent};
}

inline EvalRecord evaluate(const ModelBundle& bundle, const DomainPair& pair) {
  EvalRecord rec;
  const auto& truth = pair.diagnostic_target_labels();
  if (!truth.empty()) {
    rec.accuracy_classifier =
        accuracy(predict_labels(bundle, pair.target_features(), Head::classifier), truth);
    rec.accuracy_discriminator =
        accuracy(predict_labels(bundle, pair.target_features(), Head::discriminator), truth);
  }
  auto [h, xent] = entropy_eval(bundle, pair.target_features(), truth);
  rec.h_target = h;
  rec.xent_true_target = xent;
  return rec;
}

inline Tensor generator_features(const ModelBundle& bundle, const Tensor& x) {
  Tape tape;
  return bundle.g.forward(tape, x);
}

// CSV rows `domain,label,f0,...,fm-1`, source block then target block.
inline void dump_features(const ModelBundle& bundle, const DomainPair& pair,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_features: cannot open " + path);
  const std::size_t m = bundle.feature_dim();
  out << "domain,label";
  for (std::size_t j = 0; j < m; ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  auto write_block = [&](const Tensor& feats, const std::vector<int>& labels,
                         const char* domain) {
    for (std::size_t i = 0; i < feats.rows(); ++i) {
      out << domain << "," << (labels.empty() ? -1 : labels[i]);
      for (std::size_t j = 0; j < m; ++j) {
        std::snprintf(buf, sizeof(buf), "%.9g", feats.at(i, j));
        out << "," << buf;
      }
      out << "\n";
    }
  };
  write_block(generator_features(bundle, pair.source().features), pair.source().labels,
              "source");
  write_block(generator_features(bundle, pair.target_features()),
              pair.diagnostic_target_labels(), "target");
}

inline void write_ccd_csv(const CcdReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ccd_csv: cannot open " + path);
  out << "class,distance,normalized,absent\n";
  char buf[64];
  for (std::size_t k = 0; k < rep.per_class_distance.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", rep.per_class_distance[k], rep.normalized[k]);
    out << k << "," << buf << "," << (rep.absent[k] ? 1 : 0) << "\n";
  }
}

}  // namespace mmen
