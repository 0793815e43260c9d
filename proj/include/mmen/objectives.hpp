#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mmen/net.hpp"
#include "mmen/tensor.hpp"

namespace mmen {

// Per-step loss snapshot. combined is the generator-side objective
// l_c + lambda * h_target; the discriminator descends l_c - lambda * h_target.
struct LossReport {
  double l_c = 0.0;
  double h_target = 0.0;
  double combined = 0.0;
  double lambda = 0.0;
};

inline Tensor one_hot(const std::vector<int>& labels, std::size_t class_count) {
  Tensor y = Tensor::zeros({labels.size(), class_count});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw std::invalid_argument("one_hot: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(class_count) + ")");
    }
    y.at(i, static_cast<std::size_t>(l)) = 1.0;
  }
  return y;
}

// -(1/n) sum_i y_i . log_softmax(logits_i) for one head
inline Tensor head_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& y_onehot) {
  if (logits.rank() != 2 || y_onehot.rank() != 2 || logits.rows() != y_onehot.rows() ||
      logits.cols() != y_onehot.cols()) {
    throw std::invalid_argument("head_cross_entropy: logits " + logits.shape_str() +
                                " vs labels " + y_onehot.shape_str());
  }
  const double n = static_cast<double>(logits.rows());
  Tensor lsm = tape.log_softmax(logits);
  return tape.scale(tape.sum(tape.mul(y_onehot, lsm)), -1.0 / n);
}

// Source classification loss over both heads:
// -(1/(2 n_s)) sum [ y . log_softmax(c_logits) + y . log_softmax(d_logits) ]
inline Tensor classification_loss(Tape& tape, const Tensor& c_logits, const Tensor& d_logits,
                                  const Tensor& y_onehot) {
  if (c_logits.rows() != d_logits.rows()) {
    throw std::invalid_argument("classification_loss: head batch sizes disagree: " +
                                c_logits.shape_str() + " vs " + d_logits.shape_str());
  }
  Tensor ce_c = head_cross_entropy(tape, c_logits, y_onehot);
  Tensor ce_d = head_cross_entropy(tape, d_logits, y_onehot);
  return tape.scale(tape.add(ce_c, ce_d), 0.5);
}

// Mean Shannon entropy of the discriminator's target predictions:
// H = -(1/n_t) sum_rows sum_k p log p with p = softmax(logits).
//
// By default the gradient flows through both factors (full entropy
// gradient). With detach_pseudo_labels the p factor is treated as a held
// constant, giving the cross-entropy-against-frozen-pseudo-labels variant.
inline Tensor pseudo_label_entropy(Tape& tape, const Tensor& d_target_logits,
                                   bool detach_pseudo_labels = false) {
  const double n = static_cast<double>(d_target_logits.rows());
  Tensor lsm = tape.log_softmax(d_target_logits);
  Tensor p = tape.exp(lsm);
  if (detach_pseudo_labels) p = Tensor::detached_copy(p);
  return tape.scale(tape.sum(tape.mul(p, lsm)), -1.0 / n);
}

// Discriminator descends this: classify source, maximize target entropy.
inline double d_objective(double l_c, double h, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("d_objective: lambda must be >= 0");
  return l_c - lambda * h;
}

// Generator (and classifier) descend this.
inline double g_objective(double l_c, double h, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("g_objective: lambda must be >= 0");
  return l_c + lambda * h;
}

// Binary cross-entropy of domain prediction (source = 0, target = 1),
// averaged over both batches. Callers wanting the dann behaviour pass
// features through Tape::gradient_reverse first so the generator receives
// the negated, lambda-scaled gradient.
inline Tensor dann_domain_loss(Tape& tape, const Tensor& features_s, const Tensor& features_t,
                               const Network& domain_net) {
  if (domain_net.output_dim() != 2) {
    throw std::invalid_argument("dann_domain_loss: domain head must emit 2 logits, has " +
                                std::to_string(domain_net.output_dim()));
  }
  const std::size_t n_s = features_s.rows(), n_t = features_t.rows();
  Tensor lsm_s = tape.log_softmax(domain_net.forward(tape, features_s));
  Tensor lsm_t = tape.log_softmax(domain_net.forward(tape, features_t));
  Tensor pick_s = Tensor::zeros({n_s, 2});
  for (std::size_t i = 0; i < n_s; ++i) pick_s.at(i, 0) = 1.0;
  Tensor pick_t = Tensor::zeros({n_t, 2});
  for (std::size_t i = 0; i < n_t; ++i) pick_t.at(i, 1) = 1.0;
  Tensor total = tape.add(tape.sum(tape.mul(pick_s, lsm_s)), tape.sum(tape.mul(pick_t, lsm_t)));
  return tape.scale(total, -1.0 / static_cast<double>(n_s + n_t));
}

}  // namespace mmen
