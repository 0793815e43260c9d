#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mmen/tensor.hpp"

namespace mmen {

// Central-finite-difference check of reverse-mode gradients.
//
// loss_fn builds a scalar loss on the tape it is given, reading the current
// parameter values; it is re-evaluated twice per parameter entry. Returns
// the max over all entries of |analytic - numeric| / max(1, |analytic|,
// |numeric|). The oracle only runs forward passes for the numeric side, so
// it stays independent of the backward implementation it is checking.
template <typename LossFn>
double grad_check(LossFn&& loss_fn, const std::vector<Tensor>& params, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw std::invalid_argument("grad_check: step h must lie in [1e-7, 1e-3]");
  }

  zero_grads(params);
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());
  }

  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).item();
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double lp = eval();
      v[i] = orig - h;
      const double lm = eval();
      v[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max(1.0, std::max(std::fabs(a), std::fabs(numeric)));
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mmen
