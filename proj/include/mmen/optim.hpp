#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "mmen/tensor.hpp"

namespace mmen {

enum class OptimizerKind { sgd, adam };

// SGD or bias-corrected Adam over whatever parameter subset each step is
// given. Adam moments are keyed by parameter identity with an independent
// step counter per parameter, so alternating updates between parameter
// groups keep their own schedules.
class Optimizer {
 public:
  static Optimizer sgd(double lr) {
    Optimizer o;
    o.kind_ = OptimizerKind::sgd;
    o.lr_ = lr;
    return o;
  }

  static Optimizer adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8) {
    Optimizer o;
    o.kind_ = OptimizerKind::adam;
    o.lr_ = lr;
    o.beta1_ = beta1;
    o.beta2_ = beta2;
    o.eps_ = eps;
    return o;
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }

  void step(const std::vector<Tensor>& params) {
    for (const Tensor& handle : params) {
      Tensor p = handle;
      auto& v = p.values();
      const auto& g = p.grad();
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
        continue;
      }
      Slot& slot = slots_[p.id()];
      if (slot.m.empty()) {
        slot.m.assign(v.size(), 0.0);
        slot.v.assign(v.size(), 0.0);
      }
      slot.t += 1;
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
      for (std::size_t i = 0; i < v.size(); ++i) {
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  struct Slot {
    std::uint64_t t = 0;
    std::vector<double> m, v;
  };

  OptimizerKind kind_ = OptimizerKind::sgd;
  double lr_ = 1e-3;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::unordered_map<const void*, Slot> slots_;
};

}  // namespace mmen
