#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mmen/net.hpp"
#include "mmen/rng.hpp"
#include "mmen/tensor.hpp"

namespace mmen_test {

// Smallest |pre-activation| feeding any relu in the network. Finite
// differences step h = 1e-5, so fixtures are only usable when every kink is
// comfortably further away than the perturbation can reach.
inline double min_kink_distance(const mmen::Network& net, const mmen::Tensor& x) {
  const auto params = net.parameters();
  const auto& spec = net.spec();
  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);

  double closest = std::numeric_limits<double>::infinity();
  std::vector<double> h = x.values();
  const std::size_t m = x.rows();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t din = dims[l], dout = dims[l + 1];
    const auto& w = params[2 * l].values();
    const auto& b = params[2 * l + 1].values();
    std::vector<double> pre(m * dout, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < dout; ++j) pre[i * dout + j] = b[j];
      for (std::size_t p = 0; p < din; ++p) {
        const double hv = h[i * din + p];
        for (std::size_t j = 0; j < dout; ++j) pre[i * dout + j] += hv * w[p * dout + j];
      }
    }
    const bool last = (l + 2 == dims.size());
    const bool activated = !last || net.role() == mmen::Role::generator;
    if (activated) {
      for (double v : pre) closest = std::min(closest, std::fabs(v));
      for (double& v : pre) v = v > 0.0 ? v : 0.0;
    }
    h = std::move(pre);
  }
  return closest;
}

inline mmen::Tensor random_batch(std::size_t rows, std::size_t cols, mmen::Rng& rng,
                                 double lo = -2.0, double hi = 2.0) {
  mmen::Tensor t = mmen::Tensor::zeros({rows, cols});
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Small random G/D/C/domain stack plus batches whose relu pre-activations
// all sit at least `margin` from zero. Seeds advance deterministically until
// such a fixture appears.
struct GradCheckFixture {
  mmen::Network g, d, c, domain;
  mmen::Tensor xs, xt;
  std::vector<int> labels;
  std::uint64_t used_seed = 0;
};

inline GradCheckFixture make_kink_free_fixture(std::uint64_t seed, double margin = 1e-3) {
  using namespace mmen;
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t s = mix_seed(seed, 7000 + attempt);
    Rng rng(s);
    const std::size_t in_dim = 2 + rng.below(4);
    const std::size_t feat = 3 + rng.below(4);
    const std::size_t classes = 2 + rng.below(3);
    const std::size_t width = 3 + rng.below(6);
    const bool two_hidden = rng.below(2) == 1;
    std::vector<std::size_t> hidden = {width};
    if (two_hidden) hidden.push_back(3 + rng.below(6));

    GradCheckFixture f;
    f.used_seed = s;
    f.g = Network::build(NetworkSpec{in_dim, hidden, feat, Activation::relu, mix_seed(s, 1)},
                         Role::generator);
    f.d = Network::build(NetworkSpec{feat, {width}, classes, Activation::relu, mix_seed(s, 2)},
                         Role::discriminator);
    f.c = Network::build(NetworkSpec{feat, {width}, classes, Activation::relu, mix_seed(s, 3)},
                         Role::classifier);
    f.domain = Network::build(NetworkSpec{feat, {width}, 2, Activation::relu, mix_seed(s, 4)},
                              Role::domain_classifier);
    Rng data_rng(mix_seed(s, 5));
    f.xs = random_batch(3 + data_rng.below(3), in_dim, data_rng);
    f.xt = random_batch(3 + data_rng.below(3), in_dim, data_rng);
    f.labels.resize(f.xs.rows());
    for (int& l : f.labels) l = static_cast<int>(data_rng.below(classes));

    Tape tape;
    Tensor feats_s = f.g.forward(tape, f.xs);
    Tensor feats_t = f.g.forward(tape, f.xt);
    double closest = std::min(min_kink_distance(f.g, f.xs), min_kink_distance(f.g, f.xt));
    for (const Network* head : {&f.d, &f.c, &f.domain}) {
      closest = std::min(closest, min_kink_distance(*head, feats_s));
      closest = std::min(closest, min_kink_distance(*head, feats_t));
    }
    if (closest > margin) return f;
  }
}

}  // namespace mmen_test
