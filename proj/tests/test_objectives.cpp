#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mmen/gradcheck.hpp"
#include "mmen/net.hpp"
#include "mmen/objectives.hpp"
#include "mmen/optim.hpp"
#include "mmen/rng.hpp"
#include "support.hpp"

using namespace mmen;

namespace {

Tensor random_logits(std::size_t n, std::size_t k, Rng& rng, double lo = -3.0,
                     double hi = 3.0) {
  Tensor t = Tensor::zeros({n, k});
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// independent scalar re-derivation of the two-head source loss
double hand_classification_loss(const Tensor& c_logits, const Tensor& d_logits,
                                const std::vector<int>& labels) {
  auto head = [&](const Tensor& logits) {
    double total = 0.0;
    const std::size_t n = logits.rows(), k = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double mx = logits.at(i, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(logits.at(i, j) - mx);
      total += logits.at(i, static_cast<std::size_t>(labels[i])) - mx - std::log(s);
    }
    return total;
  };
  const double n = static_cast<double>(c_logits.rows());
  return -(head(c_logits) + head(d_logits)) / (2.0 * n);
}

// independent scalar Shannon entropy of softmax rows
double hand_entropy(const Tensor& logits) {
  const std::size_t n = logits.rows(), k = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits.at(i, j) - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits.at(i, j) - mx) / s;
      total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("classification loss vanishes for confident correct heads", "[objectives]") {
  Tensor logits = Tensor::from({2, 3}, {60, 0, 0, 0, 60, 0});
  Tensor y = one_hot({0, 1}, 3);
  Tape tape;
  CHECK(classification_loss(tape, logits, logits, y).item() < 1e-12);
}

TEST_CASE("classification loss of uniform two-class heads is ln 2", "[objectives]") {
  Tensor logits = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor y = one_hot({0}, 2);
  Tape tape;
  CHECK(classification_loss(tape, logits, logits, y).item() ==
        Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification loss matches the hand oracle", "[objectives]") {
  Tensor c_logits = Tensor::from({2, 3}, {0.3, -1.2, 2.0, 1.5, 0.4, -0.7});
  Tensor d_logits = Tensor::from({2, 3}, {-0.2, 0.9, 0.1, 2.2, -1.0, 0.5});
  const std::vector<int> labels = {2, 0};
  Tape tape;
  const double got = classification_loss(tape, c_logits, d_logits, one_hot(labels, 3)).item();
  CHECK(got == Catch::Approx(hand_classification_loss(c_logits, d_logits, labels))
                   .epsilon(1e-12));
}

TEST_CASE("classification loss rejects mismatched batches", "[objectives]") {
  Tape tape;
  CHECK_THROWS_AS(classification_loss(tape, Tensor::zeros({2, 3}), Tensor::zeros({3, 3}),
                                      Tensor::zeros({2, 3})),
                  std::invalid_argument);
}

TEST_CASE("pseudo-label entropy hits ln K on uniform rows", "[objectives]") {
  Tensor logits = Tensor::zeros({4, 12});
  Tape tape;
  CHECK(pseudo_label_entropy(tape, logits).item() ==
        Catch::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("pseudo-label entropy collapses on near-one-hot rows", "[objectives]") {
  Tensor logits = Tensor::zeros({3, 4});
  for (std::size_t i = 0; i < 3; ++i) logits.at(i, i) = 50.0;
  Tape tape;
  CHECK(pseudo_label_entropy(tape, logits).item() < 1e-6);
}

TEST_CASE("pseudo-label entropy matches the hand oracle", "[objectives]") {
  Rng rng(9);
  Tensor logits = random_logits(3, 5, rng);
  Tape tape;
  CHECK(pseudo_label_entropy(tape, logits).item() ==
        Catch::Approx(hand_entropy(logits)).epsilon(1e-12));
}

TEST_CASE("pseudo-label entropy stays inside [0, ln K]", "[objectives]") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(11);
    Tensor logits = random_logits(1 + rng.below(8), k, rng, -30.0, 30.0);
    Tape tape;
    const double h = pseudo_label_entropy(tape, logits).item();
    REQUIRE(h >= 0.0);
    REQUIRE(h <= std::log(static_cast<double>(k)) + 1e-12);
  }
}

TEST_CASE("entropy gradient matches the softmax closed form and differences", "[objectives]") {
  Rng rng(17);
  Tensor logits = random_logits(4, 6, rng);
  {
    Tape tape;
    Tensor h = pseudo_label_entropy(tape, logits);
    tape.backward(h);
  }
  // dH/dz_ij = -(1/n) p_ij (log p_ij + H_i)
  const std::size_t n = logits.rows(), k = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits.at(i, j) - mx);
    double row_h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits.at(i, j) - mx) / s;
      row_h -= p * std::log(p);
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits.at(i, j) - mx) / s;
      const double expected = -p * (std::log(p) + row_h) / static_cast<double>(n);
      CHECK(logits.grad()[i * k + j] == Catch::Approx(expected).margin(1e-12));
    }
  }

  const double fd = grad_check(
      [&](Tape& t) { return pseudo_label_entropy(t, logits); }, {logits}, 1e-5);
  CHECK(fd < 1e-4);
}

TEST_CASE("detaching the pseudo-labels zeroes the entropy gradient", "[objectives]") {
  Rng rng(19);
  Tensor logits = random_logits(3, 4, rng);
  Tape tape;
  Tensor h = pseudo_label_entropy(tape, logits, /*detach_pseudo_labels=*/true);
  tape.backward(h);
  // cross-entropy against labels frozen at the current prediction is at a
  // stationary point: gradient (p - p_detached)/n is identically zero
  for (double g : logits.grad()) CHECK(std::fabs(g) < 1e-15);
}

TEST_CASE("objective combinations are the signed sums", "[objectives]") {
  CHECK(d_objective(0.5, 1.0, 0.1) == Catch::Approx(0.4).epsilon(1e-15));
  CHECK(g_objective(0.5, 1.0, 0.1) == Catch::Approx(0.6).epsilon(1e-15));
  CHECK(d_objective(0.7, 2.0, 0.0) == 0.7);
  CHECK(g_objective(0.7, 2.0, 0.0) == 0.7);
  CHECK_THROWS_AS(d_objective(0.5, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("entropy term is zero-sum between the two objectives", "[objectives]") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const double l_c = rng.uniform(0.0, 4.0);
    const double h = rng.uniform(0.0, 3.0);
    const double lambda = rng.uniform(0.0, 2.0);
    CHECK(d_objective(l_c, h, lambda) + g_objective(l_c, h, lambda) ==
          Catch::Approx(2.0 * l_c).epsilon(1e-12));
  }
}

TEST_CASE("one discriminator step ascends the entropy, one generator step descends it",
          "[objectives]") {
  int d_up = 0, g_down = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto g = Network::build(NetworkSpec{2, {8}, 4, Activation::relu, mix_seed(seed, 1)},
                            Role::generator);
    auto d = Network::build(NetworkSpec{4, {8}, 3, Activation::relu, mix_seed(seed, 2)},
                            Role::discriminator);
    Rng rng(mix_seed(seed, 3));
    Tensor x = Tensor::zeros({16, 2});
    for (double& v : x.values()) v = rng.uniform(-2, 2);

    auto entropy_now = [&]() {
      Tape t;
      return pseudo_label_entropy(t, d.forward(t, g.forward(t, x))).item();
    };
    const double before = entropy_now();

    {  // discriminator ascends h by descending -lambda h
      Tape t;
      Tensor h = pseudo_label_entropy(t, d.forward(t, g.forward(t, x)));
      Tensor obj = t.scale(h, -0.1);
      zero_grads(d.parameters());
      zero_grads(g.parameters());
      t.backward(obj);
      Optimizer::sgd(1e-3).step(d.parameters());
    }
    if (entropy_now() >= before) ++d_up;

    {  // generator descends +lambda h against the updated discriminator
      const double mid = entropy_now();
      Tape t;
      Tensor h = pseudo_label_entropy(t, d.forward(t, g.forward(t, x)));
      Tensor obj = t.scale(h, 0.1);
      zero_grads(d.parameters());
      zero_grads(g.parameters());
      t.backward(obj);
      Optimizer::sgd(1e-3).step(g.parameters());
      if (entropy_now() <= mid) ++g_down;
    }
  }
  CHECK(d_up >= 4);
  CHECK(g_down >= 4);
}

TEST_CASE("domain loss endpoints", "[objectives]") {
  auto dom = Network::build(NetworkSpec{2, {}, 2, Activation::relu, 5},
                            Role::domain_classifier);
  auto p = dom.parameters();
  p[0].values() = {1, 0, 0, 1};  // identity: logits echo features

  Tape tape;
  // confident correct domains: source lights logit 0, target lights logit 1
  Tensor fs = Tensor::from({2, 2}, {60, 0, 60, 0});
  Tensor ft = Tensor::from({2, 2}, {0, 60, 0, 60});
  CHECK(dann_domain_loss(tape, fs, ft, dom).item() < 1e-12);

  Tensor us = Tensor::zeros({2, 2});
  Tensor ut = Tensor::zeros({3, 2});
  CHECK(dann_domain_loss(tape, us, ut, dom).item() ==
        Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("gradient reversal hands the generator the negated scaled gradient",
          "[objectives]") {
  auto g = Network::build(NetworkSpec{2, {6}, 4, Activation::relu, 31}, Role::generator);
  auto dom = Network::build(NetworkSpec{4, {6}, 2, Activation::relu, 32},
                            Role::domain_classifier);
  Rng rng(33);
  Tensor xs = Tensor::zeros({5, 2});
  Tensor xt = Tensor::zeros({5, 2});
  for (double& v : xs.values()) v = rng.uniform(-1, 1);
  for (double& v : xt.values()) v = rng.uniform(-1, 1);
  const double lambda = 0.37;

  auto g_params = g.parameters();
  std::vector<std::vector<double>> plain;
  {
    Tape t;
    Tensor loss = dann_domain_loss(t, g.forward(t, xs), g.forward(t, xt), dom);
    zero_grads(g_params);
    t.backward(loss);
    for (const Tensor& p : g_params) plain.push_back(p.grad());
  }
  {
    Tape t;
    Tensor rs = t.gradient_reverse(g.forward(t, xs), lambda);
    Tensor rt = t.gradient_reverse(g.forward(t, xt), lambda);
    Tensor loss = dann_domain_loss(t, rs, rt, dom);
    zero_grads(g_params);
    t.backward(loss);
    for (std::size_t pi = 0; pi < g_params.size(); ++pi) {
      const auto& got = g_params[pi].grad();
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == Catch::Approx(-lambda * plain[pi][i]).margin(1e-15));
      }
    }
  }
}

TEST_CASE("every loss passes a full gradient check through a small bundle", "[objectives]") {
  auto fx = mmen_test::make_kink_free_fixture(71);
  Tensor y = one_hot(fx.labels, fx.d.output_dim());

  std::vector<Tensor> params;
  for (const Network* n : {&fx.g, &fx.d, &fx.c, &fx.domain}) {
    auto p = n->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }

  const double err_cls = grad_check(
      [&](Tape& t) {
        Tensor f = fx.g.forward(t, fx.xs);
        return classification_loss(t, fx.c.forward(t, f), fx.d.forward(t, f), y);
      },
      params, 1e-5);
  CHECK(err_cls < 1e-4);

  const double err_h = grad_check(
      [&](Tape& t) { return pseudo_label_entropy(t, fx.d.forward(t, fx.g.forward(t, fx.xt))); },
      params, 1e-5);
  CHECK(err_h < 1e-4);

  const double err_dom = grad_check(
      [&](Tape& t) {
        return dann_domain_loss(t, fx.g.forward(t, fx.xs), fx.g.forward(t, fx.xt), fx.domain);
      },
      params, 1e-5);
  CHECK(err_dom < 1e-4);
}
