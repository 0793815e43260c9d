#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmen/rng.hpp"
#include "mmen/tensor.hpp"

namespace mmen {

enum class Role { generator, discriminator, classifier, domain_classifier };

enum class Activation { relu };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::generator: return "generator";
    case Role::discriminator: return "discriminator";
    case Role::classifier: return "classifier";
    case Role::domain_classifier: return "domain_classifier";
  }
  return "?";
}

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;
};

// MLP stack. Hidden layers are always activated; the final layer of the
// generator is activated as well (features are post-activation), while
// discriminator/classifier heads emit raw logits for the losses to
// log-softmax.
class Network {
 public:
  Network() = default;

  static Network build(const NetworkSpec& spec, Role role) {
    if (spec.input_dim == 0 || spec.output_dim == 0) {
      throw std::invalid_argument("Network::build: zero input/output dimension");
    }
    for (std::size_t h : spec.hidden_dims) {
      if (h == 0) throw std::invalid_argument("Network::build: zero hidden dimension");
    }
    std::vector<std::size_t> dims;
    dims.push_back(spec.input_dim);
    dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
    dims.push_back(spec.output_dim);

    Network net;
    net.spec_ = spec;
    net.role_ = role;
    Rng rng(spec.seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
      // He-uniform: bound sqrt(6 / fan_in), biases zero
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Tensor w = Tensor::zeros({fan_in, fan_out});
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
      Tensor b = Tensor::zeros({fan_out});
      const bool last = (l + 2 == dims.size());
      const bool activated = !last || role == Role::generator;
      net.layers_.push_back(Layer{w, b, activated});
    }
    return net;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != spec_.input_dim) {
      throw std::invalid_argument(std::string("forward(") + role_name(role_) +
                                  "): input is " + x.shape_str() + ", expected (m x " +
                                  std::to_string(spec_.input_dim) + ")");
    }
    Tensor h = x;
    for (const Layer& layer : layers_) {
      h = tape.affine(h, layer.w, layer.b);
      if (layer.activated) h = tape.relu(h);
    }
    return h;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    out.reserve(layers_.size() * 2);
    for (const Layer& layer : layers_) {
      out.push_back(layer.w);
      out.push_back(layer.b);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers_) n += layer.w.size() + layer.b.size();
    return n;
  }

  bool all_finite() const {
    for (const Layer& layer : layers_) {
      if (!layer.w.all_finite() || !layer.b.all_finite()) return false;
    }
    return true;
  }

  const NetworkSpec& spec() const { return spec_; }
  Role role() const { return role_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const { return spec_.output_dim; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  struct Layer {
    Tensor w, b;
    bool activated;
  };
  std::vector<Layer> layers_;
  Role role_ = Role::generator;
  NetworkSpec spec_;
};

// Generator + category discriminator + auxiliary classifier. The optional
// domain head exists only for the dann baseline variant.
struct ModelBundle {
  Network g, d, c;
  std::optional<Network> domain;

  ModelBundle() = default;
  ModelBundle(Network g_, Network d_, Network c_, std::optional<Network> dom = std::nullopt)
      : g(std::move(g_)), d(std::move(d_)), c(std::move(c_)), domain(std::move(dom)) {
    validate();
  }

  void validate() const {
    if (g.output_dim() != d.input_dim() || g.output_dim() != c.input_dim()) {
      throw std::invalid_argument(
          "ModelBundle: generator output " + std::to_string(g.output_dim()) +
          " does not feed heads with inputs " + std::to_string(d.input_dim()) + "/" +
          std::to_string(c.input_dim()));
    }
    if (d.output_dim() != c.output_dim()) {
      throw std::invalid_argument("ModelBundle: head class counts disagree: " +
                                  std::to_string(d.output_dim()) + " vs " +
                                  std::to_string(c.output_dim()));
    }
    if (d.output_dim() < 2) {
      throw std::invalid_argument("ModelBundle: class count must be at least 2");
    }
    if (domain) {
      if (domain->input_dim() != g.output_dim() || domain->output_dim() != 2) {
        throw std::invalid_argument("ModelBundle: domain head must map features to 2 logits");
      }
    }
  }

  std::size_t class_count() const { return d.output_dim(); }
  std::size_t feature_dim() const { return g.output_dim(); }
};

enum class Head { classifier, discriminator };

// argmax per row over the chosen head; ties break toward the lowest index
inline std::vector<int> predict_labels(const ModelBundle& bundle, const Tensor& x, Head head) {
  Tape tape;
  Tensor feats = bundle.g.forward(tape, x);
  const Network& net = head == Head::classifier ? bundle.c : bundle.d;
  Tensor logits = net.forward(tape, feats);
  const std::size_t m = logits.rows(), k = logits.cols();
  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace mmen
