#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmen {

// Dense row-major array of doubles, rank 1 or 2. A Tensor is a cheap handle
// onto shared storage: copies alias the same buffer, which lets tape
// closures, networks and optimizer state all refer to live parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values.assign(count(d->shape), 0.0);
    return Tensor(std::move(d));
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    const std::size_t n = count(shape);
    if (values.size() != n) {
      throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                  " values for shape of " + std::to_string(n) + " entries");
    }
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    return Tensor(std::move(d));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  // leaf copy of values only; gradients never flow back to the original
  static Tensor detached_copy(const Tensor& t) {
    return from(t.shape(), t.values());
  }

  bool defined() const { return d_ != nullptr; }
  const void* id() const { return d_.get(); }

  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }

  std::size_t rows() const {
    require_rank2("rows");
    return d_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return d_->shape[1];
  }

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }

  double& at(std::size_t i, std::size_t j) {
    require_rank2("at");
    return d_->values[i * d_->shape[1] + j];
  }
  double at(std::size_t i, std::size_t j) const {
    require_rank2("at");
    return d_->values[i * d_->shape[1] + j];
  }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(size()) +
                                  " entries, expected exactly 1");
    }
    return d_->values[0];
  }

  bool has_grad() const { return !d_->grad.empty(); }

  // lazily allocated, zero-filled on first access
  std::vector<double>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
  }
  const std::vector<double>& grad() const {
    return const_cast<Tensor*>(this)->grad();
  }

  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  }

  bool all_finite() const {
    for (double v : d_->values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < d_->shape.size(); ++i) {
      if (i) os << "x";
      os << d_->shape[i];
    }
    os << ")";
    return os.str();
  }

 private:
  struct Data {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;
  };

  explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}

  static std::size_t count(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 2) {
      throw std::invalid_argument("Tensor: rank must be 1 or 2, got rank " +
                                  std::to_string(shape.size()));
    }
    std::size_t n = 1;
    for (std::size_t s : shape) {
      if (s == 0) throw std::invalid_argument("Tensor: zero-sized dimension");
      n *= s;
    }
    return n;
  }

  void require_rank2(const char* what) const {
    if (d_->shape.size() != 2) {
      throw std::invalid_argument(std::string("Tensor::") + what +
                                  ": requires rank 2, shape is " + shape_str());
    }
  }

  std::shared_ptr<Data> d_;
};

// Per-backward scratch adjoints. Accumulating into scratch buffers and
// flushing once keeps the contract simple: each backward() call adds exactly
// one gradient into every reachable tensor's .grad, no matter how often an
// intermediate is reused on the tape.
class Adjoints {
 public:
  std::vector<double>& of(const Tensor& t) {
    auto it = slots_.find(t.id());
    if (it == slots_.end()) {
      it = slots_.emplace(t.id(), Slot{t, std::vector<double>(t.size(), 0.0)}).first;
    }
    return it->second.adj;
  }

  bool has(const Tensor& t) const { return slots_.count(t.id()) != 0; }

  void flush_into_grads() {
    for (auto& [id, slot] : slots_) {
      auto& g = slot.tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += slot.adj[i];
    }
  }

 private:
  struct Slot {
    Tensor tensor;
    std::vector<double> adj;
  };
  std::unordered_map<const void*, Slot> slots_;
};

// Records the differentiable ops of one forward pass in execution order.
// backward() replays them in reverse, so inputs are always visited after
// every op that consumed them. Single-threaded by contract; independent
// tapes may live on independent threads.
class Tape {
 public:
  std::size_t node_count() const { return nodes_.size(); }

  // out[m x n] = a[m x k] . b[k x n]
  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul lhs");
    require_rank2(b, "matmul rhs");
    if (a.cols() != b.rows()) {
      throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shape_str() +
                                  " . " + b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
      }
    }
    push([a, b, out, m, k, n](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      const auto& av = a.values();
      const auto& bv = b.values();
      // dA += G . B^T ; dB += A^T . G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
      }
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
        }
      }
    });
    return out;
  }

  // out = x.w + b, bias broadcast over rows; bias gradient sums over the batch
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2(x, "affine input");
    require_rank2(w, "affine weight");
    if (b.rank() != 1) {
      throw std::invalid_argument("affine: bias must be rank 1, shape is " + b.shape_str());
    }
    if (x.cols() != w.rows() || w.cols() != b.shape()[0]) {
      throw std::invalid_argument("affine: shapes disagree: x" + x.shape_str() + " w" +
                                  w.shape_str() + " b" + b.shape_str());
    }
    const std::size_t m = x.rows(), d = x.cols(), h = w.cols();
    Tensor out = Tensor::zeros({m, h});
    const auto& xv = x.values();
    const auto& wv = w.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < h; ++j) ov[i * h + j] = bv[j];
      for (std::size_t p = 0; p < d; ++p) {
        const double xip = xv[i * d + p];
        for (std::size_t j = 0; j < h; ++j) ov[i * h + j] += xip * wv[p * h + j];
      }
    }
    push([x, w, b, out, m, d, h](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      auto& gw = adj.of(w);
      auto& gb = adj.of(b);
      const auto& xv = x.values();
      const auto& wv = w.values();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < d; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < h; ++j) s += go[i * h + j] * wv[p * h + j];
          gx[i * d + p] += s;
        }
      }
      for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
          const double xip = xv[i * d + p];
          for (std::size_t j = 0; j < h; ++j) gw[p * h + j] += xip * go[i * h + j];
        }
      }
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < h; ++j) gb[j] += go[i * h + j];
      }
    });
    return out;
  }

  // elementwise max(0, x); subgradient 0 at the kink
  Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    push([x, out](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      const auto& xv = x.values();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += go[i];
      }
    });
    return out;
  }

  // rowwise x - logsumexp(x) with max subtraction, stable for any finite input
  Tensor log_softmax(const Tensor& x) {
    require_rank2(x, "log_softmax input");
    if (x.cols() < 2) {
      throw std::invalid_argument("log_softmax: needs at least 2 classes, shape is " +
                                  x.shape_str());
    }
    const std::size_t m = x.rows(), k = x.cols();
    Tensor out = Tensor::zeros({m, k});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
      double mx = xv[i * k];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv[i * k + j]);
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(xv[i * k + j] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = xv[i * k + j] - lse;
    }
    push([x, out, m, k](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      const auto& ov = out.values();
      // dx_ij = g_ij - softmax_ij * sum_l g_il
      for (std::size_t i = 0; i < m; ++i) {
        double rowsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) rowsum += go[i * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          gx[i * k + j] += go[i * k + j] - std::exp(ov[i * k + j]) * rowsum;
        }
      }
    });
    return out;
  }

  Tensor exp(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::exp(xv[i]);
    push([x, out](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      const auto& ov = out.values();
      for (std::size_t i = 0; i < ov.size(); ++i) gx[i] += go[i] * ov[i];
    });
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    push([a, b, out](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      const auto& av = a.values();
      const auto& bv = b.values();
      for (std::size_t i = 0; i < av.size(); ++i) {
        ga[i] += go[i] * bv[i];
        gb[i] += go[i] * av[i];
      }
    });
    return out;
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    push([a, b, out](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& ga = adj.of(a);
      auto& gb = adj.of(b);
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
    return out;
  }

  // full reduction to a scalar
  Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    push([x, out](Adjoints& adj) {
      const double go = adj.of(out)[0];
      auto& gx = adj.of(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
    });
    return out;
  }

  Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = c * xv[i];
    push([x, out, c](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * go[i];
    });
    return out;
  }

  // identity forward; backward multiplies the upstream gradient by -coeff
  Tensor gradient_reverse(const Tensor& x, double coeff) {
    Tensor out = Tensor::from(x.shape(), x.values());
    push([x, out, coeff](Adjoints& adj) {
      const auto& go = adj.of(out);
      auto& gx = adj.of(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= coeff * go[i];
    });
    return out;
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Adds exactly
  // one gradient into every reachable tensor per call; calling again without
  // zero_grad accumulates.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, shape is " +
                                  loss.shape_str());
    }
    Adjoints adj;
    adj.of(loss)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(adj);
    adj.flush_into_grads();
  }

 private:
  void push(std::function<void(Adjoints&)> fn) { nodes_.push_back(std::move(fn)); }

  static void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
      throw std::invalid_argument(std::string(what) + ": requires rank 2, shape is " +
                                  t.shape_str());
    }
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch: " + a.shape_str() +
                                  " vs " + b.shape_str());
    }
  }

  std::vector<std::function<void(Adjoints&)>> nodes_;
};

inline void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

}  // namespace mmen
