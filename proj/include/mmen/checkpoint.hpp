#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmen/net.hpp"
#include "mmen/trainer.hpp"

namespace mmen {
namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in, const std::string& path) {
  const auto n = read_pod<std::uint64_t>(in, path);
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(n * sizeof(double)))) {
    throw std::runtime_error("checkpoint: truncated parameter block in " + path);
  }
  return v;
}

inline void write_network(std::ostream& out, const Network& net) {
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(net.role()));
  const NetworkSpec& s = net.spec();
  write_pod<std::uint64_t>(out, s.input_dim);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.hidden_dims.size()));
  for (std::size_t h : s.hidden_dims) write_pod<std::uint64_t>(out, h);
  write_pod<std::uint64_t>(out, s.output_dim);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(s.activation));
  write_pod<std::uint64_t>(out, s.seed);
  for (const Tensor& p : net.parameters()) write_doubles(out, p.values());
}

inline Network read_network(std::istream& in, const std::string& path) {
  const Role role = static_cast<Role>(read_pod<std::uint8_t>(in, path));
  NetworkSpec spec;
  spec.input_dim = read_pod<std::uint64_t>(in, path);
  const auto nh = read_pod<std::uint32_t>(in, path);
  spec.hidden_dims.resize(nh);
  for (auto& h : spec.hidden_dims) h = read_pod<std::uint64_t>(in, path);
  spec.output_dim = read_pod<std::uint64_t>(in, path);
  spec.activation = static_cast<Activation>(read_pod<std::uint8_t>(in, path));
  spec.seed = read_pod<std::uint64_t>(in, path);
  Network net = Network::build(spec, role);
  for (Tensor p : net.parameters()) {
    std::vector<double> v = read_doubles(in, path);
    if (v.size() != p.size()) {
      throw std::runtime_error("checkpoint: parameter size mismatch in " + path);
    }
    p.values() = std::move(v);
  }
  return net;
}

inline void write_config(std::ostream& out, const TrainConfig& c) {
  write_pod(out, c.lambda);
  write_pod<std::int32_t>(out, c.k);
  write_pod<std::int32_t>(out, c.epochs);
  write_pod<std::int32_t>(out, c.pretrain_epochs);
  write_pod<std::uint64_t>(out, c.batch_source);
  write_pod<std::uint64_t>(out, c.batch_target);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(c.optimizer));
  write_pod(out, c.learning_rate);
  write_pod(out, c.adam_beta1);
  write_pod(out, c.adam_beta2);
  write_pod(out, c.adam_eps);
  write_pod<std::uint64_t>(out, c.seed);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(c.variant));
  write_pod<std::uint8_t>(out, c.detach_pseudo_labels ? 1 : 0);
  write_pod<std::uint8_t>(out, c.d_step_first ? 1 : 0);
  write_pod<std::uint8_t>(out, c.carry_optimizer_state ? 1 : 0);
}

inline TrainConfig read_config(std::istream& in, const std::string& path) {
  TrainConfig c;
  c.lambda = read_pod<double>(in, path);
  c.k = read_pod<std::int32_t>(in, path);
  c.epochs = read_pod<std::int32_t>(in, path);
  c.pretrain_epochs = read_pod<std::int32_t>(in, path);
  c.batch_source = read_pod<std::uint64_t>(in, path);
  c.batch_target = read_pod<std::uint64_t>(in, path);
  c.optimizer = static_cast<OptimizerKind>(read_pod<std::uint8_t>(in, path));
  c.learning_rate = read_pod<double>(in, path);
  c.adam_beta1 = read_pod<double>(in, path);
  c.adam_beta2 = read_pod<double>(in, path);
  c.adam_eps = read_pod<double>(in, path);
  c.seed = read_pod<std::uint64_t>(in, path);
  c.variant = static_cast<Variant>(read_pod<std::uint8_t>(in, path));
  c.detach_pseudo_labels = read_pod<std::uint8_t>(in, path) != 0;
  c.d_step_first = read_pod<std::uint8_t>(in, path) != 0;
  c.carry_optimizer_state = read_pod<std::uint8_t>(in, path) != 0;
  return c;
}

inline void write_metrics_record(std::ostream& out, const MetricsRecord& r) {
  write_pod<std::int32_t>(out, r.epoch);
  write_pod(out, r.h_target);
  write_pod(out, r.l_c_source);
  write_pod(out, r.target_xent_true);
  write_pod(out, r.acc_c);
  write_pod(out, r.acc_d);
  write_pod(out, r.mean_ccd);
}

inline MetricsRecord read_metrics_record(std::istream& in, const std::string& path) {
  MetricsRecord r;
  r.epoch = read_pod<std::int32_t>(in, path);
  r.h_target = read_pod<double>(in, path);
  r.l_c_source = read_pod<double>(in, path);
  r.target_xent_true = read_pod<double>(in, path);
  r.acc_c = read_pod<double>(in, path);
  r.acc_d = read_pod<double>(in, path);
  r.mean_ccd = read_pod<double>(in, path);
  return r;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Flat binary container: magic, version, train config, final metrics, then
// each network's spec and raw parameter doubles in layer order. Doubles are
// stored verbatim, so load is bit-exact.
inline void save_checkpoint(const std::string& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write("MMCK", 4);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_config(out, model.config);
  detail::write_metrics_record(out, model.final_metrics);
  const std::uint8_t net_count = model.bundle.domain ? 4 : 3;
  detail::write_pod(out, net_count);
  detail::write_network(out, model.bundle.g);
  detail::write_network(out, model.bundle.d);
  detail::write_network(out, model.bundle.c);
  if (model.bundle.domain) detail::write_network(out, *model.bundle.domain);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MMCK", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = detail::read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + path);
  }
  TrainedModel model;
  model.config = detail::read_config(in, path);
  model.final_metrics = detail::read_metrics_record(in, path);
  const auto net_count = detail::read_pod<std::uint8_t>(in, path);
  if (net_count != 3 && net_count != 4) {
    throw std::runtime_error("checkpoint: unexpected network count in " + path);
  }
  Network g = detail::read_network(in, path);
  Network d = detail::read_network(in, path);
  Network c = detail::read_network(in, path);
  std::optional<Network> domain;
  if (net_count == 4) domain = detail::read_network(in, path);
  model.bundle = ModelBundle(std::move(g), std::move(d), std::move(c), std::move(domain));
  return model;
}

}  // namespace mmen
