#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmen/rng.hpp"
#include "mmen/tensor.hpp"

namespace mmen {

enum class DomainTag { source, target };

struct DomainDataset {
  Tensor features;          // n x d
  std::vector<int> labels;  // empty when unlabeled
  DomainTag tag = DomainTag::source;
  std::size_t class_count = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

// Labeled source plus unlabeled target sharing a feature space. Target
// labels are stored privately: training code sees only target features,
// while metrics reach the labels through the loudly-named diagnostic
// accessor.
class DomainPair {
 public:
  DomainPair(DomainDataset source, DomainDataset target)
      : source_(std::move(source)),
        target_features_(target.features),
        target_labels_(std::move(target.labels)),
        class_count_(source_.class_count) {
    if (source_.labels.empty()) {
      throw std::invalid_argument("DomainPair: source dataset must be labeled");
    }
    if (source_.dim() != target_features_.cols()) {
      throw std::invalid_argument("DomainPair: feature dims disagree: " +
                                  std::to_string(source_.dim()) + " vs " +
                                  std::to_string(target_features_.cols()));
    }
    if (target.class_count != source_.class_count) {
      throw std::invalid_argument("DomainPair: class counts disagree: " +
                                  std::to_string(source_.class_count) + " vs " +
                                  std::to_string(target.class_count));
    }
  }

  const DomainDataset& source() const { return source_; }
  const Tensor& target_features() const { return target_features_; }
  std::size_t class_count() const { return class_count_; }
  std::size_t source_size() const { return source_.size(); }
  std::size_t target_size() const { return target_features_.rows(); }
  std::size_t feature_dim() const { return source_.dim(); }

  bool has_target_labels() const { return !target_labels_.empty(); }

  // evaluation-only; never feeds a gradient path
  const std::vector<int>& diagnostic_target_labels() const { return target_labels_; }

 private:
  DomainDataset source_;
  Tensor target_features_;
  std::vector<int> target_labels_;
  std::size_t class_count_;
};

// Two interleaved unit half-circles with Gaussian noise, balanced classes.
inline DomainDataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("make_two_moons: need at least 2 samples");
  if (noise < 0.0) throw std::invalid_argument("make_two_moons: negative noise");
  const std::size_t n0 = (n + 1) / 2;
  Rng rng(seed);
  Tensor x = Tensor::zeros({n, 2});
  std::vector<int> y(n);
  constexpr double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, pi);
    double px, py;
    if (i < n0) {
      px = std::cos(t);
      py = std::sin(t);
      y[i] = 0;
    } else {
      px = 1.0 - std::cos(t);
      py = 0.5 - std::sin(t);
      y[i] = 1;
    }
    x.at(i, 0) = px + noise * rng.gaussian();
    x.at(i, 1) = py + noise * rng.gaussian();
  }
  return DomainDataset{x, std::move(y), DomainTag::source, 2};
}

// Rigid rotation about the dataset centroid; labels carried over.
inline DomainDataset rotate_domain(const DomainDataset& ds, double angle_deg) {
  if (ds.dim() != 2) {
    throw std::invalid_argument("rotate_domain: needs 2-d features, got dim " +
                                std::to_string(ds.dim()));
  }
  if (angle_deg == 0.0) {
    return DomainDataset{Tensor::detached_copy(ds.features), ds.labels, ds.tag,
                         ds.class_count};
  }
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const std::size_t n = ds.size();
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cx += ds.features.at(i, 0);
    cy += ds.features.at(i, 1);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  Tensor out = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = ds.features.at(i, 0) - cx;
    const double dy = ds.features.at(i, 1) - cy;
    out.at(i, 0) = cx + cs * dx - sn * dy;
    out.at(i, 1) = cy + sn * dx + cs * dy;
  }
  return DomainDataset{out, ds.labels, ds.tag, ds.class_count};
}

// K Gaussian clusters on a circle of radius 4*spread; the target draws the
// same clusters translated by shift. Both domains run their noise stream
// from the same seed, so shift (0,0) reproduces the source byte-for-byte.
inline DomainPair make_shifted_blobs(std::size_t class_count, std::size_t n_per_class,
                                     double shift_x, double shift_y, double spread,
                                     std::uint64_t seed) {
  if (class_count < 2) throw std::invalid_argument("make_shifted_blobs: need K >= 2");
  if (n_per_class == 0) throw std::invalid_argument("make_shifted_blobs: empty classes");
  constexpr double pi = 3.14159265358979323846;
  const std::size_t n = class_count * n_per_class;
  auto sample = [&](double ox, double oy) {
    Rng rng(seed);
    Tensor x = Tensor::zeros({n, 2});
    std::vector<int> y(n);
    std::size_t row = 0;
    for (std::size_t k = 0; k < class_count; ++k) {
      const double ang = 2.0 * pi * static_cast<double>(k) / static_cast<double>(class_count);
      const double mx = 4.0 * spread * std::cos(ang) + ox;
      const double my = 4.0 * spread * std::sin(ang) + oy;
      for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
        x.at(row, 0) = mx + spread * rng.gaussian();
        x.at(row, 1) = my + spread * rng.gaussian();
        y[row] = static_cast<int>(k);
      }
    }
    return std::pair<Tensor, std::vector<int>>(x, std::move(y));
  };
  auto [xs, ys] = sample(0.0, 0.0);
  auto [xt, yt] = sample(shift_x, shift_y);
  DomainDataset source{xs, std::move(ys), DomainTag::source, class_count};
  DomainDataset target{xt, std::move(yt), DomainTag::target, class_count};
  return DomainPair(std::move(source), std::move(target));
}

struct IdxBadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxTruncated : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxCountMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IdxTruncated("idx: truncated header in " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

// area-weighted average pooling; exact block means when sizes divide evenly
inline void pool_image(const std::vector<double>& src, std::size_t rows, std::size_t cols,
                       std::size_t side, double* dst) {
  const double ry = static_cast<double>(rows) / static_cast<double>(side);
  const double rx = static_cast<double>(cols) / static_cast<double>(side);
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double y0 = oy * ry, y1 = (oy + 1) * ry;
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double x0 = ox * rx, x1 = (ox + 1) * rx;
      double acc = 0.0;
      for (std::size_t sy = static_cast<std::size_t>(y0); sy < rows && sy < y1; ++sy) {
        const double wy = std::min<double>(y1, sy + 1) - std::max<double>(y0, sy);
        if (wy <= 0.0) continue;
        for (std::size_t sx = static_cast<std::size_t>(x0); sx < cols && sx < x1; ++sx) {
          const double wx = std::min<double>(x1, sx + 1) - std::max<double>(x0, sx);
          if (wx <= 0.0) continue;
          acc += wy * wx * src[sy * cols + sx];
        }
      }
      dst[oy * side + ox] = acc / (ry * rx);
    }
  }
}

}  // namespace detail

// Big-endian IDX reader (images magic 0x00000803, labels 0x00000801).
// Takes the first max_n items, average-pools each image to side x side and
// scales pixels into [0, 1].
inline DomainDataset load_idx(const std::string& images_path, const std::string& labels_path,
                              std::size_t max_n, std::size_t downsample_to) {
  if (downsample_to == 0) throw std::invalid_argument("load_idx: zero downsample side");
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxTruncated("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxTruncated("idx: cannot open " + labels_path);

  const std::uint32_t img_magic = detail::read_be_u32(img, images_path);
  if (img_magic != 0x00000803u) {
    throw IdxBadMagic("idx: bad image magic in " + images_path);
  }
  const std::uint32_t img_count = detail::read_be_u32(img, images_path);
  const std::uint32_t rows = detail::read_be_u32(img, images_path);
  const std::uint32_t cols = detail::read_be_u32(img, images_path);

  const std::uint32_t lab_magic = detail::read_be_u32(lab, labels_path);
  if (lab_magic != 0x00000801u) {
    throw IdxBadMagic("idx: bad label magic in " + labels_path);
  }
  const std::uint32_t lab_count = detail::read_be_u32(lab, labels_path);
  if (img_count != lab_count) {
    throw IdxCountMismatch("idx: " + std::to_string(img_count) + " images vs " +
                           std::to_string(lab_count) + " labels");
  }

  std::size_t n = img_count;
  if (max_n < n) {
    n = max_n;
  } else if (max_n > n) {
    std::cerr << "idx: requested " << max_n << " items, file holds " << img_count
              << "; loading all\n";
  }
  if (n == 0) throw std::invalid_argument("load_idx: zero items requested");

  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  const std::size_t side = downsample_to;
  Tensor features = Tensor::zeros({n, side * side});
  std::vector<int> labels(n);
  std::vector<unsigned char> raw(px);
  std::vector<double> scaled(px);
  for (std::size_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(px))) {
      throw IdxTruncated("idx: truncated image data in " + images_path);
    }
    for (std::size_t j = 0; j < px; ++j) scaled[j] = raw[j] / 255.0;
    detail::pool_image(scaled, rows, cols, side, &features.values()[i * side * side]);
    char l;
    if (!lab.read(&l, 1)) {
      throw IdxTruncated("idx: truncated label data in " + labels_path);
    }
    labels[i] = static_cast<unsigned char>(l);
  }
  const int max_label = *std::max_element(labels.begin(), labels.end());
  return DomainDataset{features, std::move(labels), DomainTag::source,
                       static_cast<std::size_t>(max_label) + 1};
}

struct BatchPair {
  Tensor x_s;
  std::vector<int> y_s;
  Tensor x_t;
  std::vector<std::size_t> source_indices, target_indices;
};

// Independent seeded shuffles per domain per epoch, drop-last pairing.
inline std::vector<BatchPair> batch_iter(const DomainPair& pair, std::size_t batch_s,
                                         std::size_t batch_t, std::uint64_t seed,
                                         std::size_t epoch) {
  if (batch_s == 0 || batch_t == 0) throw std::invalid_argument("batch_iter: zero batch size");
  if (batch_s > pair.source_size() || batch_t > pair.target_size()) {
    throw std::invalid_argument("batch_iter: batch size exceeds dataset size (" +
                                std::to_string(batch_s) + "/" +
                                std::to_string(pair.source_size()) + " source, " +
                                std::to_string(batch_t) + "/" +
                                std::to_string(pair.target_size()) + " target)");
  }
  std::vector<std::size_t> perm_s(pair.source_size());
  std::iota(perm_s.begin(), perm_s.end(), std::size_t{0});
  std::vector<std::size_t> perm_t(pair.target_size());
  std::iota(perm_t.begin(), perm_t.end(), std::size_t{0});
  Rng rng_s(mix_seed(seed, epoch, 0));
  Rng rng_t(mix_seed(seed, epoch, 1));
  rng_s.shuffle(perm_s);
  rng_t.shuffle(perm_t);

  const std::size_t nb =
      std::min(pair.source_size() / batch_s, pair.target_size() / batch_t);
  const std::size_t d = pair.feature_dim();
  const Tensor& fs = pair.source().features;
  const Tensor& ft = pair.target_features();
  std::vector<BatchPair> out;
  out.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    BatchPair bp;
    bp.x_s = Tensor::zeros({batch_s, d});
    bp.y_s.resize(batch_s);
    bp.x_t = Tensor::zeros({batch_t, d});
    for (std::size_t i = 0; i < batch_s; ++i) {
      const std::size_t src = perm_s[b * batch_s + i];
      bp.source_indices.push_back(src);
      bp.y_s[i] = pair.source().labels[src];
      for (std::size_t j = 0; j < d; ++j) bp.x_s.at(i, j) = fs.at(src, j);
    }
    for (std::size_t i = 0; i < batch_t; ++i) {
      const std::size_t src = perm_t[b * batch_t + i];
      bp.target_indices.push_back(src);
      for (std::size_t j = 0; j < d; ++j) bp.x_t.at(i, j) = ft.at(src, j);
    }
    out.push_back(std::move(bp));
  }
  return out;
}

// CSV export for external inspection: x0,...,xd-1,label,domain with source
// rows first; withheld labels written as -1.
inline void export_dataset_csv(const DomainPair& pair, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_dataset_csv: cannot open " + path);
  const std::size_t d = pair.feature_dim();
  for (std::size_t j = 0; j < d; ++j) out << "x" << j << ",";
  out << "label,domain\n";
  char buf[64];
  auto write_row = [&](const Tensor& f, std::size_t i, int label, const char* domain) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", f.at(i, j));
      out << buf << ",";
    }
    out << label << "," << domain << "\n";
  };
  for (std::size_t i = 0; i < pair.source_size(); ++i) {
    write_row(pair.source().features, i, pair.source().labels[i], "source");
  }
  const auto& tl = pair.diagnostic_target_labels();
  for (std::size_t i = 0; i < pair.target_size(); ++i) {
    write_row(pair.target_features(), i, tl.empty() ? -1 : tl[i], "target");
  }
}

}  // namespace mmen
