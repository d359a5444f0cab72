#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iccl/errors.hpp"
#include "iccl/model.hpp"
#include "iccl/numkern.hpp"
#include "iccl/rng.hpp"

namespace iccl {

// Labels exist for evaluation only; no training loss ever sees them.
struct LabeledDataset {
  Mat samples;              // N x D
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return samples.rows; }
  std::size_t dim() const { return samples.cols; }
};

struct AugmentConfig {
  double noise_sigma = 0.3;
  double mask_fraction = 0.2;
  double scale_jitter = 0.0;

  void validate() const {
    if (noise_sigma < 0.0) throw ConfigError("augment.noise_sigma must be >= 0");
    if (mask_fraction < 0.0 || mask_fraction >= 1.0) {
      throw ConfigError("augment.mask_fraction must be in [0, 1)");
    }
    if (scale_jitter < 0.0) throw ConfigError("augment.scale_jitter must be >= 0");
  }
};

// Cluster centers sit at this multiple of `spread` from the origin; the
// expected pairwise center distance is then sqrt(2) * kBlobCenterRadius
// * spread, comfortably above a 2 * spread margin.
inline constexpr double kBlobCenterRadius = 2.2;

// K isotropic Gaussian clusters with unit-norm random center directions.
inline LabeledDataset make_blobs(int classes, int dim, int n_per_class, double spread,
                                 double cluster_sigma, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("make_blobs: need K >= 2");
  if (dim < 2) throw std::invalid_argument("make_blobs: need D >= 2");
  if (n_per_class < 1) throw std::invalid_argument("make_blobs: need n_per_class >= 1");
  if (!(spread >= 0.0) || !(cluster_sigma >= 0.0)) {
    throw std::invalid_argument("make_blobs: spread and sigma must be >= 0");
  }

  Rng rng(derive_seed(seed, 0xb10b5));
  std::vector<Vec> centers(classes);
  for (auto& c : centers) {
    c = l2_normalize(rng.normal_vec(static_cast<std::size_t>(dim)));
    for (auto& v : c) v *= kBlobCenterRadius * spread;
  }

  LabeledDataset ds;
  ds.rng_seed = seed;
  ds.num_classes = classes;
  const std::size_t n = static_cast<std::size_t>(classes) * n_per_class;
  ds.samples = Mat(n, static_cast<std::size_t>(dim));
  ds.labels.resize(n);
  std::size_t row = 0;
  for (int k = 0; k < classes; ++k) {
    for (int j = 0; j < n_per_class; ++j, ++row) {
      ds.labels[row] = k;
      for (int d = 0; d < dim; ++d) {
        ds.samples.at(row, d) = centers[k][d] + cluster_sigma * rng.normal();
      }
    }
  }
  return ds;
}

// Two independently perturbed views of one sample: per-view uniform scale
// jitter, additive Gaussian noise, then a Bernoulli coordinate mask. Draw
// order is fixed (jitter, noise, mask; view 1 before view 2) so runs are
// reproducible from the step RNG.
inline std::pair<Vec, Vec> two_views(std::span<const double> sample, const AugmentConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  auto one = [&]() {
    Vec v(sample.begin(), sample.end());
    const double jitter =
        cfg.scale_jitter > 0.0 ? rng.uniform(-cfg.scale_jitter, cfg.scale_jitter) : 0.0;
    for (auto& x : v) x *= 1.0 + jitter;
    if (cfg.noise_sigma > 0.0) {
      for (auto& x : v) x += cfg.noise_sigma * rng.normal();
    }
    if (cfg.mask_fraction > 0.0) {
      for (auto& x : v) {
        if (rng.uniform() < cfg.mask_fraction) x = 0.0;
      }
    }
    return v;
  };
  Vec v1 = one();
  Vec v2 = one();
  return {std::move(v1), std::move(v2)};
}

namespace detail {

inline double parse_double_field(std::string_view field, std::size_t line_no,
                                 std::size_t field_no) {
  double out = 0.0;
  const auto* begin = field.data();
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("dataset parse error at line " + std::to_string(line_no) + ", field " +
                      std::to_string(field_no) + ": bad number '" + std::string(field) + "'");
  }
  return out;
}

}  // namespace detail

// Text format, one sample per line: `label,v1,v2,...,vD`. The first line
// must be the header `#dim=D classes=K`; later `#` lines are comments.
inline LabeledDataset load_vector_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  int dim = -1, classes = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (std::sscanf(line.c_str(), "#dim=%d classes=%d", &dim, &classes) != 2) {
      throw ConfigError("dataset '" + path + "': first line must be '#dim=D classes=K'");
    }
    break;
  }
  if (dim < 2 || classes < 2) {
    throw ConfigError("dataset '" + path + "': need dim >= 2 and classes >= 2");
  }

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;

    std::size_t field_no = 0;
    std::size_t start = 0;
    std::string_view sv(line);
    std::vector<std::string_view> fields;
    while (start <= sv.size()) {
      const std::size_t comma = sv.find(',', start);
      const std::size_t stop = comma == std::string_view::npos ? sv.size() : comma;
      fields.push_back(sv.substr(start, stop - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != static_cast<std::size_t>(dim) + 1) {
      throw ConfigError("dataset parse error at line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 1) + " fields, got " + std::to_string(fields.size()));
    }

    field_no = 1;
    int label = -1;
    {
      const auto* b = fields[0].data();
      const auto* e = b + fields[0].size();
      auto [ptr, ec] = std::from_chars(b, e, label);
      if (ec != std::errc() || ptr != e) {
        throw ConfigError("dataset parse error at line " + std::to_string(line_no) +
                          ", field 1: bad label '" + std::string(fields[0]) + "'");
      }
    }
    if (label < 0 || label >= classes) {
      throw ConfigError("dataset parse error at line " + std::to_string(line_no) +
                        ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
    labels.push_back(label);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      ++field_no;
      values.push_back(detail::parse_double_field(fields[f], line_no, field_no));
    }
  }

  if (labels.empty()) throw ConfigError("dataset '" + path + "': no samples");

  LabeledDataset ds;
  ds.num_classes = classes;
  ds.labels = std::move(labels);
  ds.samples = Mat(ds.labels.size(), static_cast<std::size_t>(dim));
  ds.samples.a = std::move(values);

  std::vector<int> counts(classes, 0);
  for (int l : ds.labels) ++counts[l];
  for (int k = 0; k < classes; ++k) {
    if (counts[k] == 0) {
      throw ConfigError("dataset '" + path + "': class " + std::to_string(k) + " has no samples");
    }
  }
  return ds;
}

inline void save_vector_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset file '" + path + "'");
  out << "#dim=" << ds.dim() << " classes=" << ds.num_classes << "\n";
  char buf[32];
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out << ds.labels[r];
    for (std::size_t c = 0; c < ds.dim(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, ds.samples.at(r, c));
      out << ',' << std::string_view(buf, res.ptr - buf);
    }
    out << "\n";
  }
}

}  // namespace iccl
