#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "iccl/numkern.hpp"

namespace iccl {

enum class LabelKind { softmax_sharp, sinkhorn, centering };

inline const char* to_string(LabelKind k) {
  switch (k) {
    case LabelKind::softmax_sharp: return "softmax";
    case LabelKind::sinkhorn: return "sinkhorn";
    case LabelKind::centering: return "centering";
  }
  return "?";
}

inline LabelKind label_kind_from_string(const std::string& s) {
  if (s == "softmax") return LabelKind::softmax_sharp;
  if (s == "sinkhorn") return LabelKind::sinkhorn;
  if (s == "centering") return LabelKind::centering;
  throw std::invalid_argument("unknown pseudo-label generator '" + s + "'");
}

// Balanced soft assignment: starting from exp(logits/tau2), alternately
// scale columns to sum N/C and rows to sum 1, ending on the row step so
// every output row is a distribution. Column sums approach N/C as the
// iteration count grows, which is what stops all rows from piling onto
// one dimension. Rows are max-shifted before exponentiation so no row can
// underflow to zero.
inline std::vector<ProbDist> sinkhorn_knopp(const Batch& logits, int iters, double tau2) {
  if (logits.empty()) throw std::invalid_argument("sinkhorn_knopp: empty batch");
  if (iters < 1) throw std::invalid_argument("sinkhorn_knopp: iters must be >= 1");
  if (!(tau2 > 0.0)) throw std::domain_error("sinkhorn_knopp: tau2 must be positive");
  const std::size_t n = logits.size();
  const std::size_t c = logits[0].size();
  if (c < 2) throw std::invalid_argument("sinkhorn_knopp: need >= 2 columns");

  std::vector<Vec> m(n, Vec(c));
  for (std::size_t i = 0; i < n; ++i) {
    if (logits[i].size() != c) throw std::invalid_argument("sinkhorn_knopp: ragged batch");
    require_finite(logits[i], "sinkhorn_knopp");
    double mx = logits[i][0];
    for (double v : logits[i]) mx = std::max(mx, v);
    for (std::size_t j = 0; j < c; ++j) m[i][j] = std::exp((logits[i][j] - mx) / tau2);
  }

  const double col_target = static_cast<double>(n) / static_cast<double>(c);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += m[i][j];
      if (s > 0.0) {
        const double f = col_target / s;
        for (std::size_t i = 0; i < n; ++i) m[i][j] *= f;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += m[i][j];
      if (!(s > 0.0)) {
        throw std::runtime_error("sinkhorn_knopp: row " + std::to_string(i) +
                                 " lost all mass");
      }
      for (std::size_t j = 0; j < c; ++j) m[i][j] /= s;
    }
  }

  const double floor = std::numeric_limits<double>::min();
  std::vector<ProbDist> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : m[i]) v = std::max(v, floor);
    out[i].p = std::move(m[i]);
  }
  return out;
}

inline Vec centering_update(const Vec& center, const Vec& batch_mean, double m) {
  if (center.size() != batch_mean.size()) {
    throw std::invalid_argument("centering_update: dimension mismatch");
  }
  if (!(m >= 0.0) || m >= 1.0) {
    throw std::invalid_argument("centering_update: momentum must be in [0, 1)");
  }
  Vec out(center.size());
  for (std::size_t i = 0; i < center.size(); ++i) {
    out[i] = m * center[i] + (1.0 - m) * batch_mean[i];
  }
  return out;
}

// Turns target-branch features into target distributions. softmax_sharp and
// sinkhorn are pure per call; centering keeps a running center of the batch
// mean and must be driven from a single training thread.
struct PseudoLabelGenerator {
  LabelKind kind = LabelKind::softmax_sharp;
  double tau2 = 0.07;
  int sinkhorn_iters = 3;
  Vec center_state;  // sized on first centering batch
  double center_momentum = 0.9;
};

inline std::vector<ProbDist> generate_targets(PseudoLabelGenerator& gen, const Batch& z2) {
  if (z2.empty()) throw std::invalid_argument("generate_targets: empty batch");
  const std::size_t n = z2.size();
  const std::size_t c = z2[0].size();
  for (const auto& row : z2) {
    if (row.size() != c) throw std::invalid_argument("generate_targets: ragged batch");
  }

  switch (gen.kind) {
    case LabelKind::softmax_sharp: {
      std::vector<ProbDist> out(n);
      for (std::size_t i = 0; i < n; ++i) out[i] = softmax_t(z2[i], gen.tau2);
      return out;
    }
    case LabelKind::sinkhorn:
      return sinkhorn_knopp(z2, gen.sinkhorn_iters, gen.tau2);
    case LabelKind::centering: {
      if (gen.center_state.empty()) gen.center_state.assign(c, 0.0);
      if (gen.center_state.size() != c) {
        throw std::invalid_argument("generate_targets: center dimension mismatch");
      }
      std::vector<ProbDist> out(n);
      Vec shifted(c);
      Vec mean(c, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          shifted[j] = z2[i][j] - gen.center_state[j];
          mean[j] += z2[i][j];
        }
        out[i] = softmax_t(shifted, gen.tau2);
      }
      for (auto& v : mean) v /= static_cast<double>(n);
      gen.center_state = centering_update(gen.center_state, mean, gen.center_momentum);
      return out;
    }
  }
  throw std::logic_error("generate_targets: bad kind");
}

}  // namespace iccl
