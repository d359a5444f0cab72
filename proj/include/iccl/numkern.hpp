#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iccl {

using Vec = std::vector<double>;
using Batch = std::vector<Vec>;

// Norms below this are treated as degenerate input rather than silently
// divided through; true zero vectors here indicate a caller bug.
inline constexpr double kNormEps = 1e-12;

inline bool all_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline void require_finite(std::span<const double> x, const char* what) {
  if (!all_finite(x)) {
    throw std::domain_error(std::string(what) + ": non-finite entry");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

inline double norm(std::span<const double> x) { return std::sqrt(norm_sq(x)); }

// A point on the probability simplex: entries in (0, 1] summing to one.
struct ProbDist {
  Vec p;

  std::size_t dim() const { return p.size(); }

  void validate() const {
    if (p.size() < 2) {
      throw std::invalid_argument("ProbDist: dimension must be >= 2");
    }
    double sum = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v <= 0.0 || v > 1.0 + 1e-12) {
        throw std::invalid_argument("ProbDist: entry outside (0, 1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("ProbDist: entries sum to " + std::to_string(sum));
    }
  }

  double norm() const { return iccl::norm(p); }
};

// Temperature softmax p(i) = exp(x_i / tau) / sum_j exp(x_j / tau).
// The max is subtracted before exponentiation; this is required, not an
// option, so huge logits cannot overflow. Entries that underflow to zero
// are floored at the smallest normal double to keep downstream log()
// finite; the sum is unaffected at the 1e-9 tolerance.
inline ProbDist softmax_t(const Vec& x, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::domain_error("softmax_t: tau must be positive and finite");
  }
  if (x.size() < 2) {
    throw std::invalid_argument("softmax_t: need at least 2 entries");
  }
  require_finite(x, "softmax_t");

  const double m = *std::max_element(x.begin(), x.end());
  ProbDist out;
  out.p.resize(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.p[i] = std::exp((x[i] - m) / tau);
    sum += out.p[i];
  }
  const double floor = std::numeric_limits<double>::min();
  for (auto& v : out.p) {
    v /= sum;
    if (v < floor) v = floor;
  }
  return out;
}

inline Vec l2_normalize(const Vec& x) {
  require_finite(x, "l2_normalize");
  const double n = norm(x);
  if (n <= kNormEps) {
    throw std::domain_error("l2_normalize: degenerate norm " + std::to_string(n));
  }
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
  return out;
}

// Action of the l2-normalization Jacobian (transpose) on g:
//   (1/||x||) * (g - x_hat * <x_hat, g>).
// This is the projection of g onto the tangent space of the unit sphere
// at x_hat, scaled by 1/||x||; the output is orthogonal to x.
inline Vec normalize_jacobian_apply(const Vec& x, const Vec& g) {
  if (x.size() != g.size()) {
    throw std::invalid_argument("normalize_jacobian_apply: dimension mismatch");
  }
  require_finite(x, "normalize_jacobian_apply(x)");
  require_finite(g, "normalize_jacobian_apply(g)");
  const double n = norm(x);
  if (n <= kNormEps) {
    throw std::domain_error("normalize_jacobian_apply: degenerate norm");
  }
  double radial = 0.0;  // <x_hat, g>
  for (std::size_t i = 0; i < x.size(); ++i) radial += (x[i] / n) * g[i];
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (g[i] - (x[i] / n) * radial) / n;
  }
  return out;
}

}  // namespace iccl
