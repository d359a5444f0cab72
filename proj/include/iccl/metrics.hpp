#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "iccl/errors.hpp"
#include "iccl/model.hpp"
#include "iccl/numkern.hpp"

namespace iccl {

struct EvalReport {
  double precision_at_k = 0.0;
  double knn_top1 = 0.0;
  double probe_top1 = 0.0;
  double embedding_std = 0.0;
  double mean_pz2_norm = 0.0;
  int k = 5;
};

namespace detail {

// Rows scaled to unit norm; all-zero rows are left as zeros instead of
// erroring, since dead ReLU embeddings are a legitimate thing to measure.
inline Mat normalize_rows(const Mat& emb) {
  Mat out = emb;
  for (std::size_t r = 0; r < out.rows; ++r) {
    const double n = norm(out.row(r));
    if (n > kNormEps) {
      for (auto& v : out.row(r)) v /= n;
    }
  }
  return out;
}

// Indices of the k largest-similarity rows, self excluded, ties broken by
// lower index. Similarities are cosine given normalized rows.
inline std::vector<std::size_t> top_k_neighbors(const Mat& normed, std::size_t query,
                                                std::size_t k) {
  std::vector<std::pair<double, std::size_t>> sims;
  sims.reserve(normed.rows - 1);
  for (std::size_t j = 0; j < normed.rows; ++j) {
    if (j == query) continue;
    sims.emplace_back(dot(normed.row(query), normed.row(j)), j);
  }
  auto better = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(sims.begin(), sims.begin() + static_cast<long>(k), sims.end(), better);
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = sims[i].second;
  return out;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Good enough
// for the small Gram matrices the collapse diagnostics need.
inline Vec symmetric_eigenvalues(std::vector<Vec> m) {
  const std::size_t n = m.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += m[i][j] * m[i][j];
    }
    if (off < 1e-22) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(m[p][q]) < 1e-300) continue;
        const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double mip = m[i][p], miq = m[i][q];
          m[i][p] = c * mip - s * miq;
          m[i][q] = s * mip + c * miq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double mpi = m[p][i], mqi = m[q][i];
          m[p][i] = c * mpi - s * mqi;
          m[q][i] = s * mpi + c * mqi;
        }
      }
    }
  }
  Vec eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = m[i][i];
  return eig;
}

}  // namespace detail

// Fraction of each query's k cosine-nearest neighbors sharing its label,
// averaged over queries. Embeddings are l2-normalized internally and the
// query never counts as its own neighbor.
inline double precision_at_k(const Mat& emb, const std::vector<int>& labels, int k) {
  if (emb.rows != labels.size()) throw std::invalid_argument("precision_at_k: shape mismatch");
  if (k < 1 || static_cast<std::size_t>(k) >= emb.rows) {
    throw std::invalid_argument("precision_at_k: need 1 <= k < N");
  }
  const Mat normed = detail::normalize_rows(emb);
  double total = 0.0;
  for (std::size_t q = 0; q < normed.rows; ++q) {
    const auto nb = detail::top_k_neighbors(normed, q, static_cast<std::size_t>(k));
    int same = 0;
    for (std::size_t j : nb) same += labels[j] == labels[q];
    total += static_cast<double>(same) / k;
  }
  return total / static_cast<double>(normed.rows);
}

// Majority vote over the k cosine-nearest training points. Vote ties go to
// the smaller class index so results are deterministic.
inline double knn_classify(const Mat& train_emb, const std::vector<int>& train_labels,
                           const Mat& test_emb, const std::vector<int>& test_labels, int k) {
  if (train_emb.rows == 0 || test_emb.rows == 0) {
    throw std::invalid_argument("knn_classify: empty split");
  }
  if (train_emb.rows != train_labels.size() || test_emb.rows != test_labels.size()) {
    throw std::invalid_argument("knn_classify: shape mismatch");
  }
  if (k < 1 || static_cast<std::size_t>(k) > train_emb.rows) {
    throw std::invalid_argument("knn_classify: bad k");
  }
  const Mat tr = detail::normalize_rows(train_emb);
  const Mat te = detail::normalize_rows(test_emb);
  const int num_classes = 1 + *std::max_element(train_labels.begin(), train_labels.end());

  std::size_t correct = 0;
  std::vector<std::pair<double, std::size_t>> sims(tr.rows);
  for (std::size_t q = 0; q < te.rows; ++q) {
    for (std::size_t j = 0; j < tr.rows; ++j) {
      sims[j] = {dot(te.row(q), tr.row(j)), j};
    }
    auto better = [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    };
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(), better);
    std::vector<int> votes(num_classes, 0);
    for (int i = 0; i < k; ++i) ++votes[train_labels[sims[i].second]];
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (votes[c] > votes[best]) best = c;
    }
    correct += best == test_labels[q];
  }
  return static_cast<double>(correct) / static_cast<double>(te.rows);
}

// Multinomial logistic regression on frozen features, trained by full-batch
// gradient descent from zero init. Returns test top-1. With zero epochs the
// logits are all zero and argmax falls to class 0.
inline double linear_probe(const Mat& train_emb, const std::vector<int>& train_labels,
                           const Mat& test_emb, const std::vector<int>& test_labels, int epochs,
                           double lr) {
  if (train_emb.rows == 0 || test_emb.rows == 0) {
    throw std::invalid_argument("linear_probe: empty split");
  }
  if (train_emb.rows != train_labels.size() || test_emb.rows != test_labels.size()) {
    throw std::invalid_argument("linear_probe: shape mismatch");
  }
  const int num_classes = 1 + *std::max_element(train_labels.begin(), train_labels.end());
  const std::size_t d = train_emb.cols;
  const std::size_t n = train_emb.rows;

  Mat w(static_cast<std::size_t>(num_classes), d);
  Vec b(num_classes, 0.0);

  Vec logits(num_classes);
  Mat gw(static_cast<std::size_t>(num_classes), d);
  Vec gb(num_classes);
  for (int e = 0; e < epochs; ++e) {
    std::fill(gw.a.begin(), gw.a.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto x = train_emb.row(r);
      for (int c = 0; c < num_classes; ++c) {
        logits[c] = b[c] + dot(w.row(c), x);
      }
      const ProbDist p = softmax_t(logits, 1.0);
      loss -= std::log(p.p[train_labels[r]]);
      for (int c = 0; c < num_classes; ++c) {
        const double g = (p.p[c] - (c == train_labels[r] ? 1.0 : 0.0)) / static_cast<double>(n);
        gb[c] += g;
        double* wr = gw.a.data() + static_cast<std::size_t>(c) * d;
        for (std::size_t i = 0; i < d; ++i) wr[i] += g * x[i];
      }
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("linear_probe: non-finite loss at epoch " + std::to_string(e));
    }
    for (std::size_t i = 0; i < w.a.size(); ++i) w.a[i] -= lr * gw.a[i];
    for (int c = 0; c < num_classes; ++c) b[c] -= lr * gb[c];
  }

  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_emb.rows; ++r) {
    const auto x = test_emb.row(r);
    int best = 0;
    double best_v = b[0] + dot(w.row(0), x);
    for (int c = 1; c < num_classes; ++c) {
      const double v = b[c] + dot(w.row(c), x);
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    correct += best == test_labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(test_emb.rows);
}

// embedding_std: mean per-dimension standard deviation of the l2-normalized
// embeddings (zero when everything collapses to one point).
// effective_rank: exp of the entropy of the normalized singular value
// distribution of the normalized embedding matrix.
struct CollapseDiag {
  double embedding_std = 0.0;
  double effective_rank = 0.0;
};

inline CollapseDiag collapse_diagnostics(const Mat& emb) {
  if (emb.rows < 2) throw std::invalid_argument("collapse_diagnostics: need N >= 2");
  const Mat normed = detail::normalize_rows(emb);
  const std::size_t n = normed.rows, c = normed.cols;

  CollapseDiag diag;
  for (std::size_t j = 0; j < c; ++j) {
    double mu = 0.0;
    for (std::size_t r = 0; r < n; ++r) mu += normed.at(r, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = normed.at(r, j) - mu;
      var += d * d;
    }
    diag.embedding_std += std::sqrt(var / static_cast<double>(n));
  }
  diag.embedding_std /= static_cast<double>(c);

  // singular values via the C x C Gram matrix
  std::vector<Vec> gram(c, Vec(c, 0.0));
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = normed.row(r);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = i; j < c; ++j) gram[i][j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < i; ++j) gram[i][j] = gram[j][i];
  }
  Vec eig = detail::symmetric_eigenvalues(std::move(gram));
  double total = 0.0;
  for (auto& v : eig) {
    v = std::sqrt(std::max(v, 0.0));
    total += v;
  }
  if (total <= 0.0) {
    diag.effective_rank = 0.0;
    return diag;
  }
  double entropy = 0.0;
  for (double v : eig) {
    const double p = v / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  diag.effective_rank = std::exp(entropy);
  return diag;
}

// Mean over rows of || softmax(z2 / tau2) ||; always lands in [1/sqrt(C), 1]
// and moves toward 1/sqrt(C) as tau2 grows.
inline double track_pz2_norm(const Mat& z2, double tau2) {
  if (z2.rows == 0) throw std::invalid_argument("track_pz2_norm: empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < z2.rows; ++r) {
    total += softmax_t(z2.row_vec(r), tau2).norm();
  }
  return total / static_cast<double>(z2.rows);
}

inline double pearson_correlation(const Vec& x, const Vec& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson_correlation: need two equal series, length >= 2");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace iccl
