#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "iccl/numkern.hpp"

namespace iccl {

// Scalar loss plus its analytic gradient with respect to the online-branch
// input q1. The other argument (z2 or a pseudo-label target) always carries
// stop-gradient semantics: nothing ever backpropagates through it.
struct LossResult {
  double value = 0.0;
  Vec grad_q1;
};

enum class LossKind { similarity, contrastive, ce, mce, iccl };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::similarity: return "similarity";
    case LossKind::contrastive: return "contrastive";
    case LossKind::ce: return "ce";
    case LossKind::mce: return "mce";
    case LossKind::iccl: return "iccl";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "similarity") return LossKind::similarity;
  if (s == "contrastive") return LossKind::contrastive;
  if (s == "ce") return LossKind::ce;
  if (s == "mce") return LossKind::mce;
  if (s == "iccl") return LossKind::iccl;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

// How tau1 tracks the target distribution:
//   off        - fixed tau1
//   min_rule   - min(tau1, ||target||), the default adaptive rule
//   norm_rule  - tau1 = ||target|| outright; kept selectable for ablations,
//                but it vanishes as predictions approach the target
enum class AdaptiveTau1 { off, min_rule, norm_rule };

struct TemperatureConfig {
  double tau1 = 0.1;   // online-branch temperature: sets gradient magnitude
  double tau2 = 0.07;  // target sharpening temperature
  AdaptiveTau1 adaptive_tau1 = AdaptiveTau1::off;

  void validate() const {
    if (!(tau1 > 0.0) || tau1 > 10.0) {
      throw std::invalid_argument("tau1 must be in (0, 10]");
    }
    if (!(tau2 > 0.0) || tau2 > 10.0) {
      throw std::invalid_argument("tau2 must be in (0, 10]");
    }
  }
};

// Per-pair effective tau1. Under min_rule the temperature can only shrink
// toward ||target||, which lies in [1/sqrt(C), 1].
inline double effective_tau1(const ProbDist& target, const TemperatureConfig& cfg) {
  cfg.validate();
  switch (cfg.adaptive_tau1) {
    case AdaptiveTau1::off: return cfg.tau1;
    case AdaptiveTau1::min_rule: return std::min(cfg.tau1, target.norm());
    case AdaptiveTau1::norm_rule: return target.norm();
  }
  throw std::logic_error("effective_tau1: bad mode");
}

// L = -<q1_hat, z2_hat>. Gradient flows through the normalization of q1
// only; its squared norm is (1 - <q1_hat, z2_hat>^2) / ||q1||^2.
inline LossResult similarity_loss(const Vec& q1, const Vec& z2) {
  const Vec z2h = l2_normalize(z2);
  const Vec q1h = l2_normalize(q1);
  LossResult r;
  r.value = -dot(q1h, z2h);
  Vec dq1h(q1.size());
  for (std::size_t i = 0; i < q1.size(); ++i) dq1h[i] = -z2h[i];
  r.grad_q1 = normalize_jacobian_apply(q1, dq1h);
  return r;
}

// Softmax cross-entropy over one positive and N-1 negative keys,
//   L = -log( exp(<q_hat, k_pos_hat>/tau) / sum_i exp(<q_hat, k_i_hat>/tau) ).
// Keys are constants; the query is normalized defensively before scoring.
inline LossResult infonce_loss(const Vec& q, const Batch& keys, std::size_t pos_index,
                               double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::domain_error("infonce_loss: tau must be positive");
  }
  if (keys.size() < 2) {
    throw std::invalid_argument("infonce_loss: need at least 2 keys");
  }
  if (pos_index >= keys.size()) {
    throw std::invalid_argument("infonce_loss: pos_index out of range");
  }
  const Vec qh = l2_normalize(q);
  const std::size_t n = keys.size();
  Batch kh(n);
  Vec scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    kh[i] = l2_normalize(keys[i]);
    scores[i] = dot(qh, kh[i]) / tau;
  }
  const double m = *std::max_element(scores.begin(), scores.end());
  double lse = 0.0;
  for (double s : scores) lse += std::exp(s - m);
  lse = m + std::log(lse);

  LossResult r;
  r.value = lse - scores[pos_index];

  // d/dq_hat = (1/tau) * (sum_i w_i k_i_hat - k_pos_hat), w = softmax(scores)
  Vec dqh(q.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(scores[i] - lse);
    for (std::size_t j = 0; j < q.size(); ++j) dqh[j] += w * kh[i][j];
  }
  for (std::size_t j = 0; j < q.size(); ++j) {
    dqh[j] = (dqh[j] - kh[pos_index][j]) / tau;
  }
  r.grad_q1 = normalize_jacobian_apply(q, dqh);
  return r;
}

// Plain cross-entropy against a fixed target distribution, with the raw q1
// fed to the softmax: L = -sum_i target_i log p(i|q1, tau). The gradient is
// (P(q1) - target) / tau and is controlled only by the distance between the
// two distributions, so ||grad||^2 <= 2 / tau^2 regardless of ||q1||.
inline LossResult ce_loss(const Vec& q1, const ProbDist& target, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::domain_error("ce_loss: tau must be positive");
  }
  target.validate();
  if (q1.size() != target.dim()) {
    throw std::invalid_argument("ce_loss: dimension mismatch");
  }
  require_finite(q1, "ce_loss(q1)");

  const ProbDist p = softmax_t(q1, tau);
  LossResult r;
  r.value = 0.0;
  for (std::size_t i = 0; i < q1.size(); ++i) {
    r.value -= target.p[i] * std::log(p.p[i]);
  }
  r.grad_q1.resize(q1.size());
  for (std::size_t i = 0; i < q1.size(); ++i) {
    r.grad_q1[i] = (p.p[i] - target.p[i]) / tau;
  }
  return r;
}

// Modified cross-entropy: the alignment term alone, with the normalized q1,
//   L = -sum_i target_i * q1_hat_i / tau.
// Normalizing the softmax input is what caps the gradient at
// ||target|| / (tau * ||q1||), restoring similarity-loss-like scale control.
inline LossResult mce_loss(const Vec& q1, const ProbDist& target, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::domain_error("mce_loss: tau must be positive");
  }
  target.validate();
  if (q1.size() != target.dim()) {
    throw std::invalid_argument("mce_loss: dimension mismatch");
  }
  const Vec q1h = l2_normalize(q1);
  LossResult r;
  r.value = 0.0;
  Vec dq1h(q1.size());
  for (std::size_t i = 0; i < q1.size(); ++i) {
    r.value -= target.p[i] * q1h[i] / tau;
    dq1h[i] = -target.p[i] / tau;
  }
  r.grad_q1 = normalize_jacobian_apply(q1, dq1h);
  return r;
}

// Cross-entropy with the *normalized* online feature fed to the softmax:
//   L = log sum_j exp(q1_hat_j / tau1) - sum_i target_i * q1_hat_i / tau1.
// Equivalently -sum_i target_i log p(i | q1_hat, tau1). The caller supplies
// the (possibly adaptive) per-pair tau1.
inline LossResult iccl_loss(const Vec& q1, const ProbDist& target, double tau1_effective) {
  if (!(tau1_effective > 0.0) || !std::isfinite(tau1_effective)) {
    throw std::domain_error("iccl_loss: tau1 must be positive");
  }
  target.validate();
  if (q1.size() != target.dim()) {
    throw std::invalid_argument("iccl_loss: dimension mismatch");
  }
  const Vec q1h = l2_normalize(q1);
  const double t = tau1_effective;

  double m = q1h[0];
  for (double v : q1h) m = std::max(m, v);
  double lse = 0.0;
  for (double v : q1h) lse += std::exp((v - m) / t);
  lse = m / t + std::log(lse);

  double align = 0.0;
  for (std::size_t i = 0; i < q1.size(); ++i) align += target.p[i] * q1h[i] / t;

  LossResult r;
  r.value = lse - align;

  const ProbDist p = softmax_t(q1h, t);
  Vec dq1h(q1.size());
  for (std::size_t i = 0; i < q1.size(); ++i) {
    dq1h[i] = (p.p[i] - target.p[i]) / t;
  }
  r.grad_q1 = normalize_jacobian_apply(q1, dq1h);
  return r;
}

// KL(uniform || batch-mean distribution): pushes the average predicted
// distribution toward uniform so no dimension monopolizes the batch.
//   value = sum_i (1/C) log( (1/C) / pbar_i ),  pbar = mean of rows.
// grad_logits[j] is the gradient with respect to row j's pre-softmax input,
// taking each row as softmax(logits) at unit temperature; callers running a
// different temperature chain the extra 1/tau themselves.
struct UniformityResult {
  double value = 0.0;
  Batch grad_logits;
};

inline UniformityResult uniformity_kl(const std::vector<ProbDist>& rows) {
  if (rows.empty()) {
    throw std::invalid_argument("uniformity_kl: empty batch");
  }
  const std::size_t n = rows.size();
  const std::size_t c = rows[0].dim();
  for (const auto& r : rows) {
    r.validate();
    if (r.dim() != c) throw std::invalid_argument("uniformity_kl: ragged rows");
  }

  Vec pbar(c, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < c; ++i) pbar[i] += r.p[i];
  }
  for (auto& v : pbar) v /= static_cast<double>(n);

  UniformityResult out;
  const double u = 1.0 / static_cast<double>(c);
  for (std::size_t i = 0; i < c; ++i) {
    out.value += u * std::log(u / pbar[i]);
  }

  // dV/dpbar_i = -(1/C)/pbar_i, dpbar_i/drow_j_i = 1/N; then through each
  // row's softmax Jacobian diag(p) - p p^T.
  Vec a(c);
  for (std::size_t i = 0; i < c; ++i) {
    a[i] = -u / (static_cast<double>(n) * pbar[i]);
  }
  out.grad_logits.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec& p = rows[j].p;
    const double ap = dot(a, p);
    out.grad_logits[j].resize(c);
    for (std::size_t k = 0; k < c; ++k) {
      out.grad_logits[j][k] = p[k] * (a[k] - ap);
    }
  }
  return out;
}

// Batch objective: mean_i iccl(q1_i, target_i) + lambda_r * uniformity KL
// over the rows' predicted distributions. grad_q1[i] is the gradient of the
// batch summary with respect to q1_i, so the trainer can feed rows straight
// into backprop with no further scaling. row_values[i] repeats the shared
// regularizer so each row reads as its own final loss.
struct FinalLossResult {
  std::vector<double> row_values;
  double uniformity = 0.0;
  double mean_iccl = 0.0;
  double summary = 0.0;
  Batch grad_q1;
  std::vector<double> tau1_used;
};

inline FinalLossResult final_loss(const Batch& q1_batch, const std::vector<ProbDist>& targets,
                                  const TemperatureConfig& cfg, double lambda_r) {
  if (q1_batch.empty() || q1_batch.size() != targets.size()) {
    throw std::invalid_argument("final_loss: batch shape mismatch");
  }
  if (lambda_r < 0.0 || !std::isfinite(lambda_r)) {
    throw std::invalid_argument("final_loss: lambda_r must be >= 0");
  }
  const std::size_t n = q1_batch.size();

  FinalLossResult out;
  out.row_values.resize(n);
  out.grad_q1.resize(n);
  out.tau1_used.resize(n);

  std::vector<ProbDist> predicted(n);
  std::vector<Vec> iccl_grads(n);
  std::vector<double> iccl_values(n);
  double iccl_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t1 = effective_tau1(targets[i], cfg);
    out.tau1_used[i] = t1;
    LossResult li = iccl_loss(q1_batch[i], targets[i], t1);
    iccl_values[i] = li.value;
    iccl_sum += li.value;
    iccl_grads[i] = std::move(li.grad_q1);
    predicted[i] = softmax_t(l2_normalize(q1_batch[i]), t1);
  }
  out.mean_iccl = iccl_sum / static_cast<double>(n);

  const UniformityResult kl = uniformity_kl(predicted);
  out.uniformity = kl.value;
  out.summary = out.mean_iccl + lambda_r * kl.value;
  for (std::size_t i = 0; i < n; ++i) {
    out.row_values[i] = iccl_values[i] + lambda_r * kl.value;
  }

  // per-row gradient of the summary: (1/N) * d iccl_i + lambda_r * d KL
  for (std::size_t i = 0; i < n; ++i) {
    Vec g = iccl_grads[i];
    for (auto& v : g) v /= static_cast<double>(n);
    if (lambda_r > 0.0) {
      Vec dlog = kl.grad_logits[i];  // w.r.t. q1_hat at unit temperature
      for (auto& v : dlog) v *= lambda_r / out.tau1_used[i];
      const Vec chained = normalize_jacobian_apply(q1_batch[i], dlog);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += chained[k];
    }
    out.grad_q1[i] = std::move(g);
  }
  return out;
}

// Ledger row for one loss: the computed squared gradient norm, its closed
// form, and its a-priori upper bound. For losses that carry a separate
// uniformity term (contrastive, iccl) the ledger covers the alignment term;
// ce is certified on its full gradient with the distribution-distance bound.
struct GradBoundReport {
  LossKind loss_kind = LossKind::similarity;
  double norm_sq = 0.0;
  double closed_form = 0.0;
  double upper_bound = 0.0;

  bool consistent(double rel_tol = 1e-8, double abs_slack = 1e-12) const {
    const double scale = std::max({std::abs(norm_sq), std::abs(closed_form), 1e-30});
    if (std::abs(norm_sq - closed_form) > rel_tol * scale + abs_slack) return false;
    return norm_sq <= upper_bound + abs_slack;
  }
};

inline GradBoundReport grad_bound_report(LossKind kind, const Vec& q1,
                                         const Vec& z2_or_target,
                                         const TemperatureConfig& cfg) {
  cfg.validate();
  GradBoundReport rep;
  rep.loss_kind = kind;
  const double nq = norm(q1);

  switch (kind) {
    case LossKind::similarity: {
      const LossResult r = similarity_loss(q1, z2_or_target);
      const double cos = -r.value;
      rep.norm_sq = norm_sq(r.grad_q1);
      rep.closed_form = (1.0 - cos * cos) / (nq * nq);
      rep.upper_bound = 1.0 / (nq * nq);
      break;
    }
    case LossKind::contrastive: {
      // alignment term -<q1_hat, z2_hat> / tau1
      const LossResult r = similarity_loss(q1, z2_or_target);
      const double cos = -r.value;
      const double t = cfg.tau1;
      rep.norm_sq = norm_sq(r.grad_q1) / (t * t);
      rep.closed_form = (1.0 - cos * cos) / (t * t * nq * nq);
      rep.upper_bound = 1.0 / (t * t * nq * nq);
      break;
    }
    case LossKind::ce: {
      ProbDist target{z2_or_target};
      const double t = cfg.tau1;
      const LossResult r = ce_loss(q1, target, t);
      rep.norm_sq = norm_sq(r.grad_q1);
      Vec diff = softmax_t(q1, t).p;
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= target.p[i];
      rep.closed_form = norm_sq(diff) / (t * t);
      rep.upper_bound = 2.0 / (t * t);
      break;
    }
    case LossKind::mce: {
      ProbDist target{z2_or_target};
      const double t = cfg.tau1;
      const LossResult r = mce_loss(q1, target, t);
      const Vec q1h = l2_normalize(q1);
      const double tn = target.norm();
      const double cos = dot(q1h, target.p) / tn;
      rep.norm_sq = norm_sq(r.grad_q1);
      rep.closed_form = (tn * tn) / (t * t * nq * nq) * (1.0 - cos * cos);
      rep.upper_bound = (tn * tn) / (t * t * nq * nq);
      break;
    }
    case LossKind::iccl: {
      // alignment term of the iccl loss == mce at the effective tau1
      ProbDist target{z2_or_target};
      const double t = effective_tau1(target, cfg);
      const LossResult r = mce_loss(q1, target, t);
      const Vec q1h = l2_normalize(q1);
      const double tn = target.norm();
      const double cos = dot(q1h, target.p) / tn;
      rep.norm_sq = norm_sq(r.grad_q1);
      rep.closed_form = (tn * tn) / (t * t * nq * nq) * (1.0 - cos * cos);
      rep.upper_bound = (tn * tn) / (t * t * nq * nq);
      break;
    }
  }
  return rep;
}

// Chain p_i(y)*p_j(y) <= <p_i, p_j> <= cos(p_i, p_j): the per-class product
// is dominated by the inner product, which cosine similarity only inflates
// since simplex vectors have norm <= 1.
struct Prop1Record {
  double lhs = 0.0;
  double mid = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

inline Prop1Record prop1_inequality_check(const ProbDist& p_i, const ProbDist& p_j,
                                          std::size_t y) {
  p_i.validate();
  p_j.validate();
  if (p_i.dim() != p_j.dim()) {
    throw std::invalid_argument("prop1_inequality_check: dimension mismatch");
  }
  if (y >= p_i.dim()) {
    throw std::invalid_argument("prop1_inequality_check: class index out of range");
  }
  Prop1Record r;
  r.lhs = p_i.p[y] * p_j.p[y];
  r.mid = dot(p_i.p, p_j.p);
  r.rhs = r.mid / (p_i.norm() * p_j.norm());
  r.holds = (r.lhs <= r.mid + 1e-12) && (r.mid <= r.rhs + 1e-12);
  return r;
}

}  // namespace iccl
