#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iccl/losses.hpp"
#include "iccl/numkern.hpp"
#include "iccl/rng.hpp"

namespace iccl {

// Central finite differences of a scalar functional, the reference every
// hand-derived gradient in this library is checked against.
template <typename F>
Vec central_diff_grad(F&& f, Vec x, double step = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + step;
    const double fp = f(x);
    x[i] = xi - step;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline double grad_rel_err(const Vec& analytic, const Vec& numeric) {
  if (analytic.size() != numeric.size()) return HUGE_VAL;
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
  }
  const double scale = std::max({norm_sq(analytic), norm_sq(numeric), 1e-16});
  return std::sqrt(diff / scale);
}

struct GradCheckOptions {
  std::vector<int> dims{8, 64, 256};
  int trials = 100;
  double step = 1e-6;
  double tol = 1e-5;
  std::uint64_t seed = 20240705;
  // Self-test hook: corrupts the analytic gradient so the checker itself
  // can be shown to fail loudly. Never set outside tests.
  bool inject_error = false;
};

struct GradCheckCase {
  std::string loss;
  int dim = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names = {"similarity", "infonce", "ce", "mce",
                                                 "iccl", "uniformity_kl", "final"};
  return names;
}

namespace detail {

inline ProbDist random_target(Rng& rng, int dim) {
  const double tau = std::exp(rng.uniform(std::log(0.07), std::log(1.0)));
  return softmax_t(rng.normal_vec(static_cast<std::size_t>(dim), 2.0), tau);
}

inline double random_tau(Rng& rng) {
  return std::exp(rng.uniform(std::log(0.05), std::log(1.0)));
}

// One random instance: returns (analytic gradient, functional, point).
struct Instance {
  Vec point;
  Vec analytic;
  std::function<double(const Vec&)> f;
};

inline Instance make_instance(const std::string& loss, int dim, Rng& rng) {
  Instance inst;
  const std::size_t c = static_cast<std::size_t>(dim);
  if (loss == "similarity") {
    inst.point = rng.normal_vec(c);
    const Vec z2 = rng.normal_vec(c);
    inst.analytic = similarity_loss(inst.point, z2).grad_q1;
    inst.f = [z2](const Vec& q) { return similarity_loss(q, z2).value; };
  } else if (loss == "infonce") {
    inst.point = rng.normal_vec(c);
    Batch keys(8);
    for (auto& k : keys) k = rng.normal_vec(c);
    const std::size_t pos = rng.integer(keys.size());
    const double tau = random_tau(rng);
    inst.analytic = infonce_loss(inst.point, keys, pos, tau).grad_q1;
    inst.f = [keys, pos, tau](const Vec& q) { return infonce_loss(q, keys, pos, tau).value; };
  } else if (loss == "ce") {
    inst.point = rng.normal_vec(c);
    const ProbDist t = random_target(rng, dim);
    const double tau = random_tau(rng);
    inst.analytic = ce_loss(inst.point, t, tau).grad_q1;
    inst.f = [t, tau](const Vec& q) { return ce_loss(q, t, tau).value; };
  } else if (loss == "mce") {
    inst.point = rng.normal_vec(c);
    const ProbDist t = random_target(rng, dim);
    const double tau = random_tau(rng);
    inst.analytic = mce_loss(inst.point, t, tau).grad_q1;
    inst.f = [t, tau](const Vec& q) { return mce_loss(q, t, tau).value; };
  } else if (loss == "iccl") {
    inst.point = rng.normal_vec(c);
    const ProbDist t = random_target(rng, dim);
    const double tau1 = random_tau(rng);
    inst.analytic = iccl_loss(inst.point, t, tau1).grad_q1;
    inst.f = [t, tau1](const Vec& q) { return iccl_loss(q, t, tau1).value; };
  } else if (loss == "uniformity_kl") {
    // point = flattened pre-softmax logits of a small batch; differencing
    // cost grows as (rows * dims)^2, so the batch stays small
    const std::size_t n = 4;
    inst.point = rng.normal_vec(n * c, 2.0);
    auto rows_of = [n, c](const Vec& flat) {
      std::vector<ProbDist> rows(n);
      for (std::size_t j = 0; j < n; ++j) {
        rows[j] = softmax_t(Vec(flat.begin() + static_cast<long>(j * c),
                                flat.begin() + static_cast<long>((j + 1) * c)),
                            1.0);
      }
      return rows;
    };
    const UniformityResult r = uniformity_kl(rows_of(inst.point));
    inst.analytic.reserve(n * c);
    for (const auto& row : r.grad_logits) {
      inst.analytic.insert(inst.analytic.end(), row.begin(), row.end());
    }
    inst.f = [rows_of](const Vec& flat) { return uniformity_kl(rows_of(flat)).value; };
  } else if (loss == "final") {
    const std::size_t n = 3;
    TemperatureConfig cfg;
    cfg.tau1 = 0.1;
    cfg.tau2 = 0.07;
    cfg.adaptive_tau1 = AdaptiveTau1::min_rule;
    const double lambda_r = 1.7;
    std::vector<ProbDist> targets(n);
    for (auto& t : targets) t = random_target(rng, dim);
    inst.point = rng.normal_vec(n * c);
    auto batch_of = [n, c](const Vec& flat) {
      Batch b(n);
      for (std::size_t j = 0; j < n; ++j) {
        b[j] = Vec(flat.begin() + static_cast<long>(j * c),
                   flat.begin() + static_cast<long>((j + 1) * c));
      }
      return b;
    };
    const FinalLossResult r = final_loss(batch_of(inst.point), targets, cfg, lambda_r);
    inst.analytic.reserve(n * c);
    for (const auto& row : r.grad_q1) {
      inst.analytic.insert(inst.analytic.end(), row.begin(), row.end());
    }
    inst.f = [batch_of, targets, cfg, lambda_r](const Vec& flat) {
      return final_loss(batch_of(flat), targets, cfg, lambda_r).summary;
    };
  } else {
    throw std::invalid_argument("gradcheck: unknown loss '" + loss + "'");
  }
  return inst;
}

}  // namespace detail

inline GradCheckCase run_gradcheck_case(const std::string& loss, int dim,
                                        const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, std::hash<std::string>{}(loss) ^ static_cast<std::uint64_t>(dim)));
  GradCheckCase out;
  out.loss = loss;
  out.dim = dim;
  for (int t = 0; t < opt.trials; ++t) {
    detail::Instance inst = detail::make_instance(loss, dim, rng);
    if (opt.inject_error && !inst.analytic.empty()) {
      inst.analytic[0] += 1e-3 * (1.0 + std::abs(inst.analytic[0]));
    }
    const Vec numeric = central_diff_grad(inst.f, inst.point, opt.step);
    out.max_rel_err = std::max(out.max_rel_err, grad_rel_err(inst.analytic, numeric));
  }
  out.pass = out.max_rel_err < opt.tol;
  return out;
}

inline std::vector<GradCheckCase> run_gradcheck(const std::vector<std::string>& losses,
                                                const GradCheckOptions& opt) {
  std::vector<GradCheckCase> out;
  for (const auto& loss : losses) {
    for (int dim : opt.dims) {
      out.push_back(run_gradcheck_case(loss, dim, opt));
    }
  }
  return out;
}

// Closed-form gradient-norm identities and the gradient-magnitude ledger,
// swept over random draws. max_rel_dev_* compare the computed squared norm
// against its closed form; bound_violations counts ledger rows where the
// squared norm exceeded its upper bound or drifted from the closed form.
struct IdentitySweep {
  double max_rel_dev_similarity = 0.0;
  double max_rel_dev_mce = 0.0;
  double max_rel_dev_iccl = 0.0;
  int bound_violations = 0;
  int draws = 0;
};

inline IdentitySweep run_identity_sweep(int draws, std::uint64_t seed, int dim = 64) {
  Rng rng(derive_seed(seed, 0x1d317));
  IdentitySweep sweep;
  sweep.draws = draws;
  const std::size_t c = static_cast<std::size_t>(dim);

  auto rel_dev = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
  };

  TemperatureConfig cfg;
  cfg.tau1 = 0.07;
  cfg.tau2 = 0.07;

  for (int d = 0; d < draws; ++d) {
    const Vec q1 = rng.normal_vec(c);
    const Vec z2 = rng.normal_vec(c);
    const ProbDist target = detail::random_target(rng, dim);
    const double nq2 = norm_sq(q1);

    {
      const LossResult r = similarity_loss(q1, z2);
      const double cos = -r.value;
      const double closed = (1.0 - cos * cos) / nq2;
      sweep.max_rel_dev_similarity =
          std::max(sweep.max_rel_dev_similarity, rel_dev(norm_sq(r.grad_q1), closed));
    }
    {
      const double tau = detail::random_tau(rng);
      const LossResult r = mce_loss(q1, target, tau);
      const Vec q1h = l2_normalize(q1);
      const double tn = target.norm();
      const double cos = dot(q1h, target.p) / tn;
      const double closed = tn * tn / (tau * tau * nq2) * (1.0 - cos * cos);
      sweep.max_rel_dev_mce = std::max(sweep.max_rel_dev_mce, rel_dev(norm_sq(r.grad_q1), closed));
    }
    {
      const double tau1 = detail::random_tau(rng);
      const LossResult r = iccl_loss(q1, target, tau1);
      const Vec q1h = l2_normalize(q1);
      const ProbDist pred = softmax_t(q1h, tau1);
      Vec diff(c);
      for (std::size_t i = 0; i < c; ++i) diff[i] = pred.p[i] - target.p[i];
      const double dn = norm(diff);
      const double cos = dot(q1h, diff) / dn;
      const double closed = dn * dn / (tau1 * tau1 * nq2) * (1.0 - cos * cos);
      sweep.max_rel_dev_iccl =
          std::max(sweep.max_rel_dev_iccl, rel_dev(norm_sq(r.grad_q1), closed));
    }

    for (LossKind kind : {LossKind::similarity, LossKind::contrastive, LossKind::ce,
                          LossKind::mce, LossKind::iccl}) {
      const bool wants_target =
          kind == LossKind::ce || kind == LossKind::mce || kind == LossKind::iccl;
      const GradBoundReport rep =
          grad_bound_report(kind, q1, wants_target ? target.p : z2, cfg);
      if (!rep.consistent()) ++sweep.bound_violations;
    }
  }
  return sweep;
}

// Random simplex pairs, every class index checked. Returns violation count.
inline int run_prop1_sweep(int pairs, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9209));
  int violations = 0;
  for (int n = 0; n < pairs; ++n) {
    const int c = 2 + static_cast<int>(rng.integer(31));
    const ProbDist pi = detail::random_target(rng, c);
    const ProbDist pj = detail::random_target(rng, c);
    for (int y = 0; y < c; ++y) {
      if (!prop1_inequality_check(pi, pj, static_cast<std::size_t>(y)).holds) ++violations;
    }
  }
  return violations;
}

}  // namespace iccl
