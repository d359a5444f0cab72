#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iccl/errors.hpp"
#include "iccl/numkern.hpp"
#include "iccl/rng.hpp"

namespace iccl {

// Dense row-major matrix; rows index samples in activations and output
// units in weights.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }

  Vec row_vec(std::size_t r) const {
    return Vec(a.begin() + static_cast<long>(r * cols),
               a.begin() + static_cast<long>((r + 1) * cols));
  }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

enum class Activation { relu, identity };

// One dense layer: linear, then optional batch standardization (subtract
// batch mean, divide by batch std + 1e-5; no learnable scale/shift), then
// the activation.
struct Layer {
  Mat w;  // out x in
  Vec b;  // out
  Activation act = Activation::identity;
  bool standardize = false;

  std::size_t in_dim() const { return w.cols; }
  std::size_t out_dim() const { return w.rows; }
};

struct MlpNetwork {
  std::vector<Layer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

// Centered uniform init scaled by 1/sqrt(fan_in); biases start at zero.
inline MlpNetwork make_mlp(const std::vector<std::size_t>& dims,
                           const std::vector<Activation>& acts,
                           const std::vector<bool>& standardize, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1 ||
      standardize.size() != dims.size() - 1) {
    throw std::invalid_argument("make_mlp: inconsistent layer spec");
  }
  MlpNetwork net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.w = Mat(dims[l + 1], dims[l]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (auto& v : layer.w.a) v = rng.uniform(-scale, scale);
    layer.b.assign(dims[l + 1], 0.0);
    layer.act = acts[l];
    layer.standardize = standardize[l];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

struct LayerCache {
  Mat input;
  Mat lin;      // post-linear
  Mat std_out;  // post-standardize (if enabled)
  Vec mu, sigma;
  Mat out;  // post-activation
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::size_t in_dim = 0;
  std::size_t batch = 0;
};

inline constexpr double kStdEps = 1e-5;

inline Mat mlp_forward(const MlpNetwork& net, const Mat& x, ForwardCache* cache = nullptr) {
  if (net.layers.empty()) throw std::invalid_argument("mlp_forward: empty network");
  if (x.cols != net.in_dim()) {
    throw std::invalid_argument("mlp_forward: input dim " + std::to_string(x.cols) +
                                " != " + std::to_string(net.in_dim()));
  }
  if (x.rows == 0) throw std::invalid_argument("mlp_forward: empty batch");

  if (cache) {
    cache->layers.assign(net.layers.size(), {});
    cache->in_dim = x.cols;
    cache->batch = x.rows;
  }

  Mat cur = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    const std::size_t n = cur.rows, in = layer.in_dim(), out = layer.out_dim();

    Mat lin(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = cur.a.data() + r * in;
      double* yr = lin.a.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wr = layer.w.a.data() + o * in;
        double s = layer.b[o];
        for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
        yr[o] = s;
      }
    }

    Mat next = lin;
    Vec mu, sigma;
    if (layer.standardize) {
      mu.assign(out, 0.0);
      sigma.assign(out, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) mu[o] += lin.at(r, o);
      }
      for (auto& v : mu) v /= static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
          const double d = lin.at(r, o) - mu[o];
          sigma[o] += d * d;
        }
      }
      for (auto& v : sigma) v = std::sqrt(v / static_cast<double>(n));
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
          next.at(r, o) = (lin.at(r, o) - mu[o]) / (sigma[o] + kStdEps);
        }
      }
    }
    Mat std_out = layer.standardize ? next : Mat{};

    if (layer.act == Activation::relu) {
      for (auto& v : next.a) v = v > 0.0 ? v : 0.0;
    }

    if (cache) {
      LayerCache& lc = cache->layers[l];
      lc.input = std::move(cur);
      lc.lin = std::move(lin);
      lc.std_out = std::move(std_out);
      lc.mu = std::move(mu);
      lc.sigma = std::move(sigma);
      lc.out = next;
    }
    cur = std::move(next);
  }
  return cur;
}

// Gradient containers mirror the parameter shapes.
struct MlpGrads {
  std::vector<Mat> w;
  std::vector<Vec> b;
};

inline MlpGrads make_grads_like(const MlpNetwork& net) {
  MlpGrads g;
  for (const auto& layer : net.layers) {
    g.w.emplace_back(layer.w.rows, layer.w.cols);
    g.b.emplace_back(layer.b.size(), 0.0);
  }
  return g;
}

inline void zero_grads(MlpGrads& g) {
  for (auto& m : g.w) std::fill(m.a.begin(), m.a.end(), 0.0);
  for (auto& v : g.b) std::fill(v.begin(), v.end(), 0.0);
}

// Reverse pass. Accumulates parameter gradients into `grads` (callers can
// run several backward passes per step, e.g. for the symmetrized loss) and
// returns the gradient with respect to the forward input.
inline Mat mlp_backward(const MlpNetwork& net, const ForwardCache& cache,
                        const Mat& grad_out, MlpGrads& grads) {
  if (cache.layers.size() != net.layers.size()) {
    throw std::invalid_argument("mlp_backward: cache does not match network");
  }
  if (grads.w.size() != net.layers.size()) {
    throw std::invalid_argument("mlp_backward: grads do not match network");
  }
  if (grad_out.rows != cache.batch || grad_out.cols != net.out_dim()) {
    throw std::invalid_argument("mlp_backward: grad_out shape mismatch");
  }

  Mat g = grad_out;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const LayerCache& lc = cache.layers[li];
    const std::size_t n = g.rows, out = layer.out_dim(), in = layer.in_dim();
    if (lc.input.rows != n || lc.input.cols != in) {
      throw std::invalid_argument("mlp_backward: stale cache at layer " + std::to_string(li));
    }

    if (layer.act == Activation::relu) {
      const Mat& pre = layer.standardize ? lc.std_out : lc.lin;
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
          if (pre.at(r, o) <= 0.0) g.at(r, o) = 0.0;
        }
      }
    }

    if (layer.standardize) {
      // y = (x - mu) / s with s = sigma + eps and batch stats. Per unit:
      //   dx_r = (g_r - mean(g)) / s - xhat_r * sum(g * xhat) / (N * sigma)
      // where xhat = (x - mu) / s. sigma == 0 means xhat == 0, so the
      // second term is dropped rather than divided through.
      Mat gx(n, out);
      for (std::size_t o = 0; o < out; ++o) {
        const double s = lc.sigma[o] + kStdEps;
        double gmean = 0.0, gdotx = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double xhat = (lc.lin.at(r, o) - lc.mu[o]) / s;
          gmean += g.at(r, o);
          gdotx += g.at(r, o) * xhat;
        }
        gmean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const double xhat = (lc.lin.at(r, o) - lc.mu[o]) / s;
          double v = (g.at(r, o) - gmean) / s;
          if (lc.sigma[o] > 0.0) {
            v -= xhat * gdotx / (static_cast<double>(n) * lc.sigma[o]);
          }
          gx.at(r, o) = v;
        }
      }
      g = std::move(gx);
    }

    Mat& gw = grads.w[li];
    Vec& gb = grads.b[li];
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = lc.input.a.data() + r * in;
      const double* gr = g.a.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        double* gwr = gw.a.data() + o * in;
        const double go = gr[o];
        for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        gb[o] += go;
      }
    }

    Mat gin(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.a.data() + r * out;
      double* gi = gin.a.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wr = layer.w.a.data() + o * in;
        const double go = gr[o];
        for (std::size_t i = 0; i < in; ++i) gi[i] += go * wr[i];
      }
    }
    g = std::move(gin);
  }
  return g;
}

// target <- m * target + (1 - m) * online, for every parameter. The target
// network is only ever written through this; the optimizer never sees it.
inline void ema_update(MlpNetwork& target, const MlpNetwork& online, double m) {
  if (!(m >= 0.0) || m >= 1.0) {
    throw std::invalid_argument("ema_update: momentum must be in [0, 1)");
  }
  if (target.layers.size() != online.layers.size()) {
    throw std::invalid_argument("ema_update: layer count mismatch");
  }
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    Layer& t = target.layers[l];
    const Layer& o = online.layers[l];
    if (!t.w.same_shape(o.w) || t.b.size() != o.b.size()) {
      throw std::invalid_argument("ema_update: shape mismatch at layer " + std::to_string(l));
    }
    for (std::size_t i = 0; i < t.w.a.size(); ++i) {
      t.w.a[i] = m * t.w.a[i] + (1.0 - m) * o.w.a[i];
    }
    for (std::size_t i = 0; i < t.b.size(); ++i) {
      t.b[i] = m * t.b[i] + (1.0 - m) * o.b[i];
    }
  }
}

// Linear warmup to lr_base, then cosine decay to zero at total_steps.
inline double cosine_lr(long step, long total_steps, double lr_base, long warmup_steps) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: step out of range");
  }
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument("cosine_lr: warmup_steps out of range");
  }
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr_base * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

enum class OptKind { sgd_momentum, lars };

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd_momentum;
  if (s == "lars") return OptKind::lars;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

// Momentum SGD with decoupled-from-nothing weight decay folded into the
// gradient; LARS additionally rescales the per-tensor learning rate by the
// trust ratio ||param|| / (||grad + wd*param|| + 1e-9), clamped to [0, 10].
struct OptimizerState {
  OptKind kind = OptKind::sgd_momentum;
  double lr_base = 0.2;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  std::vector<Mat> vel_w;
  std::vector<Vec> vel_b;

  static OptimizerState make(OptKind kind, double lr, double momentum, double wd,
                             const MlpNetwork& net) {
    OptimizerState st;
    st.kind = kind;
    st.lr_base = lr;
    st.momentum = momentum;
    st.weight_decay = wd;
    for (const auto& layer : net.layers) {
      st.vel_w.emplace_back(layer.w.rows, layer.w.cols);
      st.vel_b.emplace_back(layer.b.size(), 0.0);
    }
    return st;
  }
};

namespace detail {

inline void step_tensor(OptKind kind, std::span<double> param, std::span<const double> grad,
                        std::span<double> vel, double lr, double momentum, double wd) {
  for (double gv : grad) {
    if (!std::isfinite(gv)) {
      throw DivergenceError("optimizer_step: non-finite gradient");
    }
  }
  double trust = 1.0;
  if (kind == OptKind::lars) {
    double pn = 0.0, gn = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
      pn += param[i] * param[i];
      const double gi = grad[i] + wd * param[i];
      gn += gi * gi;
    }
    trust = std::sqrt(pn) / (std::sqrt(gn) + 1e-9);
    trust = std::min(trust, 10.0);
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = momentum * vel[i] + grad[i] + wd * param[i];
    param[i] -= lr * trust * vel[i];
  }
}

}  // namespace detail

inline void optimizer_step(OptimizerState& st, MlpNetwork& net, const MlpGrads& grads,
                           double lr) {
  if (st.vel_w.size() != net.layers.size() || grads.w.size() != net.layers.size()) {
    throw std::invalid_argument("optimizer_step: shape mismatch");
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    if (!grads.w[l].same_shape(layer.w) || grads.b[l].size() != layer.b.size()) {
      throw std::invalid_argument("optimizer_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    }
    detail::step_tensor(st.kind, layer.w.a, grads.w[l].a, st.vel_w[l].a, lr, st.momentum,
                        st.weight_decay);
    detail::step_tensor(st.kind, layer.b, grads.b[l], st.vel_b[l], lr, st.momentum,
                        st.weight_decay);
  }
}

}  // namespace iccl
