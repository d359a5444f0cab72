#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iccl/gradcheck.hpp"
#include "iccl/losses.hpp"
#include "iccl/model.hpp"
#include "iccl/rng.hpp"

using namespace iccl;

namespace {

Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double sigma = 1.0) {
  Mat m(r, c);
  for (auto& v : m.a) v = sigma * rng.normal();
  return m;
}

// all parameters flattened, for finite differencing over the whole network
Vec flatten_params(const MlpNetwork& net) {
  Vec out;
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.w.a.begin(), l.w.a.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
  return out;
}

void unflatten_params(MlpNetwork& net, const Vec& flat) {
  std::size_t k = 0;
  for (auto& l : net.layers) {
    for (auto& v : l.w.a) v = flat[k++];
    for (auto& v : l.b) v = flat[k++];
  }
}

Vec flatten_grads(const MlpGrads& g) {
  Vec out;
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    out.insert(out.end(), g.w[l].a.begin(), g.w[l].a.end());
    out.insert(out.end(), g.b[l].begin(), g.b[l].end());
  }
  return out;
}

}  // namespace

TEST_CASE("forward closed cases") {
  SUBCASE("identity-initialized single layer passes input through") {
    MlpNetwork net;
    Layer l;
    l.w = Mat(3, 3);
    for (int i = 0; i < 3; ++i) l.w.at(i, i) = 1.0;
    l.b.assign(3, 0.0);
    net.layers.push_back(l);

    Rng rng(1);
    const Mat x = random_mat(rng, 4, 3);
    const Mat y = mlp_forward(net, x);
    for (std::size_t i = 0; i < x.a.size(); ++i) CHECK(y.a[i] == x.a[i]);
  }

  SUBCASE("zero weights and relu give zero output") {
    MlpNetwork net;
    Layer l;
    l.w = Mat(5, 3);
    l.b.assign(5, 0.0);
    l.act = Activation::relu;
    net.layers.push_back(l);
    Rng rng(2);
    const Mat y = mlp_forward(net, random_mat(rng, 4, 3));
    for (double v : y.a) CHECK(v == 0.0);
  }

  SUBCASE("repeat calls are bitwise identical") {
    Rng rng(3);
    MlpNetwork net = make_mlp({6, 16, 8}, {Activation::relu, Activation::identity},
                              {true, false}, rng);
    const Mat x = random_mat(rng, 8, 6);
    const Mat a = mlp_forward(net, x);
    const Mat b = mlp_forward(net, x);
    for (std::size_t i = 0; i < a.a.size(); ++i) CHECK(a.a[i] == b.a[i]);
  }

  SUBCASE("dimension mismatch is rejected") {
    Rng rng(4);
    MlpNetwork net = make_mlp({6, 4}, {Activation::identity}, {false}, rng);
    CHECK_THROWS_AS(mlp_forward(net, Mat(3, 5)), std::invalid_argument);
  }
}

TEST_CASE("backward closed cases") {
  SUBCASE("zero upstream gradient means zero parameter gradients") {
    Rng rng(5);
    MlpNetwork net = make_mlp({4, 8, 4}, {Activation::relu, Activation::identity},
                              {false, false}, rng);
    ForwardCache cache;
    mlp_forward(net, random_mat(rng, 6, 4), &cache);
    MlpGrads grads = make_grads_like(net);
    const Mat gin = mlp_backward(net, cache, Mat(6, 4), grads);
    for (const auto& gw : grads.w) {
      for (double v : gw.a) CHECK(v == 0.0);
    }
    for (double v : gin.a) CHECK(v == 0.0);
  }

  SUBCASE("single linear layer, single sample: outer product") {
    Rng rng(6);
    MlpNetwork net = make_mlp({3, 2}, {Activation::identity}, {false}, rng);
    const Mat x = random_mat(rng, 1, 3);
    ForwardCache cache;
    mlp_forward(net, x, &cache);
    Mat gout(1, 2);
    gout.at(0, 0) = 0.7;
    gout.at(0, 1) = -1.3;
    MlpGrads grads = make_grads_like(net);
    mlp_backward(net, cache, gout, grads);
    for (std::size_t o = 0; o < 2; ++o) {
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(grads.w[0].at(o, i) == doctest::Approx(gout.at(0, o) * x.at(0, i)));
      }
      CHECK(grads.b[0][o] == gout.at(0, o));
    }
  }

  SUBCASE("stale cache is rejected") {
    Rng rng(7);
    MlpNetwork net = make_mlp({4, 4}, {Activation::identity}, {false}, rng);
    ForwardCache cache;
    mlp_forward(net, random_mat(rng, 3, 4), &cache);
    MlpGrads grads = make_grads_like(net);
    CHECK_THROWS_AS(mlp_backward(net, cache, Mat(5, 4), grads), std::invalid_argument);
  }
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(8);
  // covers relu, standardize and identity layers
  MlpNetwork net = make_mlp({4, 8, 4}, {Activation::relu, Activation::identity},
                            {true, false}, rng);
  const Mat x = random_mat(rng, 6, 4);
  const Mat gout_fixed = random_mat(rng, 6, 4, 0.5);

  auto scalar = [&](const MlpNetwork& n) {
    const Mat y = mlp_forward(n, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.a.size(); ++i) s += y.a[i] * gout_fixed.a[i];
    return s;
  };

  ForwardCache cache;
  mlp_forward(net, x, &cache);
  MlpGrads grads = make_grads_like(net);
  mlp_backward(net, cache, gout_fixed, grads);
  const Vec analytic = flatten_grads(grads);

  MlpNetwork probe = net;
  const Vec numeric = central_diff_grad(
      [&](const Vec& theta) {
        unflatten_params(probe, theta);
        return scalar(probe);
      },
      flatten_params(net));
  CHECK(grad_rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("loss-through-network gradients match finite differences") {
  Rng rng(9);
  MlpNetwork net = make_mlp({6, 16, 8}, {Activation::relu, Activation::identity},
                            {true, false}, rng);
  const Mat x = random_mat(rng, 5, 6);
  Batch z2(5);
  for (auto& z : z2) z = rng.normal_vec(8);

  auto scalar = [&](const MlpNetwork& n) {
    const Mat q = mlp_forward(n, x);
    double s = 0.0;
    for (std::size_t r = 0; r < q.rows; ++r) {
      s += similarity_loss(q.row_vec(r), z2[r]).value;
    }
    return s / static_cast<double>(q.rows);
  };

  ForwardCache cache;
  const Mat q = mlp_forward(net, x, &cache);
  Mat gout(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    const Vec g = similarity_loss(q.row_vec(r), z2[r]).grad_q1;
    for (std::size_t c = 0; c < q.cols; ++c) gout.at(r, c) = g[c] / static_cast<double>(q.rows);
  }
  MlpGrads grads = make_grads_like(net);
  mlp_backward(net, cache, gout, grads);

  MlpNetwork probe = net;
  const Vec numeric = central_diff_grad(
      [&](const Vec& theta) {
        unflatten_params(probe, theta);
        return scalar(probe);
      },
      flatten_params(net));
  CHECK(grad_rel_err(flatten_grads(grads), numeric) < 1e-4);
}

TEST_CASE("ema update") {
  Rng rng(10);
  MlpNetwork online = make_mlp({4, 4}, {Activation::identity}, {false}, rng);
  MlpNetwork target = make_mlp({4, 4}, {Activation::identity}, {false}, rng);

  SUBCASE("zero momentum copies the online network") {
    ema_update(target, online, 0.0);
    for (std::size_t i = 0; i < online.layers[0].w.a.size(); ++i) {
      CHECK(target.layers[0].w.a[i] == online.layers[0].w.a[i]);
    }
  }

  SUBCASE("a hundred updates close the expected fraction of the gap") {
    const double m = 0.99;
    const double start_gap = target.layers[0].w.a[0] - online.layers[0].w.a[0];
    for (int i = 0; i < 100; ++i) ema_update(target, online, m);
    const double end_gap = target.layers[0].w.a[0] - online.layers[0].w.a[0];
    CHECK(end_gap == doctest::Approx(std::pow(m, 100) * start_gap).epsilon(1e-10));
  }

  SUBCASE("online equal to target is a fixed point") {
    MlpNetwork copy = online;
    ema_update(copy, online, 0.5);
    for (std::size_t i = 0; i < online.layers[0].w.a.size(); ++i) {
      CHECK(copy.layers[0].w.a[i] == online.layers[0].w.a[i]);
    }
  }

  SUBCASE("every update is a contraction toward the online parameters") {
    const double m = 0.7;
    double prev_gap = std::abs(target.layers[0].w.a[3] - online.layers[0].w.a[3]);
    for (int i = 0; i < 10; ++i) {
      ema_update(target, online, m);
      const double gap = std::abs(target.layers[0].w.a[3] - online.layers[0].w.a[3]);
      CHECK(gap <= prev_gap + 1e-15);
      prev_gap = gap;
    }
  }

  SUBCASE("shape mismatch is rejected") {
    Rng rng2(11);
    MlpNetwork other = make_mlp({4, 5}, {Activation::identity}, {false}, rng2);
    CHECK_THROWS_AS(ema_update(other, online, 0.5), std::invalid_argument);
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(10, 100, 0.3, 10) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 0.3, 10) == doctest::Approx(0.0));
  CHECK(std::abs(cosine_lr(50, 100, 0.3, 0) - 0.15) < 1e-12);
  CHECK(cosine_lr(0, 100, 0.3, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(cosine_lr(5, 100, 0.3, 10) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.3, 0), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.3, 0), std::invalid_argument);
}

TEST_CASE("optimizer step") {
  Rng rng(12);
  MlpNetwork net = make_mlp({3, 2}, {Activation::identity}, {false}, rng);
  const Vec before = net.layers[0].w.a;

  SUBCASE("zero gradients and zero weight decay leave parameters alone") {
    OptimizerState st = OptimizerState::make(OptKind::sgd_momentum, 0.1, 0.9, 0.0, net);
    MlpGrads grads = make_grads_like(net);
    optimizer_step(st, net, grads, 0.1);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(net.layers[0].w.a[i] == before[i]);
  }

  SUBCASE("vanilla sgd takes param - lr * grad exactly") {
    OptimizerState st = OptimizerState::make(OptKind::sgd_momentum, 0.1, 0.0, 0.0, net);
    MlpGrads grads = make_grads_like(net);
    for (auto& v : grads.w[0].a) v = 0.5;
    optimizer_step(st, net, grads, 0.1);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(net.layers[0].w.a[i] == before[i] - 0.1 * 0.5);
    }
  }

  SUBCASE("lars trust ratio is about one when norms match") {
    OptimizerState st = OptimizerState::make(OptKind::lars, 0.1, 0.0, 0.0, net);
    MlpGrads grads = make_grads_like(net);
    grads.w[0].a = net.layers[0].w.a;  // ||grad|| == ||param||
    std::fill(grads.b[0].begin(), grads.b[0].end(), 0.0);
    optimizer_step(st, net, grads, 0.1);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(net.layers[0].w.a[i] == doctest::Approx(before[i] - 0.1 * before[i]).epsilon(1e-7));
    }
  }

  SUBCASE("non-finite gradients raise a divergence error") {
    OptimizerState st = OptimizerState::make(OptKind::sgd_momentum, 0.1, 0.9, 0.0, net);
    MlpGrads grads = make_grads_like(net);
    grads.w[0].a[0] = std::nan("");
    CHECK_THROWS_AS(optimizer_step(st, net, grads, 0.1), DivergenceError);
  }
}
