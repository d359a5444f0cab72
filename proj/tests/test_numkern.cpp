#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iccl/gradcheck.hpp"
#include "iccl/numkern.hpp"
#include "iccl/rng.hpp"

using namespace iccl;

TEST_CASE("softmax of equal logits is uniform") {
  const ProbDist p = softmax_t({0.0, 0.0, 0.0, 0.0}, 1.0);
  for (double v : p.p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax survives huge logits via max shift") {
  const ProbDist p = softmax_t({1000.0, 0.0}, 1.0);
  CHECK(std::isfinite(p.p[0]));
  CHECK(std::isfinite(p.p[1]));
  CHECK(p.p[0] > 1.0 - 1e-12);
  CHECK(p.p[1] >= 0.0);
  p.validate();
}

TEST_CASE("softmax matches high-precision reference at tau = 0.07") {
  // reference computed with 50-digit arithmetic for inputs [1, 0]
  const double ref0 = 0.9999993751254395221505;
  const double ref1 = 6.248745604778495311953e-7;
  const ProbDist p = softmax_t({1.0, 0.0}, 0.07);
  CHECK(p.p[0] == doctest::Approx(ref0).epsilon(1e-14));
  CHECK(p.p[1] == doctest::Approx(ref1).epsilon(1e-14));
}

TEST_CASE("softmax properties over random draws") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.integer(63));
    const Vec x = rng.normal_vec(c, 3.0);
    const double tau = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    const ProbDist p = softmax_t(x, tau);

    double sum = 0.0;
    for (double v : p.p) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);

    // shift invariance
    Vec shifted = x;
    const double shift = rng.uniform(-5.0, 5.0);
    for (auto& v : shifted) v += shift;
    const ProbDist q = softmax_t(shifted, tau);
    for (int i = 0; i < c; ++i) CHECK(std::abs(p.p[i] - q.p[i]) < 1e-9);

    // argmax preservation
    std::size_t ax = 0, ap = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      if (x[i] > x[ax]) ax = i;
      if (p.p[i] > p.p[ap]) ap = i;
    }
    CHECK(ax == ap);

    // simplex l2 norm bounds
    const double n = p.norm();
    CHECK(n >= 1.0 / std::sqrt(static_cast<double>(c)) - 1e-12);
    CHECK(n <= 1.0 + 1e-12);
  }
}

TEST_CASE("softmax rejects bad input") {
  CHECK_THROWS_AS(softmax_t({1.0, 2.0}, 0.0), std::domain_error);
  CHECK_THROWS_AS(softmax_t({1.0, 2.0}, -1.0), std::domain_error);
  CHECK_THROWS_AS(softmax_t({1.0, std::nan("")}, 1.0), std::domain_error);
  CHECK_THROWS(softmax_t({1.0}, 1.0));
}

TEST_CASE("l2_normalize basics") {
  const Vec u = l2_normalize({3.0, 4.0});
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));

  // idempotence on an already unit vector
  const Vec v = l2_normalize(u);
  CHECK(v[0] == doctest::Approx(u[0]).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(u[1]).epsilon(1e-15));

  Rng rng(11);
  const Vec w = l2_normalize(rng.normal_vec(256));
  CHECK(std::abs(norm(w) - 1.0) < 1e-12);

  CHECK_THROWS_AS(l2_normalize(Vec(8, 0.0)), std::domain_error);
}

TEST_CASE("normalize_jacobian_apply closed cases") {
  const Vec out = normalize_jacobian_apply({2.0, 0.0}, {0.0, 1.0});
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-15));

  // radial directions are annihilated
  const Vec zero = normalize_jacobian_apply({1.0, 2.0, -3.0}, {2.0, 4.0, -6.0});
  for (double v : zero) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("normalize_jacobian_apply matches finite differences and is tangent") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = rng.normal_vec(8);
    const Vec g = rng.normal_vec(8);
    const Vec analytic = normalize_jacobian_apply(x, g);

    const Vec numeric = central_diff_grad(
        [&g](const Vec& p) { return dot(l2_normalize(p), g); }, x);
    CHECK(grad_rel_err(analytic, numeric) < 1e-6);

    CHECK(std::abs(dot(analytic, x)) <= 1e-9 * norm(g) * norm(x));
  }
}
