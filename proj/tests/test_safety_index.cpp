#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "safemr/safety_index.hpp"
#include "support.hpp"

using namespace safemr;
using testsupport::uniform;

namespace {

SafetyIndexParams params(double sigma, double k, double n, double d_min = 0.15, double eta = 0.05) {
  SafetyIndexParams p;
  p.sigma = sigma;
  p.k = k;
  p.n = n;
  p.d_min = d_min;
  p.eta_D = eta;
  return p;
}

SafetyIndexParams random_params(std::mt19937_64& rng) {
  return params(uniform(rng, 0.01, 1.0), uniform(rng, 0.01, 3.0), uniform(rng, 1.0, 3.0), uniform(rng, 0.05, 0.6),
                uniform(rng, 0.01, 0.2));
}

DistanceFeature random_feature(std::mt19937_64& rng) { return {uniform(rng, 0.05, 3.0), uniform(rng, -2.0, 2.0)}; }

// Central differences in (sigma, k, n) of a scalar function of the params.
template <class F>
ZetaGradient numeric_grad(const SafetyIndexParams& p, F&& f, double h = 1e-6) {
  ZetaGradient g;
  auto bump = [&](double SafetyIndexParams::*field) {
    SafetyIndexParams hi = p, lo = p;
    hi.*field += h;
    lo.*field -= h;
    return (f(hi) - f(lo)) / (2 * h);
  };
  g.sigma = bump(&SafetyIndexParams::sigma);
  g.k = bump(&SafetyIndexParams::k);
  g.n = bump(&SafetyIndexParams::n);
  return g;
}

// Mixed absolute/relative error: relative above magnitude 1, absolute below.
double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

}  // namespace

TEST_CASE("phi by direct substitution") {
  CHECK(phi(params(0.2, 1, 2), {0.5, -0.1}) == doctest::Approx(-0.0275).epsilon(1e-12));
  // d = sigma + d_min with k = 0 sits on the boundary for any d_dot.
  for (double dd : {-3.0, 0.0, 2.5}) CHECK(phi(params(0.2, 0, 2.7), {0.35, dd}) == doctest::Approx(0.0).scale(1));
}

TEST_CASE("phi at learned-table parameters") {
  // (0.201 + 0.15)^2.084 - 0.3^2.084 + 0.835 * 0.2, evaluated term by term.
  const double base = std::exp(2.084 * std::log(0.351));
  const double dist = std::exp(2.084 * std::log(0.3));
  const double expected = base - dist + 0.835 * 0.2;
  CHECK(phi(params(0.201, 0.835, 2.084), {0.3, -0.2}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.1984857205888566).epsilon(1e-14));
}

TEST_CASE("residual arithmetic on stated energies") {
  // Pick d_dot to realise a target phi with k = 1: phi = c - d^n - d_dot.
  const SafetyIndexParams p = params(0.2, 1.0, 2.0, 0.15, 0.1);
  auto feat = [&](double target) {
    const double d = 0.5;
    return DistanceFeature{d, std::pow(0.35, 2) - d * d - target};
  };
  CHECK(residual(p, feat(0.5), feat(0.3)) == doctest::Approx(-0.1));
  CHECK(residual(p, feat(-0.2), feat(-0.05)) == doctest::Approx(-0.05));
  CHECK(residual(p, feat(-0.2), feat(0.1)) == doctest::Approx(0.1));
}

TEST_CASE("property: residual identities") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const SafetyIndexParams p = random_params(rng);
    const DistanceFeature f = random_feature(rng);
    const double v = phi(p, f);
    CHECK(residual(p, f, f) == doctest::Approx(v - std::max(v - p.eta_D, 0.0)).epsilon(1e-12));
    if (v > p.eta_D) CHECK(residual(p, f, f) == doctest::Approx(p.eta_D).epsilon(1e-9));
    const DistanceFeature g = random_feature(rng);
    CHECK(residual(p, f, g) == doctest::Approx(phi(p, g) - std::max(v - p.eta_D, 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("mag_reg values") {
  CHECK(mag_reg(params(0.5, 1.0, 2.0), {0.0, 0.0}) == 0.0);
  const double expected = 0.35 * std::exp(2.084 * std::log(0.351)) + 0.15 * 0.835;
  CHECK(mag_reg(params(0.201, 0.835, 2.084), {0.35, 0.15}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("property: mag_reg is nonnegative and monotone") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    SafetyIndexParams p = random_params(rng);
    const MagRegWeights w{uniform(rng, 0.01, 1.0), uniform(rng, 0.01, 1.0)};
    const double v = mag_reg(p, w);
    CHECK(v >= 0.0);
    SafetyIndexParams q = p;
    q.sigma += 0.05;
    CHECK(mag_reg(q, w) > v);
    q = p;
    q.k += 0.05;
    CHECK(mag_reg(q, w) > v);
    if (p.sigma + p.d_min > 1.0) {
      q = p;
      q.n += 0.05;
      CHECK(mag_reg(q, w) > v);
    }
  }
}

TEST_CASE("property: phi monotonicity under the stated preconditions") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const SafetyIndexParams p = random_params(rng);
    const DistanceFeature f = random_feature(rng);
    SafetyIndexParams q = p;
    q.sigma += uniform(rng, 1e-3, 0.5);
    CHECK(phi(q, f) > phi(p, f));
    if (f.d_dot < 0) {
      q = p;
      q.k += uniform(rng, 1e-3, 0.5);
      CHECK(phi(q, f) > phi(p, f));
    }
  }
  // n: needs sigma + d_min > 1 > d.
  for (int i = 0; i < 2000; ++i) {
    SafetyIndexParams p = random_params(rng);
    p.sigma = uniform(rng, 0.9, 1.5);
    p.d_min = uniform(rng, 0.2, 0.5);
    if (p.sigma + p.d_min <= 1.0) continue;
    const DistanceFeature f{uniform(rng, 0.01, 0.99), uniform(rng, -2, 2)};
    SafetyIndexParams q = p;
    q.n += uniform(rng, 1e-3, 0.5);
    CHECK(phi(q, f) > phi(p, f));
  }
  // The blanket claim fails when sigma + d_min < 1.
  const SafetyIndexParams p = params(0.2, 1.0, 2.0, 0.15);
  SafetyIndexParams q = p;
  q.n = 2.5;
  CHECK(phi(q, {2.0, 0.0}) < phi(p, {2.0, 0.0}));
}

TEST_CASE("phi_grad closed forms") {
  const SafetyIndexParams p = params(0.2, 1.3, 2.0);
  const ZetaGradient g = phi_grad(p, {0.7, -0.4});
  CHECK(g.sigma == doctest::Approx(0.7));
  CHECK(g.k == 0.4);
  CHECK(g.n == doctest::Approx(0.35 * 0.35 * std::log(0.35) - 0.49 * std::log(0.7)));
}

TEST_CASE("property: analytic gradients match finite differences") {
  std::mt19937_64 rng(4);
  double worst_phi = 0, worst_res = 0, worst_reg = 0;
  for (int i = 0; i < 1000; ++i) {
    const SafetyIndexParams p = random_params(rng);
    const DistanceFeature f = random_feature(rng);
    const DistanceFeature g = random_feature(rng);
    const MagRegWeights w{uniform(rng, 0, 1), uniform(rng, 0, 1)};

    const ZetaGradient a = phi_grad(p, f);
    const ZetaGradient na = numeric_grad(p, [&](const SafetyIndexParams& q) { return phi(q, f); });
    worst_phi = std::max({worst_phi, rel(a.sigma, na.sigma), rel(a.k, na.k), rel(a.n, na.n)});

    // Stay away from the kink of the max branch.
    if (std::abs(phi(p, f) - p.eta_D) > 1e-3) {
      const ZetaGradient b = residual_grad(p, f, g);
      const ZetaGradient nb = numeric_grad(p, [&](const SafetyIndexParams& q) { return residual(q, f, g); });
      worst_res = std::max({worst_res, rel(b.sigma, nb.sigma), rel(b.k, nb.k), rel(b.n, nb.n)});
    }

    const ZetaGradient c = mag_reg_grad(p, w);
    const ZetaGradient nc = numeric_grad(p, [&](const SafetyIndexParams& q) { return mag_reg(q, w); });
    worst_reg = std::max({worst_reg, rel(c.sigma, nc.sigma), rel(c.k, nc.k), rel(c.n, nc.n)});
    CHECK(c.k == w.b);
  }
  CAPTURE(worst_phi);
  CAPTURE(worst_res);
  CAPTURE(worst_reg);
  CHECK(worst_phi < 1e-6);
  CHECK(worst_res < 1e-6);
  CHECK(worst_reg < 1e-6);
}

TEST_CASE("residual gradient branch convention") {
  SafetyIndexParams p = params(0.2, 1.0, 2.0, 0.15, 0.05);
  const DistanceFeature next{0.6, 0.1};
  // phi(now) - eta_D exactly 0 resolves to the zero branch.
  const double c = std::pow(0.35, 2);
  const DistanceFeature tie{0.5, c - 0.25 - 0.05};
  CHECK(phi(p, tie) == doctest::Approx(0.05).epsilon(1e-12));
  const ZetaGradient at_tie = residual_grad(p, tie, next);
  const ZetaGradient zero_branch = phi_grad(p, next);
  if (phi(p, tie) - p.eta_D <= 0.0) {
    CHECK(at_tie.sigma == zero_branch.sigma);
    CHECK(at_tie.k == zero_branch.k);
    CHECK(at_tie.n == zero_branch.n);
  }
  // Well inside the max branch, sigma drops out: d/dsigma [phi(s') - phi(s)] = 0.
  const DistanceFeature hot{0.2, -1.5};
  const ZetaGradient g = residual_grad(p, hot, next);
  CHECK(g.sigma == doctest::Approx(0.0).scale(1));
  CHECK(g.k == doctest::Approx(-next.d_dot + hot.d_dot));
}

TEST_CASE("mag_reg_grad closed forms") {
  const SafetyIndexParams p = params(0.3, 0.9, 2.2);
  const ZetaGradient z = mag_reg_grad(p, {0, 0});
  CHECK(z.sigma == 0.0);
  CHECK(z.k == 0.0);
  CHECK(z.n == 0.0);
  const ZetaGradient g = mag_reg_grad(p, {0.35, 0.15});
  const double base = 0.45;
  CHECK(g.sigma == doctest::Approx(0.35 * 2.2 * std::pow(base, 1.2)));
  CHECK(g.k == 0.15);
  CHECK(g.n == doctest::Approx(0.35 * std::pow(base, 2.2) * std::log(base)));
}

TEST_CASE("distance floor keeps gradients finite at contact") {
  const SafetyIndexParams p = params(0.2, 1.0, 2.5);
  for (double d : {0.0, 1e-9, 1e-3}) {
    const ZetaGradient g = phi_grad(p, {d, -1.0});
    CHECK(std::isfinite(g.n));
    CHECK(std::isfinite(phi(p, {d, -1.0})));
  }
  CHECK(phi(p, {0.0, 0.3}) == phi(p, {kDistanceFloor, 0.3}));
}

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(params(0.0, 0.0, 1.0).validate());
  CHECK_THROWS(params(-0.1, 1, 2).validate());
  CHECK_THROWS(params(0.1, -1, 2).validate());
  CHECK_THROWS(params(0.1, 1, 0.5).validate());
  CHECK_THROWS(params(0.1, 1, 2, 0.0).validate());
  CHECK_THROWS(params(0.1, 1, 2, 0.1, 0.0).validate());
  CHECK_THROWS(params(std::nan(""), 1, 2).validate());
  CHECK_THROWS(MagRegWeights{-0.1, 0.0}.validate());
  CHECK(MagRegWeights{0.0, 0.0}.is_zero());
}
