#include <cmath>
#include <array>
#include <random>
#include <vector>

#include "chc/weights.hpp"
#include "doctest.h"

using namespace chc;

namespace {

WeightParams practical(double lambda = 2.0, double mu = 2.0, double m = 1.0, double T = 0.5) {
  WeightParams p;
  p.lambda = lambda;
  p.mu = mu;
  p.m = m;
  p.T = T;
  p.sigma_paper = false;
  p.sigma_value = 4.0;
  return p;
}

SpatialProfile default_profile() { return make_beta({0.3, 0.7}, {0.4, 0.6}); }

}  // namespace

TEST_CASE("symmetric beta reduces to 4x(1-x)") {
  SpatialProfile pr = default_profile();
  CHECK(pr.x0 == doctest::Approx(0.5));
  CHECK(pr.s == doctest::Approx(0.0));
  for (double x : {0.1, 0.25, 0.5, 0.77, 0.95}) {
    CHECK(pr.beta(x) == doctest::Approx(4.0 * x * (1.0 - x)).epsilon(1e-14));
  }
  CHECK(pr.beta(0.0) == 0.0);
  CHECK(pr.beta(1.0) == 0.0);
  CHECK(pr.beta(0.5) == doctest::Approx(1.0));
  // dense-sampling oracle: min |4(1-2x)| over [0,0.4] u [0.6,1] = 0.8
  CHECK(pr.alpha0 == doctest::Approx(0.8).epsilon(1e-3));
}

TEST_CASE("asymmetric profile is certified") {
  SpatialProfile pr = make_beta({0.1, 0.6}, {0.2, 0.4});
  CHECK(pr.x0 == doctest::Approx(0.3));
  CHECK(pr.beta(pr.x0) == doctest::Approx(1.0));
  CHECK(pr.alpha0 > 0.0);
  // the only critical point sits at x0
  CHECK(std::fabs(pr.beta_x(pr.x0)) < 1e-10);
}

TEST_CASE("make_beta rejections") {
  CHECK_THROWS(make_beta({0.3, 0.7}, {0.2, 0.6}));   // G' not inside G0
  CHECK_THROWS(make_beta({-0.1, 0.7}, {0.4, 0.6}));  // G0 not inside (0,1)
}

TEST_CASE("gamma pieces and gluing") {
  WeightParams p = practical();
  WeightEvaluator ev(p, default_profile());
  const double T = p.T;

  CHECK(ev.gamma(T / 4.0, false) == 1.0);                 // plateau
  CHECK(ev.gamma(0.0, false) == doctest::Approx(2.0));    // 1 + 1
  CHECK(ev.gamma(0.4999 * T, false) == 1.0);
  // gamma(7T/8) = (T/8)^{-m}
  CHECK(ev.gamma(7.0 * T / 8.0, false) == doctest::Approx(std::pow(T / 8.0, -p.m)).epsilon(1e-12));
  CHECK_THROWS(ev.gamma(T, false));
  CHECK_THROWS(ev.gamma(-0.01, false));

  // C2 gluing, monotone bridge and the other evaluator invariants
  auto rep = verify_weight_invariants(ev);
  CHECK(rep.c2_ok);
  CHECK(rep.worst_c2_rel <= 1e-6);
  CHECK(rep.bridge_monotone);
  CHECK(rep.alpha_negative);
  CHECK(rep.ell_negative);
  CHECK(rep.gamma_eps_bounded);
  CHECK(rep.all_ok());
}

TEST_CASE("invariant sweep over (lambda, mu, m, T)") {
  for (auto [lambda, mu, m, T] : std::vector<std::array<double, 4>>{
           {1.0, 2.0, 1.0, 0.25},
           {2.0, 2.0, 1.0, 0.5},
           {5.0, 2.0, 1.0, 0.75},
           {1.0, 3.0, 1.0, 0.5},
           {2.0, 3.0, 2.0, 0.25},
           {4.0, 2.0, 2.0, 0.5},
       }) {
    WeightParams p = practical(lambda, mu, m, T);
    p.eps_shift = T / 8.0;
    WeightEvaluator ev(p, default_profile());
    auto rep = verify_weight_invariants(ev);
    CHECK(rep.all_ok());
  }
}

TEST_CASE("paper sigma underflows to the plateau away from t=0") {
  WeightParams p = practical();
  p.sigma_paper = true;
  WeightEvaluator ev(p, default_profile());
  CHECK(ev.gamma(0.0, false) == doctest::Approx(2.0));
  CHECK(ev.gamma(1e-6 * p.T, false) == 1.0);  // underflow-to-zero of (1-4t/T)^sigma
}

TEST_CASE("shifted gamma equals unshifted before T/2 and is bounded on [0,T]") {
  WeightParams p = practical();
  p.eps_shift = 0.05;
  WeightEvaluator ev(p, default_profile());
  const double T = p.T;
  for (int k = 0; k < 200; ++k) {
    double t = (T / 2.0) * k / 200.0;
    CHECK(ev.gamma(t, true) == ev.gamma(t, false));
  }
  // plateau extends to T/2 + eps
  CHECK(ev.gamma(T / 2.0 + 0.049, true) == 1.0);
  // bounded at t = T: gamma(T - eps)
  CHECK(ev.gamma(T, true) == doctest::Approx(std::pow(p.eps_shift, -p.m)).epsilon(1e-10));
}

TEST_CASE("log weights: spec arithmetic") {
  WeightParams p = practical(2.0, 2.0, 1.0, 0.5);
  WeightEvaluator ev(p, default_profile());

  // at x0 on the plateau: log_xi = ln 1 + mu(10m + 1) = 22
  auto lw = ev.log_weights(p.T / 4.0, 0.5, false);
  CHECK(lw.log_xi == doctest::Approx(22.0).epsilon(1e-12));

  // ell < 0 everywhere, theta in (0,1)
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ux(0.0, 1.0), ut(0.0, p.T * 0.999);
  for (int k = 0; k < 500; ++k) {
    auto w = ev.log_weights(ut(rng), ux(rng), false);
    CHECK(w.ell < 0.0);
  }

  // ell(0,x) = 2 * ell(T/4,x) since gamma(0) = 2, gamma(T/4) = 1
  for (double x : {0.2, 0.5, 0.8}) {
    auto w0 = ev.log_weights(0.0, x, false);
    auto w1 = ev.log_weights(p.T / 4.0, x, false);
    CHECK(w0.ell == doctest::Approx(2.0 * w1.ell).epsilon(1e-12));
  }

  // alpha < 0 for all x
  for (int k = 0; k <= 100; ++k) CHECK(ev.alpha(k / 100.0) < 0.0);
}

TEST_CASE("xi bounds from 0 < beta <= 1") {
  WeightParams p = practical();
  WeightEvaluator ev(p, default_profile());
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> ux(0.001, 0.999), ut(0.0, p.T * 0.99);
  for (int k = 0; k < 300; ++k) {
    double t = ut(rng), x = ux(rng);
    auto w = ev.log_weights(t, x, false);
    double g = ev.gamma(t, false);
    CHECK(w.log_xi >= p.mu * 10.0 * p.m - 1e-9);
    CHECK(w.log_xi <= std::log(g) + p.mu * (10.0 * p.m + 1.0) + 1e-9);
  }
}

TEST_CASE("weight params validation") {
  WeightParams p = practical();
  p.lambda = 0.5;
  CHECK_THROWS(WeightEvaluator(p, default_profile()));
  p = practical();
  p.mu = 1.0;
  CHECK_THROWS(WeightEvaluator(p, default_profile()));
  p = practical();
  p.T = 1.5;
  CHECK_THROWS(WeightEvaluator(p, default_profile()));
  p = practical();
  p.eps_shift = p.T / 2.0;
  CHECK_THROWS(WeightEvaluator(p, default_profile()));
}

TEST_CASE("weighted_form basics: zero, homogeneity, single cell") {
  WeightParams p = practical();
  WeightEvaluator ev(p, default_profile());
  Grid g(8, Bc::clamped);
  Tree tree(2, p.T, 2);
  WeightTable wt(ev, g, tree);
  Interval full{0.0, 1.0};

  AdaptedField z = constant_adapted(tree, g, 0.0);
  auto rz = weighted_form(z, 7, 0.0, WeightKind::theta2, full, wt);
  CHECK(rz.is_zero);
  CHECK(rz.value.is_zero());

  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  AdaptedField v = make_adapted(tree, g, [&](int, int, int) { return n(rng); });
  AdaptedField v2 = make_adapted(tree, g, [&](int l, int j, int i) { return 2.0 * v.at(l, j)[i]; });
  auto r1 = weighted_form(v, 3, 0.7, WeightKind::theta2, full, wt);
  auto r2 = weighted_form(v2, 3, 0.7, WeightKind::theta2, full, wt);
  // quadratic homogeneity; absolute logs are ~ -1e18 so the difference must be
  // taken on the XReal ratio, not on the reported doubles
  CHECK((r2.value / r1.value).log_abs() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // single-cell instance: v = 1 at one (level, node, x); log_value = log w + ln(h dt prob)
  AdaptedField one(tree, g);
  one.at(1, 1)[3] = 1.0;
  auto r3 = weighted_form(one, 2, 0.25, WeightKind::theta_inv2, full, wt);
  XReal expect = wt.weight(1, 3, WeightKind::theta_inv2, 2, 0.25) *
                 (g.h() * tree.dt_noise() / tree.nodes_at(1));
  CHECK(rel_diff(r3.value, expect) < 1e-14);

  CHECK_THROWS(weighted_form(v, 0, 0.0, WeightKind::theta2, Interval{0.41, 0.42}, wt));
}

TEST_CASE("weighted_form region splitting is exact") {
  WeightParams p = practical();
  WeightEvaluator ev(p, default_profile());
  Grid g(16, Bc::clamped);
  Tree tree(3, p.T, 1);
  WeightTable wt(ev, g, tree);
  std::mt19937_64 rng(37);
  std::normal_distribution<double> n(0.0, 1.0);
  AdaptedField v = make_adapted(tree, g, [&](int, int, int) { return n(rng); });

  // split (0,1) at a cell boundary offset so no node is double counted
  double cut = (5 + 0.5) * g.h();
  auto whole = weighted_form(v, 5, -1.2, WeightKind::theta2, {0.0, 1.0}, wt);
  auto left = weighted_form(v, 5, -1.2, WeightKind::theta2, {0.0, cut}, wt);
  auto right = weighted_form(v, 5, -1.2, WeightKind::theta2, {cut, 1.0}, wt);
  CHECK(rel_diff(whole.value, left.value + right.value) < 1e-12);
}

TEST_CASE("theta and theta_eps agree at t=0; table big factors are consistent") {
  WeightParams p = practical();
  p.eps_shift = 0.03;
  WeightEvaluator ev(p, default_profile());
  Grid g(8, Bc::clamped);
  Tree tree(4, p.T, 1);
  WeightTable wt(ev, g, tree);
  for (int i = 0; i < g.interior(); ++i) {
    XReal a = wt.weight(0, i, WeightKind::theta_inv2, 0, 0.0);
    XReal b = wt.weight(0, i, WeightKind::theta_eps_inv2, 0, 0.0);
    CHECK(rel_diff(a, b) == 0.0);  // identical code path at t=0
    XReal t2 = wt.weight(0, i, WeightKind::theta2, 0, 0.0);
    CHECK(rel_diff(t2 * a, XReal::of(1.0)) < 1e-10);  // theta^2 * theta^-2 = 1
  }
}
