#include "chc/semilinear.hpp"

#include <cmath>
#include <random>

namespace chc {

NonlinearSpec make_lipschitz_mix(double kappa, double a, double b, double c,
                                 bool omega_dependent) {
  double s = std::fabs(a) + std::fabs(b) + std::fabs(c);
  if (!(s > 0.0)) throw std::invalid_argument("lipschitz_mix: need a nonzero coefficient");
  NonlinearSpec spec;
  spec.name = omega_dependent ? "lipschitz_mix_omega" : "lipschitz_mix";
  spec.kappa = kappa;
  spec.f = [=](double, double, double y, double yx, double yxx, double bval) {
    double mod = omega_dependent ? 0.5 * (1.0 + std::sin(bval)) : 1.0;
    return mod * kappa * (a * y + b * std::sin(yx) + c * std::tanh(yxx)) / s;
  };
  return spec;
}

NonlinearSpec make_cahn_clamped(double kappa, double M) {
  if (!(M > 0.0)) throw std::invalid_argument("cahn_clamped: clamp level must be positive");
  // clamp(y^3 - y, +-M) has Lipschitz constant L_M = max(1, 3 yM^2 - 1) on the
  // active region, yM the positive root of y^3 - y = M
  double yM = 1.0;
  for (int k = 0; k < 200; ++k) yM = std::cbrt(M + yM);
  double LM = std::max(1.0, 3.0 * yM * yM - 1.0);
  NonlinearSpec spec;
  spec.name = "cahn_clamped";
  spec.kappa = kappa;
  spec.f = [=](double, double, double y, double, double, double) {
    double v = y * y * y - y;
    v = std::max(-M, std::min(M, v));
    return kappa * v / LM;
  };
  return spec;
}

NonlinearSpec with_diffusion_g(NonlinearSpec spec, double kappa1) {
  spec.kappa1 = kappa1;
  spec.g = [=](double, double, double y, double yx, double, double) {
    return kappa1 * std::sin(y + 0.5 * yx) / 1.5;
  };
  spec.name += "+g";
  return spec;
}

void certify_nonlinearity(const NonlinearSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.0, 1.0), ux(0.0, 1.0), uv(-5.0, 5.0),
      ub(-2.0, 2.0);
  for (int k = 0; k < 500; ++k) {
    double t = ut(rng), x = ux(rng), b = ub(rng);
    if (std::fabs(spec.f(t, x, 0.0, 0.0, 0.0, b)) > 1e-14)
      throw std::invalid_argument("nonlinearity '" + spec.name + "': f(.,0,0,0) != 0");
    double y1 = uv(rng), p1 = uv(rng), q1 = uv(rng);
    double y2 = uv(rng), p2 = uv(rng), q2 = uv(rng);
    double df = std::fabs(spec.f(t, x, y1, p1, q1, b) - spec.f(t, x, y2, p2, q2, b));
    double bound = spec.kappa * (std::fabs(y1 - y2) + std::fabs(p1 - p2) + std::fabs(q1 - q2));
    if (df > bound * (1.0 + 1e-6) + 1e-14)
      throw std::invalid_argument("nonlinearity '" + spec.name +
                                  "': empirical Lipschitz bound exceeded");
  }
}

XReal s_norm(const AdaptedField& phi, const WeightTable& wt) {
  const auto& p = wt.evaluator().params();
  auto r = weighted_form(phi, -7, -7.0 * std::log(p.lambda) - 8.0 * std::log(p.mu),
                         WeightKind::theta_inv2, Interval{0.0, 1.0}, wt);
  return sqrt(r.value);
}

namespace {

AdaptedField evaluate_f(const NonlinearSpec& nl, const AdaptedField& y, const Grid& g) {
  const Tree& tree = y.tree();
  AdaptedField out(tree, g);
  for (int l = 0; l < tree.slabs(); ++l) {
    double t = tree.time_of(l);
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      Field yf = y.field(l, j);
      Field yx = apply_d1(yf, g), yxx = apply_d2(yf, g);
      double bval = brownian_value(tree, tree.node_level(l), j);
      double* q = out.at(l, j);
      for (int i = 0; i < g.interior(); ++i)
        q[i] = nl.f(t, g.x(i), yf[i], yx[i], yxx[i], bval);
    }
  }
  return out;
}

AdaptedField diff_adapted(const AdaptedField& a, const AdaptedField& b, const Grid& g) {
  AdaptedField out(a.tree(), g);
  for (int l = 0; l < a.tree().levels(); ++l)
    for (int j = 0; j < a.tree().nodes_at(l); ++j) {
      const double* pa = a.at(l, j);
      const double* pb = b.at(l, j);
      double* q = out.at(l, j);
      for (int i = 0; i < g.interior(); ++i) q[i] = pa[i] - pb[i];
    }
  return out;
}

}  // namespace

PicardResult picard_iterate(const LQProblem& base, const NonlinearSpec& nl,
                            const WeightEvaluator& ev, int max_iter, double tol) {
  certify_nonlinearity(nl, 12345);
  const Grid& g = base.grid;
  const Tree& tree = base.tree;
  WeightTable wt(ev.with_eps(base.eps), g, tree);

  PicardResult res;
  AdaptedField phi_prev = constant_adapted(tree, g, 0.0);
  AdaptedXField phi_x = to_xadapted(phi_prev, g);

  int bad_streak = 0;
  XReal d_prev;
  bool have_prev_d = false;

  for (int k = 0; k < max_iter; ++k) {
    AdaptedField phi_used = phi_prev;  // source of this linear solve
    LQProblem p = base;
    p.phi = &phi_x;
    LQSolution sol = solve_lq(p, ev);
    AdaptedField y = to_adapted(sol.y, g);
    AdaptedField phi_next = evaluate_f(nl, y, g);

    // the S-norm logs are astronomically large, so every comparison goes
    // through XReal ratios, never through differences of the logged doubles
    XReal d = s_norm(diff_adapted(phi_next, phi_prev, g), wt);
    res.report.log_d.push_back(d.log_abs());
    res.report.iterations = k + 1;

    if (have_prev_d && !d_prev.is_zero()) {
      double ratio = d.is_zero() ? 0.0 : std::exp((d / d_prev).log_abs());
      res.report.ratios.push_back(ratio);
      res.report.max_ratio = std::max(res.report.max_ratio, ratio);
      res.report.asymptotic_ratio = ratio;
      bad_streak = (ratio > 1.0) ? bad_streak + 1 : 0;
      if (bad_streak >= 3) {
        res.report.diverged = true;
        res.report.diagnostic =
            "picard: contraction ratios exceeded 1 three times in a row; "
            "increase lambda/mu or reduce kappa";
        res.final_solution = std::move(sol);
        res.phi = std::move(phi_next);
        return res;
      }
    }
    d_prev = d;
    have_prev_d = true;

    XReal phin = s_norm(phi_prev, wt);
    XReal thresh = XReal::of(tol) * (phin > XReal::of(1.0) ? phin : XReal::of(1.0));
    phi_prev = phi_next;
    phi_x = to_xadapted(phi_prev, g);

    if (d.is_zero() || compare(d, thresh) <= 0) {
      res.report.converged = true;
      res.report.log_terminal = sol.terminal_norm_sq.log_abs();
      res.final_solution = std::move(sol);
      res.phi = std::move(phi_used);  // the source the returned solve used
      return res;
    }
  }
  res.report.diagnostic = "picard: max_iter reached without meeting the tolerance";
  // final controlled solve with the last source
  LQProblem p = base;
  p.phi = &phi_x;
  res.final_solution = solve_lq(p, ev);
  res.report.log_terminal = res.final_solution.terminal_norm_sq.log_abs();
  res.phi = phi_prev;
  return res;
}

AdaptedField absorb_g(const AdaptedField& U, const NonlinearSpec& nl, const AdaptedField& y,
                      const Grid& g) {
  if (!nl.has_g()) throw std::invalid_argument("absorb_g: spec has no diffusion nonlinearity");
  const Tree& tree = U.tree();
  AdaptedField out(tree, g);
  for (int l = 0; l < tree.levels(); ++l) {
    double t = tree.time_of(std::min(l, tree.slabs() - 1));
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      Field yf = y.field(l, j);
      Field yx = apply_d1(yf, g), yxx = apply_d2(yf, g);
      double bval = brownian_value(tree, tree.node_level(l), j);
      const double* pu = U.at(l, j);
      double* q = out.at(l, j);
      for (int i = 0; i < g.interior(); ++i)
        q[i] = pu[i] - nl.g(t, g.x(i), yf[i], yx[i], yxx[i], bval);
    }
  }
  return out;
}

}  // namespace chc
