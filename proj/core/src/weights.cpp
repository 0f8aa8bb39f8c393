#include "chc/weights.hpp"

#include <cmath>

namespace chc {

void WeightParams::validate() const {
  if (!(lambda >= 1.0)) throw std::invalid_argument("weights: lambda must be >= 1");
  if (!(mu >= 2.0)) throw std::invalid_argument("weights: mu must be >= 2");
  if (!(m >= 1.0)) throw std::invalid_argument("weights: m must be >= 1");
  if (!(T > 0.0 && T < 1.0)) throw std::invalid_argument("weights: T must lie in (0,1)");
  if (!(eps_shift >= 0.0 && eps_shift < T / 4.0))
    throw std::invalid_argument("weights: eps_shift must lie in [0, T/4)");
  if (!sigma_paper && !(sigma_value > 2.0))
    throw std::invalid_argument("weights: sigma override must exceed 2 (C2 gluing at T/4)");
  // alpha(x) = e^{mu(10m+beta)} - mu e^{mu(10m+10)} must stay a finite double
  if (mu * (10.0 * m + 10.0) + std::log(mu) > 700.0)
    throw std::invalid_argument("weights: mu*(10m+10) too large; alpha would overflow");
}

double WeightParams::log_sigma() const {
  if (sigma_paper) return 3.0 * std::log(lambda) + 4.0 * std::log(mu) + mu * (30.0 * m - 6.0);
  return std::log(sigma_value);
}

double SpatialProfile::beta(double x) const {
  return x * (1.0 - x) * std::exp(s * x) / norm_const;
}
double SpatialProfile::beta_x(double x) const {
  double p = x * (1.0 - x);
  return ((1.0 - 2.0 * x) + s * p) * std::exp(s * x) / norm_const;
}
double SpatialProfile::beta_xx(double x) const {
  double p = x * (1.0 - x);
  return (-2.0 + 2.0 * s * (1.0 - 2.0 * x) + s * s * p) * std::exp(s * x) / norm_const;
}
double SpatialProfile::beta_xxx(double x) const {
  double p = x * (1.0 - x);
  return (-6.0 * s + 3.0 * s * s * (1.0 - 2.0 * x) + s * s * s * p) * std::exp(s * x) / norm_const;
}

SpatialProfile make_beta(const Interval& g0, const Interval& gprime) {
  if (!(g0.lo > 0.0 && g0.hi < 1.0 && g0.lo < g0.hi))
    throw std::invalid_argument("make_beta: G0 must be a nonempty open subset of (0,1)");
  if (!gprime.strictly_inside(g0))
    throw std::invalid_argument("make_beta: G' must be compactly inside G0");

  SpatialProfile pr;
  pr.gprime = gprime;
  pr.x0 = gprime.mid();
  pr.s = (2.0 * pr.x0 - 1.0) / (pr.x0 * (1.0 - pr.x0));
  pr.norm_const = pr.x0 * (1.0 - pr.x0) * std::exp(pr.s * pr.x0);

  const int nsamp = 20000;
  int crossings = 0;
  double cross_at = -1.0;
  double prev = pr.beta_x(1e-12);
  double alpha0 = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= nsamp; ++k) {
    double x = static_cast<double>(k) / (nsamp + 1);
    double b = pr.beta(x);
    if (!(b > 0.0 && b <= 1.0 + 1e-12))
      throw std::invalid_argument("make_beta: range certification failed, beta(x) outside (0,1] at x=" +
                                  std::to_string(x));
    double bx = pr.beta_x(x);
    if (prev > 0.0 && bx <= 0.0) {
      ++crossings;
      cross_at = x;
    }
    if (prev < 0.0 && bx >= 0.0) ++crossings;  // a second critical point would show up here
    prev = bx;
    if (!gprime.contains(x)) alpha0 = std::min(alpha0, std::fabs(bx));
  }
  if (crossings != 1)
    throw std::invalid_argument("make_beta: expected exactly one critical point in (0,1), found " +
                                std::to_string(crossings));
  if (!gprime.contains(cross_at))
    throw std::invalid_argument("make_beta: critical point escaped G'");
  if (!(alpha0 > 0.0))
    throw std::invalid_argument("make_beta: |beta'| lower bound on G\\G' is not positive");
  pr.alpha0 = alpha0;

  if (std::fabs(pr.beta(pr.x0) - 1.0) > 1e-12)
    throw std::invalid_argument("make_beta: normalization failed at x0");
  if (std::fabs(pr.beta(0.0)) > 0.0 || std::fabs(pr.beta(1.0)) > 0.0)
    throw std::invalid_argument("make_beta: boundary values must vanish");
  return pr;
}

GammaBridge::GammaBridge(double T, double m) {
  t_lo_ = T / 2.0;
  t_hi_ = 3.0 * T / 4.0;
  double p1 = m * std::log(4.0 / T);
  double d1 = 4.0 * m / T;
  double s1 = 16.0 * m / (T * T);
  build_piece(t_lo_, t_hi_, 0.0, 0.0, 0.0, p1, d1, s1, 0);
}

bool GammaBridge::monotone_on_unit(const double* c) {
  double scale = 0.0;
  for (int k = 1; k <= 5; ++k) scale = std::max(scale, std::fabs(c[k]));
  const double tol = 1e-12 * std::max(1.0, scale);
  for (int k = 0; k <= 2000; ++k) {
    double s = k / 2000.0;
    double dp = c[1] + s * (2 * c[2] + s * (3 * c[3] + s * (4 * c[4] + s * 5 * c[5])));
    if (dp < -tol) return false;
  }
  return true;
}

void GammaBridge::build_piece(double a, double b, double p0, double d0, double s0, double p1,
                              double d1, double s1, int depth) {
  const double w = b - a;
  Piece pc;
  pc.a = a;
  pc.b = b;
  pc.c[0] = p0;
  pc.c[1] = d0 * w;
  pc.c[2] = 0.5 * s0 * w * w;
  const double r1 = p1 - (pc.c[0] + pc.c[1] + pc.c[2]);
  const double r2 = d1 * w - (pc.c[1] + 2.0 * pc.c[2]);
  const double r3 = s1 * w * w - 2.0 * pc.c[2];
  pc.c[3] = 0.5 * (20.0 * r1 - 8.0 * r2 + r3);
  pc.c[4] = 0.5 * (-30.0 * r1 + 14.0 * r2 - 2.0 * r3);
  pc.c[5] = 0.5 * (12.0 * r1 - 6.0 * r2 + r3);

  if (monotone_on_unit(pc.c)) {
    coeff_.push_back(pc);
    return;
  }
  if (depth >= 4)
    throw std::runtime_error("gamma bridge: monotone certification failed after subdivision");
  // bisect with chord-consistent midpoint data; certified recursively
  double tm = 0.5 * (a + b);
  double pm = 0.5 * (p0 + p1);
  double dm = (p1 - p0) / w;
  double sm = 0.5 * (s0 + s1);
  build_piece(a, tm, p0, d0, s0, pm, dm, sm, depth + 1);
  build_piece(tm, b, pm, dm, sm, p1, d1, s1, depth + 1);
}

double GammaBridge::log_gamma(double t) const {
  for (const auto& pc : coeff_) {
    if (t <= pc.b || &pc == &coeff_.back()) {
      double s = (t - pc.a) / (pc.b - pc.a);
      double acc = pc.c[5];
      for (int k = 4; k >= 0; --k) acc = acc * s + pc.c[k];
      return acc;
    }
  }
  throw std::logic_error("gamma bridge: empty");
}

double GammaBridge::log_gamma_deriv(double t, int k) const {
  for (const auto& pc : coeff_) {
    if (t <= pc.b || &pc == &coeff_.back()) {
      double w = pc.b - pc.a;
      double s = (t - pc.a) / w;
      if (k == 1) {
        double acc = 5.0 * pc.c[5];
        acc = acc * s + 4.0 * pc.c[4];
        acc = acc * s + 3.0 * pc.c[3];
        acc = acc * s + 2.0 * pc.c[2];
        acc = acc * s + pc.c[1];
        return acc / w;
      }
      double acc = 20.0 * pc.c[5];
      acc = acc * s + 12.0 * pc.c[4];
      acc = acc * s + 6.0 * pc.c[3];
      acc = acc * s + 2.0 * pc.c[2];
      return acc / (w * w);
    }
  }
  throw std::logic_error("gamma bridge: empty");
}

WeightEvaluator::WeightEvaluator(const WeightParams& p, const SpatialProfile& profile)
    : params_(p), profile_(profile), bridge_(p.T, p.m) {
  params_.validate();
  big_const_ = params_.mu * std::exp(params_.mu * (10.0 * params_.m + 10.0));
}

double WeightEvaluator::gamma(double t, bool shifted) const {
  const double T = params_.T;
  if (t < 0.0) throw std::domain_error("gamma: t < 0");
  if (!shifted && t >= T) throw std::domain_error("gamma: t >= T in unshifted mode");
  if (shifted && t > T) throw std::domain_error("gamma_eps: t > T");

  if (t < T / 4.0) {
    // 1 + (1 - 4t/T)^sigma as exp(sigma ln(.)) with underflow-to-zero semantics
    double w = 1.0 - 4.0 * t / T;
    if (w >= 1.0) return 2.0;
    if (w <= 0.0) return 1.0;
    double lsM = params_.log_sigma() + std::log(-std::log(w));
    double term = (lsM > 40.0) ? 0.0 : std::exp(-std::exp(lsM));
    return 1.0 + term;
  }
  const double eps = shifted ? params_.eps_shift : 0.0;
  if (t < T / 2.0 + eps) return 1.0;
  double tt = t - eps;
  if (tt < 3.0 * T / 4.0) return bridge_.gamma(tt);
  return std::exp(-params_.m * std::log(T - tt));
}

double WeightEvaluator::a_of_x(double x) const {
  return std::exp(params_.mu * (10.0 * params_.m + profile_.beta(x)));
}

WeightEvaluator::LogWeights WeightEvaluator::log_weights(double t, double x, bool shifted) const {
  double g = gamma(t, shifted);
  LogWeights lw;
  lw.ell = params_.lambda * g * alpha(x);
  lw.log_xi = std::log(g) + params_.mu * (10.0 * params_.m + profile_.beta(x));
  return lw;
}

double WeightEvaluator::ell_moderate(double t, double x, bool shifted) const {
  return params_.lambda * gamma(t, shifted) * a_of_x(x);
}

double WeightEvaluator::ell_big(double t, bool shifted) const {
  return params_.lambda * gamma(t, shifted) * big_const_;
}

WeightEvaluator WeightEvaluator::with_eps(double eps) const {
  WeightParams p = params_;
  p.eps_shift = eps;
  return WeightEvaluator(p, profile_);
}

double WeightEvaluator::gamma_dd_side(double t, int side) const {
  const double T = params_.T;
  const double m = params_.m;
  // pick the owning piece: ties go to the side requested
  double probe = t + side * 1e-12 * T;
  if (probe < T / 4.0) {
    // gamma = 1 + w^sigma, w = 1 - 4t/T: gamma'' = (16 sigma(sigma-1)/T^2) w^{sigma-2}
    double w = 1.0 - 4.0 * t / T;
    if (w <= 0.0) return 0.0;
    double ls = params_.log_sigma();
    double sigma = std::exp(ls);
    double lg = ls + std::log1p(-std::exp(-ls)) + (sigma - 2.0) * std::log(w) +
                std::log(16.0 / (T * T)) + ls;
    // handles the paper-sigma underflow: exponent is hugely negative there
    return (lg > 700.0) ? std::numeric_limits<double>::infinity() : std::exp(lg);
  }
  if (probe < T / 2.0) return 0.0;
  if (probe < 3.0 * T / 4.0) return bridge_.gamma_dd(t);
  return m * (m + 1.0) * std::pow(T - t, -m - 2.0);
}

WeightTable::WeightTable(const WeightEvaluator& ev, const Grid& grid, const Tree& tree)
    : ev_(ev), grid_(grid), tree_(tree) {
  const auto& p = ev_.params();
  if (std::fabs(p.T - tree.T) > 1e-15)
    throw std::invalid_argument("weight table: tree horizon differs from weight T");
  const int nx = grid.interior();
  a_.resize(nx);
  mu_beta_.resize(nx);
  for (int i = 0; i < nx; ++i) {
    double x = grid.x(i);
    mu_beta_[i] = p.mu * (10.0 * p.m + ev_.profile().beta(x));
    a_[i] = std::exp(mu_beta_[i]);
  }
  const int R = rows();
  gamma_.resize(R);
  gamma_eps_.resize(R);
  big_theta2_.resize(R);
  big_inv2_.resize(R);
  big_eps_inv2_.resize(R);
  const double dt_sub = tree.dt_sub();
  for (int r = 0; r < R; ++r) {
    // slab boundaries hit time_of() exactly; substep rows subdivide
    double t = (r % tree.substeps == 0) ? tree.time_of(r / tree.substeps) : r * dt_sub;
    gamma_[r] = ev_.gamma(t, false);
    gamma_eps_[r] = ev_.gamma(t, true);
    double eb = p.lambda * gamma_[r] * ev_.big_const();
    double eb_eps = p.lambda * gamma_eps_[r] * ev_.big_const();
    if (2.0 * std::max(eb, eb_eps) > 5.0e37)
      throw std::overflow_error("weight table: exponent range exceeded; reduce gamma range or mu*m");
    big_theta2_[r] = XReal::exp_log(-2.0 * eb);
    big_inv2_[r] = XReal::exp_log(2.0 * eb);
    big_eps_inv2_[r] = XReal::exp_log(2.0 * eb_eps);
  }
}

double WeightTable::gamma_at(int level, bool shifted) const {
  return shifted ? gamma_eps_.at(row_of(level)) : gamma_.at(row_of(level));
}

XReal WeightTable::weight_row(int row, int x_index, WeightKind kind, int xi_power,
                              double c_log) const {
  const auto& p = ev_.params();
  const double logxi = std::log(gamma_[row]) + mu_beta_[x_index];
  double mod = c_log + xi_power * logxi;
  const XReal* big = nullptr;
  switch (kind) {
    case WeightKind::theta2:
      mod += 2.0 * p.lambda * gamma_[row] * a_[x_index];
      big = &big_theta2_[row];
      break;
    case WeightKind::theta_inv2:
      mod -= 2.0 * p.lambda * gamma_[row] * a_[x_index];
      big = &big_inv2_[row];
      break;
    case WeightKind::theta_eps_inv2:
      mod -= 2.0 * p.lambda * gamma_eps_[row] * a_[x_index];
      big = &big_eps_inv2_[row];
      break;
  }
  return XReal::exp_log(mod) * (*big);
}

namespace {

template <class S>
WeightedFormResult weighted_form_impl(const Adapted<S>& v, int xi_power, double c_log,
                                      WeightKind kind, const Interval& region,
                                      const WeightTable& wt) {
  const Grid& g = wt.grid();
  const Tree& tree = wt.tree();
  std::vector<int> idx;
  for (int i = 0; i < g.interior(); ++i)
    if (region.contains(g.x(i))) idx.push_back(i);
  if (idx.empty()) throw std::invalid_argument("weighted_form: empty region");

  const double dt = tree.dt_noise();
  WeightedFormResult res;
  res.is_zero = true;
  XReal acc;
  for (int l = 0; l < tree.slabs(); ++l) {
    const double prob = 1.0 / tree.nodes_at(l);
    const double cell = g.h() * dt * prob;
    for (int i : idx) {
      XReal w = wt.weight(l, i, kind, xi_power, c_log) * cell;
      XReal s;
      for (int j = 0; j < tree.nodes_at(l); ++j) {
        XReal x = XReal::of(1.0) * v.at(l, j)[i];  // promotes double and XReal alike
        if (!x.is_zero()) res.is_zero = false;
        s += x * x;
      }
      acc += w * s;
    }
  }
  res.value = acc;
  return res;
}

}  // namespace

WeightedFormResult weighted_form(const AdaptedField& v, int xi_power, double c_log,
                                 WeightKind kind, const Interval& region, const WeightTable& wt) {
  return weighted_form_impl(v, xi_power, c_log, kind, region, wt);
}
WeightedFormResult weighted_form(const AdaptedXField& v, int xi_power, double c_log,
                                 WeightKind kind, const Interval& region, const WeightTable& wt) {
  return weighted_form_impl(v, xi_power, c_log, kind, region, wt);
}

WeightInvariantReport verify_weight_invariants(const WeightEvaluator& ev) {
  const auto& p = ev.params();
  const double T = p.T;
  WeightInvariantReport rep;

  // C2 gluing: analytic one-sided limits of gamma'' must agree, and one-sided
  // finite differences of the public gamma() must match them. The tolerance is
  // relative to the curvature scale of the adjacent pieces; a bare FD second
  // difference near a zero-curvature junction would sit at its noise floor.
  const double d = 2e-5 * T;
  auto g = [&](double t) { return ev.gamma(t, false); };
  auto d1_side = [&](double t, double s) {
    // one-sided 4-point stencil, O(d^3)
    return (-11.0 * g(t) + 18.0 * g(t + s * d) - 9.0 * g(t + 2.0 * s * d) +
            2.0 * g(t + 3.0 * s * d)) /
           (6.0 * s * d);
  };
  auto d2_side = [&](double t, double s) {
    // one-sided 5-point stencil, O(d^3)
    return (35.0 * g(t) - 104.0 * g(t + s * d) + 114.0 * g(t + 2.0 * s * d) -
            56.0 * g(t + 3.0 * s * d) + 11.0 * g(t + 4.0 * s * d)) /
           (12.0 * d * d);
  };
  rep.c2_ok = true;
  for (double tj : {T / 4.0, T / 2.0, 3.0 * T / 4.0}) {
    double al = ev.gamma_dd_side(tj, -1), ar = ev.gamma_dd_side(tj, +1);
    // curvature and slope scales over the two adjacent pieces
    double scale = std::max(std::fabs(al), std::fabs(ar));
    double slope_scale = 0.0;
    for (int k = 1; k <= 64; ++k) {
      double off = (T / 4.0) * k / 65.0;
      if (tj - off > 0.0) {
        scale = std::max(scale, std::fabs(ev.gamma_dd_side(tj - off, -1)));
        slope_scale = std::max(slope_scale, std::fabs(d1_side(tj - off, -1.0)));
      }
      if (tj + off < T) {
        scale = std::max(scale, std::fabs(ev.gamma_dd_side(tj + off, +1)));
        slope_scale = std::max(slope_scale, std::fabs(d1_side(tj + off, +1.0)));
      }
    }
    double denom = 1.0 + scale;
    double v_rel = std::fabs(g(tj - 1e-13 * T) - g(tj + 1e-13 * T)) / (1.0 + std::fabs(g(tj)));
    double d1l = d1_side(tj, -1.0), d1r = d1_side(tj, +1.0);
    double d1_rel = std::fabs(d1l - d1r) / (1.0 + slope_scale + std::fabs(d1l) + std::fabs(d1r));
    double a_rel = std::fabs(al - ar) / denom;
    double fd_rel = std::max(std::fabs(d2_side(tj, -1.0) - al), std::fabs(d2_side(tj, +1.0) - ar)) / denom;
    double worst = std::max({v_rel, d1_rel, a_rel, fd_rel});
    rep.worst_c2_rel = std::max(rep.worst_c2_rel, worst);
    if (worst > 1e-6) rep.c2_ok = false;
  }

  // sampled monotonicity of gamma on [T/2, 3T/4)
  rep.bridge_monotone = true;
  double prev = g(T / 2.0);
  for (int k = 1; k <= 10000; ++k) {
    double t = T / 2.0 + (T / 4.0) * k / 10001.0;
    double cur = g(t);
    if (cur < prev * (1.0 - 1e-12)) rep.bridge_monotone = false;
    prev = cur;
  }

  // alpha < 0 and ell < 0 on dense samples
  rep.alpha_negative = true;
  rep.ell_negative = true;
  for (int k = 0; k <= 10000; ++k) {
    double x = k / 10000.0;
    if (!(ev.alpha(x) < 0.0)) rep.alpha_negative = false;
  }
  for (int kt = 0; kt <= 100; ++kt) {
    double t = T * kt / 101.0;
    for (int kx = 0; kx <= 100; ++kx) {
      if (!(ev.log_weights(t, kx / 100.0, false).ell < 0.0)) rep.ell_negative = false;
    }
  }

  // gamma_eps bounded on [0,T], equal to gamma before T/2
  rep.gamma_eps_bounded = true;
  rep.gamma_eps_matches_early = true;
  const double tmax = p.eps_shift > 0.0 ? T : T * (1.0 - 1e-9);
  for (int k = 0; k <= 2000; ++k) {
    double t = tmax * k / 2000.0;
    double ge = ev.gamma(t, true);
    if (!std::isfinite(ge)) rep.gamma_eps_bounded = false;
    if (t < T / 2.0 && ge != ev.gamma(t, false)) rep.gamma_eps_matches_early = false;
  }

  // theta(0,x) = theta_eps(0,x): the shift only acts past T/2
  rep.theta0_matches = true;
  for (int k = 0; k <= 200; ++k) {
    double x = k / 200.0;
    if (ev.log_weights(0.0, x, false).ell != ev.log_weights(0.0, x, true).ell)
      rep.theta0_matches = false;
  }
  return rep;
}

XReal weighted_slice(const AdaptedField& v, int level, int xi_power, double c_log, WeightKind kind,
                     const Interval& region, const WeightTable& wt) {
  const Grid& g = wt.grid();
  const Tree& tree = wt.tree();
  XReal acc;
  const double prob = 1.0 / tree.nodes_at(level);
  bool any = false;
  for (int i = 0; i < g.interior(); ++i) {
    if (!region.contains(g.x(i))) continue;
    any = true;
    XReal w = wt.weight(level, i, kind, xi_power, c_log) * (g.h() * prob);
    XReal s;
    for (int j = 0; j < tree.nodes_at(level); ++j) {
      double x = v.at(level, j)[i];
      s += XReal::of(x) * XReal::of(x);
    }
    acc += w * s;
  }
  if (!any) throw std::invalid_argument("weighted_slice: empty region");
  return acc;
}

}  // namespace chc
