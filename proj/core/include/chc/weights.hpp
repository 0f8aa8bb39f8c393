#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "chc/filtration.hpp"
#include "chc/grid.hpp"
#include "chc/xreal.hpp"

namespace chc {

struct Interval {
  double lo = 0.0, hi = 0.0;
  bool contains(double x) const { return x > lo && x < hi; }
  bool strictly_inside(const Interval& outer) const { return lo > outer.lo && hi < outer.hi; }
  double mid() const { return 0.5 * (lo + hi); }
};

struct WeightParams {
  double lambda = 2.0;  // >= 1
  double mu = 2.0;      // >= 2
  double m = 1.0;       // >= 1
  double T = 0.5;       // in (0,1)
  bool sigma_paper = false;
  double sigma_value = 4.0;  // used when !sigma_paper; must be > 2 for C2 gluing
  double eps_shift = 0.0;    // epsilon of gamma_eps; < T/4

  void validate() const;
  double log_sigma() const;  // ln(sigma)
};

// Spatial bump beta(x) = x(1-x)e^{sx} / (x0(1-x0)e^{s x0}), s = (2x0-1)/(x0(1-x0)).
// Single interior maximum at x0 (midpoint of G'), boundary values 0, and a
// certified positive lower bound alpha0 of |beta'| outside G'.
struct SpatialProfile {
  double x0 = 0.5;
  double s = 0.0;
  double norm_const = 0.25;
  double alpha0 = 0.0;
  Interval gprime{0.4, 0.6};

  double beta(double x) const;
  double beta_x(double x) const;
  double beta_xx(double x) const;
  double beta_xxx(double x) const;
};

// Builds and numerically certifies the profile (dense sampling, >= 1e4 points).
// Throws std::invalid_argument with a diagnostic on any certification failure.
SpatialProfile make_beta(const Interval& g0, const Interval& gprime);

// C2-monotone bridge for gamma on [T/2, 3T/4): quintic interpolation of
// ln(gamma) matching value and two derivatives at both ends; sampled
// monotonicity certificate with a bisecting piecewise fallback.
class GammaBridge {
 public:
  GammaBridge() = default;
  GammaBridge(double T, double m);
  double log_gamma(double t) const;
  double gamma(double t) const { return std::exp(log_gamma(t)); }
  // analytic d^k/dt^k of ln(gamma), k = 1 or 2
  double log_gamma_deriv(double t, int k) const;
  // analytic gamma'' from the polynomial: gamma (p'' + p'^2)
  double gamma_dd(double t) const {
    double p1 = log_gamma_deriv(t, 1), p2 = log_gamma_deriv(t, 2);
    return gamma(t) * (p2 + p1 * p1);
  }
  int pieces() const { return static_cast<int>(coeff_.size()); }

 private:
  struct Piece {
    double a, b;        // interval
    double c[6];        // ln gamma = sum c_k s^k, s = (t-a)/(b-a)
  };
  void build_piece(double a, double b, double p0, double d0, double s0, double p1, double d1,
                   double s1, int depth);
  static bool monotone_on_unit(const double* c);
  std::vector<Piece> coeff_;
  double t_lo_ = 0.0, t_hi_ = 0.0;
};

// Evaluates every Carleman weight ingredient in overflow-safe split form:
//   ell(t,x) = lambda*gamma(t)*alpha(x),  alpha = a(x) - A,
//   a(x) = e^{mu(10m+beta)},              A = mu*e^{mu(10m+10)},
//   log xi = ln(gamma) + mu(10m+beta).
// No caller exponentiates ell directly; XReal weights are assembled from the
// moderate part lambda*gamma*a(x) and the x-independent big part lambda*gamma*A.
class WeightEvaluator {
 public:
  WeightEvaluator(const WeightParams& p, const SpatialProfile& profile);

  const WeightParams& params() const { return params_; }
  const SpatialProfile& profile() const { return profile_; }

  // gamma (shifted=false) or gamma_eps (shifted=true, shift = params.eps_shift).
  // Unshifted gamma is a domain error at t >= T.
  double gamma(double t, bool shifted) const;

  double a_of_x(double x) const;        // e^{mu(10m+beta(x))}
  double big_const() const { return big_const_; }  // A = mu e^{mu(10m+10)}
  double alpha(double x) const { return a_of_x(x) - big_const_; }

  struct LogWeights {
    double ell;
    double log_xi;
  };
  LogWeights log_weights(double t, double x, bool shifted) const;

  // split pieces used by the XReal weight tables
  double ell_moderate(double t, double x, bool shifted) const;  // lambda*gamma*a(x) > 0
  double ell_big(double t, bool shifted) const;                 // lambda*gamma*A > 0

  const GammaBridge& bridge() const { return bridge_; }
  // analytic one-sided gamma'' limit at t (side -1/+1), unshifted pieces
  double gamma_dd_side(double t, int side) const;

  WeightEvaluator with_eps(double eps) const;  // same profile/bridge, new shift

 private:
  WeightParams params_;
  SpatialProfile profile_;
  GammaBridge bridge_;
  double big_const_ = 0.0;
};

enum class WeightKind { theta2, theta_inv2, theta_eps_inv2 };

// Precomputed per-(time row, x) weight factors for one evaluator/grid/tree
// triple. Rows resolve the substep grid t = (l + s/substeps) dt_noise, row
// index l*substeps + s, so the state-tracking costs can integrate at the
// resolution the semi-implicit solver actually produces; row l*substeps is the
// slab-start time used by the per-level forms. All weighted functionals in the
// carleman/hum/semilinear modules go through this table so that identical
// weights are identical XReal values.
class WeightTable {
 public:
  WeightTable(const WeightEvaluator& ev, const Grid& grid, const Tree& tree);

  const Grid& grid() const { return grid_; }
  const Tree& tree() const { return tree_; }
  const WeightEvaluator& evaluator() const { return ev_; }
  int rows() const { return tree_.slabs() * tree_.substeps; }
  int row_of(int level) const { return level * tree_.substeps; }

  // w = exp(c_log + xi_power * log xi(t_l, x)) * theta-kind factor at (t_l, x)
  XReal weight(int level, int x_index, WeightKind kind, int xi_power, double c_log) const {
    return weight_row(row_of(level), x_index, kind, xi_power, c_log);
  }
  XReal weight_row(int row, int x_index, WeightKind kind, int xi_power, double c_log) const;
  double gamma_at(int level, bool shifted) const;

 private:
  WeightEvaluator ev_;
  Grid grid_;
  Tree tree_;
  std::vector<double> a_;            // a(x_i)
  std::vector<double> mu_beta_;      // mu(10m + beta(x_i))
  std::vector<double> gamma_, gamma_eps_;  // per row
  std::vector<XReal> big_theta2_, big_inv2_, big_eps_inv2_;  // per row
};

struct WeightedFormResult {
  XReal value;
  bool is_zero = false;
  double log() const { return value.log_abs(); }
};

// log-space evaluation of E sum_{l,x in region} w(t_l,x) v(t_l,x)^2 h dt with
// log w = c_log + xi_power*log xi +- 2*ell per kind. Integrand levels are the
// left endpoints l = 0..slabs-1.
WeightedFormResult weighted_form(const AdaptedField& v, int xi_power, double c_log,
                                 WeightKind kind, const Interval& region, const WeightTable& wt);
WeightedFormResult weighted_form(const AdaptedXField& v, int xi_power, double c_log,
                                 WeightKind kind, const Interval& region, const WeightTable& wt);

// Same weighted quadratic sum on a single time level (no dt factor); used for
// the t=0 terms of the Carleman estimates.
XReal weighted_slice(const AdaptedField& v, int level, int xi_power, double c_log,
                     WeightKind kind, const Interval& region, const WeightTable& wt);

// Sampled certification of the evaluator invariants: C2 gluing of gamma at
// T/4, T/2, 3T/4 (one-sided O(d^2) stencils, 1e-6 relative), monotonicity of
// the bridge, alpha < 0, ell < 0 (theta in (0,1)), gamma_eps bounded on [0,T]
// and equal to gamma on [0,T/2), theta(0,x) = theta_eps(0,x).
struct WeightInvariantReport {
  bool c2_ok = false;
  double worst_c2_rel = 0.0;
  bool bridge_monotone = false;
  bool alpha_negative = false;
  bool ell_negative = false;
  bool gamma_eps_bounded = false;
  bool gamma_eps_matches_early = false;
  bool theta0_matches = false;
  bool all_ok() const {
    return c2_ok && bridge_monotone && alpha_negative && ell_negative && gamma_eps_bounded &&
           gamma_eps_matches_early && theta0_matches;
  }
};
WeightInvariantReport verify_weight_invariants(const WeightEvaluator& ev);

}  // namespace chc
