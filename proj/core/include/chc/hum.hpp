#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chc/spde.hpp"
#include "chc/weights.hpp"

namespace chc {

// Tracking-term selection. The control weights are fixed:
// theta^-2 lambda^-7 mu^-8 xi^-7 on u over G0, theta^-2 lambda^-4 mu^-4 xi^-5
// on U, terminal penalty 1/(2 eps). track0-only is the auxiliary-problem
// configuration; all three tracking terms give the full state-tracking cost.
struct CostWeights {
  bool track0 = true;
  bool track1 = false;
  bool track2 = false;
  static CostWeights lemma22() { return {true, false, false}; }
  static CostWeights theorem31() { return {true, true, true}; }
};

struct LQProblem {
  Grid grid;
  Tree tree;
  Interval g0{0.3, 0.7};
  Field y0;
  const AdaptedXField* phi = nullptr;               // drift source
  const AdaptedXField* diffusion_source = nullptr;  // fixed dB coefficient
  double eps = 1e-3;
  CostWeights weights;
  double tol = 1e-8;
  int max_iter = 500;
};

struct CostBreakdown {
  XReal track0, track1, track2, ctrl_u, ctrl_U, terminal;
  XReal total() const { return track0 + track1 + track2 + ctrl_u + ctrl_U + terminal; }
};

struct ControlPair {
  AdaptedXField u;  // supported on G0, integrand levels
  AdaptedXField U;  // kick slabs
};

struct LQSolution {
  ControlPair c;
  AdaptedXField y;
  AdaptedXField z, Z;  // control-facing adjoint pair (feedback variables)
  CostBreakdown J;
  XReal terminal_norm_sq;  // E ||y(T)||^2 (h-weighted)
  double optimality_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Per-level, per-node XReal weight tables for one (evaluator, grid, tree, eps).
class LQWorkspace {
 public:
  LQWorkspace(const WeightEvaluator& ev, const Grid& g, const Tree& tree, double eps);

  const WeightTable& table() const { return wt_; }
  const Grid& grid() const { return grid_; }
  const Tree& tree() const { return tree_; }
  double eps() const { return eps_; }

  const XReal& wu(int l, int i) const { return wu_[l][i]; }
  const XReal& wU(int l, int i) const { return wU_[l][i]; }
  const XReal& wt0(int l, int i) const { return t0_[l][i]; }
  const XReal& wt1(int l, int i) const { return t1_[l][i]; }
  const XReal& wt2(int l, int i) const { return t2_[l][i]; }
  const XReal& wr(int l, int i) const { return wr_[l][i]; }  // lambda^7 mu^8 xi^7 theta^2
  const XReal& wR(int l, int i) const { return wR_[l][i]; }  // lambda^4 mu^4 xi^5 theta^2
  const std::vector<int>& g0_index(const Interval& g0) const;

 private:
  WeightEvaluator ev_;
  WeightTable wt_;
  Grid grid_;
  Tree tree_;
  double eps_;
  std::vector<std::vector<XReal>> wu_, wU_, t0_, t1_, t2_, wr_, wR_;
  mutable std::vector<int> g0_cache_;
  mutable Interval g0_cached_{0, 0};
};

// J_eps of a state/control triple (all terms reported separately; the combined
// value only exists as an XReal).
CostBreakdown cost_J(const AdaptedXField& y, const ControlPair& c, const LQProblem& p,
                     const LQWorkspace& ws);

// E sum_l dt <.,.> over the control support (u on G0, U on kick slabs); the
// metric in which gradient() reports derivatives.
XReal control_inner(const ControlPair& a, const ControlPair& b, const LQProblem& p,
                    const LQWorkspace& ws);

struct GradientResult {
  ControlPair grad;       // (Wu u + chi z, WU U + Z) in the dt-weighted metric
  AdaptedXField z, Z;     // control-facing adjoint pair
  AdaptedXField y;        // forward trajectory used
};

// Exact adjoint gradient of the discrete cost: backward sweep with terminal
// z(T) = y(T)/eps and the tracking source assembled with the exact discrete
// transposes. The source enters as +dt*Xi at the level (endpoint quadrature),
// which is what makes the discrete chain rule exact; z is reported as the
// slab-averaged adjoint (G m / dt), the variable the feedback formulas see.
GradientResult gradient(const LQProblem& p, const ControlPair& c, const LQWorkspace& ws);

// Minimizes J_eps over the control pair. The control-space system is
// assembled by exact adjoint applications (one forward/backward pair per
// control dof) and solved directly on its Jacobi-equilibrated form; the
// Carleman weights separate the Hessian's scale groups by factors far beyond
// what an iterative method can traverse in finite precision.
LQSolution solve_lq(const LQProblem& p, const WeightEvaluator& ev);

struct EpsLevelReport {
  double eps = 0.0;
  bool converged = false;
  int iterations = 0;
  double log_terminal = 0.0;           // ln E||y(T)||^2
  double log_terminal_over_eps = 0.0;  // ln (E||y(T)||^2 / eps)
  double log_ctrl_u = 0.0, log_ctrl_U = 0.0;
};

struct EpsScheduleReport {
  std::vector<EpsLevelReport> levels;
  bool all_converged = false;
  bool terminal_nonincreasing = false;
  // max over k of (||yT||^2/eps_k) / (||yT||^2/eps_0), as a log
  double log_max_ratio_factor = 0.0;
};

EpsScheduleReport eps_schedule(const LQProblem& base, const WeightEvaluator& ev, double eps0,
                               int n_levels);

struct DualityReport {
  // left side: E int Wr r^2, E int WR R^2, E<h(T), r_T>
  XReal lhs_r, lhs_R, endpoint;
  // right side: -E int h G phi0-pairing, +.., -.., control pairings
  XReal rhs_phi0, rhs_phi1, rhs_phi2, rhs_v, rhs_V;
  double mismatch = 0.0;  // relative
};

// Exact discrete counterpart of the auxiliary-problem duality identity: the
// auxiliary forward system is driven by (Wr r, WR R) plus the Lemma-2.2
// optimal controls with h0 = 0; the E<h(T), r_T> term is retained because the
// discrete terminal state is only approximately zero.
DualityReport duality_identity_check(const BackwardProblem& bp, const BackwardSolution& rsol,
                                     const WeightEvaluator& ev, const LQProblem& aux_template);

}  // namespace chc
