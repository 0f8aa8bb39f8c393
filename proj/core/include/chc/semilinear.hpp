#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chc/hum.hpp"
#include "chc/spde.hpp"
#include "chc/weights.hpp"

namespace chc {

// Pointwise nonlinearity with a declared Lipschitz constant. f(.,0,0,0) = 0;
// the empirical certificates sample both assumptions.
struct NonlinearSpec {
  std::string name;
  PointFn f;
  PointFn g;  // optional diffusion nonlinearity
  double kappa = 0.0;
  double kappa1 = 0.0;

  bool has_g() const { return static_cast<bool>(g); }
};

// f = kappa (a y + b sin(y_x) + c tanh(y_xx)) / (|a|+|b|+|c|); optionally the
// coefficients are modulated by the node's Brownian value (omega-dependence).
NonlinearSpec make_lipschitz_mix(double kappa, double a, double b, double c,
                                 bool omega_dependent = false);
// truncated Cahn-Hilliard drift kappa clamp(y^3 - y, +-M) / L_M with the
// effective Lipschitz constant of the clamp absorbed into the normalization
NonlinearSpec make_cahn_clamped(double kappa, double M);
// attach g = kappa1 sin(y + 0.5 y_x) (vanishes at zero, Lipschitz ~ kappa1)
NonlinearSpec with_diffusion_g(NonlinearSpec spec, double kappa1);

// Samples f(.,0,0,0) = 0 and the empirical Lipschitz bound on random argument
// pairs; throws with a diagnostic on violation.
void certify_nonlinearity(const NonlinearSpec& spec, std::uint64_t seed);

// ||phi||_{S}: sqrt of the theta^-2 lambda^-7 mu^-8 xi^-7 weighted square sum.
XReal s_norm(const AdaptedField& phi, const WeightTable& wt);

struct PicardReport {
  std::vector<double> log_d;   // ln d_k = ln ||phi^{k+1} - phi^k||_S
  std::vector<double> ratios;  // d_k / d_{k-1}
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  std::string diagnostic;
  double max_ratio = 0.0;
  double asymptotic_ratio = 0.0;  // last computed ratio
  double log_terminal = 0.0;      // ln E||y(T)||^2 of the final controlled solve
};

struct PicardResult {
  PicardReport report;
  LQSolution final_solution;
  AdaptedField phi;  // fixed-point source at exit
};

// Banach fixed-point loop: phi^0 = 0; solve the penalized LQ problem with
// source phi^k, evaluate phi^{k+1} = f(t, x, y^k, D1 y^k, D2 y^k), measure the
// S-norm distances. Divergence (ratio > 1 three times in a row) aborts with a
// diagnostic suggesting larger lambda, mu or smaller kappa.
PicardResult picard_iterate(const LQProblem& base, const NonlinearSpec& nl,
                            const WeightEvaluator& ev, int max_iter, double tol);

// U* = U - g(t, x, y, y_x, y_xx) nodewise, evaluated at the slab-start state
// (the solver's kick convention), so re-simulating with g in the diffusion
// under (u, U*) reproduces the trajectory exactly.
AdaptedField absorb_g(const AdaptedField& U, const NonlinearSpec& nl, const AdaptedField& y,
                      const Grid& g);

}  // namespace chc
