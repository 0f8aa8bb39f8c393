#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "chc/filtration.hpp"
#include "chc/grid.hpp"
#include "chc/weights.hpp"

namespace chc {

struct NumericalFailure : std::runtime_error {
  NumericalFailure(const std::string& what, int level_, int node_)
      : std::runtime_error(what + " (level " + std::to_string(level_) + ", node " +
                           std::to_string(node_) + ")"),
        level(level_),
        node(node_) {}
  int level;
  int node;
};

// Pointwise nonlinearity hook: (t, x, y, y_x, y_xx, brownian_value) -> value.
using PointFn = std::function<double(double, double, double, double, double, double)>;

// Controlled forward system dy + y_xxxx dt = (phi + f + chi_{G0} u) dt
//                                           + (g + U + diffusion_source) dB.
// Drift runs `substeps` semi-implicit steps per slab; the noise kick closes a
// slab once, so the filtration stays exactly the binary tree. The nonlinear
// hooks and the kick coefficient g are evaluated at the slab-start state.
template <class S>
struct ForwardProblemT {
  std::vector<S> y0;
  const Adapted<S>* drift_source = nullptr;      // phi
  const Adapted<S>* control_u = nullptr;         // masked to G0
  const Adapted<S>* control_U = nullptr;         // diffusion control
  const Adapted<S>* diffusion_source = nullptr;  // fixed extra dB coefficient
  PointFn f;                                     // nonlinear drift (double path only)
  PointFn g;                                     // nonlinear diffusion (double path only)
  Interval g0{0.0, 1.0};
  Grid grid;
  Tree tree;
};

using ForwardProblem = ForwardProblemT<double>;
using ForwardXProblem = ForwardProblemT<XReal>;

template <class S>
struct BackwardProblemT {
  // terminal r_T per leaf
  Adapted<S> rT;  // only the last level is read
  const Adapted<S>* phi0 = nullptr;
  const Adapted<S>* phi1 = nullptr;
  const Adapted<S>* phi2 = nullptr;
  Grid grid;
  Tree tree;
};

template <class S>
struct BackwardSolutionT {
  Adapted<S> r;
  Adapted<S> R;  // martingale integrand, defined on kick slabs l < depth
};

using BackwardProblem = BackwardProblemT<double>;
using BackwardSolution = BackwardSolutionT<double>;
using BackwardXProblem = BackwardProblemT<XReal>;
using BackwardXSolution = BackwardSolutionT<XReal>;

AdaptedField solve_forward(const ForwardProblem& p);
AdaptedXField solve_forward(const ForwardXProblem& p);
BackwardSolution solve_backward(const BackwardProblem& p);
BackwardXSolution solve_backward(const BackwardXProblem& p);

// G v = dt_sub * sum_{j=1..s} K^j v with K = (I + dt_sub D4)^{-1}: the exact
// source-to-state map of one slab of the semi-implicit scheme. The discrete
// duality and the adjoint pair through G rather than through dt*I.
Field smooth_source(const ImplicitSolver& K, int substeps, const Field& v);
XField smooth_source(const ImplicitSolver& K, int substeps, const XField& v);

// Relative mismatch of the exact discrete duality
//   E<y_L, r_T> - <y_0, r_0> = sum_l E[ <G(phi + chi u), m_l> + dt <U, R_l>
//                                      + <y_l, G Phi_l> ]
// on a solved forward/backward pair (m_l = conditional mean of r at l+1).
double duality_mismatch(const ForwardProblem& fp, const AdaptedField& y,
                        const BackwardProblem& bp, const BackwardSolution& bs);

}  // namespace chc
