#pragma once

#include <stdexcept>
#include <vector>

#include "chc/xreal.hpp"

namespace chc {

enum class Bc { clamped, simply_supported };

// 1D mesh on (0,1) with N cells. Interior nodes i=1..N-1 carry the unknowns;
// boundary values are identically zero in both variants. The second boundary
// row is encoded by ghost reflection: clamped (y_x=0) uses y_{-1}=y_1,
// simply supported (y_xx=0) uses y_{-1}=-y_1.
struct Grid {
  int n = 8;
  Bc bc = Bc::clamped;

  Grid() = default;
  Grid(int n_, Bc bc_) : n(n_), bc(bc_) {
    if (n < 8) throw std::invalid_argument("grid: need at least 8 cells");
  }
  double h() const { return 1.0 / n; }
  int interior() const { return n - 1; }
  // position of interior unknown k (0-based): x = (k+1)*h
  double x(int k) const { return (k + 1) * h(); }
  double ghost_sign() const { return bc == Bc::clamped ? 1.0 : -1.0; }
};

using Field = std::vector<double>;
using XField = std::vector<XReal>;

Field zeros(const Grid& g);

Field apply_d1(const Field& f, const Grid& g);
Field apply_d2(const Field& f, const Grid& g);
Field apply_d4(const Field& f, const Grid& g);
Field apply_d1_transpose(const Field& f, const Grid& g);
Field apply_d2_transpose(const Field& f, const Grid& g);

// Second difference extended to the boundary nodes 0..N using the bc ghosts
// (size N+1). Trapezoidal pairing of these vectors realizes the discrete
// integration by parts <D4 f, g> = <D2 f, D2 g> exactly in both variants.
std::vector<double> d2_with_boundary(const Field& f, const Grid& g);

double dot(const Field& a, const Field& b, const Grid& g);         // h-weighted
double d2_pair(const Field& a, const Field& b, const Grid& g);     // trapezoid on d2_with_boundary
double norm2(const Field& a, const Grid& g);

// Cached factorization of (I + dt*D4): pentadiagonal symmetric positive
// definite, solved by a banded Cholesky (bandwidth 2).
class ImplicitSolver {
 public:
  ImplicitSolver(const Grid& g, double dt);

  Field solve(const Field& b) const;
  XField solve(const XField& b) const;

  const Grid& grid() const { return grid_; }
  double dt() const { return dt_; }

 private:
  template <class S>
  void solve_inplace(std::vector<S>& y) const;

  Grid grid_;
  double dt_;
  // lower-triangular banded factor: diag d[i], sub1 e[i] (row i+1), sub2 f[i] (row i+2)
  std::vector<double> d_, e_, f_;
};

Field implicit_step_solve(const Field& b, double dt, const Grid& g);

// XReal variants of the difference operators (same stencils).
XField apply_d1(const XField& f, const Grid& g);
XField apply_d2(const XField& f, const Grid& g);
XField apply_d4(const XField& f, const Grid& g);
XField apply_d1_transpose(const XField& f, const Grid& g);
XField apply_d2_transpose(const XField& f, const Grid& g);

XField to_xfield(const Field& f);
Field to_field(const XField& f);  // under/overflow collapses to 0/inf per XReal::to_double

}  // namespace chc
