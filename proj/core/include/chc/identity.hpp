#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "chc/filtration.hpp"
#include "chc/grid.hpp"

namespace chc {

// Truncated 2-D Taylor expansion in (x, t): NX x-orders, NT t-orders. All
// coefficient bundles of the weighted operator identity are assembled with
// this algebra, so every derivative in the fully-analytic residual check is
// exact to round-off.
template <int NX, int NT>
struct Jet2 {
  std::array<std::array<double, NT>, NX> c{};  // f = sum c[i][j] dx^i dt^j

  static Jet2 constant(double v) {
    Jet2 j;
    j.c[0][0] = v;
    return j;
  }
  static Jet2 var_x(double x0) {
    Jet2 j;
    j.c[0][0] = x0;
    j.c[1][0] = 1.0;
    return j;
  }
  static Jet2 var_t(double t0) {
    Jet2 j;
    j.c[0][0] = t0;
    j.c[0][1] = 1.0;
    return j;
  }
  // seed from closed-form derivative families d^i/dx^i d^j/dt^j f
  static Jet2 from_derivs(const std::function<double(int, int)>& d) {
    Jet2 j;
    double fi = 1.0;
    for (int i = 0; i < NX; ++i) {
      double fj = 1.0;
      for (int jj = 0; jj < NT; ++jj) {
        j.c[i][jj] = d(i, jj) / (fi * fj);
        fj *= (jj + 1);
      }
      fi *= (i + 1);
    }
    return j;
  }

  double value() const { return c[0][0]; }
  double deriv(int i, int j) const {
    double f = c[i][j];
    for (int k = 2; k <= i; ++k) f *= k;
    for (int k = 2; k <= j; ++k) f *= k;
    return f;
  }

  Jet2 operator-() const {
    Jet2 r;
    for (int i = 0; i < NX; ++i)
      for (int j = 0; j < NT; ++j) r.c[i][j] = -c[i][j];
    return r;
  }
  friend Jet2 operator+(const Jet2& a, const Jet2& b) {
    Jet2 r;
    for (int i = 0; i < NX; ++i)
      for (int j = 0; j < NT; ++j) r.c[i][j] = a.c[i][j] + b.c[i][j];
    return r;
  }
  friend Jet2 operator-(const Jet2& a, const Jet2& b) { return a + (-b); }
  friend Jet2 operator*(const Jet2& a, double s) {
    Jet2 r;
    for (int i = 0; i < NX; ++i)
      for (int j = 0; j < NT; ++j) r.c[i][j] = a.c[i][j] * s;
    return r;
  }
  friend Jet2 operator*(double s, const Jet2& a) { return a * s; }
  friend Jet2 operator*(const Jet2& a, const Jet2& b) {
    Jet2 r;
    for (int i = 0; i < NX; ++i)
      for (int j = 0; j < NT; ++j) {
        if (a.c[i][j] == 0.0) continue;
        for (int p = 0; p + i < NX; ++p)
          for (int q = 0; q + j < NT; ++q) r.c[i + p][j + q] += a.c[i][j] * b.c[p][q];
      }
    return r;
  }

  // d/dx and d/dt shift the coefficients; the top order becomes invalid and is
  // zeroed, so callers must budget their derivative depth.
  Jet2 dx() const {
    Jet2 r;
    for (int i = 0; i + 1 < NX; ++i)
      for (int j = 0; j < NT; ++j) r.c[i][j] = (i + 1) * c[i + 1][j];
    return r;
  }
  Jet2 dt() const {
    Jet2 r;
    for (int i = 0; i < NX; ++i)
      for (int j = 0; j + 1 < NT; ++j) r.c[i][j] = (j + 1) * c[i][j + 1];
    return r;
  }

  friend Jet2 exp(const Jet2& f) {
    Jet2 e;
    e.c[0][0] = std::exp(f.c[0][0]);
    // pure-t column via E_t = E F_t
    for (int j = 0; j + 1 < NT; ++j) {
      double acc = 0.0;
      for (int b = 0; b <= j; ++b) acc += (j - b + 1) * f.c[0][j - b + 1] * e.c[0][b];
      e.c[0][j + 1] = acc / (j + 1);
    }
    // remaining columns via E_x = E F_x
    for (int i = 0; i + 1 < NX; ++i)
      for (int j = 0; j < NT; ++j) {
        double acc = 0.0;
        for (int a = 0; a <= i; ++a)
          for (int b = 0; b <= j; ++b) acc += (i - a + 1) * f.c[i - a + 1][j - b] * e.c[a][b];
        e.c[i + 1][j] = acc / (i + 1);
      }
    return e;
  }
};

using Jet = Jet2<9, 3>;
using JetFn = std::function<Jet(double t, double x)>;

// Tabulated identity coefficients over an (nt x nx) sample grid, each derived
// field populated from the displayed formulas.
struct IdentityCoefficients {
  double delta = -1.0;
  int nt = 0, nx = 0;
  std::vector<double> l_x, l_xx, l_xxx, l_t;
  std::vector<double> C0, C1, C2;
  std::vector<double> K2, K1, K0, G3, G2, G1, G0;
  double& at(std::vector<double>& v, int k, int i) { return v[static_cast<size_t>(k) * nx + i]; }
  double at(const std::vector<double>& v, int k, int i) const {
    return v[static_cast<size_t>(k) * nx + i];
  }
};

IdentityCoefficients compute_coefficients(const std::vector<double>& l_x,
                                          const std::vector<double>& l_xx,
                                          const std::vector<double>& l_xxx,
                                          const std::vector<double>& l_t, double delta,
                                          const std::vector<double>& C0,
                                          const std::vector<double>& C1,
                                          const std::vector<double>& C2, int nt, int nx);

enum class IdentityMode { analytic, fd_outer };

struct IdentityResidual {
  double residual_norm = 0.0;  // max norm of LHS - RHS over the sample grid
  double order_estimate = 0.0; // refinement order (fd mode; 0 in analytic mode)
};

struct IdentityCase {
  std::string name;
  JetFn upsilon;
  JetFn l;
  JetFn C0, C1, C2;
  double delta = -1.0;
};

// Evaluates both sides of the pointwise weighted identity for the fourth-order
// operator on an (nt x nx) interior sample grid in the deterministic setting
// (dw = w_t dt, no martingale part). In fd_outer mode only the outermost
// derivative of the divergence/time bundles is finite-differenced.
IdentityResidual deterministic_identity_residual(const IdentityCase& tc, int nt, int nx,
                                                 IdentityMode mode);

// built-in analytic test functions (satisfy the clamped bc)
std::vector<IdentityCase> identity_test_library();

// Per-time-level coefficient tables for the stochastic telescoping check.
struct M0Coefficients {
  double delta = -1.0;
  std::vector<Field> K2, K2xx, K0;  // one field per time level 0..levels-1
};

// E sum of the discrete time-boundary bundle across levels must telescope to
// the endpoint difference of E[delta |w_xx|^2 + K2 w_xx w - 1/2 K2xx w^2 +
// K0 w^2] plus the quadratic-variation correction (the martingale-part terms
// with |dw|^2 -> kick^2). Returns the relative mismatch.
double stochastic_m0_telescoping_check(const AdaptedField& w, const M0Coefficients& co,
                                       const Grid& g);

}  // namespace chc
