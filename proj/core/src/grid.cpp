#include "chc/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace chc {

Field zeros(const Grid& g) { return Field(static_cast<size_t>(g.interior()), 0.0); }

namespace {

template <class S>
std::vector<S> d1_impl(const std::vector<S>& f, const Grid& g) {
  const int m = g.interior();
  const double c = 1.0 / (2.0 * g.h());
  std::vector<S> out(m);
  for (int i = 0; i < m; ++i) {
    S up = (i + 1 < m) ? f[i + 1] : S{};
    S dn = (i - 1 >= 0) ? f[i - 1] : S{};
    out[i] = (up - dn) * c;
  }
  return out;
}

template <class S>
std::vector<S> d1t_impl(const std::vector<S>& f, const Grid& g) {
  // exact transpose of the interior matrix of d1 (skew): equals -d1
  const int m = g.interior();
  const double c = 1.0 / (2.0 * g.h());
  std::vector<S> out(m);
  for (int i = 0; i < m; ++i) {
    S up = (i + 1 < m) ? f[i + 1] : S{};
    S dn = (i - 1 >= 0) ? f[i - 1] : S{};
    out[i] = (dn - up) * c;
  }
  return out;
}

template <class S>
std::vector<S> d2_impl(const std::vector<S>& f, const Grid& g) {
  const int m = g.interior();
  const double c = 1.0 / (g.h() * g.h());
  std::vector<S> out(m);
  for (int i = 0; i < m; ++i) {
    S up = (i + 1 < m) ? f[i + 1] : S{};
    S dn = (i - 1 >= 0) ? f[i - 1] : S{};
    out[i] = (up + dn - 2.0 * f[i]) * c;
  }
  return out;
}

template <class S>
std::vector<S> d4_impl(const std::vector<S>& f, const Grid& g) {
  const int m = g.interior();
  const double h2 = g.h() * g.h();
  const double c = 1.0 / (h2 * h2);
  const double s = g.ghost_sign();
  std::vector<S> out(m);
  for (int i = 0; i < m; ++i) {
    S f2u = (i + 2 < m) ? f[i + 2] : S{};
    S f1u = (i + 1 < m) ? f[i + 1] : S{};
    S f1d = (i - 1 >= 0) ? f[i - 1] : S{};
    S f2d = (i - 2 >= 0) ? f[i - 2] : S{};
    if (i == 0) f2d = s * f[0];              // ghost y_{-1} = s*y_1
    if (i == m - 1) f2u = s * f[m - 1];      // ghost y_{N+1} = s*y_{N-1}
    out[i] = (f2d + f2u + 6.0 * f[i] - 4.0 * (f1d + f1u)) * c;
  }
  return out;
}

}  // namespace

Field apply_d1(const Field& f, const Grid& g) { return d1_impl<double>(f, g); }
Field apply_d2(const Field& f, const Grid& g) { return d2_impl<double>(f, g); }
Field apply_d4(const Field& f, const Grid& g) { return d4_impl<double>(f, g); }
Field apply_d1_transpose(const Field& f, const Grid& g) { return d1t_impl<double>(f, g); }
Field apply_d2_transpose(const Field& f, const Grid& g) { return d2_impl<double>(f, g); }

XField apply_d1(const XField& f, const Grid& g) { return d1_impl<XReal>(f, g); }
XField apply_d2(const XField& f, const Grid& g) { return d2_impl<XReal>(f, g); }
XField apply_d4(const XField& f, const Grid& g) { return d4_impl<XReal>(f, g); }
XField apply_d1_transpose(const XField& f, const Grid& g) { return d1t_impl<XReal>(f, g); }
XField apply_d2_transpose(const XField& f, const Grid& g) { return d2_impl<XReal>(f, g); }

std::vector<double> d2_with_boundary(const Field& f, const Grid& g) {
  const int m = g.interior();
  const double c = 1.0 / (g.h() * g.h());
  const double s = g.ghost_sign();
  std::vector<double> out(m + 2, 0.0);
  // node 0: (y_{-1} - 2*0 + y_1)/h^2 = (s+1) y_1 / h^2 ; zero for simply supported
  out[0] = (s + 1.0) * f[0] * c;
  for (int i = 0; i < m; ++i) {
    double up = (i + 1 < m) ? f[i + 1] : 0.0;
    double dn = (i - 1 >= 0) ? f[i - 1] : 0.0;
    out[i + 1] = (up + dn - 2.0 * f[i]) * c;
  }
  out[m + 1] = (s + 1.0) * f[m - 1] * c;
  return out;
}

double dot(const Field& a, const Field& b, const Grid& g) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc * g.h();
}

double d2_pair(const Field& a, const Field& b, const Grid& g) {
  auto da = d2_with_boundary(a, g);
  auto db = d2_with_boundary(b, g);
  const int last = static_cast<int>(da.size()) - 1;
  double acc = 0.5 * (da[0] * db[0] + da[last] * db[last]);
  for (int i = 1; i < last; ++i) acc += da[i] * db[i];
  return acc * g.h();
}

double norm2(const Field& a, const Grid& g) { return dot(a, a, g); }

ImplicitSolver::ImplicitSolver(const Grid& g, double dt) : grid_(g), dt_(dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("implicit solver: dt must be positive");
  const int m = g.interior();
  const double h2 = g.h() * g.h();
  const double c = dt / (h2 * h2);
  const double s = g.ghost_sign();
  // bands of I + dt*D4
  std::vector<double> a0(m), a1(m, -4.0 * c), a2(m, c);  // diag, sub1, sub2
  for (int i = 0; i < m; ++i) a0[i] = 1.0 + 6.0 * c;
  a0[0] += s * c;
  a0[m - 1] += s * c;
  // banded Cholesky L L^T, bandwidth 2
  d_.assign(m, 0.0);
  e_.assign(m, 0.0);
  f_.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double di = a0[i];
    if (i >= 1) di -= e_[i - 1] * e_[i - 1];
    if (i >= 2) di -= f_[i - 2] * f_[i - 2];
    d_[i] = std::sqrt(di);
    if (i + 1 < m) {
      double v = a1[i];
      if (i >= 1) v -= e_[i - 1] * f_[i - 1];
      e_[i] = v / d_[i];
    }
    if (i + 2 < m) f_[i] = a2[i] / d_[i];
  }
}

template <class S>
void ImplicitSolver::solve_inplace(std::vector<S>& y) const {
  const int m = static_cast<int>(y.size());
  // forward substitution: L z = b
  for (int i = 0; i < m; ++i) {
    S v = y[i];
    if (i >= 1) v -= e_[i - 1] * y[i - 1];
    if (i >= 2) v -= f_[i - 2] * y[i - 2];
    y[i] = v * (1.0 / d_[i]);
  }
  // back substitution: L^T x = z
  for (int i = m - 1; i >= 0; --i) {
    S v = y[i];
    if (i + 1 < m) v -= e_[i] * y[i + 1];
    if (i + 2 < m) v -= f_[i] * y[i + 2];
    y[i] = v * (1.0 / d_[i]);
  }
}

Field ImplicitSolver::solve(const Field& b) const {
  Field y = b;
  solve_inplace(y);
  return y;
}

XField ImplicitSolver::solve(const XField& b) const {
  XField y = b;
  solve_inplace(y);
  return y;
}

Field implicit_step_solve(const Field& b, double dt, const Grid& g) {
  return ImplicitSolver(g, dt).solve(b);
}

XField to_xfield(const Field& f) {
  XField out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[i] = XReal::of(f[i]);
  return out;
}

Field to_field(const XField& f) {
  Field out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[i] = f[i].to_double();
  return out;
}

}  // namespace chc
