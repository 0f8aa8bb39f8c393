#include "chc/identity.hpp"

#include <cmath>
#include <stdexcept>

namespace chc {

IdentityCoefficients compute_coefficients(const std::vector<double>& l_x,
                                          const std::vector<double>& l_xx,
                                          const std::vector<double>& l_xxx,
                                          const std::vector<double>& l_t, double delta,
                                          const std::vector<double>& C0,
                                          const std::vector<double>& C1,
                                          const std::vector<double>& C2, int nt, int nx) {
  const size_t n = static_cast<size_t>(nt) * nx;
  for (const auto* v : {&l_x, &l_xx, &l_xxx, &l_t, &C0, &C1, &C2})
    if (v->size() != n) throw std::invalid_argument("compute_coefficients: shape mismatch");
  IdentityCoefficients co;
  co.delta = delta;
  co.nt = nt;
  co.nx = nx;
  co.l_x = l_x;
  co.l_xx = l_xx;
  co.l_xxx = l_xxx;
  co.l_t = l_t;
  co.C0 = C0;
  co.C1 = C1;
  co.C2 = C2;
  co.K2.resize(n);
  co.K1.resize(n);
  co.K0.resize(n);
  co.G3.resize(n);
  co.G2.resize(n);
  co.G1.resize(n);
  co.G0.resize(n);
  for (size_t k = 0; k < n; ++k) {
    double lx = l_x[k], lxx = l_xx[k], lxxx = l_xxx[k], lt = l_t[k];
    co.K2[k] = 6.0 * delta * lx * lx;
    co.K1[k] = 12.0 * delta * lx * lxx;
    co.K0[k] = delta * lx * lx * lx * lx - lt;
    co.G3[k] = -4.0 * delta * lx;
    co.G2[k] = delta * (-6.0 * lxx + C2[k]);
    co.G1[k] = delta * (-4.0 * lx * lx * lx + C1[k]);
    co.G0[k] = delta * (-6.0 * lx * lx * lxx + 4.0 * lx * lxxx + 3.0 * lxx * lxx + C0[k]);
  }
  return co;
}

namespace {

// every inner bundle of the identity at one sample point, as jets
struct Bundles {
  Jet P2, P3, LTheta;  // LTheta = theta * (Upsilon_t + delta Upsilon_xxxx)
  Jet M0_inner;        // delta w_xx^2 + K2 w_xx w - 1/2 K2xx w^2 + K0 w^2
  Jet B_inner;         // everything under the outer d/dx
  Jet A;               // A3 + A2 + A1 + A0 (no outer derivative)
};

Bundles assemble(const IdentityCase& tc, double t, double x) {
  const double delta = tc.delta;
  Jet l = tc.l(t, x);
  Jet U = tc.upsilon(t, x);
  Jet C0 = tc.C0(t, x), C1 = tc.C1(t, x), C2 = tc.C2(t, x);

  Jet lx = l.dx(), lxx = lx.dx(), lxxx = lxx.dx(), lxxxx = lxxx.dx();
  Jet lt = l.dt();

  Jet K2 = 6.0 * delta * (lx * lx);
  Jet K1 = 12.0 * delta * (lx * lxx);
  Jet K0 = delta * (lx * lx) * (lx * lx) - lt;
  Jet G3 = -4.0 * delta * lx;
  Jet G2 = delta * (-6.0 * lxx + C2);
  Jet G1 = delta * (-4.0 * (lx * lx) * lx + C1);
  Jet G0 = delta * (-6.0 * ((lx * lx) * lxx) + 4.0 * (lx * lxxx) + 3.0 * (lxx * lxx) + C0);

  Jet w = exp(l) * U;
  Jet wx = w.dx(), wxx = wx.dx(), wxxx = wxx.dx(), wxxxx = wxxx.dx();
  Jet wt = w.dt(), wxt = wx.dt();

  Bundles b;
  b.P2 = delta * wxxxx + K2 * wxx + K0 * w + K1 * wx;
  b.P3 = -1.0 * delta * (C1 * wx + C2 * wxx + C0 * w + lxxxx * w + 4.0 * (lxxx * wx));
  b.LTheta = exp(l) * (U.dt() + delta * U.dx().dx().dx().dx());

  Jet K2xx = K2.dx().dx();
  b.M0_inner = delta * (wxx * wxx) + K2 * (wxx * w) - 0.5 * (K2xx * (w * w)) + K0 * (w * w);

  Jet K2t = K2.dt();
  Jet K2xt = K2.dx().dt();
  Jet G3K0 = G3 * K0;
  Jet G3K1 = G3 * K1;
  Jet G3K2 = G3 * K2;

  // spatial-divergence families: the inner expressions only
  Jet Btilde =
      (2.0 * delta * wxxx + K2 * wx + K2.dx() * w) * wt - (2.0 * delta * wxx + K2 * w) * wxt;
  Jet B3 = delta * (G3 * (wxxx * wxxx));
  Jet B3s = 2.0 * delta * (G2 * (wxxx * wxx)) + 2.0 * delta * (G1 * (wxxx * wx)) +
            2.0 * delta * (G0 * (wxxx * w));
  Jet B2 = (G3K2 - delta * G1 - delta * G2.dx()) * (wxx * wxx);
  Jet B2s = 2.0 * ((G3K1 - delta * G1.dx() - delta * G0) * (wxx * wx)) +
            2.0 * ((G3K0 - delta * G0.dx()) * (wxx * w));
  Jet B1 = (-1.0 * G3K0 - G3K1.dx() + delta * G1.dx().dx() + G1 * K2 + G2 * K1 +
            2.0 * delta * G0.dx()) *
           (wx * wx);
  Jet B1s =
      (-2.0 * G3K0.dx() + 2.0 * (G2 * K0) + 2.0 * delta * G0.dx().dx() + 2.0 * (G0 * K2) - K2t) *
      (wx * w);
  Jet B0 = (G3K0.dx().dx() + G1 * K0 - (G2 * K0).dx() - delta * G0.dx().dx().dx() -
            (G0 * K2).dx() + G0 * K1 + 0.5 * K2xt) *
           (w * w);
  b.B_inner = Btilde + B3 + B3s + B2 + B2s + B1 + B1s + B0;

  Jet A3 = -1.0 * delta * ((2.0 * G2 + G3.dx()) * (wxxx * wxxx));
  Jet A2 = (2.0 * delta * G0 + 3.0 * delta * G1.dx() + 2.0 * (G2 * K2) - G3K2.dx() - 2.0 * G3K1 +
            delta * G2.dx().dx()) *
           (wxx * wxx);
  Jet A1 = (-2.0 * (G0 * K2) - (G1 * K2).dx() + 2.0 * (G1 * K1) - 2.0 * (G2 * K0) +
            3.0 * G3K0.dx() - 4.0 * delta * G0.dx().dx() - delta * G1.dx().dx().dx() -
            (G2 * K1).dx() + G3K1.dx().dx() + K2t) *
           (wx * wx);
  Jet A0 = (2.0 * (G0 * K0) - (G1 * K0).dx() + delta * G0.dx().dx().dx().dx() +
            (G0 * K2).dx().dx() - (G0 * K1).dx() + (G2 * K0).dx().dx() - G3K0.dx().dx().dx() -
            K0.dt()) *
           (w * w);
  b.A = A3 + A2 + A1 + A0;
  return b;
}

void check_bc(const IdentityCase& tc) {
  for (double t : {0.11, 0.43, 0.87}) {
    for (double x : {0.0, 1.0}) {
      Jet U = tc.upsilon(t, x);
      double scale = 1.0 + std::fabs(U.deriv(2, 0));
      if (std::fabs(U.value()) > 1e-10 * scale || std::fabs(U.deriv(1, 0)) > 1e-10 * scale)
        throw std::invalid_argument("identity: test function '" + tc.name +
                                    "' violates the clamped boundary conditions");
    }
  }
}

double residual_once(const IdentityCase& tc, int nt, int nx, IdentityMode mode) {
  const double t0 = 0.05, t1 = 0.95;
  const double dt = (t1 - t0) / (nt - 1);
  const double dx = 1.0 / (nx - 1);

  double worst = 0.0;
  if (mode == IdentityMode::analytic) {
    for (int k = 1; k + 1 < nt; ++k)
      for (int i = 1; i + 1 < nx; ++i) {
        double t = t0 + k * dt, x = i * dx;
        Bundles b = assemble(tc, t, x);
        double lhs = 2.0 * b.P2.value() * b.LTheta.value();
        double rhs = b.M0_inner.dt().value() + b.A.value() + b.B_inner.dx().value() +
                     2.0 * b.P2.value() * b.P3.value() + 2.0 * b.P2.value() * b.P2.value();
        worst = std::max(worst, std::fabs(lhs - rhs));
      }
    return worst;
  }

  // fd_outer: tabulate the inner bundles, finite-difference only the outermost
  // time/space derivative of the M0 and divergence families
  std::vector<double> m0(static_cast<size_t>(nt) * nx), bi(static_cast<size_t>(nt) * nx);
  std::vector<double> rest(static_cast<size_t>(nt) * nx), lhs(static_cast<size_t>(nt) * nx);
  for (int k = 0; k < nt; ++k)
    for (int i = 0; i < nx; ++i) {
      double t = t0 + k * dt, x = i * dx;
      Bundles b = assemble(tc, t, x);
      size_t id = static_cast<size_t>(k) * nx + i;
      m0[id] = b.M0_inner.value();
      bi[id] = b.B_inner.value();
      rest[id] =
          b.A.value() + 2.0 * b.P2.value() * b.P3.value() + 2.0 * b.P2.value() * b.P2.value();
      lhs[id] = 2.0 * b.P2.value() * b.LTheta.value();
    }
  for (int k = 1; k + 1 < nt; ++k)
    for (int i = 1; i + 1 < nx; ++i) {
      size_t id = static_cast<size_t>(k) * nx + i;
      double m0t = (m0[id + nx] - m0[id - nx]) / (2.0 * dt);
      double bx = (bi[id + 1] - bi[id - 1]) / (2.0 * dx);
      worst = std::max(worst, std::fabs(lhs[id] - (m0t + bx + rest[id])));
    }
  return worst;
}

}  // namespace

IdentityResidual deterministic_identity_residual(const IdentityCase& tc, int nt, int nx,
                                                 IdentityMode mode) {
  if (nt < 8 || nx < 8) throw std::invalid_argument("identity: sample grid too small");
  check_bc(tc);
  IdentityResidual r;
  r.residual_norm = residual_once(tc, nt, nx, mode);
  if (mode == IdentityMode::fd_outer) {
    double r2 = residual_once(tc, 2 * nt, 2 * nx, mode);
    r.order_estimate = std::log2(r.residual_norm / r2);
  }
  return r;
}

namespace {

Jet jet_sin(double a, double b, double x0) {  // sin(a x + b) as an x-jet
  return Jet::from_derivs([=](int i, int j) {
    if (j != 0) return 0.0;
    return std::pow(a, i) * std::sin(a * x0 + b + i * M_PI / 2.0);
  });
}
Jet jet_exp_t(double c, double t0) {  // e^{c t} as a t-jet
  return Jet::from_derivs([=](int i, int j) {
    if (i != 0) return 0.0;
    return std::pow(c, j) * std::exp(c * t0);
  });
}
Jet jet_cos_t(double a, double t0) {  // cos(a t)
  return Jet::from_derivs([=](int i, int j) {
    if (i != 0) return 0.0;
    return std::pow(a, j) * std::cos(a * t0 + j * M_PI / 2.0);
  });
}

Jet bump2(double x) {  // x^2 (1-x)^2
  Jet X = Jet::var_x(x);
  Jet p = X * (Jet::constant(1.0) - X);
  return p * p;
}

}  // namespace

std::vector<IdentityCase> identity_test_library() {
  auto C_zero = [](double, double) { return Jet::constant(0.0); };
  auto C_a = [](double t, double x) {
    Jet X = Jet::var_x(x), T = Jet::var_t(t);
    return (Jet::constant(1.0) + X + T) * 0.7;
  };
  auto C_b = [](double t, double x) {
    Jet X = Jet::var_x(x), T = Jet::var_t(t);
    return 0.3 * ((X * X) * (Jet::constant(2.0) - T));
  };
  auto C_c = [](double t, double x) {
    Jet X = Jet::var_x(x), T = Jet::var_t(t);
    return 0.5 * ((X * (Jet::constant(1.0) - X)) * (Jet::constant(1.0) + T));
  };

  std::vector<IdentityCase> lib;
  lib.push_back({"poly_bump_exp",
                 [](double t, double x) { return bump2(x) * jet_exp_t(-1.0, t); },
                 [](double t, double x) {
                   Jet X = Jet::var_x(x), T = Jet::var_t(t);
                   return -1.0 * ((T + Jet::constant(1.0)) *
                                  (Jet::constant(2.0) - X * (Jet::constant(1.0) - X)));
                 },
                 C_a, C_b, C_c, -1.0});
  lib.push_back({"sine_sq_cos",
                 [](double t, double x) {
                   Jet s = jet_sin(M_PI, 0.0, x);
                   return (s * s) * (Jet::constant(2.0) + jet_cos_t(1.0, t));
                 },
                 [](double t, double x) {
                   Jet X = Jet::var_x(x), T = Jet::var_t(t);
                   return Jet::constant(-1.0) - 0.5 * T - 0.3 * (X * X);
                 },
                 C_c, C_zero, C_a, 1.0});
  lib.push_back({"cubic_bump",
                 [](double t, double x) {
                   Jet X = Jet::var_x(x);
                   Jet p = X * (Jet::constant(1.0) - X);
                   return ((p * p) * p) * jet_exp_t(-0.5, t);
                 },
                 [](double t, double x) {
                   Jet X = Jet::var_x(x), T = Jet::var_t(t);
                   return -1.0 *
                          ((Jet::constant(1.0) + T * T) *
                           (Jet::constant(1.5) - 0.5 * ((X * X) * (Jet::constant(1.0) - X))));
                 },
                 C_b, C_a, C_zero, -1.0});
  lib.push_back({"bump_sine_fast",
                 [](double t, double x) {
                   return (bump2(x) * jet_sin(M_PI, 0.0, x)) * jet_exp_t(-2.0, t);
                 },
                 [](double t, double x) {
                   Jet X = Jet::var_x(x), T = Jet::var_t(t);
                   return Jet::constant(-2.0) +
                          0.4 * ((X * (Jet::constant(1.0) - X)) * T) - 0.2 * T;
                 },
                 C_a, C_c, C_b, -1.0});
  lib.push_back({"bump_oscillating_t",
                 [](double t, double x) {
                   Jet osc = Jet::from_derivs([=](int i, int j) {
                     if (i != 0) return 0.0;
                     return (j == 0 ? 2.0 : 0.0) +
                            std::pow(3.0, j) * std::sin(3.0 * t + j * M_PI / 2.0);
                   });
                   return bump2(x) * osc;
                 },
                 [](double t, double x) {
                   Jet X = Jet::var_x(x), T = Jet::var_t(t);
                   return -1.0 * ((T + Jet::constant(0.5)) *
                                  (Jet::constant(2.0) - X * (Jet::constant(1.0) - X)));
                 },
                 C_zero, C_zero, C_zero, 1.0});
  return lib;
}

double stochastic_m0_telescoping_check(const AdaptedField& w, const M0Coefficients& co,
                                       const Grid& g) {
  const Tree& tree = w.tree();
  const int L = tree.slabs();
  const int nx = g.interior();
  if (static_cast<int>(co.K2.size()) != L + 1 || static_cast<int>(co.K2xx.size()) != L + 1 ||
      static_cast<int>(co.K0.size()) != L + 1)
    throw std::invalid_argument("telescoping check: need coefficient fields at every time level");

  auto F = [&](int level, const Field& f) {
    Field d2 = apply_d2(f, g);
    double acc = 0.0;
    for (int i = 0; i < nx; ++i)
      acc += co.delta * d2[i] * d2[i] + co.K2[level][i] * d2[i] * f[i] -
             0.5 * co.K2xx[level][i] * f[i] * f[i] + co.K0[level][i] * f[i] * f[i];
    return acc * g.h();
  };

  double lhs_hi = 0.0;
  for (int j = 0; j < tree.nodes_at(L); ++j) lhs_hi += F(L, w.field(L, j)) / tree.nodes_at(L);
  const double f0 = F(0, w.field(0, 0));
  double lhs = lhs_hi - f0;

  double rhs = 0.0, scale = std::fabs(lhs_hi) + std::fabs(f0);
  for (int l = 0; l < L; ++l) {
    const double prob = 1.0 / tree.nodes_at(l);
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      Field cur = w.field(l, j);
      Field drift = conditional_expectation(w, l, j, g);
      Field kick(nx, 0.0);
      if (tree.kick_after(l)) {
        const double* up = w.at(l + 1, 2 * j);
        const double* dn = w.at(l + 1, 2 * j + 1);
        for (int i = 0; i < nx; ++i) kick[i] = 0.5 * (up[i] - dn[i]);
      }
      // drifted endpoint difference plus the quadratic-variation correction
      double t1 = F(l + 1, drift) - F(l, cur);
      double t2 = F(l + 1, kick);  // quadratic form of the kick amplitude
      rhs += prob * (t1 + t2);
      scale += prob * (std::fabs(t1) + std::fabs(t2));
    }
  }
  if (scale == 0.0) return 0.0;
  return std::fabs(lhs - rhs) / scale;
}

}  // namespace chc
