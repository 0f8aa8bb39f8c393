#include "chc/spde.hpp"

#include <cmath>

namespace chc {

namespace {

template <class S>
bool entry_finite(const S& v);
template <>
bool entry_finite<double>(const double& v) {
  return std::isfinite(v);
}
template <>
bool entry_finite<XReal>(const XReal& v) {
  return std::isfinite(v.frac());
}

template <class S>
void check_field(const std::vector<S>& f, int level, int node, const char* what) {
  for (const S& v : f)
    if (!entry_finite(v)) throw NumericalFailure(std::string(what) + ": non-finite value", level, node);
}

template <class S>
std::vector<int> mask_indices(const Grid& g, const Interval& g0) {
  std::vector<int> idx;
  for (int i = 0; i < g.interior(); ++i)
    if (g0.contains(g.x(i))) idx.push_back(i);
  return idx;
}

template <class S>
Adapted<S> solve_forward_impl(const ForwardProblemT<S>& p) {
  const Grid& g = p.grid;
  const Tree& tree = p.tree;
  const int nx = g.interior();
  const double dt_sub = tree.dt_sub();
  const double root_dt = std::sqrt(tree.dt_noise());
  ImplicitSolver K(g, dt_sub);
  auto mask = mask_indices<S>(g, p.g0);

  Adapted<S> y(tree, g);
  if (static_cast<int>(p.y0.size()) != nx) throw std::invalid_argument("solve_forward: y0 size");
  y.set(0, 0, p.y0);

  for (int l = 0; l < tree.slabs(); ++l) {
    const double t = tree.time_of(l);
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      std::vector<S> cur = y.field(l, j);
      const std::vector<S> start = cur;

      // fixed part of the drift source on this slab
      std::vector<S> src(nx, S{});
      if (p.drift_source) {
        const S* q = p.drift_source->at(l, j);
        for (int i = 0; i < nx; ++i) src[i] += q[i];
      }
      if (p.control_u) {
        const S* q = p.control_u->at(l, j);
        for (int i : mask) src[i] += q[i];
      }

      const double bval = brownian_value(tree, std::min(l, tree.depth), j);
      for (int s = 0; s < tree.substeps; ++s) {
        std::vector<S> rhs = cur;
        for (int i = 0; i < nx; ++i) rhs[i] += src[i] * dt_sub;
        if (p.f) {
          if constexpr (std::is_same_v<S, double>) {
            Field yx = apply_d1(cur, g), yxx = apply_d2(cur, g);
            for (int i = 0; i < nx; ++i)
              rhs[i] += p.f(t, g.x(i), cur[i], yx[i], yxx[i], bval) * dt_sub;
          } else {
            throw std::invalid_argument("solve_forward: nonlinear hooks need the double path");
          }
        }
        cur = K.solve(rhs);
      }
      check_field(cur, l, j, "solve_forward");

      if (tree.kick_after(l)) {
        std::vector<S> amp(nx, S{});
        if (p.control_U) {
          const S* q = p.control_U->at(l, j);
          for (int i = 0; i < nx; ++i) amp[i] += q[i];
        }
        if (p.diffusion_source) {
          const S* q = p.diffusion_source->at(l, j);
          for (int i = 0; i < nx; ++i) amp[i] += q[i];
        }
        if (p.g) {
          if constexpr (std::is_same_v<S, double>) {
            Field yx = apply_d1(start, g), yxx = apply_d2(start, g);
            for (int i = 0; i < nx; ++i)
              amp[i] += p.g(t, g.x(i), start[i], yx[i], yxx[i], bval);
          } else {
            throw std::invalid_argument("solve_forward: nonlinear hooks need the double path");
          }
        }
        std::vector<S> up = cur, dn = cur;
        for (int i = 0; i < nx; ++i) {
          up[i] += amp[i] * root_dt;
          dn[i] -= amp[i] * root_dt;
        }
        y.set(l + 1, 2 * j, up);
        y.set(l + 1, 2 * j + 1, dn);
      } else {
        y.set(l + 1, j, cur);
      }
    }
  }
  return y;
}

template <class S>
BackwardSolutionT<S> solve_backward_impl(const BackwardProblemT<S>& p) {
  const Grid& g = p.grid;
  const Tree& tree = p.tree;
  const int nx = g.interior();
  const double dt_sub = tree.dt_sub();
  const double root_dt = std::sqrt(tree.dt_noise());
  ImplicitSolver K(g, dt_sub);

  BackwardSolutionT<S> sol{Adapted<S>(tree, g), Adapted<S>(tree, g)};
  const int L = tree.slabs();
  for (int j = 0; j < tree.nodes_at(L); ++j) sol.r.set(L, j, p.rT.field(L, j));

  for (int l = L - 1; l >= 0; --l) {
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      std::vector<S> m(nx, S{});
      if (tree.kick_after(l)) {
        const S* up = sol.r.at(l + 1, 2 * j);
        const S* dn = sol.r.at(l + 1, 2 * j + 1);
        std::vector<S> rep(nx, S{});
        for (int i = 0; i < nx; ++i) {
          m[i] = (up[i] + dn[i]) * 0.5;
          rep[i] = (up[i] - dn[i]) * (0.5 / root_dt);
        }
        sol.R.set(l, j, rep);
      } else {
        m = sol.r.field(l + 1, j);
      }

      std::vector<S> phi(nx, S{});
      bool has_phi = false;
      if (p.phi0) {
        const S* q = p.phi0->at(l, j);
        for (int i = 0; i < nx; ++i) phi[i] += q[i];
        has_phi = true;
      }
      if (p.phi1) {
        auto d = apply_d1(p.phi1->field(l, j), g);
        for (int i = 0; i < nx; ++i) phi[i] += d[i];
        has_phi = true;
      }
      if (p.phi2) {
        auto d = apply_d2(p.phi2->field(l, j), g);
        for (int i = 0; i < nx; ++i) phi[i] += d[i];
        has_phi = true;
      }

      std::vector<S> cur = m;
      for (int s = 0; s < tree.substeps; ++s) {
        if (has_phi)
          for (int i = 0; i < nx; ++i) cur[i] -= phi[i] * dt_sub;
        cur = K.solve(cur);
      }
      check_field(cur, l, j, "solve_backward");
      sol.r.set(l, j, cur);
    }
  }
  return sol;
}

}  // namespace

AdaptedField solve_forward(const ForwardProblem& p) { return solve_forward_impl(p); }
AdaptedXField solve_forward(const ForwardXProblem& p) { return solve_forward_impl(p); }
BackwardSolution solve_backward(const BackwardProblem& p) { return solve_backward_impl(p); }
BackwardXSolution solve_backward(const BackwardXProblem& p) { return solve_backward_impl(p); }

namespace {

template <class S>
std::vector<S> smooth_source_impl(const ImplicitSolver& K, int substeps, const std::vector<S>& v) {
  std::vector<S> acc(v.size(), S{});
  std::vector<S> cur = v;
  for (int s = 0; s < substeps; ++s) {
    cur = K.solve(cur);
    for (size_t i = 0; i < v.size(); ++i) acc[i] += cur[i];
  }
  for (size_t i = 0; i < v.size(); ++i) acc[i] *= K.dt();
  return acc;
}

}  // namespace

Field smooth_source(const ImplicitSolver& K, int substeps, const Field& v) {
  return smooth_source_impl(K, substeps, v);
}
XField smooth_source(const ImplicitSolver& K, int substeps, const XField& v) {
  return smooth_source_impl(K, substeps, v);
}

double duality_mismatch(const ForwardProblem& fp, const AdaptedField& y, const BackwardProblem& bp,
                        const BackwardSolution& bs) {
  if (fp.f || fp.g) throw std::invalid_argument("duality_mismatch: linear problems only");
  const Grid& g = fp.grid;
  const Tree& tree = fp.tree;
  const int nx = g.interior();
  const double dt = tree.dt_noise();
  ImplicitSolver K(g, tree.dt_sub());

  double pairing = 0.0, scale = 0.0;
  for (int l = 0; l < tree.slabs(); ++l) {
    const double prob = 1.0 / tree.nodes_at(l);
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      Field m = conditional_expectation(bs.r, l, j, g);

      Field src(nx, 0.0);
      if (fp.drift_source) {
        const double* q = fp.drift_source->at(l, j);
        for (int i = 0; i < nx; ++i) src[i] += q[i];
      }
      if (fp.control_u) {
        const double* q = fp.control_u->at(l, j);
        for (int i = 0; i < nx; ++i)
          if (fp.g0.contains(g.x(i))) src[i] += q[i];
      }
      double t1 = dot(smooth_source(K, tree.substeps, src), m, g);

      double t2 = 0.0;
      if (tree.kick_after(l)) {
        Field amp(nx, 0.0);
        if (fp.control_U) {
          const double* q = fp.control_U->at(l, j);
          for (int i = 0; i < nx; ++i) amp[i] += q[i];
        }
        if (fp.diffusion_source) {
          const double* q = fp.diffusion_source->at(l, j);
          for (int i = 0; i < nx; ++i) amp[i] += q[i];
        }
        t2 = dt * dot(amp, bs.R.field(l, j), g);
      }

      Field phi(nx, 0.0);
      if (bp.phi0) {
        const double* q = bp.phi0->at(l, j);
        for (int i = 0; i < nx; ++i) phi[i] += q[i];
      }
      if (bp.phi1) {
        auto d = apply_d1(bp.phi1->field(l, j), g);
        for (int i = 0; i < nx; ++i) phi[i] += d[i];
      }
      if (bp.phi2) {
        auto d = apply_d2(bp.phi2->field(l, j), g);
        for (int i = 0; i < nx; ++i) phi[i] += d[i];
      }
      double t3 = dot(y.field(l, j), smooth_source(K, tree.substeps, phi), g);

      pairing += prob * (t1 + t2 + t3);
      scale += prob * (std::fabs(t1) + std::fabs(t2) + std::fabs(t3));
    }
  }

  const int L = tree.slabs();
  double end_hi = 0.0;
  for (int j = 0; j < tree.nodes_at(L); ++j)
    end_hi += dot(y.field(L, j), bs.r.field(L, j), g) / tree.nodes_at(L);
  double end_lo = dot(y.field(0, 0), bs.r.field(0, 0), g);
  double endpoint = end_hi - end_lo;
  scale += std::fabs(end_hi) + std::fabs(end_lo);

  if (scale == 0.0) return 0.0;
  return std::fabs(endpoint - pairing) / scale;
}

}  // namespace chc
