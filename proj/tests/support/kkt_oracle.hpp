#pragma once

// Independent dense oracle for the penalized LQ problem. The stacked
// least-squares rows (tracking at substep resolution, terminal penalty,
// control weights) are assembled here from scratch with spde::solve_forward,
// and the system is solved by row-insertion Givens QR with role swapping --
// a different elimination order and pivot rule than the production solver.
// Rows carry extended-range scales; rotations never sum separated scales.

#include <vector>

#include "chc/hum.hpp"
#include "chc/spde.hpp"

namespace chc::test {

struct ControlDofs {
  struct Dof {
    bool is_u;
    int level, node, x;
  };
  std::vector<Dof> dofs;

  static ControlDofs enumerate(const chc::LQProblem& p) {
    ControlDofs d;
    const auto& tree = p.tree;
    const auto& g = p.grid;
    for (int l = 0; l < tree.slabs(); ++l)
      for (int j = 0; j < tree.nodes_at(l); ++j) {
        for (int i = 0; i < g.interior(); ++i)
          if (p.g0.contains(g.x(i))) d.dofs.push_back({true, l, j, i});
        if (tree.kick_after(l))
          for (int i = 0; i < g.interior(); ++i) d.dofs.push_back({false, l, j, i});
      }
    return d;
  }

  chc::ControlPair unpack(const std::vector<chc::XReal>& x, const chc::LQProblem& p) const {
    chc::ControlPair c{chc::AdaptedXField(p.tree, p.grid), chc::AdaptedXField(p.tree, p.grid)};
    for (size_t k = 0; k < dofs.size(); ++k) {
      const auto& d = dofs[k];
      (d.is_u ? c.u : c.U).at(d.level, d.node)[d.x] = x[k];
    }
    return c;
  }

  std::vector<chc::XReal> pack(const chc::ControlPair& c) const {
    std::vector<chc::XReal> x(dofs.size());
    for (size_t k = 0; k < dofs.size(); ++k) {
      const auto& d = dofs[k];
      x[k] = (d.is_u ? c.u : c.U).at(d.level, d.node)[d.x];
    }
    return x;
  }
};

struct OracleRow {
  chc::XReal s;
  std::vector<double> a;
  double rhs = 0.0;
};

class KKTOracle {
 public:
  ControlDofs dofs;
  std::vector<chc::XReal> solution;
  chc::XField yT_mean;

  static chc::AdaptedXField forward(const chc::LQProblem& p, const chc::ControlPair& c,
                                    bool homogeneous) {
    chc::ForwardXProblem fp;
    fp.grid = p.grid;
    fp.tree = p.tree;
    fp.g0 = p.g0;
    fp.y0 = homogeneous ? chc::XField(p.grid.interior()) : chc::to_xfield(p.y0);
    if (!homogeneous && p.phi) fp.drift_source = p.phi;
    if (!homogeneous && p.diffusion_source) fp.diffusion_source = p.diffusion_source;
    fp.control_u = &c.u;
    fp.control_U = &c.U;
    return chc::solve_forward(fp);
  }

  // tracking/terminal row values of one trajectory, substep resolution
  static std::vector<double> state_rows(const chc::LQProblem& p, const chc::ControlPair& c,
                                        bool homogeneous) {
    using namespace chc;
    const Tree& tree = p.tree;
    const Grid& g = p.grid;
    const int nx = g.interior();
    ImplicitSolver K(g, tree.dt_sub());
    AdaptedXField y = forward(p, c, homogeneous);
    std::vector<double> out;
    for (int l = 0; l < tree.slabs(); ++l)
      for (int j = 0; j < tree.nodes_at(l); ++j) {
        XField src(nx);
        if (!homogeneous && p.phi) {
          const XReal* q = p.phi->at(l, j);
          for (int i = 0; i < nx; ++i) src[i] += q[i];
        }
        const XReal* u = c.u.at(l, j);
        for (int i = 0; i < nx; ++i)
          if (p.g0.contains(g.x(i))) src[i] += u[i];
        XField cur = y.field(l, j);
        for (int s = 0; s < tree.substeps; ++s) {
          if (s > 0) {
            XField rhs = cur;
            for (int i = 0; i < nx; ++i) rhs[i] += src[i] * tree.dt_sub();
            cur = K.solve(rhs);
          }
          if (p.weights.track0)
            for (int i = 0; i < nx; ++i) out.push_back(cur[i].to_double());
          if (p.weights.track1) {
            XField d = apply_d1(cur, g);
            for (int i = 0; i < nx; ++i) out.push_back(d[i].to_double());
          }
          if (p.weights.track2) {
            XField d = apply_d2(cur, g);
            for (int i = 0; i < nx; ++i) out.push_back(d[i].to_double());
          }
        }
      }
    const int L = tree.slabs();
    for (int j = 0; j < tree.nodes_at(L); ++j)
      for (int i = 0; i < nx; ++i) out.push_back(y.at(L, j)[i].to_double());
    return out;
  }

  static std::vector<chc::XReal> row_scales(const chc::LQProblem& p, const chc::WeightTable& wt) {
    using namespace chc;
    const Tree& tree = p.tree;
    const Grid& g = p.grid;
    const int nx = g.interior();
    const auto& wp = wt.evaluator().params();
    const double ll = std::log(wp.lambda), lm = std::log(wp.mu);
    std::vector<XReal> sc;
    for (int l = 0; l < tree.slabs(); ++l) {
      const double cell = tree.dt_noise() * g.h() / tree.nodes_at(l) / tree.substeps;
      for (int j = 0; j < tree.nodes_at(l); ++j)
        for (int s = 0; s < tree.substeps; ++s) {
          int row = l * tree.substeps + s;
          if (p.weights.track0)
            for (int i = 0; i < nx; ++i)
              sc.push_back(sqrt(wt.weight_row(row, i, WeightKind::theta_eps_inv2, 0, 0.0) * cell));
          if (p.weights.track1)
            for (int i = 0; i < nx; ++i)
              sc.push_back(sqrt(wt.weight_row(row, i, WeightKind::theta_eps_inv2, -3,
                                              -2.0 * ll - 2.0 * lm) *
                                cell));
          if (p.weights.track2)
            for (int i = 0; i < nx; ++i)
              sc.push_back(sqrt(wt.weight_row(row, i, WeightKind::theta_eps_inv2, -5,
                                              -4.0 * ll - 4.0 * lm) *
                                cell));
        }
    }
    const int L = tree.slabs();
    const double tc = g.h() / tree.nodes_at(L) / p.eps;
    for (int j = 0; j < tree.nodes_at(L); ++j)
      for (int i = 0; i < nx; ++i) sc.push_back(sqrt(chc::XReal::of(tc)));
    return sc;
  }

  // row-insertion Givens QR with role swapping (keeps |tau| <= 1)
  static std::vector<chc::XReal> ls_qr_insert(std::vector<OracleRow> rows, int dim) {
    using chc::XReal;
    std::vector<OracleRow> R(dim);
    std::vector<bool> have(dim, false);
    for (auto& row : rows) {
      OracleRow v = std::move(row);
      for (int k = 0; k < dim && !v.a.empty(); ++k) {
        if (v.a[k] == 0.0) continue;
        if (!have[k]) {
          have[k] = true;
          R[k] = std::move(v);
          v.a.clear();
          break;
        }
        OracleRow& rp = R[k];
        bool swap_roles = compare(abs(v.s * v.a[k]), abs(rp.s * rp.a[k])) > 0;
        if (swap_roles) std::swap(v, rp);
        const double ajk = v.a[k], apk = rp.a[k];
        double tau = ((v.s * ajk) / (rp.s * apk)).to_double();
        double cc = 1.0 / std::sqrt(1.0 + tau * tau);
        double mu = ajk / apk;
        double nu = ((v.s * v.s * ajk) / (rp.s * rp.s * apk)).to_double();
        if (nu != 0.0) {
          for (int t = k + 1; t < dim; ++t) {
            double ajt = v.a[t], apt = rp.a[t];
            v.a[t] = ajt - mu * apt;
            rp.a[t] = apt + nu * ajt;
          }
          double vr = v.rhs, pr = rp.rhs;
          v.rhs = vr - mu * pr;
          rp.rhs = pr + nu * vr;
          rp.a[k] = apk + nu * ajk;
        } else {
          for (int t = k + 1; t < dim; ++t) v.a[t] -= mu * rp.a[t];
          v.rhs -= mu * rp.rhs;
        }
        v.a[k] = 0.0;
        if (cc != 1.0) {
          v.s = v.s * cc;
          rp.s = rp.s * cc;
        }
      }
    }
    std::vector<XReal> x(dim);
    for (int k = dim - 1; k >= 0; --k) {
      if (!have[k]) continue;
      XReal acc = R[k].s * R[k].rhs;
      for (int t = k + 1; t < dim; ++t) acc -= R[k].s * R[k].a[t] * x[t];
      x[k] = acc / (R[k].s * R[k].a[k]);
    }
    return x;
  }

  static KKTOracle solve(const chc::LQProblem& p, const chc::WeightEvaluator& ev) {
    using namespace chc;
    KKTOracle o;
    o.dofs = ControlDofs::enumerate(p);
    const int n = static_cast<int>(o.dofs.dofs.size());
    WeightTable wt(ev.with_eps(std::max(p.eps, 1e-8)), p.grid, p.tree);
    const auto& wp = wt.evaluator().params();
    const double ll = std::log(wp.lambda), lm = std::log(wp.mu);

    LQProblem hom = p;
    hom.y0 = Field(p.grid.interior(), 0.0);
    hom.phi = nullptr;
    hom.diffusion_source = nullptr;

    auto zero = o.dofs.unpack(std::vector<XReal>(n), p);
    std::vector<double> free_vals = state_rows(p, zero, false);
    std::vector<XReal> scales = row_scales(p, wt);
    const size_t ns = free_vals.size();

    std::vector<OracleRow> rows(ns + n);
    for (size_t r = 0; r < ns; ++r) {
      rows[r].s = scales[r];
      rows[r].a.assign(n, 0.0);
      rows[r].rhs = -free_vals[r];
    }
    for (int k = 0; k < n; ++k) {
      std::vector<XReal> e(n);
      e[k] = XReal::of(1.0);
      auto col = state_rows(hom, o.dofs.unpack(e, p), true);
      for (size_t r = 0; r < ns; ++r) rows[r].a[k] = col[r];
    }
    for (int k = 0; k < n; ++k) {
      const auto& d = o.dofs.dofs[k];
      OracleRow& row = rows[ns + k];
      const double cell = p.tree.dt_noise() * p.grid.h() / p.tree.nodes_at(d.level);
      row.s = d.is_u ? sqrt(wt.weight(d.level, d.x, WeightKind::theta_inv2, -7,
                                      -7.0 * ll - 8.0 * lm) *
                           cell)
                     : sqrt(wt.weight(d.level, d.x, WeightKind::theta_inv2, -5,
                                      -4.0 * ll - 4.0 * lm) *
                           cell);
      row.a.assign(n, 0.0);
      row.a[k] = 1.0;
    }

    o.solution = ls_qr_insert(std::move(rows), n);
    auto y = forward(p, o.dofs.unpack(o.solution, p), false);
    const int L = p.tree.slabs();
    o.yT_mean = XField(p.grid.interior());
    for (int j = 0; j < p.tree.nodes_at(L); ++j) {
      const XReal* v = y.at(L, j);
      for (int i = 0; i < p.grid.interior(); ++i)
        o.yT_mean[i] += v[i] * (1.0 / p.tree.nodes_at(L));
    }
    return o;
  }
};

}  // namespace chc::test
