#include "chc/carleman.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace chc {

namespace {

bool adapted_zero(const AdaptedField* f) {
  if (!f) return true;
  const Tree& tree = f->tree();
  for (int l = 0; l < tree.levels(); ++l)
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      const double* p = f->at(l, j);
      for (int i = 0; i < f->nx(); ++i)
        if (p[i] != 0.0) return false;
    }
  return true;
}

AdaptedField derive(const AdaptedField& v, const Grid& g,
                    Field (*op)(const Field&, const Grid&)) {
  AdaptedField out(v.tree(), g);
  for (int l = 0; l < v.tree().levels(); ++l)
    for (int j = 0; j < v.tree().nodes_at(l); ++j) out.set(l, j, op(v.field(l, j), g));
  return out;
}

XReal total_of(const std::vector<CarlemanReport::Term>& terms) {
  XReal acc;
  for (const auto& t : terms) acc += t.value;
  return acc;
}

}  // namespace

CarlemanReport carest2_sides(const BackwardProblem& bp, const BackwardSolution& sol,
                             const WeightTable& wt, const Interval& g0) {
  if (!adapted_zero(bp.phi1) || !adapted_zero(bp.phi2))
    throw std::invalid_argument("carest2_sides: the L2-source estimate requires phi1 = phi2 = 0");
  const Grid& g = wt.grid();
  const auto& p = wt.evaluator().params();
  const double ll = std::log(p.lambda), lm = std::log(p.mu);
  const Interval full{0.0, 1.0};

  AdaptedField rx = derive(sol.r, g, &apply_d1);
  AdaptedField rxx = derive(sol.r, g, &apply_d2);

  CarlemanReport rep;
  // initial-time term lambda^4 mu^5 e^{4 mu (10m+1)} E||theta(0) r(0)||^2
  rep.lhs.push_back({"init", weighted_slice(sol.r, 0, 0,
                                            4.0 * ll + 5.0 * lm + 4.0 * p.mu * (10.0 * p.m + 1.0),
                                            WeightKind::theta2, full, wt)});
  rep.lhs.push_back(
      {"rxx", weighted_form(rxx, 3, 3.0 * ll + 4.0 * lm, WeightKind::theta2, full, wt).value});
  rep.lhs.push_back(
      {"rx", weighted_form(rx, 5, 5.0 * ll + 6.0 * lm, WeightKind::theta2, full, wt).value});
  auto rr = weighted_form(sol.r, 7, 7.0 * ll + 8.0 * lm, WeightKind::theta2, full, wt);
  rep.lhs.push_back({"r", rr.value});
  rep.lhs_zero = rr.is_zero;

  rep.rhs.push_back(
      {"local", weighted_form(sol.r, 7, 7.0 * ll + 8.0 * lm, WeightKind::theta2, g0, wt).value});
  if (bp.phi0)
    rep.rhs.push_back(
        {"phi0", weighted_form(*bp.phi0, 0, 0.0, WeightKind::theta2, full, wt).value});
  rep.rhs.push_back(
      {"R", weighted_form(sol.R, 5, 4.0 * ll + 4.0 * lm, WeightKind::theta2, full, wt).value});

  rep.lhs_total = total_of(rep.lhs);
  rep.rhs_total = total_of(rep.rhs);
  return rep;
}

CarlemanReport carest1_sides(const BackwardProblem& bp, const BackwardSolution& sol,
                             const WeightTable& wt, const Interval& g0) {
  const Grid& g = wt.grid();
  const auto& p = wt.evaluator().params();
  const double ll = std::log(p.lambda), lm = std::log(p.mu);
  const Interval full{0.0, 1.0};

  AdaptedField rx = derive(sol.r, g, &apply_d1);
  AdaptedField rxx = derive(sol.r, g, &apply_d2);

  CarlemanReport rep;
  // lambda^3 mu^4 e^{30 mu m} E theta^2(0) r^2(0)
  rep.lhs.push_back({"init", weighted_slice(sol.r, 0, 0, 3.0 * ll + 4.0 * lm + 30.0 * p.mu * p.m,
                                            WeightKind::theta2, full, wt)});
  rep.lhs.push_back(
      {"rxx", weighted_form(rxx, 3, 3.0 * ll + 4.0 * lm, WeightKind::theta2, full, wt).value});
  rep.lhs.push_back(
      {"rx", weighted_form(rx, 5, 5.0 * ll + 6.0 * lm, WeightKind::theta2, full, wt).value});
  auto rr = weighted_form(sol.r, 7, 7.0 * ll + 8.0 * lm, WeightKind::theta2, full, wt);
  rep.lhs.push_back({"r", rr.value});
  rep.lhs_zero = rr.is_zero;

  if (bp.phi0)
    rep.rhs.push_back(
        {"phi0", weighted_form(*bp.phi0, 0, 0.0, WeightKind::theta2, full, wt).value});
  if (bp.phi1)
    rep.rhs.push_back(
        {"phi1", weighted_form(*bp.phi1, 3, 2.0 * ll + 2.0 * lm, WeightKind::theta2, full, wt).value});
  if (bp.phi2)
    rep.rhs.push_back(
        {"phi2", weighted_form(*bp.phi2, 5, 4.0 * ll + 4.0 * lm, WeightKind::theta2, full, wt).value});
  rep.rhs.push_back(
      {"local", weighted_form(sol.r, 7, 7.0 * ll + 8.0 * lm, WeightKind::theta2, g0, wt).value});
  rep.rhs.push_back(
      {"R", weighted_form(sol.R, 5, 4.0 * ll + 4.0 * lm, WeightKind::theta2, full, wt).value});

  rep.lhs_total = total_of(rep.lhs);
  rep.rhs_total = total_of(rep.rhs);
  return rep;
}

namespace {

AdaptedField random_smooth(const Tree& tree, const Grid& g, std::mt19937_64& rng, double scale,
                           bool localized, const Interval& g0) {
  // i.i.d. standard normal nodal values smoothed by one implicit step so that
  // grid-scale noise does not dominate the |r_xx| terms
  std::normal_distribution<double> n(0.0, 1.0);
  ImplicitSolver K(g, 1e-4);
  AdaptedField out(tree, g);
  for (int l = 0; l < tree.levels(); ++l)
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      Field f(g.interior());
      for (int i = 0; i < g.interior(); ++i) {
        double x = g.x(i);
        f[i] = (localized && !g0.contains(x)) ? 0.0 : scale * n(rng);
      }
      out.set(l, j, K.solve(f));
    }
  return out;
}

}  // namespace

EnsembleResult ensemble_ratio(const EnsembleSpec& spec, const WeightEvaluator& ev) {
  if (spec.n < 1) throw std::invalid_argument("ensemble_ratio: n must be >= 1");
  Grid g(spec.grid_n, spec.bc);
  Tree tree(spec.depth, ev.params().T, spec.substeps);
  WeightTable wt(ev, g, tree);

  EnsembleResult res;
  std::ostringstream csv;
  csv.precision(17);
  csv << "seed,log_lhs_init,log_lhs_rxx,log_lhs_rx,log_lhs_r,log_rhs_total,log_ratio\n";

  for (int k = 0; k < spec.n; ++k) {
    std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(k) * 0x9e3779b97f4a7c15ULL;
    std::mt19937_64 rng(seed);

    BackwardProblem bp;
    bp.grid = g;
    bp.tree = tree;
    bp.rT = random_smooth(tree, g, rng, spec.rt_scale, spec.localized, spec.g0);
    AdaptedField p0 = random_smooth(tree, g, rng, spec.src_scale, spec.localized, spec.g0);
    AdaptedField p1, p2;
    bp.phi0 = &p0;
    if (spec.which == CarlemanKind::carest1) {
      p1 = random_smooth(tree, g, rng, spec.src_scale, spec.localized, spec.g0);
      p2 = random_smooth(tree, g, rng, spec.src_scale, spec.localized, spec.g0);
      bp.phi1 = &p1;
      bp.phi2 = &p2;
    }
    auto sol = solve_backward(bp);
    CarlemanReport rep = (spec.which == CarlemanKind::carest1)
                             ? carest1_sides(bp, sol, wt, spec.g0)
                             : carest2_sides(bp, sol, wt, spec.g0);
    double lr = rep.log_ratio();
    res.log_ratios.push_back(lr);
    {
      XReal rxx, r;
      for (const auto& t : rep.lhs) {
        if (t.name == "rxx") rxx = t.value;
        if (t.name == "r") r = t.value;
      }
      res.log_rxx_over_r.push_back(r.is_zero() ? 0.0 : (rxx / r).log_abs());
    }

    csv << seed;
    for (const auto& t : rep.lhs) csv << "," << t.log();
    csv << "," << rep.rhs_total.log_abs() << "," << lr << "\n";
  }

  std::vector<double> sorted = res.log_ratios;
  std::sort(sorted.begin(), sorted.end());
  res.max_log_ratio = sorted.back();
  res.median_log_ratio = sorted[sorted.size() / 2];
  res.q90_log_ratio = sorted[static_cast<size_t>(0.9 * (sorted.size() - 1))];
  std::vector<double> s2 = res.log_rxx_over_r;
  std::sort(s2.begin(), s2.end());
  res.median_log_rxx_over_r = s2[s2.size() / 2];
  res.csv = csv.str();
  return res;
}

}  // namespace chc
