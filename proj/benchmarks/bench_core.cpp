#include <benchmark/benchmark.h>

#include <random>

#include "chc/hum.hpp"
#include "chc/spde.hpp"
#include "chc/weights.hpp"

using namespace chc;

namespace {

WeightEvaluator make_ev() {
  WeightParams p;
  p.lambda = 2.0;
  p.mu = 2.0;
  p.m = 1.0;
  p.T = 0.5;
  p.sigma_paper = false;
  p.sigma_value = 4.0;
  return WeightEvaluator(p, make_beta({0.3, 0.7}, {0.4, 0.6}));
}

Field randn_field(const Grid& g, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Field f(g.interior());
  for (auto& v : f) v = n(rng);
  return f;
}

void bm_xreal_ops(benchmark::State& state) {
  XReal a = XReal::exp_log(-3.1e17), b = XReal::exp_log(-3.1e17 + 0.3), c = XReal::of(1.7);
  for (auto _ : state) {
    XReal r = a * c + b;
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(bm_xreal_ops);

void bm_banded_solve(benchmark::State& state) {
  Grid g(static_cast<int>(state.range(0)), Bc::clamped);
  ImplicitSolver K(g, 1e-3);
  Field b = randn_field(g, 1);
  for (auto _ : state) {
    Field x = K.solve(b);
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(bm_banded_solve)->Arg(32)->Arg(128)->Arg(512);

void bm_backward_sweep(benchmark::State& state) {
  Grid g(32, Bc::clamped);
  Tree tree(static_cast<int>(state.range(0)), 0.5, 2);
  BackwardProblem bp;
  bp.grid = g;
  bp.tree = tree;
  bp.rT = AdaptedField(tree, g);
  for (int j = 0; j < tree.nodes_at(tree.slabs()); ++j) bp.rT.set(tree.slabs(), j, randn_field(g, j + 2));
  for (auto _ : state) {
    auto sol = solve_backward(bp);
    benchmark::DoNotOptimize(sol.r.at(0, 0));
  }
}
BENCHMARK(bm_backward_sweep)->Arg(2)->Arg(4)->Arg(6);

void bm_weighted_form(benchmark::State& state) {
  auto ev = make_ev();
  Grid g(32, Bc::clamped);
  Tree tree(4, 0.5, 2);
  WeightTable wt(ev, g, tree);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  AdaptedField v = make_adapted(tree, g, [&](int, int, int) { return n(rng); });
  for (auto _ : state) {
    auto r = weighted_form(v, 7, 1.2, WeightKind::theta2, {0.0, 1.0}, wt);
    benchmark::DoNotOptimize(r.value);
  }
}
BENCHMARK(bm_weighted_form);

void bm_solve_lq(benchmark::State& state) {
  auto ev = make_ev();
  LQProblem p;
  p.grid = Grid(16, Bc::clamped);
  p.tree = Tree(static_cast<int>(state.range(0)), 0.5, 2);
  p.g0 = {0.3, 0.7};
  p.y0 = implicit_step_solve(randn_field(p.grid, 5), 1e-4, p.grid);
  p.eps = 1e-2;
  p.weights = CostWeights::theorem31();
  for (auto _ : state) {
    LQSolution sol = solve_lq(p, ev);
    benchmark::DoNotOptimize(sol.terminal_norm_sq);
  }
}
BENCHMARK(bm_solve_lq)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
