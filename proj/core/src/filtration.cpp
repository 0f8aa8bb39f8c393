#include "chc/filtration.hpp"

#include <cmath>
#include <sstream>

namespace chc {

double brownian_increment(const Tree& tree, int level, int node) {
  if (level <= 0 || level > tree.depth) return 0.0;
  double step = std::sqrt(tree.dt_noise());
  return (node % 2 == 0) ? step : -step;
}

double brownian_value(const Tree& tree, int level, int node) {
  double acc = 0.0;
  int l = std::min(level, tree.depth);
  int j = node;
  while (l > 0) {
    acc += brownian_increment(tree, l, j);
    j >>= 1;
    --l;
  }
  return acc;
}

namespace {

template <class S>
std::vector<S> expectation_impl(const Adapted<S>& af, int level, const Grid& g) {
  const Tree& tree = af.tree();
  const int nn = tree.nodes_at(level);
  const int nx = g.interior();
  std::vector<S> out(nx, S{});
  const double w = 1.0 / nn;
  for (int j = 0; j < nn; ++j) {
    const S* p = af.at(level, j);
    for (int i = 0; i < nx; ++i) out[i] += p[i] * w;
  }
  return out;
}

template <class S>
std::vector<S> cond_exp_impl(const Adapted<S>& af, int level, int node, const Grid& g) {
  const Tree& tree = af.tree();
  if (level + 1 >= tree.levels()) throw std::invalid_argument("cond_exp: no children past the last level");
  const int nx = g.interior();
  std::vector<S> out(nx, S{});
  if (tree.kick_after(level)) {
    const S* up = af.at(level + 1, 2 * node);
    const S* dn = af.at(level + 1, 2 * node + 1);
    for (int i = 0; i < nx; ++i) out[i] = (up[i] + dn[i]) * 0.5;
  } else {
    const S* p = af.at(level + 1, node);
    for (int i = 0; i < nx; ++i) out[i] = p[i];
  }
  return out;
}

}  // namespace

Field expectation(const AdaptedField& af, int level, const Grid& g) {
  return expectation_impl(af, level, g);
}
Field conditional_expectation(const AdaptedField& af, int level, int node, const Grid& g) {
  return cond_exp_impl(af, level, node, g);
}
XField expectation(const AdaptedXField& af, int level, const Grid& g) {
  return expectation_impl(af, level, g);
}
XField conditional_expectation(const AdaptedXField& af, int level, int node, const Grid& g) {
  return cond_exp_impl(af, level, node, g);
}

AdaptedField constant_adapted(const Tree& tree, const Grid& grid, double value) {
  AdaptedField af(tree, grid);
  for (int l = 0; l < tree.levels(); ++l)
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      double* p = af.at(l, j);
      for (int i = 0; i < grid.interior(); ++i) p[i] = value;
    }
  return af;
}

AdaptedField make_adapted(const Tree& tree, const Grid& grid,
                          const std::function<double(int, int, int)>& f) {
  AdaptedField af(tree, grid);
  for (int l = 0; l < tree.levels(); ++l)
    for (int j = 0; j < tree.nodes_at(l); ++j) {
      double* p = af.at(l, j);
      for (int i = 0; i < grid.interior(); ++i) p[i] = f(l, j, i);
    }
  return af;
}

AdaptedXField to_xadapted(const AdaptedField& af, const Grid& g) {
  AdaptedXField out(af.tree(), g);
  for (int l = 0; l < af.tree().levels(); ++l)
    for (int j = 0; j < af.tree().nodes_at(l); ++j) {
      const double* p = af.at(l, j);
      XReal* q = out.at(l, j);
      for (int i = 0; i < g.interior(); ++i) q[i] = XReal::of(p[i]);
    }
  return out;
}

AdaptedField to_adapted(const AdaptedXField& af, const Grid& g) {
  AdaptedField out(af.tree(), g);
  for (int l = 0; l < af.tree().levels(); ++l)
    for (int j = 0; j < af.tree().nodes_at(l); ++j) {
      const XReal* p = af.at(l, j);
      double* q = out.at(l, j);
      for (int i = 0; i < g.interior(); ++i) q[i] = p[i].to_double();
    }
  return out;
}

std::string dump_csv(const AdaptedField& af, const Grid& g) {
  std::ostringstream os;
  os.precision(17);
  os << "level,node,x,value\n";
  for (int l = 0; l < af.tree().levels(); ++l)
    for (int j = 0; j < af.tree().nodes_at(l); ++j) {
      const double* p = af.at(l, j);
      for (int i = 0; i < g.interior(); ++i)
        os << l << "," << j << "," << g.x(i) << "," << p[i] << "\n";
    }
  return os.str();
}

}  // namespace chc
