#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chc/grid.hpp"

namespace chc {

// Finite binary (Donsker) approximation of the Brownian filtration on [0,T].
// depth d is the number of noise levels; each child edge carries an increment
// of +-sqrt(dt_noise) with probability 1/2. Conditional expectations and the
// martingale representation are exact finite sums on this tree.
//
// Time is split into slabs() slabs of length dt_noise(); a noise kick closes
// slab l exactly when l < depth. depth 0 therefore degenerates to a single
// deterministic slab over [0,T]: one tree node, two time levels.
struct Tree {
  int depth = 0;
  double T = 0.5;
  int substeps = 1;

  Tree() = default;
  Tree(int depth_, double T_, int substeps_) : depth(depth_), T(T_), substeps(substeps_) {
    if (depth < 0) throw std::invalid_argument("tree: depth must be >= 0");
    if (depth > 16) throw std::invalid_argument("tree: depth capped at 16 (memory bound)");
    if (substeps < 1) throw std::invalid_argument("tree: substeps must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("tree: T must be positive");
  }

  int slabs() const { return depth > 0 ? depth : 1; }
  double dt_noise() const { return T / slabs(); }
  double dt_sub() const { return dt_noise() / substeps; }
  int levels() const { return slabs() + 1; }  // time levels 0..slabs
  bool kick_after(int slab) const { return slab < depth; }
  int node_level(int time_level) const { return std::min(time_level, depth); }
  int nodes_at(int time_level) const { return 1 << node_level(time_level); }
  double time_of(int time_level) const { return time_level * dt_noise(); }
  // tree nodes only (2^{d+1}-1 for d>=1, 1 for d=0)
  std::int64_t tree_node_count() const { return (std::int64_t(1) << (depth + 1)) - 1; }
  // rough per-field memory estimate used in diagnostics
  std::int64_t state_value_count(const Grid& g) const {
    std::int64_t n = 0;
    for (int l = 0; l < levels(); ++l) n += nodes_at(l);
    return n * g.interior();
  }
};

// Signed Brownian increment of the edge entering (level, node): the last path
// bit of the node index (even child = +, odd child = -).
double brownian_increment(const Tree& tree, int level, int node);
// Sum of signed increments along the root-to-node path at a noise level.
double brownian_value(const Tree& tree, int level, int node);

// One spatial field per (time level, node): an adapted process. Values at a
// node depend only on the path to it.
template <class S>
class Adapted {
 public:
  Adapted() = default;
  Adapted(const Tree& tree, const Grid& grid)
      : tree_(tree), nx_(grid.interior()), data_(tree.levels()) {
    for (int l = 0; l < tree.levels(); ++l)
      data_[l].assign(static_cast<size_t>(tree.nodes_at(l)) * nx_, S{});
  }

  const Tree& tree() const { return tree_; }
  int nx() const { return nx_; }
  bool empty() const { return data_.empty(); }

  S* at(int level, int node) { return data_[level].data() + static_cast<size_t>(node) * nx_; }
  const S* at(int level, int node) const {
    return data_[level].data() + static_cast<size_t>(node) * nx_;
  }
  std::vector<S> field(int level, int node) const {
    const S* p = at(level, node);
    return std::vector<S>(p, p + nx_);
  }
  void set(int level, int node, const std::vector<S>& f) {
    std::copy(f.begin(), f.end(), at(level, node));
  }

 private:
  Tree tree_;
  int nx_ = 0;
  std::vector<std::vector<S>> data_;
};

using AdaptedField = Adapted<double>;
using AdaptedXField = Adapted<XReal>;

// Path-probability-weighted average over the nodes of a time level.
Field expectation(const AdaptedField& af, int level, const Grid& g);
// Average of the two children of (level, node); identity across kick-free slabs.
Field conditional_expectation(const AdaptedField& af, int level, int node, const Grid& g);

XField expectation(const AdaptedXField& af, int level, const Grid& g);
XField conditional_expectation(const AdaptedXField& af, int level, int node, const Grid& g);

AdaptedField constant_adapted(const Tree& tree, const Grid& grid, double value);
// builder: f(level, node, x_index) -> value
AdaptedField make_adapted(const Tree& tree, const Grid& grid,
                          const std::function<double(int, int, int)>& f);

AdaptedXField to_xadapted(const AdaptedField& af, const Grid& g);
AdaptedField to_adapted(const AdaptedXField& af, const Grid& g);

// node-level CSV dump (level,node,x,value) for small trees
std::string dump_csv(const AdaptedField& af, const Grid& g);

}  // namespace chc
