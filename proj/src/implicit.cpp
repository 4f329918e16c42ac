#include <algorithm>
#include <cmath>
#include <vector>

#include "treewave/error.hpp"
#include "treewave/forward.hpp"

namespace treewave {

namespace {

// Implicit one-step scheme W u_t = c K u on the tree, with W the lumped
// (trapezoid) mass and K the finite-volume stiffness plus potential:
//   (W - theta dt c K) u^{n+1} = (W + (1 - theta) dt c K) u^n.
// Each edge interior is a tridiagonal block coupled to its two end nodes;
// the node unknowns form a tree-structured system solved leaves-first.
template <class T>
class TreeStepper {
 public:
  TreeStepper(const NetworkGrid& grid, const RealField& p, T c, double theta, std::vector<bool> pinned)
      : grid_(grid), tree_(grid.tree()), p_(p), c_(c), theta_(theta), pinned_(std::move(pinned)) {
    factor_edges();
    factor_nodes();
  }

  // u holds u^n on entry (flat layout). `pinned_values` gives u^{n+1} at
  // pinned nodes. On exit u holds u^{n+1}.
  void step(std::span<T> u, const std::vector<T>& pinned_values) {
    const double dt = grid_.dt();
    const std::size_t N = tree_.node_count();
    // right-hand side
    rhs_.assign(u.size(), T{});
    const T b = (1.0 - theta_) * dt * c_;
    for (std::size_t e = 0; e < grid_.edge_count(); ++e) {
      const std::size_t off = grid_.offset(e);
      const std::size_t m = grid_.edge(e).cells;
      const double dx = grid_.edge(e).dx;
      for (std::size_t i = 1; i < m; ++i) {
        const std::size_t j = off + i;
        T v = dx * u[j];
        if (theta_ < 1.0)
          v += b * ((2.0 * u[j] - u[j - 1] - u[j + 1]) / dx + dx * p_.values()[j] * u[j]);
        rhs_[j] = v;
      }
    }
    node_rhs_.assign(N, T{});
    for (std::size_t n = 0; n < N; ++n) {
      if (pinned_[n]) {
        node_rhs_[n] = pinned_values[n];
        continue;
      }
      T U{};
      T ku{};
      for (std::size_t e : tree_.incident(n)) {
        const std::size_t off = grid_.offset(e);
        const double dx = grid_.edge(e).dx;
        const bool start = tree_.from_index(e) == n;
        const std::size_t m = grid_.edge(e).cells;
        U = u[off + (start ? 0 : m)];
        T a = u[off + (start ? 1 : m - 1)];
        ku += (U - a) / dx + 0.5 * dx * p_.values()[off + (start ? 0 : m)] * U;
      }
      T v = node_weight_[n] * U;
      if (theta_ < 1.0) v += b * ku;
      node_rhs_[n] = v;
    }

    // edge interiors with zero node values
    for (std::size_t e = 0; e < grid_.edge_count(); ++e) thomas(e, rhs_, z_[e]);

    // node system
    for (std::size_t n = 0; n < N; ++n) {
      if (pinned_[n]) continue;
      for (std::size_t e : tree_.incident(n)) {
        const bool start = tree_.from_index(e) == n;
        const auto& z = z_[e];
        node_rhs_[n] -= off_[e] * (start ? z.front() : z.back());
      }
    }
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const std::size_t c = *it;
      if (c == order_.front()) continue;
      node_rhs_[parent_[c]] -= up_[c] * node_rhs_[c] / pivot_[c];
    }
    std::vector<T> U(N);
    for (std::size_t idx = 0; idx < order_.size(); ++idx) {
      const std::size_t c = order_[idx];
      if (idx == 0)
        U[c] = node_rhs_[c] / pivot_[c];
      else
        U[c] = (node_rhs_[c] - down_[c] * U[parent_[c]]) / pivot_[c];
    }

    for (std::size_t e = 0; e < grid_.edge_count(); ++e) {
      const std::size_t off = grid_.offset(e);
      const std::size_t m = grid_.edge(e).cells;
      const T Ua = U[tree_.from_index(e)];
      const T Ub = U[tree_.to_index(e)];
      for (std::size_t i = 1; i < m; ++i)
        u[off + i] = z_[e][i - 1] + Ua * y_from_[e][i - 1] + Ub * y_to_[e][i - 1];
      u[off] = Ua;
      u[off + m] = Ub;
    }
  }

 private:
  void thomas(std::size_t e, const std::vector<T>& flat, std::vector<T>& out) const {
    const std::size_t off = grid_.offset(e);
    const std::size_t n = grid_.edge(e).cells - 1;
    out.resize(n);
    const T o = off_[e];
    const auto& den = den_[e];
    const auto& cp = cprime_[e];
    out[0] = flat[off + 1] / den[0];
    for (std::size_t i = 1; i < n; ++i) out[i] = (flat[off + 1 + i] - o * out[i - 1]) / den[i];
    for (std::size_t i = n - 1; i-- > 0;) out[i] -= cp[i] * out[i + 1];
  }

  void factor_edges() {
    const std::size_t E = grid_.edge_count();
    const double dt = grid_.dt();
    const T a = theta_ * dt * c_;
    off_.resize(E);
    den_.resize(E);
    cprime_.resize(E);
    y_from_.resize(E);
    y_to_.resize(E);
    z_.resize(E);
    std::vector<T> unit;
    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t off = grid_.offset(e);
      const std::size_t m = grid_.edge(e).cells;
      const std::size_t n = m - 1;
      const double dx = grid_.edge(e).dx;
      const T o = a / dx;
      off_[e] = o;
      auto& den = den_[e];
      auto& cp = cprime_[e];
      den.resize(n);
      cp.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        T d = dx - a * (2.0 / dx + dx * p_.values()[off + 1 + i]);
        den[i] = i == 0 ? d : d - o * cp[i - 1];
        if (std::abs(den[i]) < 1e-14 * dx)
          throw NumericalError("singular system on edge " + tree_.edges()[e].id);
        cp[i] = o / den[i];
      }
      unit.assign(grid_.total_samples(), T{});
      unit[off + 1] = -o;
      thomas(e, unit, y_from_[e]);
      unit[off + 1] = T{};
      unit[off + n] = -o;
      thomas(e, unit, y_to_[e]);
    }
  }

  void factor_nodes() {
    const std::size_t N = tree_.node_count();
    const double dt = grid_.dt();
    const T a = theta_ * dt * c_;
    node_weight_.assign(N, 0.0);
    std::vector<T> diag(N, T{});
    for (std::size_t n = 0; n < N; ++n) {
      if (pinned_[n]) {
        diag[n] = T(1.0);
        for (std::size_t e : tree_.incident(n)) node_weight_[n] += 0.5 * grid_.edge(e).dx;
        continue;
      }
      T d{};
      for (std::size_t e : tree_.incident(n)) {
        const std::size_t off = grid_.offset(e);
        const double dx = grid_.edge(e).dx;
        const bool start = tree_.from_index(e) == n;
        const double pend = p_.values()[off + (start ? 0 : grid_.edge(e).cells)];
        node_weight_[n] += 0.5 * dx;
        d += 0.5 * dx - a * (1.0 / dx + 0.5 * dx * pend);
        d += off_[e] * (start ? y_from_[e].front() : y_to_[e].back());
      }
      diag[n] = d;
    }
    // coupling of row n to node o through edge e
    auto coupling = [&](std::size_t n, std::size_t e) -> T {
      if (pinned_[n]) return T{};
      const bool start = tree_.from_index(e) == n;
      const auto& y = start ? y_to_[e] : y_from_[e];
      return off_[e] * (start ? y.front() : y.back());
    };

    order_.clear();
    parent_.assign(N, N);
    up_.assign(N, T{});
    down_.assign(N, T{});
    std::vector<bool> seen(N, false);
    order_.push_back(0);
    seen[0] = true;
    for (std::size_t idx = 0; idx < order_.size(); ++idx) {
      const std::size_t n = order_[idx];
      for (std::size_t e : tree_.incident(n)) {
        const std::size_t o = tree_.opposite(e, n);
        if (seen[o]) continue;
        seen[o] = true;
        parent_[o] = n;
        up_[o] = coupling(n, e);    // row parent, column child
        down_[o] = coupling(o, e);  // row child, column parent
        order_.push_back(o);
      }
    }
    if (order_.size() != N) throw ValidationError("network is not connected");
    pivot_ = diag;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const std::size_t c = *it;
      double scale = std::max(node_weight_[c], 1e-300);
      if (std::abs(pivot_[c]) < 1e-13 * scale)
        throw NumericalError("singular node system at node " + tree_.nodes()[c].id);
      if (c == order_.front()) continue;
      pivot_[parent_[c]] -= up_[c] * down_[c] / pivot_[c];
    }
  }

  const NetworkGrid& grid_;
  const MetricTree& tree_;
  const RealField& p_;
  T c_;
  double theta_;
  std::vector<bool> pinned_;

  std::vector<T> off_;
  std::vector<std::vector<T>> den_, cprime_, y_from_, y_to_, z_;
  std::vector<double> node_weight_;
  std::vector<std::size_t> order_, parent_;
  std::vector<T> up_, down_, pivot_;
  std::vector<T> rhs_, node_rhs_;
};

template <class T>
void check_aligned(const NetworkGrid& grid, const NetworkField<T>& f, const char* name) {
  if (!f.aligned_with(grid)) throw ValidationError(std::string(name) + " is not aligned with the grid");
  for (const T& v : f.values())
    if (!std::isfinite(std::abs(v))) throw ValidationError(std::string(name) + " has non-finite samples");
}

template <class T>
void check_nodes_continuous(const NetworkGrid& grid, const NetworkField<T>& f) {
  double scale = 1.0;
  for (const T& v : f.values()) scale = std::max(scale, static_cast<double>(std::abs(v)));
  if (continuity_defect(grid, f) > 1e-8 * scale) throw ValidationError("u0 is not continuous at internal nodes");
}

template <class T>
void check_finite(std::span<const T> s, std::size_t k) {
  for (const T& v : s)
    if (!std::isfinite(std::abs(v)))
      throw NumericalError("solution became non-finite at step " + std::to_string(k));
}

}  // namespace

HeatSolution solve_heat(const NetworkGrid& grid, const RealField& p, const RealField& u0) {
  if (grid.steps() < 1) throw ValidationError("grid has no time steps");
  check_aligned(grid, p, "potential");
  check_aligned(grid, u0, "u0");
  check_nodes_continuous(grid, u0);
  const auto& tree = grid.tree();
  HeatSolution sol(grid, Equation::heat);
  sol.potential = p;
  sol.boundary_note = "neumann";
  TreeStepper<double> stepper(grid, p, -1.0, 1.0, std::vector<bool>(tree.node_count(), false));
  std::vector<double> u(u0.values().begin(), u0.values().end());
  std::copy(u.begin(), u.end(), sol.snapshot(0).begin());
  std::vector<double> none(tree.node_count(), 0.0);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    stepper.step(u, none);
    std::copy(u.begin(), u.end(), sol.snapshot(k + 1).begin());
  }
  check_finite<double>(sol.snapshot(grid.steps()), grid.steps());
  return sol;
}

SchrodingerSolution solve_schrodinger(const NetworkGrid& grid, const RealField& p, const ComplexField& u0,
                                      const ComplexBoundary& h) {
  if (grid.steps() < 1) throw ValidationError("grid has no time steps");
  check_aligned(grid, p, "potential");
  check_aligned(grid, u0, "u0");
  check_nodes_continuous(grid, u0);
  check_boundary(grid, h, u0);
  const auto& tree = grid.tree();
  SchrodingerSolution sol(grid, Equation::schrodinger);
  sol.potential = p;
  sol.boundary_note = "dirichlet";
  std::vector<bool> pinned(tree.node_count(), false);
  std::vector<const std::vector<Complex>*> series(tree.node_count(), nullptr);
  for (std::size_t n : tree.external_nodes()) {
    pinned[n] = true;
    series[n] = &h.series.at(tree.nodes()[n].id);
  }
  TreeStepper<Complex> stepper(grid, p, Complex(0.0, 1.0), 0.5, pinned);
  std::vector<Complex> u(u0.values().begin(), u0.values().end());
  std::copy(u.begin(), u.end(), sol.snapshot(0).begin());
  std::vector<Complex> pv(tree.node_count());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    for (std::size_t n = 0; n < tree.node_count(); ++n)
      if (series[n]) pv[n] = (*series[n])[k + 1];
    stepper.step(u, pv);
    std::copy(u.begin(), u.end(), sol.snapshot(k + 1).begin());
  }
  check_finite<Complex>(sol.snapshot(grid.steps()), grid.steps());
  return sol;
}

}  // namespace treewave
