#include "treewave/forward.hpp"

#include <algorithm>
#include <cmath>

#include "treewave/error.hpp"

namespace treewave {

const char* to_string(Equation eq) {
  switch (eq) {
    case Equation::wave: return "wave";
    case Equation::heat: return "heat";
    case Equation::schrodinger: return "schrodinger";
  }
  return "?";
}

template <class T>
BoundaryData<T> BoundaryData<T>::zero(const NetworkGrid& grid) {
  BoundaryData out;
  for (std::size_t n : grid.tree().external_nodes())
    out.series[grid.tree().nodes()[n].id] = std::vector<T>(grid.steps() + 1, T{});
  return out;
}

template <class T>
BoundaryData<T> BoundaryData<T>::constant_from(const NetworkGrid& grid, const NetworkField<T>& u0) {
  BoundaryData out;
  const auto& tree = grid.tree();
  for (std::size_t n : tree.external_nodes()) {
    std::size_t e = tree.incident(n).front();
    T v = u0.edge(e)[grid.end_sample(e, n)];
    out.series[tree.nodes()[n].id] = std::vector<T>(grid.steps() + 1, v);
  }
  return out;
}

RealBoundary compatible_wave_boundary(const NetworkGrid& grid, const RealField& p, const RealField& u0,
                                      const RealField& u1, double omega) {
  if (!(omega > 0.0)) throw ValidationError("boundary frequency must be positive");
  RealBoundary out;
  const auto& tree = grid.tree();
  for (std::size_t n : tree.external_nodes()) {
    const std::size_t e = tree.incident(n).front();
    const std::size_t m = grid.edge(e).cells;
    if (m < 3) throw ValidationError("edge " + tree.edges()[e].id + " needs at least 3 cells");
    const std::size_t i0 = grid.end_sample(e, n);
    auto at = [&](std::span<const double> f, std::size_t j) { return i0 == 0 ? f[j] : f[m - j]; };
    const auto f = u0.edge(e);
    const double dx = grid.edge(e).dx;
    const double u = at(f, 0);
    const double uxx = (2.0 * at(f, 0) - 5.0 * at(f, 1) + 4.0 * at(f, 2) - at(f, 3)) / (dx * dx);
    const double a = uxx - at(p.edge(e), 0) * u;
    const double v = at(u1.edge(e), 0);
    std::vector<double> s(grid.steps() + 1);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double t = grid.dt() * static_cast<double>(k);
      s[k] = u + v * std::sin(omega * t) / omega + a * (1.0 - std::cos(omega * t)) / (omega * omega);
    }
    out.series[tree.nodes()[n].id] = std::move(s);
  }
  return out;
}

template struct BoundaryData<double>;
template struct BoundaryData<Complex>;

template <class T>
SolutionField<T>::SolutionField(NetworkGrid grid, Equation eq)
    : grid_(std::move(grid)), equation_(eq), stride_(grid_.total_samples()) {
  history_.assign(stride_ * (grid_.steps() + 1), T{});
}

template <class T>
std::span<const T> SolutionField<T>::snapshot(std::size_t k) const {
  if (k > grid_.steps()) throw ValidationError("snapshot index out of range");
  return {history_.data() + k * stride_, stride_};
}

template <class T>
std::span<T> SolutionField<T>::snapshot(std::size_t k) {
  if (k > grid_.steps()) throw ValidationError("snapshot index out of range");
  return {history_.data() + k * stride_, stride_};
}

template <class T>
std::span<const T> SolutionField<T>::edge_at(std::size_t k, std::size_t e) const {
  return snapshot(k).subspan(grid_.offset(e), grid_.samples(e));
}

template <class T>
NetworkField<T> SolutionField<T>::field(std::size_t k) const {
  auto s = snapshot(k);
  return NetworkField<T>(grid_.offsets(), std::vector<T>(s.begin(), s.end()));
}

template class SolutionField<double>;
template class SolutionField<Complex>;

namespace {

template <class T>
void check_initial(const NetworkGrid& grid, const NetworkField<T>& f, const char* name) {
  if (!f.aligned_with(grid)) throw ValidationError(std::string(name) + " is not aligned with the grid");
  for (const T& v : f.values())
    if (!std::isfinite(std::abs(v))) throw ValidationError(std::string(name) + " has non-finite samples");
}

template <class T>
void check_continuous(const NetworkGrid& grid, const NetworkField<T>& f, const char* name) {
  double scale = 1.0;
  for (const T& v : f.values()) scale = std::max(scale, static_cast<double>(std::abs(v)));
  if (continuity_defect(grid, f) > 1e-8 * scale)
    throw ValidationError(std::string(name) + " is not continuous at internal nodes");
}

}  // namespace

template <class T>
void check_boundary(const NetworkGrid& grid, const BoundaryData<T>& h, const NetworkField<T>& u0) {
  const auto& tree = grid.tree();
  for (std::size_t n : tree.external_nodes()) {
    const auto& id = tree.nodes()[n].id;
    auto it = h.series.find(id);
    if (it == h.series.end()) throw ValidationError("missing boundary data for external node " + id);
    if (it->second.size() < grid.steps() + 1)
      throw ValidationError("boundary data for " + id + " is shorter than the time axis");
    std::size_t e = tree.incident(n).front();
    T v0 = u0.edge(e)[grid.end_sample(e, n)];
    if (std::abs(it->second[0] - v0) > 1e-8 * std::max(1.0, static_cast<double>(std::abs(v0))))
      throw ValidationError("boundary data at " + id + " is incompatible with the initial value");
  }
}

template void check_boundary(const NetworkGrid&, const BoundaryData<double>&, const NetworkField<double>&);
template void check_boundary(const NetworkGrid&, const BoundaryData<Complex>&, const NetworkField<Complex>&);

WaveSolution solve_wave(const NetworkGrid& grid, const RealField& p, const RealField& u0, const RealField& u1,
                        const RealBoundary& h, const WaveOptions& opts) {
  const auto& tree = grid.tree();
  if (grid.steps() < 1) throw ValidationError("grid has no time steps");
  if (grid.cfl_number() > 1.0 + 1e-12)
    throw ValidationError("CFL number " + format_double(grid.cfl_number()) + " exceeds 1");
  check_initial(grid, p, "potential");
  check_initial(grid, u0, "u0");
  check_initial(grid, u1, "u1");
  check_continuous(grid, u0, "u0");
  const bool dirichlet = opts.external == ExternalCondition::dirichlet;
  if (dirichlet) check_boundary(grid, h, u0);

  WaveSolution sol(grid, Equation::wave);
  sol.potential = p;
  sol.boundary_note = dirichlet ? "dirichlet" : "neumann";

  const double dt = grid.dt();
  const double dt2 = dt * dt;
  const std::size_t total = grid.total_samples();
  std::vector<double> g(total, 0.0);
  auto load_source = [&](std::size_t k) {
    if (!opts.source) return;
    std::fill(g.begin(), g.end(), 0.0);
    opts.source(k, g);
  };

  std::vector<const std::vector<double>*> hseries(tree.node_count(), nullptr);
  if (dirichlet)
    for (std::size_t n : tree.external_nodes()) hseries[n] = &h.series.at(tree.nodes()[n].id);

  auto set_nodes = [&](std::span<double> next, std::size_t k) {
    for (std::size_t n = 0; n < tree.node_count(); ++n) {
      const auto& inc = tree.incident(n);
      double U;
      if (hseries[n]) {
        U = (*hseries[n])[k];
      } else {
        double num = 0.0, den = 0.0;
        for (std::size_t e : inc) {
          const std::size_t off = grid.offset(e);
          const std::size_t m = grid.edge(e).cells;
          const double dx = grid.edge(e).dx;
          double a, b;
          if (tree.from_index(e) == n) {
            a = next[off + 1];
            b = next[off + 2];
          } else {
            a = next[off + m - 1];
            b = next[off + m - 2];
          }
          num += (4.0 * a - b) / dx;
          den += 3.0 / dx;
        }
        U = num / den;
      }
      for (std::size_t e : inc) next[grid.offset(e) + grid.end_sample(e, n)] = U;
    }
  };

  auto s0 = sol.snapshot(0);
  std::copy(u0.values().begin(), u0.values().end(), s0.begin());

  {
    load_source(0);
    auto s1 = sol.snapshot(1);
    for (std::size_t e = 0; e < grid.edge_count(); ++e) {
      const std::size_t off = grid.offset(e);
      const std::size_t m = grid.edge(e).cells;
      const double inv = 1.0 / (grid.edge(e).dx * grid.edge(e).dx);
      for (std::size_t i = 1; i < m; ++i) {
        const std::size_t j = off + i;
        double acc = (s0[j - 1] - 2.0 * s0[j] + s0[j + 1]) * inv - p.values()[j] * s0[j] + g[j];
        s1[j] = s0[j] + dt * u1.values()[j] + 0.5 * dt2 * acc;
      }
    }
    set_nodes(s1, 1);
  }

  for (std::size_t k = 1; k < grid.steps(); ++k) {
    load_source(k);
    auto prev = sol.snapshot(k - 1);
    auto cur = sol.snapshot(k);
    auto next = sol.snapshot(k + 1);
    for (std::size_t e = 0; e < grid.edge_count(); ++e) {
      const std::size_t off = grid.offset(e);
      const std::size_t m = grid.edge(e).cells;
      const double inv = 1.0 / (grid.edge(e).dx * grid.edge(e).dx);
      for (std::size_t i = 1; i < m; ++i) {
        const std::size_t j = off + i;
        double acc = (cur[j - 1] - 2.0 * cur[j] + cur[j + 1]) * inv - p.values()[j] * cur[j] + g[j];
        next[j] = 2.0 * cur[j] - prev[j] + dt2 * acc;
      }
    }
    set_nodes(next, k + 1);
    if (k % 256 == 0) {
      for (double v : next)
        if (!std::isfinite(v))
          throw NumericalError("wave solution became non-finite at step " + std::to_string(k + 1));
    }
  }
  for (double v : sol.snapshot(grid.steps()))
    if (!std::isfinite(v)) throw NumericalError("wave solution became non-finite");
  return sol;
}

double energy(const WaveSolution& sol, std::size_t k) {
  const auto& grid = sol.grid();
  const std::size_t last = grid.steps();
  if (k > last) throw ValidationError("energy index out of range");
  if (last < 2) throw ValidationError("energy needs at least 3 snapshots");
  const double dt = grid.dt();
  double total = 0.0;
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    const std::size_t m = grid.edge(e).cells;
    const double dx = grid.edge(e).dx;
    auto u = sol.edge_at(k, e);
    double ut2 = 0.0;
    for (std::size_t i = 0; i <= m; ++i) {
      double ut;
      if (k == 0)
        ut = (-3.0 * u[i] + 4.0 * sol.edge_at(1, e)[i] - sol.edge_at(2, e)[i]) / (2.0 * dt);
      else if (k == last)
        ut = (3.0 * u[i] - 4.0 * sol.edge_at(k - 1, e)[i] + sol.edge_at(k - 2, e)[i]) / (2.0 * dt);
      else
        ut = (sol.edge_at(k + 1, e)[i] - sol.edge_at(k - 1, e)[i]) / (2.0 * dt);
      double w = (i == 0 || i == m) ? 0.5 : 1.0;
      ut2 += w * ut * ut;
    }
    double ux2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double d = (u[i + 1] - u[i]) / dx;
      ux2 += d * d;
    }
    total += (ut2 + ux2) * dx;
  }
  return total;
}

template <class T>
T outward_derivative(std::span<const T> s, bool at_start, double dx, DerivativeStencil stencil) {
  const std::size_t n = s.size();
  auto f = [&](std::size_t i) { return at_start ? s[i] : s[n - 1 - i]; };
  if (stencil == DerivativeStencil::second_order) {
    if (n < 3) throw ValidationError("edge needs at least 3 samples for a derivative");
    return (3.0 * f(0) - 4.0 * f(1) + f(2)) / (2.0 * dx);
  }
  if (n < 4) throw ValidationError("edge needs at least 4 samples for a third-order derivative");
  return (11.0 * f(0) - 18.0 * f(1) + 9.0 * f(2) - 2.0 * f(3)) / (6.0 * dx);
}

template double outward_derivative(std::span<const double>, bool, double, DerivativeStencil);
template Complex outward_derivative(std::span<const Complex>, bool, double, DerivativeStencil);

namespace {

void push_value(TraceRecord& tr, double v) { tr.values.push_back(v); }
void push_value(TraceRecord& tr, Complex v) {
  tr.values.push_back(v.real());
  tr.imag.push_back(v.imag());
}

}  // namespace

template <class T>
TraceRecord extract_trace(const SolutionField<T>& sol, const std::string& node, TraceSide side,
                          const std::string& edge, DerivativeStencil stencil) {
  const auto& grid = sol.grid();
  const auto& tree = grid.tree();
  const std::size_t n = tree.node_index(node);
  const std::size_t e = tree.edge_index(edge);
  if (tree.from_index(e) != n && tree.to_index(e) != n)
    throw ValidationError("edge " + edge + " is not incident to node " + node);
  const bool at_start = tree.from_index(e) == n;
  TraceRecord tr;
  tr.node = node;
  tr.edge = edge;
  tr.kind = side == TraceSide::dirichlet ? TraceKind::dirichlet : TraceKind::neumann_outward;
  tr.t0 = 0.0;
  tr.dt = grid.dt();
  tr.values.reserve(sol.snapshot_count());
  for (std::size_t k = 0; k < sol.snapshot_count(); ++k) {
    auto s = sol.edge_at(k, e);
    T v = side == TraceSide::dirichlet ? s[at_start ? 0 : s.size() - 1]
                                       : outward_derivative<T>(s, at_start, grid.edge(e).dx, stencil);
    push_value(tr, v);
  }
  return tr;
}

template TraceRecord extract_trace(const SolutionField<double>&, const std::string&, TraceSide, const std::string&,
                                   DerivativeStencil);
template TraceRecord extract_trace(const SolutionField<Complex>&, const std::string&, TraceSide,
                                   const std::string&, DerivativeStencil);

template <class T>
std::vector<TraceRecord> kirchhoff_residual(const SolutionField<T>& sol, DerivativeStencil stencil) {
  const auto& grid = sol.grid();
  const auto& tree = grid.tree();
  std::vector<TraceRecord> out;
  for (std::size_t n : tree.internal_nodes()) {
    TraceRecord tr;
    tr.node = tree.nodes()[n].id;
    tr.kind = TraceKind::residual;
    tr.dt = grid.dt();
    tr.t0 = grid.dt();
    for (std::size_t k = 1; k < sol.snapshot_count(); ++k) {
      T sum{};
      for (std::size_t e : tree.incident(n))
        sum += outward_derivative<T>(sol.edge_at(k, e), tree.from_index(e) == n, grid.edge(e).dx, stencil);
      tr.values.push_back(std::abs(sum));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

template std::vector<TraceRecord> kirchhoff_residual(const SolutionField<double>&, DerivativeStencil);
template std::vector<TraceRecord> kirchhoff_residual(const SolutionField<Complex>&, DerivativeStencil);

template <class T>
double continuity_residual(const SolutionField<T>& sol) {
  double worst = 0.0;
  for (std::size_t k = 0; k < sol.snapshot_count(); ++k)
    worst = std::max(worst, continuity_defect(sol.grid(), sol.field(k)));
  return worst;
}

template double continuity_residual(const SolutionField<double>&);
template double continuity_residual(const SolutionField<Complex>&);

double max_abs(const TraceRecord& tr) {
  double m = 0.0;
  for (std::size_t k = 0; k < tr.count(); ++k) m = std::max(m, std::sqrt(tr.magnitude_squared(k)));
  return m;
}

}  // namespace treewave
