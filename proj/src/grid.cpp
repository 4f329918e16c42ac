#include "treewave/grid.hpp"

#include <algorithm>
#include <cmath>

#include "treewave/error.hpp"

namespace treewave {

NetworkGrid::NetworkGrid(MetricTree tree, std::vector<EdgeGrid> edges, double dt, std::size_t steps)
    : tree_(std::move(tree)), edges_(std::move(edges)), dt_(dt), steps_(steps) {
  if (edges_.size() != tree_.edge_count()) throw ValidationError("grid/edge count mismatch");
  offsets_.assign(1, 0);
  for (const auto& eg : edges_) {
    if (eg.cells < 2 || !(eg.dx > 0.0)) throw ValidationError("degenerate edge grid");
    offsets_.push_back(offsets_.back() + eg.cells + 1);
  }
  if (!(dt_ > 0.0)) throw ValidationError("time step must be positive");
}

double NetworkGrid::min_dx() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& e : edges_) m = std::min(m, e.dx);
  return m;
}

NetworkGrid NetworkGrid::with_horizon(double T) const {
  if (!(T > 0.0)) throw ValidationError("horizon must be positive");
  auto steps = static_cast<std::size_t>(std::llround(T / dt_));
  return NetworkGrid(tree_, edges_, dt_, std::max<std::size_t>(1, steps));
}

NetworkGrid NetworkGrid::with_time_step(double dt, double T) const {
  return NetworkGrid(tree_, edges_, dt, 1).with_horizon(T);
}

NetworkGrid NetworkGrid::refined(std::size_t factor) const {
  if (factor == 0) throw ValidationError("refinement factor must be positive");
  std::vector<EdgeGrid> fine;
  for (const auto& e : edges_) fine.push_back({e.cells * factor, e.dx / static_cast<double>(factor)});
  return NetworkGrid(tree_, std::move(fine), dt_ / static_cast<double>(factor), steps_ * factor);
}

std::size_t NetworkGrid::end_sample(std::size_t e, std::size_t n) const {
  if (tree_.from_index(e) == n) return 0;
  if (tree_.to_index(e) == n) return edges_[e].cells;
  throw ValidationError("node not incident to edge");
}

NetworkGrid discretize(const MetricTree& g, double target_dx, double cfl) {
  if (!(target_dx > 0.0)) throw ValidationError("target-dx must be positive");
  if (!(cfl > 0.0) || cfl > 1.0) throw ValidationError("cfl must lie in (0, 1]");
  if (g.edge_count() == 0) throw ValidationError("graph has no edges");
  std::vector<EdgeGrid> edges;
  double min_dx = std::numeric_limits<double>::infinity();
  for (const auto& e : g.edges()) {
    auto m = static_cast<std::size_t>(std::max<long long>(4, std::llround(e.length / target_dx)));
    double dx = e.length / static_cast<double>(m);
    edges.push_back({m, dx});
    min_dx = std::min(min_dx, dx);
  }
  return NetworkGrid(g, std::move(edges), cfl * min_dx, 0);
}

RealField sample_field(const NetworkGrid& grid, const std::function<double(std::size_t, double)>& f) {
  RealField out(grid);
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto s = out.edge(e);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = f(e, grid.x(e, i));
  }
  return out;
}

ComplexField sample_complex_field(const NetworkGrid& grid, const std::function<Complex(std::size_t, double)>& f) {
  ComplexField out(grid);
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto s = out.edge(e);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = f(e, grid.x(e, i));
  }
  return out;
}

ComplexField to_complex(const RealField& f) {
  std::vector<Complex> v(f.values().begin(), f.values().end());
  return ComplexField(f.offsets(), std::move(v));
}

double interpolate_profile(std::span<const double> samples, double length, double x) {
  if (samples.size() < 2) throw ValidationError("profile needs at least 2 samples");
  const double h = length / static_cast<double>(samples.size() - 1);
  double s = std::clamp(x / h, 0.0, static_cast<double>(samples.size() - 1));
  auto i = std::min(static_cast<std::size_t>(s), samples.size() - 2);
  double w = s - static_cast<double>(i);
  return (1.0 - w) * samples[i] + w * samples[i + 1];
}

std::vector<double> resample_profile(std::span<const double> samples, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = interpolate_profile(samples, 1.0, static_cast<double>(i) / static_cast<double>(count - 1));
  return out;
}

RealField field_from_profiles(const NetworkGrid& grid, const EdgeProfiles& profiles, double fallback) {
  RealField out(grid, fallback);
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto it = profiles.find(grid.tree().edges()[e].id);
    if (it == profiles.end()) continue;
    auto s = out.edge(e);
    const double len = grid.tree().edges()[e].length;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = interpolate_profile(it->second, len, grid.x(e, i));
  }
  return out;
}

EdgeProfiles profiles_from_field(const NetworkGrid& grid, const RealField& f) {
  EdgeProfiles out;
  for (std::size_t e = 0; e < grid.edge_count(); ++e) {
    auto s = f.edge(e);
    out[grid.tree().edges()[e].id] = std::vector<double>(s.begin(), s.end());
  }
  return out;
}

template <class T>
double continuity_defect(const NetworkGrid& grid, const NetworkField<T>& f) {
  const auto& tree = grid.tree();
  double worst = 0.0;
  for (std::size_t n : tree.internal_nodes()) {
    const auto& inc = tree.incident(n);
    for (std::size_t a = 0; a < inc.size(); ++a)
      for (std::size_t b = a + 1; b < inc.size(); ++b) {
        T va = f.edge(inc[a])[grid.end_sample(inc[a], n)];
        T vb = f.edge(inc[b])[grid.end_sample(inc[b], n)];
        worst = std::max(worst, static_cast<double>(std::abs(va - vb)));
      }
  }
  return worst;
}

template double continuity_defect(const NetworkGrid&, const NetworkField<double>&);
template double continuity_defect(const NetworkGrid&, const NetworkField<Complex>&);

}  // namespace treewave
