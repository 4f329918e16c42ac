#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "treewave/graph.hpp"

namespace treewave {

using Complex = std::complex<double>;

/// Uniform grid on one edge: `cells` intervals, `cells + 1` samples.
struct EdgeGrid {
  std::size_t cells = 0;
  double dx = 0.0;
};

/// Space-time discretization of a metric tree: one uniform grid per edge
/// (endpoints included) and a shared time step. Edge samples are stored
/// contiguously; `offset(e)` locates edge `e` in flat storage.
class NetworkGrid {
 public:
  NetworkGrid() = default;
  NetworkGrid(MetricTree tree, std::vector<EdgeGrid> edges, double dt, std::size_t steps = 0);

  const MetricTree& tree() const noexcept { return tree_; }
  const EdgeGrid& edge(std::size_t e) const { return edges_[e]; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  std::size_t offset(std::size_t e) const { return offsets_[e]; }
  std::size_t samples(std::size_t e) const { return edges_[e].cells + 1; }
  std::size_t total_samples() const noexcept { return offsets_.back(); }
  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

  double dt() const noexcept { return dt_; }
  std::size_t steps() const noexcept { return steps_; }
  double horizon() const noexcept { return dt_ * static_cast<double>(steps_); }
  double min_dx() const;
  /// lambda = dt / min_j dx_j.
  double cfl_number() const { return dt_ / min_dx(); }

  /// Same spatial grid, `steps = round(T / dt)` (at least one step).
  NetworkGrid with_horizon(double T) const;
  /// Replace the time step, then snap the horizon T to it.
  NetworkGrid with_time_step(double dt, double T) const;
  /// Every edge gets `factor` times more cells and the time step is divided by
  /// `factor`, so the coarse space-time nodes are a subset of the fine ones.
  NetworkGrid refined(std::size_t factor) const;

  /// Sample index of node `n` on edge `e` (0 or cells).
  std::size_t end_sample(std::size_t e, std::size_t n) const;
  double x(std::size_t e, std::size_t i) const { return static_cast<double>(i) * edges_[e].dx; }

 private:
  MetricTree tree_;
  std::vector<EdgeGrid> edges_;
  std::vector<std::size_t> offsets_{0};
  double dt_ = 0.0;
  std::size_t steps_ = 0;
};

/// m_j = max(4, round(l_j / target_dx)), dt = cfl * min_j dx_j, no horizon yet.
NetworkGrid discretize(const MetricTree& g, double target_dx, double cfl);

/// Per-edge sample vector aligned with a NetworkGrid.
template <class T>
class NetworkField {
 public:
  NetworkField() = default;
  explicit NetworkField(const NetworkGrid& grid, T fill = T{})
      : offsets_(grid.offsets()), values_(grid.total_samples(), fill) {}
  NetworkField(std::vector<std::size_t> offsets, std::vector<T> values)
      : offsets_(std::move(offsets)), values_(std::move(values)) {}

  std::size_t edge_count() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::span<T> edge(std::size_t e) { return {values_.data() + offsets_[e], offsets_[e + 1] - offsets_[e]}; }
  std::span<const T> edge(std::size_t e) const {
    return {values_.data() + offsets_[e], offsets_[e + 1] - offsets_[e]};
  }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

  bool aligned_with(const NetworkGrid& grid) const { return offsets_ == grid.offsets(); }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<T> values_;
};

using RealField = NetworkField<double>;
using ComplexField = NetworkField<Complex>;

/// f(edge index, x) sampled on the grid.
RealField sample_field(const NetworkGrid& grid, const std::function<double(std::size_t, double)>& f);
ComplexField sample_complex_field(const NetworkGrid& grid, const std::function<Complex(std::size_t, double)>& f);
ComplexField to_complex(const RealField& f);

/// Piecewise-linear interpolation of uniform samples on [0, length].
double interpolate_profile(std::span<const double> samples, double length, double x);
std::vector<double> resample_profile(std::span<const double> samples, std::size_t count);

/// Field from per-edge uniform profiles (missing edges get `fallback`).
RealField field_from_profiles(const NetworkGrid& grid, const EdgeProfiles& profiles, double fallback = 0.0);
/// Per-edge profiles of a field (exact samples, one profile per edge id).
EdgeProfiles profiles_from_field(const NetworkGrid& grid, const RealField& f);

/// Largest pairwise mismatch of edge-endpoint samples at internal nodes.
template <class T>
double continuity_defect(const NetworkGrid& grid, const NetworkField<T>& f);

}  // namespace treewave
