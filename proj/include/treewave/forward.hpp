#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "treewave/grid.hpp"
#include "treewave/trace.hpp"

namespace treewave {

enum class Equation { wave, heat, schrodinger };

const char* to_string(Equation eq);

/// Time series per external node, sampled at t_k = k * dt, k = 0..steps.
template <class T>
struct BoundaryData {
  std::map<std::string, std::vector<T>> series;

  /// h(t) = 0 at every external node.
  static BoundaryData zero(const NetworkGrid& grid);
  /// h(t) = u0(Q) for all t, which is compatible with the initial data.
  static BoundaryData constant_from(const NetworkGrid& grid, const NetworkField<T>& u0);
};

using RealBoundary = BoundaryData<double>;

/// Wave Dirichlet data that agrees with the PDE at t = 0 through second order:
/// h(t) = u0 + u1 sin(wt)/w + a (1 - cos(wt))/w^2, a = u0'' - p u0 at the node.
/// Constant data is incompatible unless a = 0, and the resulting corner
/// singularity pollutes traces at first order.
RealBoundary compatible_wave_boundary(const NetworkGrid& grid, const RealField& p, const RealField& u0,
                                      const RealField& u1, double omega = 6.283185307179586);
using ComplexBoundary = BoundaryData<Complex>;

/// Every external node has a series covering the time axis and h(0) matches
/// u0 within 1e-8 (relative to max(1, |u0|)).
template <class T>
void check_boundary(const NetworkGrid& grid, const BoundaryData<T>& h, const NetworkField<T>& u0);

/// Time-indexed snapshots t_k = k * dt, k = 0..steps, stored contiguously.
template <class T>
class SolutionField {
 public:
  SolutionField() = default;
  SolutionField(NetworkGrid grid, Equation eq);

  const NetworkGrid& grid() const noexcept { return grid_; }
  Equation equation() const noexcept { return equation_; }
  std::size_t snapshot_count() const noexcept { return grid_.steps() + 1; }
  double time(std::size_t k) const { return grid_.dt() * static_cast<double>(k); }

  std::span<const T> snapshot(std::size_t k) const;
  std::span<T> snapshot(std::size_t k);
  std::span<const T> edge_at(std::size_t k, std::size_t e) const;
  NetworkField<T> field(std::size_t k) const;

  /// Potential and boundary description used for the run.
  RealField potential;
  std::string boundary_note;

 private:
  NetworkGrid grid_;
  Equation equation_ = Equation::wave;
  std::size_t stride_ = 0;
  std::vector<T> history_;
};

using WaveSolution = SolutionField<double>;
using HeatSolution = SolutionField<double>;
using SchrodingerSolution = SolutionField<Complex>;

enum class ExternalCondition { dirichlet, neumann };

/// Fills the source g(., t_k) for step k into flat grid-aligned storage.
using WaveSource = std::function<void(std::size_t k, std::span<double> g)>;

struct WaveOptions {
  ExternalCondition external = ExternalCondition::dirichlet;
  WaveSource source;  // empty: g = 0
};

/// Explicit leapfrog for u_tt - u_xx + p u = g with continuity and Kirchhoff
/// coupling at internal nodes. Each internal node value solves
///   sum_j (3 U - 4 a_j + b_j) / (2 dx_j) = 0
/// where a_j, b_j are the first two samples of edge j away from the node.
/// The first step is the second-order Taylor start.
WaveSolution solve_wave(const NetworkGrid& grid, const RealField& p, const RealField& u0, const RealField& u1,
                        const RealBoundary& h, const WaveOptions& opts = {});

/// Implicit Euler for u_t - u_xx + p u = 0, zero Neumann at external nodes.
HeatSolution solve_heat(const NetworkGrid& grid, const RealField& p, const RealField& u0);

/// Crank-Nicolson for i u_t - u_xx + p u = 0 with Dirichlet h at external
/// nodes. Unitary in the trapezoid L2 norm when h = 0 and p is real.
SchrodingerSolution solve_schrodinger(const NetworkGrid& grid, const RealField& p, const ComplexField& u0,
                                      const ComplexBoundary& h);

// ---------------------------------------------------------------------------
// Diagnostics

/// E(t_k) = ||u_t||^2 + ||u_x||^2 over the network (trapezoid). u_t is
/// centered, one-sided second-order at the first and last snapshot.
double energy(const WaveSolution& sol, std::size_t k);

enum class TraceSide { dirichlet, neumann_outward };

enum class DerivativeStencil {
  second_order,  // (3 f0 - 4 f1 + f2) / 2h, the stencil the node solve enforces
  third_order,   // (11 f0 - 18 f1 + 9 f2 - 2 f3) / 6h, independent check
};

/// Nodal value, or the outward normal derivative (-u_x at I(e), +u_x at T(e)).
template <class T>
TraceRecord extract_trace(const SolutionField<T>& sol, const std::string& node, TraceSide side,
                          const std::string& edge, DerivativeStencil stencil = DerivativeStencil::second_order);

/// Outward derivative of one edge at one of its end samples, given the
/// samples of that edge.
template <class T>
T outward_derivative(std::span<const T> edge_samples, bool at_start, double dx,
                     DerivativeStencil stencil = DerivativeStencil::second_order);

/// |sum_j d_n u_j(P, t)| per internal node P, for t_k with k >= 1 (snapshot 0
/// is the supplied initial data, not solver output).
template <class T>
std::vector<TraceRecord> kirchhoff_residual(const SolutionField<T>& sol,
                                            DerivativeStencil stencil = DerivativeStencil::second_order);

/// Max over time of the continuity defect at internal nodes.
template <class T>
double continuity_residual(const SolutionField<T>& sol);

double max_abs(const TraceRecord& tr);

}  // namespace treewave
