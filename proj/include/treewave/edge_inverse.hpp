#pragma once

#include <optional>
#include <string>
#include <vector>

#include "treewave/trace.hpp"

namespace treewave {

/// Uniform samples of a function on [0, length], endpoints included. Local
/// coordinate s runs from the known end (s = 0) to the far end (s = length).
struct EdgeField {
  double length = 1.0;
  std::vector<double> values;

  EdgeField() = default;
  EdgeField(double len, std::size_t cells, double fill = 0.0) : length(len), values(cells + 1, fill) {}
  EdgeField(double len, std::vector<double> v) : length(len), values(std::move(v)) {}

  std::size_t cells() const { return values.size() - 1; }
  double dx() const { return length / static_cast<double>(cells()); }
  double x(std::size_t i) const { return dx() * static_cast<double>(i); }
  /// Piecewise-linear value at s.
  double at(double s) const;
  /// Resample onto `cells` uniform cells.
  EdgeField resampled(std::size_t cells) const;
};

double edge_l2(const EdgeField& f);
/// ||a - b|| / ||b|| in L2(0, length), after resampling `a` onto b's grid.
double relative_l2_error(const EdgeField& a, const EdgeField& b);

/// Single-edge potential recovery from Cauchy data at one end.
struct EdgeInverseProblem {
  std::string edge;        // labels, for reports
  std::string known_node;
  std::string far_node;
  double length = 1.0;
  double horizon = 0.0;    // T; data must cover [0, T]
  TraceRecord dirichlet;   // u(0, t)
  TraceRecord neumann;     // outward derivative -u_s(0, t)
  std::optional<TraceRecord> far_dirichlet;  // u(length, t) when known
  std::vector<double> u0;  // uniform samples on [0, length]
  std::vector<double> u1;
  double r = 0.0;          // required lower bound on |u0| (checked when > 0)
  double bound_M = 1e300;  // box constraint |p| <= M

  /// Throws ValidationError on inconsistent data.
  void check() const;
};

enum class Regularizer {
  l2,  // (alpha/2) ||p - prior||^2
  h1,  // (alpha/2) ||(p - prior)'||^2, no pull on the mean
};

struct InverseConfig {
  double alpha = -1.0;       // negative: 1e-3 * rms(neumann)^2
  Regularizer regularizer = Regularizer::l2;
  int max_iters = 40;
  double grad_tol = 1e-10;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 30;
  double target_dx = 0.02;   // forward grid on the edge
  double param_dx = 0.1;     // spacing of the potential samples; 0: the forward grid
  int min_param_cells = 8;
  double cfl = 0.8;
  double time_step = 0.0;     // 0: cfl * dx of the edge grid
  std::vector<double> prior;  // uniform samples; empty means 0

  double resolved_alpha(const EdgeInverseProblem& prob) const;
};

/// Discretization shared by the misfit, recovery and transfer on one edge.
struct EdgeDiscretization {
  std::size_t cells = 0;
  double dx = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;
};

EdgeDiscretization edge_discretization(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                       std::size_t cells = 0);

struct MisfitResult {
  double J = 0.0;
  double data_term = 0.0;
  double reg_term = 0.0;
  std::vector<double> grad;       // dJ/dp per sample of the candidate
  std::vector<double> grad_far;   // dJ/dg_k per time sample of the far-end trace (zero when known)
  std::vector<double> residual;   // predicted minus measured Neumann, per time sample
};

/// J(p) = 1/2 ||y[p] - d||^2_{L2(0,T)} + alpha/2 ||p - prior||^2_{L2(0,l)}
/// (or the H1 seminorm) with y[p] the outward derivative at s = 0 of the edge
/// wave solution with Dirichlet data at both ends. The forward grid comes from
/// cfg.target_dx and p is interpolated onto it by local cubics. The far-end trace is `far` when given, else
/// the problem's far Dirichlet data, else held at u0(l). Gradient by the
/// discrete adjoint.
MisfitResult edge_misfit(const EdgeField& p, const EdgeInverseProblem& prob, const InverseConfig& cfg,
                         const std::vector<double>* far = nullptr);

struct IterationRecord {
  int iter = 0;
  double J = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct EdgeRecovery {
  EdgeField p;
  EdgeDiscretization disc;
  std::vector<double> far_trace;  // far-end Dirichlet on the inversion time grid
  bool far_estimated = false;
  double alpha = 0.0;
  double J = 0.0;
  double grad_norm = 0.0;
  double residual_l2 = 0.0;       // ||y - d||_{L2(0,T)}
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> history;
};

/// Gauss-Newton with Armijo backtracking and clamping to [-M, M]. When the
/// far-end Dirichlet trace is unknown it is estimated jointly. The potential
/// lives on cfg.param_dx samples. Starts from `start` when given (resampled),
/// else p = 0.
EdgeRecovery recover_edge_potential(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                    const EdgeField* start = nullptr);

struct DiscrepancyChoice {
  double alpha = 0.0;
  double target = 0.0;  // tau * noise level in the L2(0,T) norm
  EdgeRecovery recovery;
  std::vector<std::pair<double, double>> path;  // (alpha, residual)
};

/// Largest alpha from a decreasing geometric ladder whose data residual
/// reaches tau * noise_sd * sqrt(T). Without a prior in cfg, a second ladder
/// runs with the first result's mean as a constant prior.
DiscrepancyChoice recover_with_discrepancy(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                           double noise_sd, double tau = 1.1);

struct FarTraces {
  TraceRecord dirichlet;
  TraceRecord neumann;  // outward derivative at the far node (+u_s)
  double valid_until = 0.0;
};

/// Far-end Cauchy data from the known-end data and p_hat: the edge equation
/// is marched in space (u_ss = u_tt + p u) from s = 0 with u0 on the row
/// t = 0, on the time grid of cfg. No far-end data are needed; the result
/// covers t <= T - l (the domain of dependence).
FarTraces edge_transfer(const EdgeField& p_hat, const EdgeInverseProblem& prob, const InverseConfig& cfg);
/// Same, on the recovery's time grid.
FarTraces edge_transfer(const EdgeRecovery& rec, const EdgeInverseProblem& prob, const InverseConfig& cfg);

}  // namespace treewave
