#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treewave/forward.hpp"
#include "treewave/graph.hpp"
#include "treewave/trace.hpp"

namespace treewave {

// ---------------------------------------------------------------------------
// Reports

struct ReportTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  /// Column `name` parsed as numbers.
  std::vector<double> numbers(const std::string& column) const;
};

/// Plain-text report: `key: value` header lines, `param`/`aggregate`/`flag`
/// lines, then CSV blocks between `[table <name>]` and `[end]`. Floats use
/// 17 significant digits.
struct ExperimentReport {
  std::string experiment;
  std::string version = TREEWAVE_VERSION;
  std::uint64_t seed = 0;
  std::string graph_hash;
  double wall_clock = 0.0;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::vector<std::pair<std::string, double>> aggregates;
  std::vector<std::string> flags;
  std::vector<ReportTable> tables;

  void param(const std::string& key, const std::string& value);
  void param(const std::string& key, double value);
  void aggregate(const std::string& key, double value);
  std::optional<double> find_aggregate(const std::string& key) const;
  const ReportTable& table(const std::string& name) const;

  void write(std::ostream& out) const;
  std::string str() const;
  /// report.txt plus one <table>.csv per table.
  void save(const std::string& dir) const;
};

ExperimentReport parse_report(const std::string& text);

// ---------------------------------------------------------------------------
// Ensembles

/// Stateless 64-bit mixer for per-member seeds.
std::uint64_t member_seed(std::uint64_t base, std::uint64_t index);

/// Clipped low-order Fourier series per edge:
///   p_e(x) = c0 + sum_{k=1..modes} (a_k cos(k pi x / l) + b_k sin(k pi x / l)) / k^2,
/// c0 ~ U(-M/2, M/2), a_k, b_k ~ U(-M/2, M/2), then clipped to [-M, M].
/// Edge coefficients are drawn in edge-id order from one seeded generator.
EdgeProfiles random_smooth_potential(const MetricTree& g, std::uint64_t seed, double M, int modes = 3,
                                     std::size_t cells = 64);

/// Random tree with `edges` edges: node i attaches to a uniformly chosen
/// earlier node, random orientation, lengths uniform in [min_len, max_len].
MetricTree random_tree(std::size_t edges, std::uint64_t seed, double min_len = 0.2, double max_len = 2.0);

// ---------------------------------------------------------------------------
// Observability

struct ObservabilitySetup {
  std::string excluded;            // unmeasured external node; empty: the first external node in id order
  std::vector<double> horizons;    // T values, each <= the solved horizon
  double target_dx = 0.01;
  double cfl = 0.8;
};

struct ObservabilityRun {
  std::size_t member = 0;
  double T = 0.0;
  double initial_norm2 = 0.0;  // ||a||^2_{L2(Lambda)}
  double trace_energy = 0.0;   // sum over measured nodes of int_0^T |d_n u|^2
  double ratio = 0.0;          // +inf when the traces vanish
};

struct ObservabilityResult {
  std::vector<ObservabilityRun> runs;
  std::vector<std::pair<double, double>> constants;  // (T, max ratio)
  std::vector<std::size_t> excluded_members;         // a == 0
  ExperimentReport report;
};

/// u_tt - u_xx + p u = 0, u(0) = 0, u_t(0) = a, u = 0 at external nodes;
/// ratio ||a||^2 / sum_j int_0^T |d_n u_j(Q_j, t)|^2 per member and T.
ObservabilityResult run_observability(const MetricTree& g, const EdgeProfiles& p,
                                      const std::vector<EdgeProfiles>& ensemble, const ObservabilitySetup& setup);

// ---------------------------------------------------------------------------
// Stability

struct StabilitySetup {
  std::string excluded;  // empty: first external node in id order
  double horizon = 0.0;
  double target_dx = 0.02;
  double cfl = 0.8;
  std::function<double(std::size_t, double)> u0;  // empty: default_u0
  std::optional<NoiseSpec> noise;                 // on the q traces, seed mixed per member and node
  bool refine = false;                            // repeat on the grid refined by 2
};

struct StabilityRun {
  std::size_t member = 0;
  double numerator = 0.0;    // ||q - p||_{L2(Lambda)}
  double denominator = 0.0;  // sum_j ||d_n u_j[p] - d_n u_j[q]||_{H1(0,T)}
  double ratio = 0.0;        // NaN when flagged
  bool flagged = false;      // denominator < 1e-12
};

struct StabilityResult {
  std::vector<StabilityRun> runs;
  std::vector<StabilityRun> refined;  // when setup.refine
  double max_ratio = 0.0;
  double max_ratio_refined = 0.0;
  ExperimentReport report;
};

/// Both potentials see the same initial and boundary data (the boundary is
/// compatible for p). Members run through parallel_for.
StabilityResult run_stability(const MetricTree& g, const std::vector<std::pair<EdgeProfiles, EdgeProfiles>>& pairs,
                              const StabilitySetup& setup);

// ---------------------------------------------------------------------------
// Uniqueness

struct UniquenessSetup {
  std::string excluded;
  double horizon = 0.0;
  double target_dx = 0.02;
  double cfl = 0.8;
  double tolerance = 1e-10;
};

struct TraceDifference {
  std::string equation;  // wave | heat | schrodinger
  std::string node;
  double max_abs = 0.0;
};

struct UniquenessResult {
  std::vector<TraceDifference> differences;
  double wave_max = 0.0;
  double heat_max = 0.0;
  double schrodinger_max = 0.0;
  double potential_l2 = 0.0;  // ||p - q||_{L2(Lambda)}
  bool wave_consistent = true;
  bool heat_consistent = true;
  bool schrodinger_consistent = true;
  bool consistent = true;     // all three
  ExperimentReport report;
};

/// Wave (Neumann), heat (Dirichlet, zero-flux ends) and Schrodinger
/// (Neumann) traces at every external node except the excluded one.
UniquenessResult run_uniqueness_check(const MetricTree& g, const EdgeProfiles& p, const EdgeProfiles& q,
                                      const UniquenessSetup& setup);

// ---------------------------------------------------------------------------
// Trace estimate

struct TraceEstimate {
  double trace_energy = 0.0;  // sum_j ||d_n u_j(Q_j)||^2_{L2(0,T)}
  double data_norm = 0.0;     // ||u0||^2_{H1_0} + ||u1||^2_{L2} + ||g||^2_{L1(0,T;L2)}
  double ratio = 0.0;
};

/// Wave run with zero Dirichlet data and source g; all external nodes.
TraceEstimate hidden_regularity_ratio(const NetworkGrid& grid, const RealField& p, const RealField& u0,
                                      const RealField& u1,
                                      const std::function<double(std::size_t, double, double)>& source);

}  // namespace treewave
