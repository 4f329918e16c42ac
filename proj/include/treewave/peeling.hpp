#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "treewave/edge_inverse.hpp"
#include "treewave/forward.hpp"
#include "treewave/graph.hpp"

namespace treewave {

/// Boundary measurements of one wave experiment on a tree. Profiles follow
/// the network orientation of each edge.
struct Measurements {
  std::map<std::string, TraceRecord> neumann;    // outward derivative, every measured external node
  std::map<std::string, TraceRecord> dirichlet;  // imposed h, every external node
  EdgeProfiles u0;
  EdgeProfiles u1;
  double horizon = 0.0;

  /// Throws ValidationError unless every external node except `excluded`
  /// has Neumann data, every external node has Dirichlet data covering the
  /// horizon and every edge has initial data.
  void check(const MetricTree& g, const std::string& excluded) const;
};

/// 5 x the largest metric distance from the excluded node.
double default_peel_horizon(const MetricTree& g, const std::string& excluded);

/// Smooth initial data with |u0| >= 1: u0 = 1 + 0.1 sin^4(pi x / l) on every
/// edge. Flat to third order at the nodes, so Kirchhoff holds at t = 0 and
/// u0'' does not seed a node singularity.
std::function<double(std::size_t, double)> default_u0(const MetricTree& g);

struct SimulationSetup {
  double target_dx = 0.0;  // 0: min length / 80
  double cfl = 0.8;
  double horizon = 0.0;    // required
  bool compatible_boundary = true;  // else h = u0 at the external nodes
};

struct Simulation {
  WaveSolution solution;
  Measurements measurements;  // Neumann at every external node
};

/// Fine-grid forward run; measurements carry every external node.
Simulation simulate_measurements(const MetricTree& g, const EdgeProfiles& potential,
                                 const std::function<double(std::size_t, double)>& u0,
                                 const std::function<double(std::size_t, double)>& u1,
                                 const SimulationSetup& setup);

/// Cauchy data handed through an internal node to its last unrecovered edge.
struct NodeTransfer {
  std::string node;
  TraceRecord dirichlet;   // mean of the known edges' values
  TraceRecord neumann;     // outward derivative of the remaining edge at the node
  double discrepancy = 0.0;  // max pairwise Dirichlet difference, relative to max(1, |D|)
  double valid_until = 0.0;
  bool consistent = true;
};

struct KnownEdgeTrace {
  std::string edge;
  FarTraces traces;  // at the node, outward derivative of that edge
};

/// `known` must list every incident edge of `node` except one. Traces are
/// truncated to the shortest common length.
NodeTransfer node_transfer(const MetricTree& g, const std::string& node, const std::vector<KnownEdgeTrace>& known,
                           double tolerance = 1e-2);

struct PeelConfig {
  InverseConfig inverse;
  double bound_M = 1e300;
  double noise_level = 0.0;  // > 0: alpha per edge by the discrepancy principle
  double consistency_tol = 1e-2;
  double fit_window = 4.0;   // > 0: each edge fits data on [0, fit_window * length] only
};

struct PeelEdgeReport {
  std::string edge;
  std::string leaf_side;
  std::string interior_side;
  std::size_t stage = 0;
  double horizon = 0.0;
  bool far_estimated = false;
  bool converged = false;
  bool low_confidence = false;
  int iterations = 0;
  double alpha = 0.0;
  double J = 0.0;
  double grad_norm = 0.0;
  double residual_l2 = 0.0;
  std::optional<double> error;  // relative L2 against the truth
  std::vector<IterationRecord> history;
};

struct PeelNodeReport {
  std::string node;
  std::size_t stage = 0;
  double discrepancy = 0.0;
  double valid_until = 0.0;
  bool consistent = true;
};

struct PeelReport {
  std::string excluded;
  double horizon = 0.0;
  double dt = 0.0;
  std::vector<double> stage_horizons;  // smallest edge horizon per stage
  std::vector<PeelEdgeReport> edges;   // in processing order
  std::vector<PeelNodeReport> nodes;
  std::optional<double> total_error;   // relative L2(Lambda) against the truth
};

struct PeelResult {
  EdgeProfiles potential;  // network orientation
  PeelReport report;
};

/// Stage-by-stage leaf peeling towards the excluded node. Edges in a stage
/// are independent and may run on several threads; the outcome does not
/// depend on the thread count.
PeelResult peel_tree(const MetricTree& g, const Measurements& meas, const std::string& excluded,
                     const PeelConfig& cfg, const EdgeProfiles* truth = nullptr);

/// Relative L2(Lambda) error of `a` against `b`, edge by edge on b's samples.
double relative_network_error(const MetricTree& g, const EdgeProfiles& a, const EdgeProfiles& b);

struct CertificateNode {
  std::string node;
  double l2 = 0.0;
  double h1 = 0.0;
  double data_l2 = 0.0;
  double relative = 0.0;
};

struct ResidualCertificate {
  std::vector<CertificateNode> nodes;
  double relative = 0.0;       // sum of mismatches over sum of data norms
  bool informative = true;     // false when the measured traces vanish
};

/// Re-simulates with p_hat and compares the Neumann traces at every measured
/// node. The grid uses target_dx (0: min length / 40).
ResidualCertificate residual_certificate(const MetricTree& g, const EdgeProfiles& p_hat, const Measurements& meas,
                                         double target_dx = 0.0, double cfl = 0.8);

/// Directory layout: neumann.csv and dirichlet.csv (columns named by node
/// id) and initial.txt (`u0 <edge> v...` / `u1 <edge> v...` lines).
void write_measurements(const std::string& dir, const Measurements& meas);
Measurements read_measurements(const std::string& dir);

}  // namespace treewave
