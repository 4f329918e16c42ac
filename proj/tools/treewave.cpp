#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "treewave/error.hpp"
#include "treewave/experiments.hpp"
#include "treewave/peeling.hpp"

using namespace treewave;

namespace {

using Clock = std::chrono::steady_clock;

struct Common {
  std::string network;
  std::string out;
  double T = 0.0;
  double target_dx = 0.02;
  double cfl = 0.8;
  std::uint64_t seed = 0;
  double noise_level = 0.0;
};

void add_common(CLI::App* app, Common& c, bool network = true) {
  if (network) app->add_option("--network", c.network, "Network file (node/edge/potential lines)")->required();
  app->add_option("--out", c.out, "Directory for report.txt and CSV files");
  app->add_option("--target-dx", c.target_dx, "Target spatial step")->capture_default_str();
  app->add_option("--cfl", c.cfl, "dt / min dx")->capture_default_str();
}

std::string require_excluded(const MetricTree& g, const std::string& excluded) {
  if (excluded.empty()) return excluded;
  if (g.node(excluded).kind != NodeKind::external) throw ValidationError("node " + excluded + " is not external");
  return excluded;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << text;
}

std::string in_dir(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// report to --out, or to stdout
void emit(const ExperimentReport& rep, const std::string& out) {
  if (out.empty()) rep.write(std::cout);
  else {
    rep.save(out);
    std::cout << "wrote " << in_dir(out, "report.txt") << '\n';
  }
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// forward / heat / schrodinger ------------------------------------------------

int run_forward(const Common& c, double noise_level, std::uint64_t seed, bool constant_boundary) {
  const auto t0 = Clock::now();
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  require_valid_tree(g);
  if (!(c.T > 0.0)) throw ValidationError("--T must be positive");
  SimulationSetup setup;
  setup.target_dx = c.target_dx;
  setup.cfl = c.cfl;
  setup.horizon = c.T;
  setup.compatible_boundary = !constant_boundary;
  auto sim = simulate_measurements(g, net.potentials, default_u0(g), [](std::size_t, double) { return 0.0; }, setup);
  const auto& sol = sim.solution;
  const auto& grid = sol.grid();
  if (noise_level > 0.0) {
    std::size_t j = 0;
    for (auto& [node, tr] : sim.measurements.neumann) tr = add_noise(tr, {noise_level, member_seed(seed, j++)});
  }

  ExperimentReport rep;
  rep.experiment = "forward";
  rep.seed = seed;
  rep.graph_hash = graph_hash(g);
  rep.param("network", c.network);
  rep.param("T", grid.horizon());
  rep.param("target_dx", c.target_dx);
  rep.param("cfl", c.cfl);
  rep.param("dt", grid.dt());
  rep.param("boundary", constant_boundary ? "constant" : "compatible");
  rep.param("noise", noise_level);
  const double e0 = energy(sol, 0), e1 = energy(sol, sol.snapshot_count() - 1);
  rep.aggregate("energy_initial", e0);
  rep.aggregate("energy_final", e1);
  double kr = 0.0;
  for (const auto& tr : kirchhoff_residual(sol)) kr = std::max(kr, max_abs(tr));
  rep.aggregate("kirchhoff_residual", kr);
  rep.aggregate("continuity_residual", continuity_residual(sol));

  ReportTable nodes{"traces_summary", {"node", "kind", "l2", "h1"}, {}};
  std::vector<std::pair<std::string, const TraceRecord*>> series;
  for (const auto& [node, tr] : sim.measurements.neumann) {
    nodes.add_row({node, "neumann", format_double(norm_l2_time(tr)), format_double(norm_h1_time(tr))});
    series.emplace_back(node + ".neumann", &tr);
  }
  for (const auto& [node, tr] : sim.measurements.dirichlet) series.emplace_back(node + ".dirichlet", &tr);
  rep.tables.push_back(std::move(nodes));
  rep.wall_clock = seconds_since(t0);
  emit(rep, c.out);
  if (!c.out.empty()) {
    write_trace_csv(in_dir(c.out, "traces.csv"), series);
    write_measurements(in_dir(c.out, "measurements"), sim.measurements);
  }
  return 0;
}

int run_heat(const Common& c) {
  const auto t0 = Clock::now();
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  require_valid_tree(g);
  if (!(c.T > 0.0)) throw ValidationError("--T must be positive");
  const auto grid = discretize(g, c.target_dx, c.cfl).with_horizon(c.T);
  const auto p = field_from_profiles(grid, net.potentials);
  const auto sol = solve_heat(grid, p, sample_field(grid, default_u0(g)));
  ExperimentReport rep;
  rep.experiment = "heat";
  rep.graph_hash = graph_hash(g);
  rep.param("network", c.network);
  rep.param("T", grid.horizon());
  rep.param("target_dx", c.target_dx);
  rep.param("dt", grid.dt());
  std::vector<TraceRecord> traces;
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    traces.push_back(extract_trace(sol, id, TraceSide::dirichlet, g.edges()[g.incident(n).front()].id));
  }
  ReportTable t{"traces_summary", {"node", "initial", "final"}, {}};
  std::vector<std::pair<std::string, const TraceRecord*>> series;
  for (const auto& tr : traces) {
    t.add_row({tr.node, format_double(tr.values.front()), format_double(tr.values.back())});
    series.emplace_back(tr.node, &tr);
  }
  rep.tables.push_back(std::move(t));
  rep.wall_clock = seconds_since(t0);
  emit(rep, c.out);
  if (!c.out.empty()) write_trace_csv(in_dir(c.out, "traces.csv"), series);
  return 0;
}

int run_schrodinger(const Common& c) {
  const auto t0 = Clock::now();
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  require_valid_tree(g);
  if (!(c.T > 0.0)) throw ValidationError("--T must be positive");
  const auto grid = discretize(g, c.target_dx, c.cfl).with_horizon(c.T);
  const auto p = field_from_profiles(grid, net.potentials);
  const auto u0 = to_complex(sample_field(grid, default_u0(g)));
  const auto sol = solve_schrodinger(grid, p, u0, ComplexBoundary::constant_from(grid, u0));
  ExperimentReport rep;
  rep.experiment = "schrodinger";
  rep.graph_hash = graph_hash(g);
  rep.param("network", c.network);
  rep.param("T", grid.horizon());
  rep.param("target_dx", c.target_dx);
  rep.param("dt", grid.dt());
  rep.aggregate("norm_initial", norm_l2_space(sol.field(0), grid));
  rep.aggregate("norm_final", norm_l2_space(sol.field(sol.snapshot_count() - 1), grid));
  std::vector<TraceRecord> traces;
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    traces.push_back(extract_trace(sol, id, TraceSide::neumann_outward, g.edges()[g.incident(n).front()].id));
  }
  ReportTable t{"traces_summary", {"node", "l2"}, {}};
  std::vector<std::pair<std::string, const TraceRecord*>> series;
  for (const auto& tr : traces) {
    t.add_row({tr.node, format_double(norm_l2_time(tr))});
    series.emplace_back(tr.node, &tr);
  }
  rep.tables.push_back(std::move(t));
  rep.wall_clock = seconds_since(t0);
  emit(rep, c.out);
  if (!c.out.empty()) write_trace_csv(in_dir(c.out, "traces.csv"), series);
  return 0;
}

// peel ------------------------------------------------------------------------

struct PeelArgs {
  std::string measurements;
  std::string excluded;
  double alpha = -1.0;
  int max_iters = 40;
  double grad_tol = 1e-10;
  double bound_M = 1e300;
  double param_dx = 0.1;
  double fit_window = 4.0;
  std::string regularizer = "l2";
};

int run_peel(const Common& c, const PeelArgs& a) {
  const auto t0 = Clock::now();
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  require_valid_tree(g);
  require_excluded(g, a.excluded);
  const auto meas = read_measurements(a.measurements);
  PeelConfig cfg;
  cfg.inverse.alpha = a.alpha;
  cfg.inverse.max_iters = a.max_iters;
  cfg.inverse.grad_tol = a.grad_tol;
  cfg.inverse.target_dx = c.target_dx;
  cfg.inverse.param_dx = a.param_dx;
  cfg.inverse.cfl = c.cfl;
  cfg.inverse.regularizer = a.regularizer == "h1" ? Regularizer::h1 : Regularizer::l2;
  cfg.bound_M = a.bound_M;
  cfg.noise_level = c.noise_level;
  cfg.fit_window = a.fit_window;
  const bool has_truth = !net.potentials.empty();
  const auto res = peel_tree(g, meas, a.excluded, cfg, has_truth ? &net.potentials : nullptr);
  const auto& pr = res.report;

  ExperimentReport rep;
  rep.experiment = "peel";
  rep.graph_hash = graph_hash(g);
  rep.param("network", c.network);
  rep.param("measurements", a.measurements);
  rep.param("excluded", a.excluded);
  rep.param("T", pr.horizon);
  rep.param("dt", pr.dt);
  rep.param("target_dx", c.target_dx);
  rep.param("param_dx", a.param_dx);
  rep.param("alpha", a.alpha);
  rep.param("regularizer", a.regularizer);
  rep.param("max_iters", static_cast<double>(a.max_iters));
  rep.param("bound_M", a.bound_M);
  rep.param("noise", c.noise_level);
  rep.param("fit_window", a.fit_window);
  rep.aggregate("stages", static_cast<double>(pr.stage_horizons.size()));
  if (pr.total_error) rep.aggregate("relative_error", *pr.total_error);
  const auto cert = residual_certificate(g, res.potential, meas);
  rep.aggregate("residual_certificate", cert.relative);

  ReportTable edges{"edges",
                    {"edge", "stage", "leaf", "interior", "horizon", "iterations", "converged", "low_confidence",
                     "far_estimated", "alpha", "J", "grad_norm", "residual_l2", "error"},
                    {}};
  ReportTable diag{"diagnostics", {"edge", "iter", "J", "grad_norm", "step"}, {}};
  for (const auto& e : pr.edges) {
    edges.add_row({e.edge, std::to_string(e.stage), e.leaf_side, e.interior_side, format_double(e.horizon),
                   std::to_string(e.iterations), e.converged ? "1" : "0", e.low_confidence ? "1" : "0",
                   e.far_estimated ? "1" : "0", format_double(e.alpha), format_double(e.J),
                   format_double(e.grad_norm), format_double(e.residual_l2), e.error ? format_double(*e.error) : ""});
    if (e.low_confidence) rep.flags.push_back("edge " + e.edge + " low confidence");
    for (const auto& h : e.history)
      diag.add_row({e.edge, std::to_string(h.iter), format_double(h.J), format_double(h.grad_norm),
                    format_double(h.step)});
  }
  ReportTable nodes{"nodes", {"node", "stage", "discrepancy", "valid_until", "consistent"}, {}};
  for (const auto& n : pr.nodes) {
    nodes.add_row({n.node, std::to_string(n.stage), format_double(n.discrepancy), format_double(n.valid_until),
                   n.consistent ? "1" : "0"});
    if (!n.consistent) rep.flags.push_back("node " + n.node + " Dirichlet discrepancy");
  }
  rep.tables = {std::move(edges), std::move(nodes), std::move(diag)};
  rep.wall_clock = seconds_since(t0);

  const auto recovered = serialize_network(NetworkFile{g, res.potential});
  if (c.out.empty()) {
    std::cout << recovered;
    std::cerr << rep.str();
  } else {
    rep.save(c.out);
    write_text(in_dir(c.out, "potential.net"), recovered);
    std::cout << "wrote " << in_dir(c.out, "potential.net") << " and " << in_dir(c.out, "report.txt") << '\n';
  }
  return 0;
}

// experiments -----------------------------------------------------------------

struct EnsembleArgs {
  std::string excluded;
  std::vector<double> horizons;
  std::size_t ensemble = 20;
  int modes = 3;
  double bound_M = 3.0;
  bool refine = false;
};

int run_observability_cmd(const Common& c, const EnsembleArgs& a) {
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  std::vector<EdgeProfiles> ens;
  for (std::size_t m = 0; m < a.ensemble; ++m)
    ens.push_back(random_smooth_potential(g, member_seed(c.seed, m), a.bound_M, a.modes));
  ObservabilitySetup s;
  s.excluded = require_excluded(g, a.excluded);
  s.horizons = a.horizons;
  s.target_dx = c.target_dx;
  s.cfl = c.cfl;
  auto r = run_observability(g, net.potentials, ens, s);
  r.report.seed = c.seed;
  r.report.param("network", c.network);
  r.report.param("modes", static_cast<double>(a.modes));
  r.report.param("amplitude", a.bound_M);
  emit(r.report, c.out);
  return 0;
}

int run_stability_cmd(const Common& c, const EnsembleArgs& a) {
  const auto net = load_network(c.network);
  const auto& g = net.tree;
  std::vector<std::pair<EdgeProfiles, EdgeProfiles>> pairs;
  for (std::size_t m = 0; m < a.ensemble; ++m)
    pairs.emplace_back(random_smooth_potential(g, member_seed(c.seed, 2 * m), a.bound_M, a.modes),
                       random_smooth_potential(g, member_seed(c.seed, 2 * m + 1), a.bound_M, a.modes));
  StabilitySetup s;
  s.excluded = require_excluded(g, a.excluded);
  s.horizon = c.T;
  s.target_dx = c.target_dx;
  s.cfl = c.cfl;
  s.refine = a.refine;
  if (c.noise_level > 0.0) s.noise = NoiseSpec{c.noise_level, c.seed};
  auto r = run_stability(g, pairs, s);
  r.report.seed = c.seed;
  r.report.param("network", c.network);
  r.report.param("bound_M", a.bound_M);
  r.report.param("modes", static_cast<double>(a.modes));
  emit(r.report, c.out);
  return 0;
}

int run_uniqueness_cmd(const Common& c, const std::string& other, const std::string& excluded, double tol) {
  const auto np = load_network(c.network);
  const auto nq = load_network(other);
  if (graph_hash(np.tree) != graph_hash(nq.tree)) throw ValidationError("--q network has a different topology");
  UniquenessSetup s;
  s.excluded = require_excluded(np.tree, excluded);
  s.horizon = c.T;
  s.target_dx = c.target_dx;
  s.cfl = c.cfl;
  s.tolerance = tol;
  auto r = run_uniqueness_check(np.tree, np.potentials, nq.potentials, s);
  r.report.param("network", c.network);
  r.report.param("q", other);
  emit(r.report, c.out);
  return 0;
}

int run_transform(const Common& c, const std::string& input, const std::string& column, double dt,
                  std::size_t count) {
  const auto t0 = Clock::now();
  const auto table = read_csv_table(input);
  const auto wave = trace_from_table(table, column);
  if (count == 0) throw ValidationError("--count must be positive");
  const auto heat = reznitzkaya(wave, dt, count);
  ExperimentReport rep;
  rep.experiment = "transform";
  rep.param("input", input);
  rep.param("column", column);
  rep.param("dt", dt);
  rep.param("count", static_cast<double>(count));
  rep.param("wave_end", wave.end_time());
  rep.aggregate("heat_first", heat.values.front());
  rep.aggregate("heat_last", heat.values.back());
  rep.wall_clock = seconds_since(t0);
  emit(rep, c.out);
  if (!c.out.empty()) write_trace_csv(in_dir(c.out, "heat.csv"), {{column, &heat}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treewave: wave, heat and Schrodinger equations on metric trees, potential recovery by leaf peeling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TREEWAVE_VERSION);

  Common c;
  auto* fwd = app.add_subcommand("forward", "Wave run with default initial data; traces, report and a measurements directory");
  add_common(fwd, c);
  fwd->add_option("--T", c.T, "Time horizon")->required();
  fwd->add_option("--noise-level", c.noise_level, "Gaussian noise on Neumann traces, fraction of trace RMS");
  fwd->add_option("--seed", c.seed, "Noise seed");
  bool constant_boundary = false;
  fwd->add_flag("--constant-boundary", constant_boundary, "Hold h = u0 at external nodes instead of compatible data");

  auto* heat = app.add_subcommand("heat", "Heat run (implicit Euler, zero flux at external nodes); Dirichlet traces");
  add_common(heat, c);
  heat->add_option("--T", c.T, "Time horizon")->required();

  auto* schr = app.add_subcommand("schrodinger", "Schrodinger run (Crank-Nicolson); Neumann traces and norm drift");
  add_common(schr, c);
  schr->add_option("--T", c.T, "Time horizon")->required();

  PeelArgs pa;
  auto* peel = app.add_subcommand("peel", "Recover the potential from boundary measurements by leaf peeling");
  add_common(peel, c);
  peel->add_option("--measurements", pa.measurements, "Measurements directory (neumann.csv, dirichlet.csv, initial.txt)")
      ->required();
  peel->add_option("--excluded", pa.excluded, "Unmeasured external node")->required();
  peel->add_option("--alpha", pa.alpha, "Regularization weight; negative: 1e-3 * rms(data)^2")->capture_default_str();
  peel->add_option("--max-iters", pa.max_iters, "Gauss-Newton iterations per edge")->capture_default_str();
  peel->add_option("--grad-tol", pa.grad_tol, "Gradient norm stopping tolerance")->capture_default_str();
  peel->add_option("--bound-M", pa.bound_M, "Box constraint |p| <= M");
  peel->add_option("--param-dx", pa.param_dx, "Spacing of the potential unknowns")->capture_default_str();
  peel->add_option("--fit-window", pa.fit_window, "Fit data on [0, w * edge length]; 0 uses the full horizon")
      ->capture_default_str();
  peel->add_option("--regularizer", pa.regularizer, "l2 or h1")->check(CLI::IsMember({"l2", "h1"}))->capture_default_str();
  peel->add_option("--noise-level", c.noise_level, "Known noise level; > 0 selects alpha by the discrepancy principle");
  peel->get_option("--target-dx")->description("Inversion grid step");
  c.target_dx = 0.02;

  EnsembleArgs ea;
  auto* obs = app.add_subcommand("observability", "Empirical observability constants over random initial velocities");
  add_common(obs, c);
  obs->add_option("--T", ea.horizons, "Observation horizons (comma separated)")->required()->delimiter(',');
  obs->add_option("--excluded", ea.excluded, "Unmeasured external node (default: first in id order)");
  obs->add_option("--ensemble", ea.ensemble, "Ensemble size")->capture_default_str();
  obs->add_option("--modes", ea.modes, "Fourier modes per edge")->capture_default_str();
  obs->add_option("--amplitude", ea.bound_M, "Coefficient range and clip bound")->capture_default_str();
  obs->add_option("--seed", c.seed, "Ensemble seed");

  auto* stab = app.add_subcommand("stability", "Empirical Lipschitz constant over random potential pairs");
  add_common(stab, c);
  stab->add_option("--T", c.T, "Time horizon")->required();
  stab->add_option("--excluded", ea.excluded, "Unmeasured external node (default: first in id order)");
  stab->add_option("--ensemble", ea.ensemble, "Number of pairs")->capture_default_str();
  stab->add_option("--modes", ea.modes, "Fourier modes per edge")->capture_default_str();
  stab->add_option("--bound-M", ea.bound_M, "Potential bound M")->capture_default_str();
  stab->add_option("--seed", c.seed, "Ensemble and noise seed");
  stab->add_option("--noise-level", c.noise_level, "Gaussian noise on the q traces, fraction of trace RMS");
  stab->add_flag("--refine", ea.refine, "Repeat on a grid refined by 2");

  std::string other, uexcluded;
  double tol = 1e-10;
  auto* uni = app.add_subcommand("uniqueness", "Compare wave, heat and Schrodinger traces of two potentials");
  add_common(uni, c);
  uni->add_option("--q", other, "Network file with the second potential")->required();
  uni->add_option("--T", c.T, "Time horizon")->required();
  uni->add_option("--excluded", uexcluded, "Unmeasured external node (default: first in id order)");
  uni->add_option("--tolerance", tol, "Trace difference regarded as zero")->capture_default_str();

  std::string input, column;
  double tdt = 0.01;
  std::size_t count = 100;
  auto* tr = app.add_subcommand("transform", "Wave-to-heat transform of a trace CSV column");
  add_common(tr, c, false);
  tr->remove_option(tr->get_option("--target-dx"));
  tr->remove_option(tr->get_option("--cfl"));
  tr->add_option("--input", input, "Trace CSV (t column first)")->required();
  tr->add_option("--column", column, "Column to transform")->required();
  tr->add_option("--dt", tdt, "Heat time step")->capture_default_str();
  tr->add_option("--count", count, "Heat samples t = dt, ..., count * dt")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    if (*fwd) return run_forward(c, c.noise_level, c.seed, constant_boundary);
    if (*heat) return run_heat(c);
    if (*schr) return run_schrodinger(c);
    if (*peel) return run_peel(c, pa);
    if (*obs) return run_observability_cmd(c, ea);
    if (*stab) return run_stability_cmd(c, ea);
    if (*uni) return run_uniqueness_cmd(c, other, uexcluded, tol);
    if (*tr) return run_transform(c, input, column, tdt, count);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
