#include "treewave/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "treewave/error.hpp"
#include "treewave/parallel.hpp"
#include "treewave/peeling.hpp"

namespace treewave {

// ---------------------------------------------------------------------------
// Reports

void ReportTable::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw ValidationError("row width does not match table " + name);
  rows.push_back(std::move(row));
}

std::vector<double> ReportTable::numbers(const std::string& column) const {
  auto it = std::find(columns.begin(), columns.end(), column);
  if (it == columns.end()) throw ValidationError("table " + name + " has no column " + column);
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(std::stod(r[c]));
  return out;
}

void ExperimentReport::param(const std::string& key, const std::string& value) { parameters.emplace_back(key, value); }
void ExperimentReport::param(const std::string& key, double value) { parameters.emplace_back(key, format_double(value)); }
void ExperimentReport::aggregate(const std::string& key, double value) { aggregates.emplace_back(key, value); }

std::optional<double> ExperimentReport::find_aggregate(const std::string& key) const {
  for (const auto& [k, v] : aggregates)
    if (k == key) return v;
  return std::nullopt;
}

const ReportTable& ExperimentReport::table(const std::string& name) const {
  for (const auto& t : tables)
    if (t.name == name) return t;
  throw ValidationError("report has no table " + name);
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }

}  // namespace

void ExperimentReport::write(std::ostream& out) const {
  out << "experiment: " << experiment << '\n';
  out << "version: " << version << '\n';
  out << "seed: " << seed << '\n';
  out << "graph-hash: " << graph_hash << '\n';
  out << "wall-clock: " << format_double(wall_clock) << '\n';
  for (const auto& [k, v] : parameters) out << "param " << k << ": " << v << '\n';
  for (const auto& [k, v] : aggregates) out << "aggregate " << k << ": " << format_double(v) << '\n';
  for (const auto& f : flags) out << "flag: " << f << '\n';
  for (const auto& t : tables) {
    out << "[table " << t.name << "]\n" << join(t.columns) << '\n';
    for (const auto& r : t.rows) out << join(r) << '\n';
    out << "[end]\n";
  }
}

std::string ExperimentReport::str() const {
  std::ostringstream s;
  write(s);
  return s.str();
}

void ExperimentReport::save(const std::string& dir) const {
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  auto open = [](const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write " + path.string());
    return f;
  };
  {
    auto f = open(d / "report.txt");
    write(f);
  }
  for (const auto& t : tables) {
    auto f = open(d / (t.name + ".csv"));
    f << join(t.columns) << '\n';
    for (const auto& r : t.rows) f << join(r) << '\n';
  }
}

ExperimentReport parse_report(const std::string& text) {
  ExperimentReport r;
  r.version.clear();
  std::istringstream in(text);
  std::string line;
  ReportTable* open = nullptr;
  bool header_next = false;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) { throw ParseError(lineno, what); };
  while (std::getline(in, line)) {
    ++lineno;
    if (open) {
      if (line == "[end]") {
        open = nullptr;
      } else if (header_next) {
        open->columns = split(line, ',');
        header_next = false;
      } else {
        auto row = split(line, ',');
        if (row.size() != open->columns.size()) fail("row width does not match the header");
        open->rows.push_back(std::move(row));
      }
      continue;
    }
    if (line.empty()) continue;
    if (line.rfind("[table ", 0) == 0) {
      if (line.back() != ']') fail("bad table header");
      r.tables.push_back({line.substr(7, line.size() - 8), {}, {}});
      open = &r.tables.back();
      header_next = true;
      continue;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos) fail("expected `key: value`");
    const std::string key = line.substr(0, colon), value = line.substr(colon + 2);
    if (key == "experiment") r.experiment = value;
    else if (key == "version") r.version = value;
    else if (key == "seed") r.seed = std::stoull(value);
    else if (key == "graph-hash") r.graph_hash = value;
    else if (key == "wall-clock") r.wall_clock = std::stod(value);
    else if (key == "flag") r.flags.push_back(value);
    else if (key.rfind("param ", 0) == 0) r.parameters.emplace_back(key.substr(6), value);
    else if (key.rfind("aggregate ", 0) == 0) r.aggregates.emplace_back(key.substr(10), std::stod(value));
    else fail("unknown key " + key);
  }
  if (open) fail("unterminated table " + open->name);
  return r;
}

// ---------------------------------------------------------------------------
// Ensembles

std::uint64_t member_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EdgeProfiles random_smooth_potential(const MetricTree& g, std::uint64_t seed, double M, int modes, std::size_t cells) {
  if (!(M > 0.0)) throw ValidationError("bound M must be positive");
  if (modes < 0) throw ValidationError("mode count must be non-negative");
  if (cells < 1) throw ValidationError("profile needs at least one cell");
  std::vector<std::string> ids;
  for (const auto& e : g.edges()) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5 * M, 0.5 * M);
  EdgeProfiles out;
  for (const auto& id : ids) {
    const double l = g.edge(id).length;
    const double c0 = u(rng);
    std::vector<double> a(static_cast<std::size_t>(modes)), b(a.size());
    for (int k = 0; k < modes; ++k) {
      a[static_cast<std::size_t>(k)] = u(rng);
      b[static_cast<std::size_t>(k)] = u(rng);
    }
    std::vector<double> v(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) {
      const double x = l * static_cast<double>(i) / static_cast<double>(cells);
      double s = c0;
      for (int k = 1; k <= modes; ++k) {
        const double w = static_cast<double>(k) * std::numbers::pi * x / l;
        const auto kk = static_cast<std::size_t>(k - 1);
        s += (a[kk] * std::cos(w) + b[kk] * std::sin(w)) / static_cast<double>(k * k);
      }
      v[i] = std::clamp(s, -M, M);
    }
    out[id] = std::move(v);
  }
  return out;
}

MetricTree random_tree(std::size_t edges, std::uint64_t seed, double min_len, double max_len) {
  if (edges == 0) throw ValidationError("a tree needs at least one edge");
  if (!(min_len > 0.0) || max_len < min_len) throw ValidationError("bad edge length range");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> links;
  std::vector<std::size_t> degree(edges + 1, 0);
  for (std::size_t n = 1; n <= edges; ++n) {
    const std::size_t parent = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    if (rng() & 1U) links.emplace_back(parent, n);
    else links.emplace_back(n, parent);
    ++degree[parent];
    ++degree[n];
  }
  std::uniform_real_distribution<double> len(min_len, max_len);
  std::vector<Node> nodes;
  for (std::size_t n = 0; n <= edges; ++n)
    nodes.push_back({"n" + std::to_string(n), degree[n] == 1 ? NodeKind::external : NodeKind::internal});
  std::vector<Edge> es;
  for (std::size_t i = 0; i < edges; ++i)
    es.push_back({"e" + std::to_string(i), nodes[links[i].first].id, nodes[links[i].second].id, len(rng)});
  return MetricTree(std::move(nodes), std::move(es));
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string resolve_excluded(const MetricTree& g, const std::string& excluded) {
  if (!excluded.empty()) {
    if (g.node(excluded).kind != NodeKind::external) throw ValidationError("excluded node " + excluded + " is not external");
    return excluded;
  }
  std::vector<std::string> ids;
  for (std::size_t n : g.external_nodes()) ids.push_back(g.nodes()[n].id);
  return *std::min_element(ids.begin(), ids.end());
}

// (node id, its edge id) for every measured external node, sorted by node id
std::vector<std::pair<std::string, std::string>> measured_nodes(const MetricTree& g, const std::string& excluded) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    if (id == excluded) continue;
    out.emplace_back(id, g.edges()[g.incident(n).front()].id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double l2_difference(const NetworkGrid& grid, const RealField& a, const RealField& b) {
  RealField d(grid);
  for (std::size_t i = 0; i < d.values().size(); ++i) d.values()[i] = a.values()[i] - b.values()[i];
  return norm_l2_space(d, grid);
}

}  // namespace

// ---------------------------------------------------------------------------
// Observability

ObservabilityResult run_observability(const MetricTree& g, const EdgeProfiles& p,
                                      const std::vector<EdgeProfiles>& ensemble, const ObservabilitySetup& setup) {
  const auto t0 = Clock::now();
  require_valid_tree(g);
  if (setup.horizons.empty()) throw ValidationError("observability needs at least one horizon");
  for (double T : setup.horizons)
    if (!(T > 0.0)) throw ValidationError("observation horizons must be positive");
  const auto excluded = resolve_excluded(g, setup.excluded);
  const double Tmax = *std::max_element(setup.horizons.begin(), setup.horizons.end());
  auto grid = discretize(g, setup.target_dx, setup.cfl).with_horizon(Tmax);
  const auto pf = field_from_profiles(grid, p);
  const auto nodes = measured_nodes(g, excluded);
  if (nodes.empty()) throw ValidationError("no measured node: the tree has a single external node");

  ObservabilityResult out;
  std::vector<std::vector<ObservabilityRun>> per(ensemble.size());
  std::vector<char> zero(ensemble.size(), 0);
  parallel_for(ensemble.size(), [&](std::size_t m) {
    const auto a = field_from_profiles(grid, ensemble[m]);
    const double na = norm_l2_space(a, grid);
    if (!(na > 0.0)) {
      zero[m] = 1;
      return;
    }
    RealField u0(grid);
    auto sol = solve_wave(grid, pf, u0, a, RealBoundary::zero(grid));
    std::vector<TraceRecord> traces;
    for (const auto& [node, edge] : nodes)
      traces.push_back(extract_trace(sol, node, TraceSide::neumann_outward, edge, DerivativeStencil::third_order));
    for (double T : setup.horizons) {
      const auto count = static_cast<std::size_t>(std::llround(T / grid.dt())) + 1;
      double energy = 0.0;
      for (const auto& tr : traces) {
        const double v = norm_l2_time(truncated(tr, std::min(count, tr.count())));
        energy += v * v;
      }
      ObservabilityRun r;
      r.member = m;
      r.T = T;
      r.initial_norm2 = na * na;
      r.trace_energy = energy;
      r.ratio = energy > 0.0 ? r.initial_norm2 / energy : std::numeric_limits<double>::infinity();
      per[m].push_back(r);
    }
  });

  auto& rep = out.report;
  rep.experiment = "observability";
  rep.graph_hash = graph_hash(g);
  rep.param("excluded", excluded);
  rep.param("target_dx", setup.target_dx);
  rep.param("cfl", setup.cfl);
  rep.param("dt", grid.dt());
  rep.param("ensemble", static_cast<double>(ensemble.size()));
  ReportTable runs{"runs", {"member", "T", "initial_norm2", "trace_energy", "ratio"}, {}};
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    if (zero[m]) {
      out.excluded_members.push_back(m);
      rep.flags.push_back("member " + std::to_string(m) + " excluded: a = 0");
      continue;
    }
    for (const auto& r : per[m]) {
      out.runs.push_back(r);
      runs.add_row({fmt(r.member), fmt(r.T), fmt(r.initial_norm2), fmt(r.trace_energy), fmt(r.ratio)});
    }
  }
  ReportTable consts{"constants", {"T", "max_ratio"}, {}};
  for (double T : setup.horizons) {
    double c = 0.0;
    for (const auto& r : out.runs)
      if (r.T == T) c = std::max(c, r.ratio);
    out.constants.emplace_back(T, c);
    consts.add_row({fmt(T), fmt(c)});
    rep.aggregate("max_ratio_T=" + fmt(T), c);
  }
  rep.tables = {std::move(runs), std::move(consts)};
  rep.wall_clock = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Stability

namespace {

std::vector<StabilityRun> stability_runs(const MetricTree& g, const NetworkGrid& grid,
                                         const std::vector<std::pair<EdgeProfiles, EdgeProfiles>>& pairs,
                                         const StabilitySetup& setup, const std::string& excluded) {
  const auto u0f = setup.u0 ? setup.u0 : default_u0(g);
  const auto u0 = sample_field(grid, u0f);
  const RealField u1(grid);
  const auto nodes = measured_nodes(g, excluded);
  std::vector<StabilityRun> runs(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t m) {
    const auto p = field_from_profiles(grid, pairs[m].first);
    const auto q = field_from_profiles(grid, pairs[m].second);
    const auto h = compatible_wave_boundary(grid, p, u0, u1);
    const auto sp = solve_wave(grid, p, u0, u1, h);
    const auto sq = solve_wave(grid, q, u0, u1, h);
    StabilityRun r;
    r.member = m;
    r.numerator = l2_difference(grid, q, p);
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const auto& [node, edge] = nodes[j];
      auto tp = extract_trace(sp, node, TraceSide::neumann_outward, edge, DerivativeStencil::third_order);
      auto tq = extract_trace(sq, node, TraceSide::neumann_outward, edge, DerivativeStencil::third_order);
      if (setup.noise) tq = add_noise(tq, {setup.noise->level, member_seed(setup.noise->seed, m * 1000 + j)});
      r.denominator += norm_h1_time(subtract(tp, tq));
    }
    r.flagged = r.denominator < 1e-12;
    r.ratio = r.flagged ? std::numeric_limits<double>::quiet_NaN() : r.numerator / r.denominator;
    runs[m] = r;
  });
  return runs;
}

double max_ratio(const std::vector<StabilityRun>& runs) {
  double c = 0.0;
  for (const auto& r : runs)
    if (!r.flagged) c = std::max(c, r.ratio);
  return c;
}

ReportTable stability_table(const std::string& name, const std::vector<StabilityRun>& runs) {
  ReportTable t{name, {"member", "numerator", "denominator", "ratio", "flagged"}, {}};
  for (const auto& r : runs)
    t.add_row({fmt(r.member), fmt(r.numerator), fmt(r.denominator), fmt(r.ratio), r.flagged ? "1" : "0"});
  return t;
}

}  // namespace

StabilityResult run_stability(const MetricTree& g, const std::vector<std::pair<EdgeProfiles, EdgeProfiles>>& pairs,
                              const StabilitySetup& setup) {
  const auto t0 = Clock::now();
  require_valid_tree(g);
  if (!(setup.horizon > 0.0)) throw ValidationError("stability horizon must be positive");
  if (pairs.empty()) throw ValidationError("stability needs at least one potential pair");
  const auto excluded = resolve_excluded(g, setup.excluded);
  auto grid = discretize(g, setup.target_dx, setup.cfl).with_horizon(setup.horizon);
  StabilityResult out;
  out.runs = stability_runs(g, grid, pairs, setup, excluded);
  out.max_ratio = max_ratio(out.runs);
  if (setup.refine) {
    out.refined = stability_runs(g, grid.refined(2), pairs, setup, excluded);
    out.max_ratio_refined = max_ratio(out.refined);
  }
  auto& rep = out.report;
  rep.experiment = "stability";
  rep.graph_hash = graph_hash(g);
  if (setup.noise) rep.seed = setup.noise->seed;
  rep.param("excluded", excluded);
  rep.param("T", grid.horizon());
  rep.param("target_dx", setup.target_dx);
  rep.param("cfl", setup.cfl);
  rep.param("dt", grid.dt());
  rep.param("ensemble", static_cast<double>(pairs.size()));
  rep.param("noise", setup.noise ? setup.noise->level : 0.0);
  for (const auto& r : out.runs)
    if (r.flagged) rep.flags.push_back("member " + std::to_string(r.member) + ": zero denominator (p = q)");
  rep.aggregate("max_ratio", out.max_ratio);
  rep.tables.push_back(stability_table("runs", out.runs));
  if (setup.refine) {
    rep.aggregate("max_ratio_refined", out.max_ratio_refined);
    rep.aggregate("refinement_change", out.max_ratio > 0.0 ? std::abs(out.max_ratio_refined / out.max_ratio - 1.0) : 0.0);
    rep.tables.push_back(stability_table("runs_refined", out.refined));
  }
  rep.wall_clock = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Uniqueness

UniquenessResult run_uniqueness_check(const MetricTree& g, const EdgeProfiles& p, const EdgeProfiles& q,
                                      const UniquenessSetup& setup) {
  const auto t0 = Clock::now();
  require_valid_tree(g);
  if (!(setup.horizon > 0.0)) throw ValidationError("uniqueness horizon must be positive");
  const auto excluded = resolve_excluded(g, setup.excluded);
  auto grid = discretize(g, setup.target_dx, setup.cfl).with_horizon(setup.horizon);
  const auto pf = field_from_profiles(grid, p);
  const auto qf = field_from_profiles(grid, q);
  const auto u0 = sample_field(grid, default_u0(g));
  const RealField u1(grid);
  const auto nodes = measured_nodes(g, excluded);

  UniquenessResult out;
  out.potential_l2 = l2_difference(grid, pf, qf);
  auto record = [&](const char* eq, const std::string& node, const TraceRecord& a, const TraceRecord& b, double& mx) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.count(); ++k) {
      const double re = a.values[k] - b.values[k];
      const double im = a.is_complex() ? a.imag[k] - b.imag[k] : 0.0;
      d = std::max(d, std::hypot(re, im));
    }
    out.differences.push_back({eq, node, d});
    mx = std::max(mx, d);
  };

  {
    const auto h = compatible_wave_boundary(grid, pf, u0, u1);
    const auto sp = solve_wave(grid, pf, u0, u1, h);
    const auto sq = solve_wave(grid, qf, u0, u1, h);
    for (const auto& [node, edge] : nodes)
      record("wave", node,
             extract_trace(sp, node, TraceSide::neumann_outward, edge, DerivativeStencil::third_order),
             extract_trace(sq, node, TraceSide::neumann_outward, edge, DerivativeStencil::third_order), out.wave_max);
  }
  {
    const auto sp = solve_heat(grid, pf, u0);
    const auto sq = solve_heat(grid, qf, u0);
    for (const auto& [node, edge] : nodes)
      record("heat", node, extract_trace(sp, node, TraceSide::dirichlet, edge),
             extract_trace(sq, node, TraceSide::dirichlet, edge), out.heat_max);
  }
  {
    const auto c0 = to_complex(u0);
    const auto h = ComplexBoundary::constant_from(grid, c0);
    const auto sp = solve_schrodinger(grid, pf, c0, h);
    const auto sq = solve_schrodinger(grid, qf, c0, h);
    for (const auto& [node, edge] : nodes)
      record("schrodinger", node, extract_trace(sp, node, TraceSide::neumann_outward, edge),
             extract_trace(sq, node, TraceSide::neumann_outward, edge), out.schrodinger_max);
  }
  out.wave_consistent = out.wave_max <= setup.tolerance;
  out.heat_consistent = out.heat_max <= setup.tolerance;
  out.schrodinger_consistent = out.schrodinger_max <= setup.tolerance;
  out.consistent = out.wave_consistent && out.heat_consistent && out.schrodinger_consistent;

  auto& rep = out.report;
  rep.experiment = "uniqueness";
  rep.graph_hash = graph_hash(g);
  rep.param("excluded", excluded);
  rep.param("T", grid.horizon());
  rep.param("target_dx", setup.target_dx);
  rep.param("cfl", setup.cfl);
  rep.param("tolerance", setup.tolerance);
  rep.param("verdict", out.consistent ? "consistent with p = q" : "traces distinguish p and q");
  rep.aggregate("potential_l2", out.potential_l2);
  rep.aggregate("wave_max", out.wave_max);
  rep.aggregate("heat_max", out.heat_max);
  rep.aggregate("schrodinger_max", out.schrodinger_max);
  if (out.consistent && out.potential_l2 > setup.tolerance)
    rep.flags.push_back("traces agree although ||p - q|| > 0 (horizon too short?)");
  if (!out.consistent && out.potential_l2 == 0.0) rep.flags.push_back("traces differ for identical potentials");
  ReportTable t{"differences", {"equation", "node", "max_abs"}, {}};
  for (const auto& d : out.differences) t.add_row({d.equation, d.node, fmt(d.max_abs)});
  rep.tables.push_back(std::move(t));
  rep.wall_clock = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Trace estimate

TraceEstimate hidden_regularity_ratio(const NetworkGrid& grid, const RealField& p, const RealField& u0,
                                      const RealField& u1,
                                      const std::function<double(std::size_t, double, double)>& source) {
  const auto& g = grid.tree();
  WaveOptions opts;
  std::vector<double> gnorm(grid.steps() + 1, 0.0);
  if (source) {
    // g(., t_k) sampled on the grid; its L2(Lambda) norm per step for the L1 in time
    opts.source = [&](std::size_t k, std::span<double> out) {
      const double t = grid.dt() * static_cast<double>(k);
      for (std::size_t e = 0; e < grid.edge_count(); ++e)
        for (std::size_t i = 0; i < grid.samples(e); ++i) out[grid.offset(e) + i] = source(e, grid.x(e, i), t);
    };
    for (std::size_t k = 0; k <= grid.steps(); ++k) {
      const double t = grid.dt() * static_cast<double>(k);
      gnorm[k] = norm_l2_space(sample_field(grid, [&](std::size_t e, double x) { return source(e, x, t); }), grid);
    }
  }
  const auto sol = solve_wave(grid, p, u0, u1, RealBoundary::zero(grid), opts);
  TraceEstimate out;
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    const auto& eid = g.edges()[g.incident(n).front()].id;
    const double v = norm_l2_time(extract_trace(sol, id, TraceSide::neumann_outward, eid, DerivativeStencil::third_order));
    out.trace_energy += v * v;
  }
  double l1 = 0.0;
  for (std::size_t k = 0; k <= grid.steps(); ++k) l1 += (k == 0 || k == grid.steps() ? 0.5 : 1.0) * gnorm[k] * grid.dt();
  const double a = norm_h1_0_space(u0, grid), b = norm_l2_space(u1, grid);
  out.data_norm = a * a + b * b + l1 * l1;
  out.ratio = out.data_norm > 0.0 ? out.trace_energy / out.data_norm : 0.0;
  return out;
}

}  // namespace treewave
