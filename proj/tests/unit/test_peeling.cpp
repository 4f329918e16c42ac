#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <span>

#include "treewave/error.hpp"
#include "treewave/peeling.hpp"

using namespace treewave;
using std::numbers::pi;

namespace {

TraceRecord series(const std::string& node, TraceKind kind, double dt, std::vector<double> v) {
  TraceRecord t;
  t.node = node;
  t.kind = kind;
  t.dt = dt;
  t.values = std::move(v);
  return t;
}

FarTraces far(double dt, std::vector<double> d, std::vector<double> n, double valid) {
  FarTraces f;
  f.dirichlet = series("P", TraceKind::dirichlet, dt, std::move(d));
  f.neumann = series("P", TraceKind::neumann_outward, dt, std::move(n));
  f.valid_until = valid;
  return f;
}

EdgeProfiles profiles(const MetricTree& g, const std::function<double(std::size_t, double)>& f, std::size_t cells = 200) {
  EdgeProfiles out;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edges()[e];
    std::vector<double> v(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) v[i] = f(e, ed.length * static_cast<double>(i) / static_cast<double>(cells));
    out[ed.id] = v;
  }
  return out;
}

// trapezoid L2 on each edge, both profiles sampled on the same points
double network_error(const MetricTree& g, const EdgeProfiles& a, const EdgeProfiles& truth) {
  double num = 0.0, den = 0.0;
  for (const auto& e : g.edges()) {
    const auto& t = truth.at(e.id);
    const std::size_t n = t.size() - 1;
    EdgeField fa(e.length, a.at(e.id));
    for (std::size_t i = 0; i <= n; ++i) {
      const double x = e.length * static_cast<double>(i) / static_cast<double>(n);
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      const double d = fa.at(x) - t[i];
      num += w * d * d * e.length / static_cast<double>(n);
      den += w * t[i] * t[i] * e.length / static_cast<double>(n);
    }
  }
  return std::sqrt(num / den);
}

double smooth_truth(const MetricTree& g, std::size_t e, double x) {
  const double l = g.edges()[e].length;
  const double k = static_cast<double>(e);
  return 1.0 + 0.8 * std::sin(pi * x / l + 0.7 * k) * std::cos(0.5 * k * x);
}

Simulation simulate(const MetricTree& g, const EdgeProfiles& truth, const std::string& excluded, double dx = 0.005) {
  SimulationSetup ss;
  ss.target_dx = dx;
  ss.horizon = default_peel_horizon(g, excluded);
  return simulate_measurements(g, truth, default_u0(g), [](std::size_t, double) { return 0.0; }, ss);
}

PeelConfig noiseless_config() {
  PeelConfig pc;
  pc.inverse.target_dx = 0.01;
  pc.inverse.alpha = 1e-6;
  pc.bound_M = 3.0;
  return pc;
}

MetricTree star3() { return load_network(TREEWAVE_DATA_DIR "/star3.net").tree; }

struct ThreadEnv {
  explicit ThreadEnv(const char* v) {
    if (const char* o = std::getenv("TREEWAVE_THREADS")) old = o;
    setenv("TREEWAVE_THREADS", v, 1);
  }
  ~ThreadEnv() {
    if (old.empty()) unsetenv("TREEWAVE_THREADS");
    else setenv("TREEWAVE_THREADS", old.c_str(), 1);
  }
  std::string old;
};

}  // namespace

TEST_CASE("node transfer: Kirchhoff with two known edges") {
  auto g = star3();
  const double dt = 0.1;
  auto a = far(dt, {1.0, 1.1, 1.2}, {0.3, -0.5, 2.0}, 0.2);
  auto b = far(dt, {1.0, 1.1, 1.2}, {0.7, 0.25, -1.0}, 0.2);
  auto nt = node_transfer(g, "P", {{"a", a}, {"b", b}});
  REQUIRE(nt.neumann.count() == 3);
  CHECK(nt.neumann.values[0] == doctest::Approx(-1.0));
  CHECK(nt.neumann.values[1] == doctest::Approx(0.25));
  CHECK(nt.neumann.values[2] == doctest::Approx(-1.0));
  CHECK(nt.dirichlet.values[1] == doctest::Approx(1.1));
  CHECK(nt.discrepancy == 0.0);
  CHECK(nt.consistent);
  CHECK(nt.valid_until == doctest::Approx(0.2));
}

TEST_CASE("node transfer: degree-2 node passes data through") {
  auto g = parse_network("node A external\nnode M internal\nnode B external\nedge x A M 1\nedge y M B 2\n").tree;
  auto a = far(0.05, {2.0, 2.5, 3.0, 3.5}, {0.1, 0.2, 0.3, 0.4}, 0.1);
  auto nt = node_transfer(g, "M", {{"x", a}});
  CHECK(nt.dirichlet.values == a.dirichlet.values);
  for (std::size_t k = 0; k < 4; ++k) CHECK(nt.neumann.values[k] == -a.neumann.values[k]);
  // the window ends at the shorter of valid_until and the record
  CHECK(nt.valid_until == doctest::Approx(0.1));
}

TEST_CASE("node transfer: discrepancy and misuse") {
  auto g = star3();
  auto a = far(0.1, {1.0, 1.0, 1.0, 9.0}, {0.0, 0.0, 0.0, 0.0}, 0.2);
  auto b = far(0.1, {1.0, 1.05, 1.0, 1.0}, {0.0, 0.0, 0.0, 0.0}, 0.2);
  auto nt = node_transfer(g, "P", {{"a", a}, {"b", b}}, 1e-2);
  // the 9.0 sample lies outside the valid window
  CHECK(nt.discrepancy == doctest::Approx(0.05 / 1.025));
  CHECK_FALSE(nt.consistent);
  CHECK(node_transfer(g, "P", {{"a", a}, {"b", b}}, 0.1).consistent);
  CHECK_THROWS_AS(node_transfer(g, "P", {{"a", a}}), ValidationError);
  CHECK_THROWS_AS(node_transfer(g, "P", {{"a", a}, {"a", b}}), ValidationError);
  CHECK_THROWS_AS(node_transfer(g, "Q1", {{"a", a}}), ValidationError);
  auto odd = far(0.2, {1.0, 1.0}, {0.0, 0.0}, 0.2);
  CHECK_THROWS_AS(node_transfer(g, "P", {{"a", a}, {"b", odd}}), ValidationError);
}

TEST_CASE("figure-1 transfer to P2 matches the whole-tree solution") {
  // p = 1 and u0 = 1 at every node, u1 flat there: initial data are
  // compatible at the nodes to second order
  auto g = load_network(TREEWAVE_DATA_DIR "/fig1.net").tree;
  const double T = 3.0;
  auto grid = discretize(g, 0.0025, 0.8).with_horizon(T);
  auto len = [&](std::size_t e) { return g.edges()[e].length; };
  auto p = sample_field(grid, [&](std::size_t e, double x) {
    return 0.7 + 0.3 * std::cos(2.0 * pi * x / len(e)) + 0.1 * static_cast<double>(e + 1) * std::sin(pi * x / len(e));
  });
  auto u0 = RealField(grid, 1.0);
  auto u1 = sample_field(grid, [&](std::size_t e, double x) { return std::pow(std::sin(pi * x / len(e)), 2); });
  auto sol = solve_wave(grid, p, u0, u1, compatible_wave_boundary(grid, p, u0, u1));

  InverseConfig cfg;
  cfg.target_dx = 0.0025;
  cfg.time_step = grid.dt();
  std::vector<KnownEdgeTrace> known;
  for (const char* leaf : {"Q1", "Q2", "Q3"}) {
    const auto n = g.node_index(leaf);
    const auto e = g.incident(n).front();
    const auto& ed = g.edges()[e];
    const bool reverse = ed.from != leaf;
    auto orient = [&](std::span<const double> s) {
      std::vector<double> v(s.begin(), s.end());
      if (reverse) std::reverse(v.begin(), v.end());
      return v;
    };
    EdgeInverseProblem prob;
    prob.edge = ed.id;
    prob.known_node = leaf;
    prob.far_node = "P2";
    prob.length = ed.length;
    prob.horizon = T;
    prob.dirichlet = extract_trace(sol, leaf, TraceSide::dirichlet, ed.id);
    prob.neumann = extract_trace(sol, leaf, TraceSide::neumann_outward, ed.id);
    prob.u0 = orient(u0.edge(e));
    prob.u1 = orient(u1.edge(e));
    known.push_back({ed.id, edge_transfer(EdgeField(ed.length, orient(p.edge(e))), prob, cfg)});
  }
  auto nt = node_transfer(g, "P2", known);
  CHECK(nt.consistent);
  CHECK(nt.discrepancy < 1e-3);
  auto net_d = extract_trace(sol, "P2", TraceSide::dirichlet, "e02");
  auto net_n = extract_trace(sol, "P2", TraceSide::neumann_outward, "e02", DerivativeStencil::third_order);
  const auto valid = static_cast<std::size_t>(std::floor(nt.valid_until / grid.dt() + 1e-9));
  REQUIRE(valid > 100);
  double dd = 0.0, dn = 0.0, sd = 0.0, sn = 0.0;
  for (std::size_t k = 0; k <= valid; ++k) {
    dd = std::max(dd, std::abs(nt.dirichlet.values[k] - net_d.values[k]));
    dn = std::max(dn, std::abs(nt.neumann.values[k] - net_n.values[k]));
    sd = std::max(sd, std::abs(net_d.values[k]));
    sn = std::max(sn, std::abs(net_n.values[k]));
  }
  CHECK(dd <= 1e-3 * sd);
  CHECK(dn <= 1e-3 * sn);
}

TEST_CASE("single-edge peel reduces to the edge inversion") {
  auto g = load_network(TREEWAVE_DATA_DIR "/edge.net").tree;
  auto truth = profiles(g, [](std::size_t, double x) { return 1.0 + std::sin(pi * x); });
  auto sim = simulate(g, truth, "B");
  auto res = peel_tree(g, sim.measurements, "B", noiseless_config(), &truth);
  REQUIRE(res.report.edges.size() == 1);
  CHECK(res.report.edges[0].stage == 1);
  CHECK(res.report.nodes.empty());
  CHECK(network_error(g, res.potential, truth) <= 0.02);
  CHECK(*res.report.total_error == doctest::Approx(network_error(g, res.potential, truth)).epsilon(0.05));
}

TEST_CASE("3-star peel and excluded-node invariance") {
  auto g = star3();
  auto truth = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  std::vector<double> errs;
  for (const char* ex : {"Q1", "Q2", "Q3"}) {
    auto sim = simulate(g, truth, ex);
    auto res = peel_tree(g, sim.measurements, ex, noiseless_config(), &truth);
    REQUIRE(res.potential.size() == 3);
    CHECK(res.report.edges.size() == 3);
    CHECK(res.report.nodes.size() == 1);
    CHECK(res.report.nodes[0].consistent);
    CHECK(res.report.stage_horizons.size() == 2);
    const double err = network_error(g, res.potential, truth);
    MESSAGE(std::string(ex) << " error " << err);
    if (std::string(ex) == "Q3") CHECK(err <= 0.05);
    errs.push_back(err);
  }
  CHECK(*std::max_element(errs.begin(), errs.end()) <= 2.0 * *std::min_element(errs.begin(), errs.end()));
}

TEST_CASE("peeling is deterministic and independent of threads and edge order") {
  auto g = star3();
  auto truth = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto sim = simulate(g, truth, "Q3", 0.01);
  auto cfg = noiseless_config();
  cfg.inverse.target_dx = 0.02;
  PeelResult serial, threaded, again;
  {
    ThreadEnv env("0");
    serial = peel_tree(g, sim.measurements, "Q3", cfg);
    again = peel_tree(g, sim.measurements, "Q3", cfg);
  }
  {
    ThreadEnv env("4");
    threaded = peel_tree(g, sim.measurements, "Q3", cfg);
  }
  CHECK(serial.potential == again.potential);
  CHECK(serial.potential == threaded.potential);

  auto es = g.edges();
  std::reverse(es.begin(), es.end());
  auto ns = g.nodes();
  std::reverse(ns.begin(), ns.end());
  MetricTree shuffled(ns, es);
  auto res = peel_tree(shuffled, sim.measurements, "Q3", cfg);
  CHECK(res.potential == serial.potential);
  std::vector<std::string> order;
  for (const auto& e : res.report.edges) order.push_back(e.edge);
  CHECK(order == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("identical potentials give identical traces and reconstructions") {
  auto g = star3();
  auto p = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto q = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto sp = simulate(g, p, "Q2", 0.01);
  auto sq = simulate(g, q, "Q2", 0.01);
  for (const auto& [id, tr] : sp.measurements.neumann) CHECK(tr.values == sq.measurements.neumann.at(id).values);
  auto cfg = noiseless_config();
  cfg.inverse.target_dx = 0.02;
  CHECK(peel_tree(g, sp.measurements, "Q2", cfg).potential == peel_tree(g, sq.measurements, "Q2", cfg).potential);
}

TEST_CASE("non-converged edges taint downstream edges") {
  auto g = load_network(TREEWAVE_DATA_DIR "/fig1.net").tree;
  auto truth = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto sim = simulate(g, truth, "Q7", 0.02);
  auto cfg = noiseless_config();
  cfg.inverse.target_dx = 0.04;
  cfg.inverse.max_iters = 1;
  auto res = peel_tree(g, sim.measurements, "Q7", cfg);
  REQUIRE(res.report.edges.size() == 10);
  for (const auto& e : res.report.edges) {
    if (e.stage > 1) CHECK(e.low_confidence);
    if (!e.converged) CHECK(e.low_confidence);
  }
}

TEST_CASE("figure-1 peel runs four stages with shrinking horizons") {
  auto g = load_network(TREEWAVE_DATA_DIR "/fig1.net").tree;
  auto truth = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto sim = simulate(g, truth, "Q7", 0.01);
  auto cfg = noiseless_config();
  cfg.inverse.target_dx = 0.02;
  auto res = peel_tree(g, sim.measurements, "Q7", cfg, &truth);
  CHECK(res.report.stage_horizons.size() == 4);
  CHECK(std::is_sorted(res.report.stage_horizons.rbegin(), res.report.stage_horizons.rend()));
  CHECK(res.report.nodes.size() == 4);
  for (const auto& n : res.report.nodes) CHECK(n.discrepancy < 1e-2);
  std::set<std::string> seen;
  for (const auto& e : res.report.edges) CHECK(seen.insert(e.edge).second);
  CHECK(seen.size() == 10);
  // coarse grids: a sanity bound only
  MESSAGE("coarse figure-1 error " << *res.report.total_error);
  CHECK(*res.report.total_error < 0.3);
}

TEST_CASE("peeling rejects insufficient data") {
  auto g = star3();
  auto truth = profiles(g, [](std::size_t, double) { return 1.0; });
  SimulationSetup ss;
  ss.target_dx = 0.02;
  ss.horizon = 2.0;  // below twice the 1.2 edge
  auto sim = simulate_measurements(g, truth, default_u0(g), [](std::size_t, double) { return 0.0; }, ss);
  auto cfg = noiseless_config();
  cfg.inverse.target_dx = 0.04;
  CHECK_THROWS_AS(peel_tree(g, sim.measurements, "Q1", cfg), ValidationError);
  auto m = sim.measurements;
  m.neumann.erase("Q2");
  CHECK_THROWS_AS(m.check(g, "Q1"), ValidationError);
  CHECK_NOTHROW(m.check(g, "Q2"));
  CHECK_THROWS_AS(m.check(g, "P"), ValidationError);
}

TEST_CASE("residual certificate") {
  auto g = star3();
  auto truth = profiles(g, [&](std::size_t e, double x) { return smooth_truth(g, e, x); });
  auto sim = simulate(g, truth, "Q3", 0.01);
  auto& m = sim.measurements;
  m.neumann.erase("Q3");
  auto base = residual_certificate(g, truth, m, 0.01);
  CHECK(base.informative);
  CHECK(base.nodes.size() == 2);
  CHECK(base.relative <= 1e-3);
  auto coarse = residual_certificate(g, truth, m, 0.02);
  CHECK(coarse.relative <= 1e-2);
  auto bumped = truth;
  for (double& v : bumped["b"]) v += 0.5;
  auto worse = residual_certificate(g, bumped, m, 0.01);
  CHECK(worse.relative > base.relative);
  CHECK(worse.relative > 10.0 * base.relative);

  // zero data: zero mismatch for any p_hat, flagged uninformative
  Measurements zero = m;
  for (auto& [id, tr] : zero.neumann) std::fill(tr.values.begin(), tr.values.end(), 0.0);
  for (auto& [id, tr] : zero.dirichlet) std::fill(tr.values.begin(), tr.values.end(), 0.0);
  for (auto& [id, v] : zero.u0) std::fill(v.begin(), v.end(), 0.0);
  for (auto& [id, v] : zero.u1) std::fill(v.begin(), v.end(), 0.0);
  auto z = residual_certificate(g, bumped, zero, 0.02);
  CHECK_FALSE(z.informative);
  CHECK(z.relative == 0.0);
  for (const auto& n : z.nodes) CHECK(n.h1 == 0.0);
}

TEST_CASE("measurement directory round trip") {
  auto g = star3();
  auto truth = profiles(g, [](std::size_t, double) { return 0.5; });
  auto sim = simulate(g, truth, "Q1", 0.05);
  auto dir = (std::filesystem::temp_directory_path() / "treewave_meas_rt").string();
  std::filesystem::remove_all(dir);
  write_measurements(dir, sim.measurements);
  auto back = read_measurements(dir);
  CHECK(back.horizon == sim.measurements.horizon);
  CHECK(back.u0 == sim.measurements.u0);
  CHECK(back.u1 == sim.measurements.u1);
  for (const auto& [id, tr] : sim.measurements.neumann) {
    REQUIRE(back.neumann.count(id));
    CHECK(back.neumann.at(id).values == tr.values);
    CHECK(back.neumann.at(id).dt == doctest::Approx(tr.dt).epsilon(1e-14));
  }
  for (const auto& [id, tr] : sim.measurements.dirichlet) CHECK(back.dirichlet.at(id).values == tr.values);
  CHECK_NOTHROW(back.check(g, "Q1"));
  std::filesystem::remove_all(dir);
}
