#include "treewave/peeling.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "treewave/error.hpp"
#include "treewave/parallel.hpp"

namespace treewave {

void Measurements::check(const MetricTree& g, const std::string& excluded) const {
  if (!(horizon > 0.0)) throw ValidationError("measurement horizon must be positive");
  const auto ex = g.node_index(excluded);
  if (g.nodes()[ex].kind != NodeKind::external) throw ValidationError("excluded node " + excluded + " is not external");
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    auto d = dirichlet.find(id);
    if (d == dirichlet.end()) throw ValidationError("missing Dirichlet data at node " + id);
    d->second.check();
    if (d->second.end_time() < horizon * (1.0 - 1e-9))
      throw ValidationError("Dirichlet data at node " + id + " does not cover the horizon");
    if (n == ex) continue;
    auto it = neumann.find(id);
    if (it == neumann.end()) throw ValidationError("missing Neumann measurement at node " + id);
    it->second.check();
    if (it->second.end_time() < horizon * (1.0 - 1e-9))
      throw ValidationError("Neumann data at node " + id + " does not cover the horizon");
  }
  for (const auto& e : g.edges()) {
    auto a = u0.find(e.id);
    auto b = u1.find(e.id);
    if (a == u0.end() || a->second.size() < 2) throw ValidationError("missing initial displacement on edge " + e.id);
    if (b == u1.end() || b->second.size() < 2) throw ValidationError("missing initial velocity on edge " + e.id);
  }
}

double default_peel_horizon(const MetricTree& g, const std::string& excluded) {
  return 2.5 * 2.0 * max_depth_from(g, excluded);
}

std::function<double(std::size_t, double)> default_u0(const MetricTree& g) {
  std::vector<double> len;
  for (const auto& e : g.edges()) len.push_back(e.length);
  return [len](std::size_t e, double x) {
    const double s = std::sin(std::numbers::pi * x / len[e]);
    return 1.0 + 0.1 * s * s * s * s;
  };
}

Simulation simulate_measurements(const MetricTree& g, const EdgeProfiles& potential,
                                 const std::function<double(std::size_t, double)>& u0f,
                                 const std::function<double(std::size_t, double)>& u1f,
                                 const SimulationSetup& setup) {
  require_valid_tree(g);
  if (!(setup.horizon > 0.0)) throw ValidationError("simulation horizon must be positive");
  const double dx = setup.target_dx > 0.0 ? setup.target_dx : g.min_length() / 80.0;
  auto grid = discretize(g, dx, setup.cfl).with_horizon(setup.horizon);
  auto p = field_from_profiles(grid, potential);
  auto u0 = sample_field(grid, u0f);
  auto u1 = sample_field(grid, u1f);
  auto h = setup.compatible_boundary ? compatible_wave_boundary(grid, p, u0, u1) : RealBoundary::constant_from(grid, u0);
  Simulation out{solve_wave(grid, p, u0, u1, h), {}};
  auto& m = out.measurements;
  m.horizon = grid.horizon();
  m.u0 = profiles_from_field(grid, u0);
  m.u1 = profiles_from_field(grid, u1);
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    const auto& eid = g.edges()[g.incident(n).front()].id;
    m.neumann[id] = extract_trace(out.solution, id, TraceSide::neumann_outward, eid, DerivativeStencil::third_order);
    m.dirichlet[id] = extract_trace(out.solution, id, TraceSide::dirichlet, eid);
  }
  return out;
}

NodeTransfer node_transfer(const MetricTree& g, const std::string& node, const std::vector<KnownEdgeTrace>& known,
                           double tolerance) {
  const auto n = g.node_index(node);
  if (g.nodes()[n].kind != NodeKind::internal) throw ValidationError("node transfer needs an internal node, got " + node);
  std::set<std::string> seen;
  for (const auto& k : known) {
    const auto e = g.edge_index(k.edge);
    if (g.from_index(e) != n && g.to_index(e) != n)
      throw ValidationError("edge " + k.edge + " is not incident to node " + node);
    if (!seen.insert(k.edge).second) throw ValidationError("edge " + k.edge + " listed twice at node " + node);
  }
  if (known.size() + 1 != g.degree(n))
    throw ValidationError("node " + node + " has " + std::to_string(g.degree(n) - known.size()) +
                          " unrecovered edges; exactly one is required");
  if (known.empty()) throw ValidationError("node " + node + " has no recovered edge");
  const double dt = known.front().traces.dirichlet.dt;
  std::size_t count = known.front().traces.dirichlet.count();
  double valid = known.front().traces.valid_until;
  for (const auto& k : known) {
    if (std::abs(k.traces.dirichlet.dt - dt) > 1e-12 * dt || std::abs(k.traces.neumann.dt - dt) > 1e-12 * dt)
      throw ValidationError("traces at node " + node + " use different time steps");
    count = std::min({count, k.traces.dirichlet.count(), k.traces.neumann.count()});
    valid = std::min(valid, k.traces.valid_until);
  }
  NodeTransfer out;
  out.node = node;
  out.valid_until = std::min(valid, dt * static_cast<double>(count - 1));
  out.dirichlet.node = out.neumann.node = node;
  out.dirichlet.kind = TraceKind::dirichlet;
  out.neumann.kind = TraceKind::neumann_outward;
  out.dirichlet.dt = out.neumann.dt = dt;
  out.dirichlet.values.assign(count, 0.0);
  out.neumann.values.assign(count, 0.0);
  double scale = 1.0;
  for (std::size_t k = 0; k < count; ++k) {
    double lo = known.front().traces.dirichlet.values[k], hi = lo, sum = 0.0, flux = 0.0;
    for (const auto& kn : known) {
      const double v = kn.traces.dirichlet.values[k];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      flux += kn.traces.neumann.values[k];
    }
    out.dirichlet.values[k] = sum / static_cast<double>(known.size());
    out.neumann.values[k] = -flux;
    // only the valid window counts towards the discrepancy
    if (dt * static_cast<double>(k) <= out.valid_until + 1e-12) {
      out.discrepancy = std::max(out.discrepancy, hi - lo);
      scale = std::max(scale, std::abs(out.dirichlet.values[k]));
    }
  }
  out.discrepancy /= scale;
  out.consistent = out.discrepancy <= tolerance;
  return out;
}

namespace {

std::vector<double> oriented(const std::vector<double>& v, bool reverse) {
  if (!reverse) return v;
  return {v.rbegin(), v.rend()};
}

struct KnownEnd {
  TraceRecord dirichlet;
  TraceRecord neumann;
  double horizon = 0.0;
  bool tainted = false;
};

struct EdgeOutcome {
  EdgeRecovery rec;
  FarTraces far;
  bool has_far = false;
};

}  // namespace

PeelResult peel_tree(const MetricTree& g, const Measurements& meas, const std::string& excluded,
                     const PeelConfig& cfg, const EdgeProfiles* truth) {
  require_valid_tree(g);
  meas.check(g, excluded);
  const auto plan = peel_schedule(g, excluded);
  const auto& inv = cfg.inverse;
  if (!(inv.target_dx > 0.0)) throw ValidationError("target-dx must be positive");

  // one time step for every edge so transferred traces line up at the nodes
  double dt = inv.time_step;
  if (!(dt > 0.0)) {
    double min_dx = 1e300;
    for (const auto& e : g.edges()) {
      const auto cells = std::max<long long>(4, std::llround(e.length / inv.target_dx));
      min_dx = std::min(min_dx, e.length / static_cast<double>(cells));
    }
    dt = inv.cfl * min_dx;
  }

  PeelResult out;
  auto& rep = out.report;
  rep.excluded = excluded;
  rep.horizon = meas.horizon;
  rep.dt = dt;

  std::map<std::string, KnownEnd> known;
  for (const auto& [id, tr] : meas.neumann) {
    if (id == excluded) continue;
    known[id] = {meas.dirichlet.at(id), tr, meas.horizon, false};
  }
  std::map<std::string, EdgeField> recovered;      // local orientation from the leaf side
  std::map<std::string, std::string> leaf_of;       // edge -> leaf side
  std::map<std::string, FarTraces> far_at;          // edge -> traces at its interior side
  std::set<std::string> transferred;
  std::set<std::string> tainted_edges;

  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& stage = plan.stages[s];
    std::vector<EdgeOutcome> results(stage.size());
    std::vector<EdgeInverseProblem> problems(stage.size());
    for (std::size_t i = 0; i < stage.size(); ++i) {
      const auto& step = stage[i];
      const auto it = known.find(step.leaf_side);
      if (it == known.end())
        throw NumericalError("stage " + std::to_string(s + 1) + ": no Cauchy data at node " + step.leaf_side);
      const auto& edge = g.edge(step.edge);
      const bool reverse = edge.from != step.leaf_side;
      auto& prob = problems[i];
      prob.edge = step.edge;
      prob.known_node = step.leaf_side;
      prob.far_node = step.interior_side;
      prob.length = edge.length;
      prob.horizon = it->second.horizon;
      prob.dirichlet = it->second.dirichlet;
      prob.neumann = it->second.neumann;
      if (step.interior_side == excluded) prob.far_dirichlet = meas.dirichlet.at(excluded);
      prob.u0 = oriented(meas.u0.at(step.edge), reverse);
      prob.u1 = oriented(meas.u1.at(step.edge), reverse);
      prob.bound_M = cfg.bound_M;
      if (!(prob.horizon > 2.0 * edge.length))
        throw ValidationError("horizon " + format_double(prob.horizon) + " at node " + step.leaf_side +
                              " does not exceed twice the length of edge " + step.edge);
    }
    parallel_for(stage.size(), [&](std::size_t i) {
      const auto& prob = problems[i];
      InverseConfig c = inv;
      c.time_step = dt;
      auto& res = results[i];
      EdgeInverseProblem fit = prob;
      if (cfg.fit_window > 0.0) fit.horizon = std::min(prob.horizon, cfg.fit_window * prob.length);
      if (cfg.noise_level > 0.0)
        res.rec = recover_with_discrepancy(fit, c, cfg.noise_level * rms(fit.neumann)).recovery;
      else
        res.rec = recover_edge_potential(fit, c);
      if (stage[i].interior_side != excluded) {
        res.far = edge_transfer(res.rec, prob, c);
        res.has_far = true;
      }
    });

    double stage_h = 1e300;
    for (std::size_t i = 0; i < stage.size(); ++i) {
      const auto& step = stage[i];
      auto& res = results[i];
      PeelEdgeReport er;
      er.edge = step.edge;
      er.leaf_side = step.leaf_side;
      er.interior_side = step.interior_side;
      er.stage = s + 1;
      er.horizon = problems[i].horizon;
      er.far_estimated = res.rec.far_estimated;
      er.converged = res.rec.converged;
      er.low_confidence = !res.rec.converged || known.at(step.leaf_side).tainted;
      er.iterations = res.rec.iterations;
      er.alpha = res.rec.alpha;
      er.J = res.rec.J;
      er.grad_norm = res.rec.grad_norm;
      er.residual_l2 = res.rec.residual_l2;
      er.history = res.rec.history;
      stage_h = std::min(stage_h, er.horizon);
      if (er.low_confidence) tainted_edges.insert(step.edge);
      recovered[step.edge] = res.rec.p;
      leaf_of[step.edge] = step.leaf_side;
      if (res.has_far) far_at[step.edge] = std::move(res.far);
      rep.edges.push_back(std::move(er));
    }
    rep.stage_horizons.push_back(stage_h);

    // nodes with exactly one unrecovered edge left hand their data on
    std::set<std::string> candidates;
    for (const auto& step : stage) candidates.insert(step.interior_side);
    for (const auto& node : candidates) {
      if (node == excluded || transferred.count(node)) continue;
      const auto n = g.node_index(node);
      std::vector<KnownEdgeTrace> kn;
      bool taint = false;
      for (std::size_t e : g.incident(n)) {
        const auto& id = g.edges()[e].id;
        if (auto f = far_at.find(id); f != far_at.end() && leaf_of[id] != node) {
          kn.push_back({id, f->second});
          taint = taint || tainted_edges.count(id);
        }
      }
      if (kn.size() + 1 != g.degree(n)) continue;
      std::sort(kn.begin(), kn.end(), [](const auto& x, const auto& y) { return x.edge < y.edge; });
      auto nt = node_transfer(g, node, kn, cfg.consistency_tol);
      known[node] = {nt.dirichlet, nt.neumann, nt.valid_until, taint};
      transferred.insert(node);
      rep.nodes.push_back({node, s + 1, nt.discrepancy, nt.valid_until, nt.consistent});
    }
  }

  if (recovered.size() != g.edge_count()) throw NumericalError("peeling ended with unrecovered edges");
  for (const auto& e : g.edges()) {
    const auto& f = recovered.at(e.id);
    out.potential[e.id] = oriented(f.values, leaf_of.at(e.id) != e.from);
  }
  if (truth) {
    for (auto& er : rep.edges) {
      const auto& e = g.edge(er.edge);
      EdgeField t(e.length, truth->at(er.edge));
      er.error = relative_l2_error(EdgeField(e.length, out.potential.at(er.edge)), t);
    }
    rep.total_error = relative_network_error(g, out.potential, *truth);
  }
  return out;
}

double relative_network_error(const MetricTree& g, const EdgeProfiles& a, const EdgeProfiles& b) {
  double num = 0.0, den = 0.0;
  for (const auto& e : g.edges()) {
    EdgeField fb(e.length, b.at(e.id));
    EdgeField fa = EdgeField(e.length, a.at(e.id)).resampled(fb.cells());
    for (std::size_t i = 0; i < fa.values.size(); ++i) fa.values[i] -= fb.values[i];
    const double x = edge_l2(fa), y = edge_l2(fb);
    num += x * x;
    den += y * y;
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

ResidualCertificate residual_certificate(const MetricTree& g, const EdgeProfiles& p_hat, const Measurements& meas,
                                         double target_dx, double cfl) {
  require_valid_tree(g);
  const double dx = target_dx > 0.0 ? target_dx : g.min_length() / 40.0;
  auto grid = discretize(g, dx, cfl).with_horizon(meas.horizon);
  // keep the run inside the recorded data
  while (grid.horizon() > meas.horizon * (1.0 + 1e-12)) grid = grid.with_time_step(grid.dt(), grid.horizon() - grid.dt());
  auto p = field_from_profiles(grid, p_hat);
  auto u0 = field_from_profiles(grid, meas.u0);
  auto u1 = field_from_profiles(grid, meas.u1);
  RealBoundary h;
  for (std::size_t n : g.external_nodes()) {
    const auto& id = g.nodes()[n].id;
    h.series[id] = resampled(meas.dirichlet.at(id), grid.dt(), grid.steps() + 1).values;
  }
  auto sol = solve_wave(grid, p, u0, u1, h);
  ResidualCertificate out;
  double num = 0.0, den = 0.0;
  for (const auto& [id, tr] : meas.neumann) {
    const auto n = g.node_index(id);
    const auto& eid = g.edges()[g.incident(n).front()].id;
    auto sim = extract_trace(sol, id, TraceSide::neumann_outward, eid, DerivativeStencil::third_order);
    auto data = resampled(tr, grid.dt(), grid.steps() + 1);
    auto diff = subtract(sim, data);
    CertificateNode c;
    c.node = id;
    c.l2 = norm_l2_time(diff);
    c.h1 = norm_h1_time(diff);
    c.data_l2 = norm_l2_time(data);
    c.relative = c.data_l2 > 0.0 ? c.l2 / c.data_l2 : 0.0;
    num += c.l2;
    den += c.data_l2;
    out.nodes.push_back(c);
  }
  out.informative = den > 1e-12;
  out.relative = out.informative ? num / den : num;
  return out;
}

void write_measurements(const std::string& dir, const Measurements& meas) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& file, const std::map<std::string, TraceRecord>& m) {
    std::vector<std::pair<std::string, const TraceRecord*>> cols;
    for (const auto& [id, tr] : m) cols.emplace_back(id, &tr);
    write_trace_csv(dir + "/" + file, cols);
  };
  write("neumann.csv", meas.neumann);
  write("dirichlet.csv", meas.dirichlet);
  std::ofstream f(dir + "/initial.txt");
  if (!f) throw ValidationError("cannot write " + dir + "/initial.txt");
  f << "horizon " << format_double(meas.horizon) << "\n";
  for (const auto& [tag, prof] : {std::pair<const char*, const EdgeProfiles*>{"u0", &meas.u0}, {"u1", &meas.u1}}) {
    for (const auto& [id, v] : *prof) {
      f << tag << ' ' << id;
      for (double x : v) f << ' ' << format_double(x);
      f << '\n';
    }
  }
}

Measurements read_measurements(const std::string& dir) {
  Measurements m;
  auto read = [&](const std::string& file, std::map<std::string, TraceRecord>& out, TraceKind kind) {
    auto table = read_csv_table(dir + "/" + file);
    for (const auto& c : table.columns) {
      auto tr = trace_from_table(table, c);
      tr.node = c;
      tr.kind = kind;
      out[c] = std::move(tr);
    }
  };
  read("neumann.csv", m.neumann, TraceKind::neumann_outward);
  read("dirichlet.csv", m.dirichlet, TraceKind::dirichlet);
  std::ifstream f(dir + "/initial.txt");
  if (!f) throw ValidationError("cannot read " + dir + "/initial.txt");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "horizon") {
      if (!(ss >> m.horizon)) throw ValidationError("initial.txt:" + std::to_string(lineno) + ": bad horizon");
      continue;
    }
    if (tag != "u0" && tag != "u1") throw ValidationError("initial.txt:" + std::to_string(lineno) + ": unknown tag " + tag);
    std::string id;
    if (!(ss >> id)) throw ValidationError("initial.txt:" + std::to_string(lineno) + ": missing edge id");
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        v.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ValidationError("initial.txt:" + std::to_string(lineno) + ": bad number " + tok);
      }
    }
    (tag == "u0" ? m.u0 : m.u1)[id] = std::move(v);
  }
  if (m.horizon <= 0.0) {
    double h = 1e300;
    for (const auto& [id, tr] : m.neumann) h = std::min(h, tr.end_time());
    m.horizon = h;
  }
  return m;
}

}  // namespace treewave
