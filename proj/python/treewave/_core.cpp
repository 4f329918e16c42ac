#include <algorithm>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "treewave/error.hpp"
#include "treewave/experiments.hpp"
#include "treewave/peeling.hpp"

namespace py = pybind11;
using namespace treewave;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::dict trace_dict(const std::map<std::string, TraceRecord>& traces) {
  py::dict out;
  for (const auto& [node, tr] : traces) out[py::str(node)] = to_array(tr.values);
  return out;
}

py::dict report_dict(const ExperimentReport& r) {
  py::dict d;
  d["experiment"] = r.experiment;
  d["graph_hash"] = r.graph_hash;
  py::dict agg;
  for (const auto& [k, v] : r.aggregates) agg[py::str(k)] = v;
  d["aggregates"] = agg;
  d["flags"] = r.flags;
  d["text"] = r.str();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Wave, heat and Schrodinger equations on metric trees; potential recovery by leaf peeling";
  m.attr("__version__") = TREEWAVE_VERSION;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<MetricTree>(m, "MetricTree")
      .def_property_readonly("nodes",
                             [](const MetricTree& g) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& n : g.nodes())
                                 out.emplace_back(n.id, n.kind == NodeKind::external ? "external" : "internal");
                               return out;
                             })
      .def_property_readonly("edges",
                             [](const MetricTree& g) {
                               std::vector<std::tuple<std::string, std::string, std::string, double>> out;
                               for (const auto& e : g.edges()) out.emplace_back(e.id, e.from, e.to, e.length);
                               return out;
                             })
      .def_property_readonly("external_nodes",
                             [](const MetricTree& g) {
                               std::vector<std::string> out;
                               for (std::size_t n : g.external_nodes()) out.push_back(g.nodes()[n].id);
                               return out;
                             })
      .def("graph_hash", [](const MetricTree& g) { return graph_hash(g); })
      .def("__len__", &MetricTree::edge_count);

  m.def("make_tree",
        [](const std::vector<std::pair<std::string, std::string>>& nodes,
           const std::vector<std::tuple<std::string, std::string, std::string, double>>& edges) {
          std::vector<Node> ns;
          for (const auto& [id, kind] : nodes) {
            if (kind != "external" && kind != "internal") throw ValidationError("node kind must be internal or external");
            ns.push_back({id, kind == "external" ? NodeKind::external : NodeKind::internal});
          }
          std::vector<Edge> es;
          for (const auto& [id, from, to, len] : edges) es.push_back({id, from, to, len});
          return MetricTree(std::move(ns), std::move(es));
        },
        py::arg("nodes"), py::arg("edges"), "Tree from (id, kind) nodes and (id, from, to, length) edges.");
  m.def("parse_network",
        [](const std::string& text) {
          auto net = parse_network(text);
          return py::make_tuple(net.tree, net.potentials);
        },
        py::arg("text"), "Network file text to (tree, potentials).");
  m.def("load_network",
        [](const std::string& path) {
          auto net = load_network(path);
          return py::make_tuple(net.tree, net.potentials);
        },
        py::arg("path"));
  m.def("serialize_network",
        [](const MetricTree& g, const EdgeProfiles& p) { return serialize_network(NetworkFile{g, p}); }, py::arg("tree"),
        py::arg("potentials") = EdgeProfiles{});
  m.def("validate_tree",
        [](const MetricTree& g) {
          std::vector<std::string> out;
          for (const auto& v : validate_tree(g)) out.push_back(v.message);
          return out;
        },
        py::arg("tree"), "Violation messages; empty for a valid tree.");
  m.def("peel_schedule",
        [](const MetricTree& g, const std::string& excluded) {
          std::vector<std::vector<std::string>> out;
          for (const auto& st : peel_schedule(g, excluded).stages) {
            out.emplace_back();
            for (const auto& s : st) out.back().push_back(s.edge);
          }
          return out;
        },
        py::arg("tree"), py::arg("excluded"), "Edge ids per peel stage.");
  m.def("default_peel_horizon", &default_peel_horizon, py::arg("tree"), py::arg("excluded"));

  m.def("random_tree", &random_tree, py::arg("edges"), py::arg("seed"), py::arg("min_len") = 0.2,
        py::arg("max_len") = 2.0);
  m.def("random_smooth_potential", &random_smooth_potential, py::arg("tree"), py::arg("seed"), py::arg("M"),
        py::arg("modes") = 3, py::arg("cells") = 64);
  m.def("member_seed", &member_seed, py::arg("base"), py::arg("index"));

  py::class_<Measurements>(m, "Measurements")
      .def_readonly("horizon", &Measurements::horizon)
      .def_property_readonly("neumann", [](const Measurements& x) { return trace_dict(x.neumann); })
      .def_property_readonly("dirichlet", [](const Measurements& x) { return trace_dict(x.dirichlet); })
      .def_property_readonly("dt",
                             [](const Measurements& x) {
                               return x.dirichlet.empty() ? 0.0 : x.dirichlet.begin()->second.dt;
                             })
      .def("without", [](Measurements x, const std::string& node) {
        x.neumann.erase(node);
        return x;
      }, py::arg("node"), "Copy with the Neumann trace of `node` removed.")
      .def("write", [](const Measurements& x, const std::string& dir) { write_measurements(dir, x); }, py::arg("dir"))
      .def_static("read", &read_measurements, py::arg("dir"));

  m.def("simulate",
        [](const MetricTree& g, const EdgeProfiles& p, double horizon, double target_dx, double cfl) {
          SimulationSetup s;
          s.horizon = horizon;
          s.target_dx = target_dx;
          s.cfl = cfl;
          py::gil_scoped_release nogil;
          return simulate_measurements(g, p, default_u0(g), [](std::size_t, double) { return 0.0; }, s).measurements;
        },
        py::arg("tree"), py::arg("potential"), py::arg("horizon"), py::arg("target_dx") = 0.0, py::arg("cfl") = 0.8,
        "Wave run with u0 = 1 + 0.1 sin^4(pi x / l), u1 = 0 and compatible Dirichlet data.");

  m.def("peel",
        [](const MetricTree& g, const Measurements& meas, const std::string& excluded, double alpha, double target_dx,
           double param_dx, double bound_M, int max_iters, double noise_level, std::optional<EdgeProfiles> truth) {
          PeelConfig cfg;
          cfg.inverse.alpha = alpha;
          cfg.inverse.target_dx = target_dx;
          cfg.inverse.param_dx = param_dx;
          cfg.inverse.max_iters = max_iters;
          cfg.bound_M = bound_M;
          cfg.noise_level = noise_level;
          PeelResult res;
          {
            py::gil_scoped_release nogil;
            res = peel_tree(g, meas, excluded, cfg, truth ? &*truth : nullptr);
          }
          py::dict out;
          out["potential"] = res.potential;
          out["stages"] = res.report.stage_horizons.size();
          out["horizon"] = res.report.horizon;
          out["error"] = res.report.total_error ? py::cast(*res.report.total_error) : py::none();
          py::list edges;
          for (const auto& e : res.report.edges) {
            py::dict d;
            d["edge"] = e.edge;
            d["stage"] = e.stage;
            d["converged"] = e.converged;
            d["low_confidence"] = e.low_confidence;
            d["iterations"] = e.iterations;
            d["alpha"] = e.alpha;
            d["error"] = e.error ? py::cast(*e.error) : py::none();
            edges.append(d);
          }
          out["edges"] = edges;
          return out;
        },
        py::arg("tree"), py::arg("measurements"), py::arg("excluded"), py::arg("alpha") = -1.0,
        py::arg("target_dx") = 0.02, py::arg("param_dx") = 0.1, py::arg("bound_M") = 1e300, py::arg("max_iters") = 40,
        py::arg("noise_level") = 0.0, py::arg("truth") = py::none());
  m.def("relative_network_error", &relative_network_error, py::arg("tree"), py::arg("estimate"), py::arg("truth"));

  m.def("reznitzkaya",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> w, double dtau, double dt, std::size_t count) {
          TraceRecord tr;
          tr.dt = dtau;
          tr.values.assign(w.data(), w.data() + w.size());
          return to_array(reznitzkaya(tr, dt, count).values);
        },
        py::arg("wave"), py::arg("dtau"), py::arg("dt"), py::arg("count"),
        "Wave-to-heat transform of samples w(k dtau); heat values at t = dt, ..., count dt.");

  m.def("observability",
        [](const MetricTree& g, const EdgeProfiles& p, const std::vector<EdgeProfiles>& ensemble,
           const std::vector<double>& horizons, const std::string& excluded, double target_dx) {
          ObservabilitySetup s;
          s.horizons = horizons;
          s.excluded = excluded;
          s.target_dx = target_dx;
          ObservabilityResult r;
          {
            py::gil_scoped_release nogil;
            r = run_observability(g, p, ensemble, s);
          }
          auto d = report_dict(r.report);
          d["constants"] = r.constants;
          return d;
        },
        py::arg("tree"), py::arg("potential"), py::arg("ensemble"), py::arg("horizons"), py::arg("excluded") = "",
        py::arg("target_dx") = 0.01);
  m.def("stability",
        [](const MetricTree& g, const std::vector<std::pair<EdgeProfiles, EdgeProfiles>>& pairs, double horizon,
           const std::string& excluded, double target_dx, bool refine) {
          StabilitySetup s;
          s.horizon = horizon;
          s.excluded = excluded;
          s.target_dx = target_dx;
          s.refine = refine;
          StabilityResult r;
          {
            py::gil_scoped_release nogil;
            r = run_stability(g, pairs, s);
          }
          auto d = report_dict(r.report);
          std::vector<double> ratios;
          for (const auto& run : r.runs) ratios.push_back(run.ratio);
          d["ratios"] = to_array(ratios);
          return d;
        },
        py::arg("tree"), py::arg("pairs"), py::arg("horizon"), py::arg("excluded") = "", py::arg("target_dx") = 0.02,
        py::arg("refine") = false);
  m.def("uniqueness",
        [](const MetricTree& g, const EdgeProfiles& p, const EdgeProfiles& q, double horizon,
           const std::string& excluded, double target_dx) {
          UniquenessSetup s;
          s.horizon = horizon;
          s.excluded = excluded;
          s.target_dx = target_dx;
          UniquenessResult r;
          {
            py::gil_scoped_release nogil;
            r = run_uniqueness_check(g, p, q, s);
          }
          auto d = report_dict(r.report);
          d["consistent"] = r.consistent;
          return d;
        },
        py::arg("tree"), py::arg("p"), py::arg("q"), py::arg("horizon"), py::arg("excluded") = "",
        py::arg("target_dx") = 0.02);
}
