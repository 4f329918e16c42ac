#include "treewave/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "treewave/error.hpp"

namespace treewave {

MetricTree::MetricTree(std::vector<Node> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id.empty()) throw ValidationError("empty node id");
    if (!node_lookup_.emplace(nodes_[i].id, i).second)
      throw ValidationError("duplicate node id '" + nodes_[i].id + "'");
  }
  incident_.resize(nodes_.size());
  endpoints_.reserve(edges_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& edge = edges_[e];
    if (edge.id.empty()) throw ValidationError("empty edge id");
    if (!edge_lookup_.emplace(edge.id, e).second)
      throw ValidationError("duplicate edge id '" + edge.id + "'");
    if (!std::isfinite(edge.length) || edge.length <= 0.0)
      throw ValidationError("edge '" + edge.id + "' has non-positive length");
    auto a = find_node(edge.from);
    auto b = find_node(edge.to);
    if (!a) throw ValidationError("edge '" + edge.id + "' references unknown node '" + edge.from + "'");
    if (!b) throw ValidationError("edge '" + edge.id + "' references unknown node '" + edge.to + "'");
    endpoints_.emplace_back(*a, *b);
    incident_[*a].push_back(e);
    incident_[*b].push_back(e);
  }
}

std::optional<std::size_t> MetricTree::find_node(std::string_view id) const {
  auto it = node_lookup_.find(id);
  if (it == node_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> MetricTree::find_edge(std::string_view id) const {
  auto it = edge_lookup_.find(id);
  if (it == edge_lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t MetricTree::node_index(std::string_view id) const {
  if (auto n = find_node(id)) return *n;
  throw ValidationError("unknown node '" + std::string(id) + "'");
}

std::size_t MetricTree::edge_index(std::string_view id) const {
  if (auto e = find_edge(id)) return *e;
  throw ValidationError("unknown edge '" + std::string(id) + "'");
}

std::size_t MetricTree::opposite(std::size_t e, std::size_t n) const {
  const auto [a, b] = endpoints_[e];
  if (a == n) return b;
  if (b == n) return a;
  throw ValidationError("edge '" + edges_[e].id + "' is not incident to node '" + nodes_[n].id + "'");
}

std::vector<std::size_t> MetricTree::external_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == NodeKind::external) out.push_back(i);
  return out;
}

std::vector<std::size_t> MetricTree::internal_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == NodeKind::internal) out.push_back(i);
  return out;
}

double MetricTree::total_length() const {
  double s = 0.0;
  for (const auto& e : edges_) s += e.length;
  return s;
}

double MetricTree::min_length() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& e : edges_) m = std::min(m, e.length);
  return m;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "expected a number, got '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw ParseError(line, "non-finite number '" + std::string(tok) + "'");
  return v;
}

std::size_t parse_count(std::string_view tok, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "expected a sample count, got '" + std::string(tok) + "'");
  return v;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

NetworkFile parse_network(std::string_view text) {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<std::size_t> edge_lines;
  std::set<std::string, std::less<>> node_ids, edge_ids;
  std::vector<std::pair<std::size_t, std::pair<std::string, std::vector<double>>>> potentials;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tok = split_ws(line);
    if (tok.empty()) {
      if (eol == text.size()) break;
      continue;
    }
    if (tok[0] == "node") {
      if (tok.size() != 3) throw ParseError(line_no, "expected 'node <id> internal|external'");
      NodeKind kind;
      if (tok[2] == "internal") kind = NodeKind::internal;
      else if (tok[2] == "external") kind = NodeKind::external;
      else throw ParseError(line_no, "node kind must be 'internal' or 'external'");
      if (!node_ids.emplace(tok[1]).second)
        throw ParseError(line_no, "duplicate node id '" + std::string(tok[1]) + "'");
      nodes.push_back({std::string(tok[1]), kind});
    } else if (tok[0] == "edge") {
      if (tok.size() != 5) throw ParseError(line_no, "expected 'edge <id> <from> <to> <length>'");
      if (!edge_ids.emplace(tok[1]).second)
        throw ParseError(line_no, "duplicate edge id '" + std::string(tok[1]) + "'");
      double len = parse_double(tok[4], line_no);
      if (len <= 0.0) throw ParseError(line_no, "non-positive length for edge '" + std::string(tok[1]) + "'");
      edges.push_back({std::string(tok[1]), std::string(tok[2]), std::string(tok[3]), len});
      edge_lines.push_back(line_no);
    } else if (tok[0] == "potential") {
      if (tok.size() < 3) throw ParseError(line_no, "expected 'potential <edge-id> <n> <v0> ...'");
      std::size_t n = parse_count(tok[2], line_no);
      if (n < 2) throw ParseError(line_no, "potential needs at least 2 samples");
      if (tok.size() != 3 + n)
        throw ParseError(line_no, "potential declares " + std::to_string(n) + " samples but has " +
                                      std::to_string(tok.size() - 3));
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = parse_double(tok[3 + i], line_no);
      potentials.push_back({line_no, {std::string(tok[1]), std::move(v)}});
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(tok[0]) + "'");
    }
    if (eol == text.size()) break;
  }

  for (std::size_t e = 0; e < edges.size(); ++e) {
    for (const auto* end : {&edges[e].from, &edges[e].to})
      if (!node_ids.contains(*end))
        throw ParseError(edge_lines[e], "edge '" + edges[e].id + "' references undeclared node '" + *end + "'");
  }

  NetworkFile out{MetricTree(std::move(nodes), std::move(edges)), {}};
  for (auto& [ln, entry] : potentials) {
    if (!out.tree.find_edge(entry.first))
      throw ParseError(ln, "potential for undeclared edge '" + entry.first + "'");
    if (!out.potentials.emplace(entry.first, std::move(entry.second)).second)
      throw ParseError(ln, "duplicate potential for edge '" + entry.first + "'");
  }
  return out;
}

NetworkFile load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open network file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str());
}

std::string serialize_network(const NetworkFile& net) {
  std::string out;
  for (const auto& n : net.tree.nodes())
    out += "node " + n.id + (n.kind == NodeKind::internal ? " internal\n" : " external\n");
  for (const auto& e : net.tree.edges())
    out += "edge " + e.id + " " + e.from + " " + e.to + " " + fmt17(e.length) + "\n";
  // Potentials follow edge order so that output is stable.
  for (const auto& e : net.tree.edges()) {
    auto it = net.potentials.find(e.id);
    if (it == net.potentials.end()) continue;
    out += "potential " + e.id + " " + std::to_string(it->second.size());
    for (double v : it->second) out += " " + fmt17(v);
    out += "\n";
  }
  return out;
}

std::string serialize_network(const MetricTree& tree) { return serialize_network(NetworkFile{tree, {}}); }

// ---------------------------------------------------------------------------
// Validation

namespace {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

// Edge ids along the path between a and b in the forest given by `adj`.
std::vector<std::size_t> forest_path(const MetricTree& g, const std::vector<std::vector<std::size_t>>& adj,
                                     std::size_t a, std::size_t b) {
  std::vector<std::ptrdiff_t> via(g.node_count(), -1);
  std::vector<bool> seen(g.node_count(), false);
  std::queue<std::size_t> q;
  q.push(a);
  seen[a] = true;
  while (!q.empty()) {
    std::size_t n = q.front();
    q.pop();
    if (n == b) break;
    for (std::size_t e : adj[n]) {
      std::size_t m = g.opposite(e, n);
      if (!seen[m]) {
        seen[m] = true;
        via[m] = static_cast<std::ptrdiff_t>(e);
        q.push(m);
      }
    }
  }
  std::vector<std::size_t> path;
  for (std::size_t n = b; n != a && via[n] >= 0;) {
    auto e = static_cast<std::size_t>(via[n]);
    path.push_back(e);
    n = g.opposite(e, n);
  }
  return path;
}

}  // namespace

std::vector<Violation> validate_tree(const MetricTree& g) {
  std::vector<Violation> out;
  if (g.node_count() == 0) {
    out.push_back({ViolationKind::empty_graph, "graph has no nodes", {}});
    return out;
  }

  DisjointSet ds(g.node_count());
  std::vector<std::vector<std::size_t>> forest(g.node_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    std::size_t a = g.from_index(e), b = g.to_index(e);
    if (ds.unite(a, b)) {
      forest[a].push_back(e);
      forest[b].push_back(e);
      continue;
    }
    Violation v{ViolationKind::cycle, "cycle detected", {}};
    for (std::size_t pe : forest_path(g, forest, a, b)) v.edges.push_back(g.edges()[pe].id);
    v.edges.push_back(g.edges()[e].id);
    std::sort(v.edges.begin(), v.edges.end());
    v.message = "cycle detected through " + std::to_string(v.edges.size()) + " edge(s)";
    out.push_back(std::move(v));
  }

  std::set<std::size_t> roots;
  for (std::size_t n = 0; n < g.node_count(); ++n) roots.insert(ds.find(n));
  if (roots.size() > 1)
    out.push_back({ViolationKind::not_connected,
                   "not connected: " + std::to_string(roots.size()) + " components", {}});

  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const Node& node = g.nodes()[n];
    std::size_t d = g.degree(n);
    if (node.kind == NodeKind::external && d != 1)
      out.push_back({ViolationKind::external_degree,
                     "external node '" + node.id + "' has degree " + std::to_string(d), {}});
    if (node.kind == NodeKind::internal && d < 2)
      out.push_back({ViolationKind::internal_degree,
                     "internal node '" + node.id + "' has degree " + std::to_string(d), {}});
  }
  return out;
}

void require_valid_tree(const MetricTree& g) {
  auto v = validate_tree(g);
  if (v.empty()) return;
  std::string msg = "invalid tree:";
  for (const auto& x : v) msg += " " + x.message + ";";
  throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Peeling schedule

std::size_t PeelPlan::edge_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.size();
  return n;
}

PeelPlan peel_schedule(const MetricTree& g, std::string_view excluded) {
  require_valid_tree(g);
  const std::size_t ex = g.node_index(excluded);
  if (g.nodes()[ex].kind != NodeKind::external)
    throw ValidationError("excluded node '" + std::string(excluded) + "' is not external");

  PeelPlan plan{std::string(excluded), {}};
  std::vector<std::size_t> degree(g.node_count());
  for (std::size_t n = 0; n < g.node_count(); ++n) degree[n] = g.degree(n);
  std::vector<bool> removed(g.edge_count(), false);
  std::size_t remaining = g.edge_count();

  while (remaining > 0) {
    std::vector<std::pair<std::size_t, std::size_t>> stage;  // (edge, leaf-side node)
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (removed[e]) continue;
      std::size_t a = g.from_index(e), b = g.to_index(e);
      if (degree[a] == 1 && a != ex) stage.emplace_back(e, a);
      else if (degree[b] == 1 && b != ex) stage.emplace_back(e, b);
    }
    if (stage.empty()) throw ValidationError("peeling stalled: remaining edges form a closed cycle");
    std::sort(stage.begin(), stage.end(), [&](const auto& x, const auto& y) {
      return g.edges()[x.first].id < g.edges()[y.first].id;
    });
    std::vector<PeelStep> steps;
    for (auto [e, leaf] : stage) {
      std::size_t other = g.opposite(e, leaf);
      steps.push_back({g.edges()[e].id, g.nodes()[leaf].id, g.nodes()[other].id});
    }
    for (auto [e, leaf] : stage) {
      removed[e] = true;
      --degree[g.from_index(e)];
      --degree[g.to_index(e)];
      --remaining;
    }
    plan.stages.push_back(std::move(steps));
  }
  return plan;
}

namespace {

std::vector<double> distances_from(const MetricTree& g, std::size_t root) {
  std::vector<double> dist(g.node_count(), -1.0);
  std::vector<std::size_t> stack{root};
  dist[root] = 0.0;
  while (!stack.empty()) {
    std::size_t n = stack.back();
    stack.pop_back();
    for (std::size_t e : g.incident(n)) {
      std::size_t m = g.opposite(e, n);
      if (dist[m] < 0.0) {
        dist[m] = dist[n] + g.edges()[e].length;
        stack.push_back(m);
      }
    }
  }
  return dist;
}

}  // namespace

double max_depth_from(const MetricTree& g, std::string_view root) {
  auto d = distances_from(g, g.node_index(root));
  return *std::max_element(d.begin(), d.end());
}

double tree_distance(const MetricTree& g, std::string_view a, std::string_view b) {
  auto d = distances_from(g, g.node_index(a));
  double v = d[g.node_index(b)];
  if (v < 0.0) throw ValidationError("nodes '" + std::string(a) + "' and '" + std::string(b) + "' are not connected");
  return v;
}

std::string graph_hash(const MetricTree& g) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_network(g)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace treewave
