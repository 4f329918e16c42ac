#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace treewave {

enum class NodeKind { internal, external };

struct Node {
  std::string id;
  NodeKind kind = NodeKind::internal;
};

/// Oriented edge: `from` is the initial node I(e) (x = 0), `to` is the
/// terminal node T(e) (x = length).
struct Edge {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;
};

/// Metric graph: nodes, oriented edges with positive lengths.
///
/// Construction only checks referential integrity (unique ids, existing
/// endpoints, finite positive lengths). Tree shape and degree rules are
/// checked separately by validate_tree so that malformed graphs can still be
/// loaded and diagnosed. Immutable after construction.
class MetricTree {
 public:
  MetricTree() = default;
  MetricTree(std::vector<Node> nodes, std::vector<Edge> edges);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  std::optional<std::size_t> find_node(std::string_view id) const;
  std::optional<std::size_t> find_edge(std::string_view id) const;
  /// Throws ValidationError for unknown ids.
  std::size_t node_index(std::string_view id) const;
  std::size_t edge_index(std::string_view id) const;

  const Node& node(std::string_view id) const { return nodes_[node_index(id)]; }
  const Edge& edge(std::string_view id) const { return edges_[edge_index(id)]; }

  /// Indices of edges incident to node `n` (a self-loop is listed twice).
  const std::vector<std::size_t>& incident(std::size_t n) const { return incident_[n]; }
  std::size_t degree(std::size_t n) const { return incident_[n].size(); }

  std::size_t from_index(std::size_t e) const { return endpoints_[e].first; }
  std::size_t to_index(std::size_t e) const { return endpoints_[e].second; }
  /// The endpoint of edge `e` that is not `n`.
  std::size_t opposite(std::size_t e, std::size_t n) const;

  std::vector<std::size_t> external_nodes() const;
  std::vector<std::size_t> internal_nodes() const;

  double total_length() const;
  double min_length() const;

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::map<std::string, std::size_t, std::less<>> node_lookup_;
  std::map<std::string, std::size_t, std::less<>> edge_lookup_;
  std::vector<std::pair<std::size_t, std::size_t>> endpoints_;
  std::vector<std::vector<std::size_t>> incident_;
};

/// Per-edge samples, uniform on [0, length] with both endpoints included,
/// keyed by edge id.
using EdgeProfiles = std::map<std::string, std::vector<double>>;

/// Contents of a network file: topology plus optional potential samples.
struct NetworkFile {
  MetricTree tree;
  EdgeProfiles potentials;
};

NetworkFile parse_network(std::string_view text);
NetworkFile load_network(const std::string& path);
std::string serialize_network(const NetworkFile& net);
std::string serialize_network(const MetricTree& tree);

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  empty_graph,
  cycle,
  not_connected,
  external_degree,
  internal_degree,
};

struct Violation {
  ViolationKind kind;
  std::string message;
  std::vector<std::string> edges;  // offending edge ids, when meaningful
};

/// Empty result iff `g` is a connected, acyclic tree whose external nodes
/// have degree 1 and internal nodes degree >= 2.
std::vector<Violation> validate_tree(const MetricTree& g);

/// Throws ValidationError listing every violation.
void require_valid_tree(const MetricTree& g);

// ---------------------------------------------------------------------------
// Peel schedule

struct PeelStep {
  std::string edge;
  std::string leaf_side;
  std::string interior_side;
};

/// Staged reduction of the tree towards the unmeasured external node.
/// Stage k lists the edges whose leaf-side node is a leaf of the reduced
/// graph at the start of that stage, sorted by edge id.
struct PeelPlan {
  std::string excluded;
  std::vector<std::vector<PeelStep>> stages;

  std::size_t edge_count() const;
};

PeelPlan peel_schedule(const MetricTree& g, std::string_view excluded);

/// Longest metric distance from `root` to any node.
double max_depth_from(const MetricTree& g, std::string_view root);

/// Metric distance between two nodes along the unique tree path.
double tree_distance(const MetricTree& g, std::string_view a, std::string_view b);

/// 64-bit FNV-1a hash of the serialized topology, as 16 hex digits.
std::string graph_hash(const MetricTree& g);

}  // namespace treewave
