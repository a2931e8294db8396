#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <queue>
#include <string>
#include <vector>

#include "graphfnp/errors.hpp"

namespace graphfnp {

// Undirected typed edge; stored once with src < dst.
struct Edge {
  int src = 0;
  int dst = 0;
  int type = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// One labeled graph: per-node feature rows plus an undirected typed edge list.
// Immutable after construction by convention; nothing here mutates it.
struct Graph {
  Eigen::MatrixXd node_features;  // n x d
  std::vector<Edge> edges;
  int label = 0;
  std::string id;

  int num_nodes() const { return static_cast<int>(node_features.rows()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int feature_dim() const { return static_cast<int>(node_features.cols()); }

  void validate() const {
    const int n = num_nodes();
    if (n < 1) throw ArgumentError("graph '" + id + "': must have at least one node");
    for (const Edge& e : edges) {
      if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
        throw ArgumentError("graph '" + id + "': edge index out of range");
      if (e.src == e.dst)
        throw ArgumentError("graph '" + id + "': self-loop in edge list");
      if (e.src >= e.dst)
        throw ArgumentError("graph '" + id + "': undirected edges must satisfy src < dst");
    }
    if (!node_features.allFinite())
      throw NumericError("graph '" + id + "': non-finite node features");
  }
};

struct Dataset {
  std::vector<Graph> graphs;
  int num_classes = 0;
  int num_node_types = 0;
  int num_edge_types = 0;
  int feature_dim = 0;

  int size() const { return static_cast<int>(graphs.size()); }

  void validate() const {
    if (num_classes < 2) throw ArgumentError("dataset: num_classes must be >= 2");
    for (const Graph& g : graphs) {
      g.validate();
      if (g.feature_dim() != feature_dim)
        throw ArgumentError("dataset: graph '" + g.id + "' feature_dim mismatch");
      if (g.label < 0 || g.label >= num_classes)
        throw ArgumentError("dataset: graph '" + g.id + "' label out of range");
      for (const Edge& e : g.edges)
        if (e.type < 0 || e.type >= num_edge_types)
          throw ArgumentError("dataset: graph '" + g.id + "' edge type out of range");
    }
  }
};

// Node type = index of the hot entry of the feature row. Features are one-hot
// node-label encodings (or the constant scalar 1 when the data carries no
// node labels, in which case every node is type 0).
inline int node_type_of(const Graph& g, int v) {
  int best = 0;
  g.node_features.row(v).maxCoeff(&best);
  return best;
}

// Symmetrized adjacency lists, neighbor lists sorted ascending.
inline std::vector<std::vector<int>> adjacency_list(const Graph& g) {
  std::vector<std::vector<int>> adj(g.num_nodes());
  for (const Edge& e : g.edges) {
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
  return adj;
}

inline std::vector<int> bfs_order_from(const std::vector<std::vector<int>>& adj,
                                       int start) {
  std::vector<int> order;
  std::vector<char> seen(adj.size(), 0);
  std::queue<int> frontier;
  frontier.push(start);
  seen[start] = 1;
  while (!frontier.empty()) {
    int v = frontier.front();
    frontier.pop();
    order.push_back(v);
    for (int w : adj[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        frontier.push(w);
      }
    }
  }
  return order;
}

inline bool is_connected(const Graph& g) {
  if (g.num_nodes() == 0) return false;
  auto order = bfs_order_from(adjacency_list(g), 0);
  return static_cast<int>(order.size()) == g.num_nodes();
}

// Node indices of the largest connected component (ascending order).
inline std::vector<int> largest_component(const Graph& g) {
  const auto adj = adjacency_list(g);
  std::vector<char> seen(adj.size(), 0);
  std::vector<int> best;
  for (int v = 0; v < g.num_nodes(); ++v) {
    if (seen[v]) continue;
    auto comp = bfs_order_from(adj, v);
    for (int w : comp) seen[w] = 1;
    if (comp.size() > best.size()) best = std::move(comp);
  }
  std::sort(best.begin(), best.end());
  return best;
}

// Induced subgraph on the given (sorted, unique) node indices; node order is
// their order in `nodes`.
inline Graph induced_subgraph(const Graph& g, const std::vector<int>& nodes) {
  Graph out;
  out.label = g.label;
  out.id = g.id;
  out.node_features.resize(static_cast<Eigen::Index>(nodes.size()), g.node_features.cols());
  std::vector<int> remap(g.num_nodes(), -1);
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    remap[nodes[i]] = i;
    out.node_features.row(i) = g.node_features.row(nodes[i]);
  }
  for (const Edge& e : g.edges) {
    int a = remap[e.src], b = remap[e.dst];
    if (a < 0 || b < 0) continue;
    out.edges.push_back(Edge{std::min(a, b), std::max(a, b), e.type});
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

}  // namespace graphfnp
