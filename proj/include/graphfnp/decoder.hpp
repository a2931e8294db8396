#pragma once

#include <map>
#include <utility>
#include <vector>

#include "graphfnp/gaussian.hpp"
#include "graphfnp/graph.hpp"
#include "graphfnp/model.hpp"
#include "graphfnp/nn.hpp"
#include "graphfnp/rationale.hpp"

namespace graphfnp {

enum class TieBreak { by_index };

// A graph linearized into autoregressive decisions. node_steps holds node
// types in generation order terminated by the EOS token; edge_steps[k] holds
// the k+1 decisions of node k+1 against nodes 0..k (edge type or NO_EDGE).
struct GenerationSequence {
  std::vector<int> node_steps;
  std::vector<std::vector<int>> edge_steps;

  int num_real_nodes() const { return static_cast<int>(node_steps.size()) - 1; }

  void validate(int num_node_types, int num_edge_types) const {
    const int eos = num_node_types, no_edge = num_edge_types;
    if (node_steps.empty() || node_steps.back() != eos)
      throw ArgumentError("sequence: node_steps must terminate with EOS");
    for (int i = 0; i + 1 < static_cast<int>(node_steps.size()); ++i)
      if (node_steps[i] < 0 || node_steps[i] >= eos)
        throw ArgumentError("sequence: node type out of range");
    if (static_cast<int>(edge_steps.size()) != std::max(0, num_real_nodes() - 1))
      throw ArgumentError("sequence: edge_steps must cover nodes 1..n-1");
    for (int k = 0; k < static_cast<int>(edge_steps.size()); ++k) {
      if (static_cast<int>(edge_steps[k].size()) != k + 1)
        throw ArgumentError("sequence: node " + std::to_string(k + 1) + " needs " +
                            std::to_string(k + 1) + " edge decisions");
      for (int d : edge_steps[k])
        if (d < 0 || d > no_edge) throw ArgumentError("sequence: edge decision out of range");
    }
  }
};

// One-hot rows for discrete node types; a single constant column when the
// vocabulary is trivial (matching datasets without node labels).
inline Eigen::MatrixXd features_for_types(const std::vector<int>& types, int num_node_types) {
  const int n = static_cast<int>(types.size());
  if (num_node_types <= 1) return Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, num_node_types);
  for (int i = 0; i < n; ++i) f(i, types[i]) = 1.0;
  return f;
}

// Breadth-first linearization from `start`, neighbors expanded in ascending
// original index. The graph must be connected.
inline GenerationSequence bfs_sequence(const Graph& graph, int start, int num_node_types,
                                       int num_edge_types, TieBreak = TieBreak::by_index) {
  if (start < 0 || start >= graph.num_nodes())
    throw ArgumentError("bfs_sequence: start node out of range");
  const auto adj = adjacency_list(graph);
  const auto order = bfs_order_from(adj, start);
  if (static_cast<int>(order.size()) != graph.num_nodes())
    throw ContractError("bfs_sequence: graph is disconnected; pass a connected component");

  std::map<std::pair<int, int>, int> edge_type;
  for (const Edge& e : graph.edges) edge_type[{e.src, e.dst}] = e.type;
  auto type_between = [&](int a, int b) {
    auto it = edge_type.find({std::min(a, b), std::max(a, b)});
    return it == edge_type.end() ? num_edge_types : it->second;
  };

  GenerationSequence seq;
  for (int v : order) {
    const int ty = node_type_of(graph, v);
    if (ty >= num_node_types) throw ArgumentError("bfs_sequence: node type exceeds vocabulary");
    seq.node_steps.push_back(ty);
  }
  seq.node_steps.push_back(num_node_types);  // EOS
  for (int t = 1; t < static_cast<int>(order.size()); ++t) {
    std::vector<int> decisions(t);
    for (int j = 0; j < t; ++j) decisions[j] = type_between(order[t], order[j]);
    seq.edge_steps.push_back(std::move(decisions));
  }
  seq.validate(num_node_types, num_edge_types);
  return seq;
}

// Rebuilds the graph a sequence describes; nodes are numbered in generation
// order.
inline Graph graph_from_sequence(const GenerationSequence& seq, int num_node_types,
                                 int num_edge_types) {
  seq.validate(num_node_types, num_edge_types);
  Graph g;
  std::vector<int> types(seq.node_steps.begin(), seq.node_steps.end() - 1);
  g.node_features = features_for_types(types, num_node_types);
  for (int k = 0; k < static_cast<int>(seq.edge_steps.size()); ++k)
    for (int j = 0; j <= k; ++j)
      if (seq.edge_steps[k][j] != num_edge_types)
        g.edges.push_back(Edge{j, k + 1, seq.edge_steps[k][j]});
  std::sort(g.edges.begin(), g.edges.end());
  g.id = "decoded";
  return g;
}

// ---------------------------------------------------------------------------
// Decoder network
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderSnapshot {
  typename Tape<S>::Var node_states;  // n x hidden
  typename Tape<S>::Var pooled;       // 1 x hidden
};

// Runs the decoder GNN over the current partial graph. `type_rows` maps each
// node to its embedding-table row; the untyped placeholder uses the last row.
template <typename S>
DecoderSnapshot<S> run_decoder_gnn(ModelTape<S>& mt, const ModelState<S>& model,
                                   const std::vector<int>& type_rows,
                                   const std::vector<Edge>& edges) {
  auto& t = mt.tape();
  auto h = t.gather_rows(mt.param(model.node_embedding), type_rows);
  auto prop = t.constant(
      normalized_propagation<S>(static_cast<int>(type_rows.size()), edges));
  for (const GcnLayerParams& layer : model.decoder_gcn) h = gcn_layer(mt, h, prop, layer);
  return {h, aggregate_mean(t, h)};
}

// Stepwise generation state. The flow per node is: begin_node() appends an
// untyped placeholder and yields the node-type distribution; after
// commit_node_type(), every previous node j gets one edge_probabilities(j) /
// commit_edge(j, type) round. Committing a real edge re-runs the decoder GNN
// and refreshes only the current node's representation; the other node states
// and the pooled vector stay as computed at typing time.
template <typename S>
class DecoderState {
 public:
  using Var = typename Tape<S>::Var;

  DecoderState(ModelTape<S>& mt, const ModelState<S>& model, Var z)
      : mt_(mt), model_(model), z_(z) {
    if (mt_.tape().value(z_).rows() != 1 ||
        mt_.tape().value(z_).cols() != model.config.latent_dim)
      throw ShapeError("decoder: conditioning latent must be 1 x latent_dim");
  }

  int num_committed_nodes() const { return static_cast<int>(types_.size()); }

  // Node-type distribution (types then EOS) for the next node.
  Var begin_node() {
    if (placeholder_) throw ContractError("decoder: node step already open");
    placeholder_ = true;
    auto rows = types_;
    rows.push_back(model_.config.num_node_types);  // placeholder embedding
    snapshot_ = run_decoder_gnn(mt_, model_, rows, edges_);
    current_ = mt_.tape().row(snapshot_.node_states, static_cast<int>(types_.size()));
    auto& t = mt_.tape();
    last_node_logits_ =
        mlp_forward(mt_, model_.node_type_head, t.hcat({current_, snapshot_.pooled, z_}));
    return t.softmax_rows(last_node_logits_);
  }

  Var last_node_logits() const { return last_node_logits_; }

  void commit_node_type(int type) {
    if (!placeholder_) throw ContractError("decoder: begin_node first");
    if (type < 0 || type >= model_.config.num_node_types)
      throw ArgumentError("decoder: node type out of range");
    placeholder_ = false;
    types_.push_back(type);
    snapshot_ = run_decoder_gnn(mt_, model_, types_, edges_);
    current_ = mt_.tape().row(snapshot_.node_states, static_cast<int>(types_.size()) - 1);
  }

  void drop_placeholder() { placeholder_ = false; }

  // Edge-type distribution (types then NO_EDGE) between the current node and
  // previous node j; earlier edge decisions of this node are already in force.
  Var edge_probabilities(int j) {
    const int t_idx = current_index();
    if (j < 0 || j >= t_idx) throw ArgumentError("decoder: edge partner out of range");
    auto& t = mt_.tape();
    auto h_j = t.row(snapshot_.node_states, j);
    last_edge_logits_ = mlp_forward(
        mt_, model_.edge_type_head, t.hcat({current_, h_j, snapshot_.pooled, z_}));
    return t.softmax_rows(last_edge_logits_);
  }

  Var last_edge_logits() const { return last_edge_logits_; }

  void commit_edge(int j, int edge_type) {
    const int t_idx = current_index();
    if (j < 0 || j >= t_idx) throw ArgumentError("decoder: edge partner out of range");
    if (edge_type == model_.config.num_edge_types) return;  // NO_EDGE
    if (edge_type < 0 || edge_type > model_.config.num_edge_types)
      throw ArgumentError("decoder: edge type out of range");
    edges_.push_back(Edge{j, t_idx, edge_type});
    auto refreshed = run_decoder_gnn(mt_, model_, types_, edges_);
    current_ = mt_.tape().row(refreshed.node_states, t_idx);
  }

  Graph to_graph() const {
    Graph g;
    g.node_features = features_for_types(types_, model_.config.num_node_types);
    g.edges = edges_;
    std::sort(g.edges.begin(), g.edges.end());
    return g;
  }

 private:
  int current_index() const {
    if (placeholder_ || types_.empty())
      throw ContractError("decoder: no committed node open for edges");
    return static_cast<int>(types_.size()) - 1;
  }

  ModelTape<S>& mt_;
  const ModelState<S>& model_;
  Var z_;
  std::vector<int> types_;
  std::vector<Edge> edges_;
  bool placeholder_ = false;
  DecoderSnapshot<S> snapshot_;
  Var current_;
  Var last_node_logits_;
  Var last_edge_logits_;
};

// Teacher-forced log-likelihood of a sequence under the decoder, conditioned
// on z. Edge decisions between graph re-runs share the same current-node
// state, so they are scored as one batched cross-entropy.
template <typename S>
typename Tape<S>::Var sequence_log_likelihood(ModelTape<S>& mt, const ModelState<S>& model,
                                              const GenerationSequence& seq,
                                              typename Tape<S>::Var z) {
  const ModelConfig& cfg = model.config;
  seq.validate(cfg.num_node_types, cfg.num_edge_types);
  auto& t = mt.tape();

  typename Tape<S>::Var total = t.constant_scalar(S(0));
  std::vector<int> types;
  std::vector<Edge> edges;

  for (int idx = 0; idx < static_cast<int>(seq.node_steps.size()); ++idx) {
    const int target = seq.node_steps[idx];

    auto rows = types;
    rows.push_back(cfg.num_node_types);
    auto snap = run_decoder_gnn(mt, model, rows, edges);
    auto h_vt = t.row(snap.node_states, idx);
    auto node_logits =
        mlp_forward(mt, model.node_type_head, t.hcat({h_vt, snap.pooled, z}));
    total = t.add(total, t.cross_entropy_rows(node_logits, {target}));
    if (target == cfg.eos_token()) break;

    types.push_back(target);
    if (idx == 0) continue;
    auto typed = run_decoder_gnn(mt, model, types, edges);
    h_vt = t.row(typed.node_states, idx);
    const std::vector<int>& decisions = seq.edge_steps[idx - 1];

    auto flush = [&](int lo, int hi) {
      if (lo > hi) return;
      const int k = hi - lo + 1;
      std::vector<int> js(k), targets(k);
      for (int i = 0; i < k; ++i) {
        js[i] = lo + i;
        targets[i] = decisions[lo + i];
      }
      auto x = t.hcat({t.replicate_row(h_vt, k), t.gather_rows(typed.node_states, js),
                       t.replicate_row(typed.pooled, k), t.replicate_row(z, k)});
      auto logits = mlp_forward(mt, model.edge_type_head, x);
      total = t.add(total, t.cross_entropy_rows(logits, targets));
    };

    int segment_start = 0;
    for (int j = 0; j < idx; ++j) {
      if (decisions[j] == cfg.no_edge_token()) continue;
      flush(segment_start, j);
      edges.push_back(Edge{j, idx, decisions[j]});
      auto refreshed = run_decoder_gnn(mt, model, types, edges);
      h_vt = t.row(refreshed.node_states, idx);
      segment_start = j + 1;
    }
    flush(segment_start, idx - 1);
  }
  return t.neg(total);
}

// ---------------------------------------------------------------------------
// Free-running sampling
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
int draw_categorical(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& probs, Rng& rng) {
  double u = uniform01(rng);
  for (Eigen::Index k = 0; k < probs.cols(); ++k) {
    u -= static_cast<double>(probs(0, k));
    if (u <= 0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.cols()) - 1;
}

}  // namespace detail

// Generates a graph conditioned on z, stopping at EOS or max_nodes. The very
// first node ignores EOS (an empty graph is not a graph), renormalizing over
// real types. Deterministic given the seed.
template <typename S>
Graph sample_graph(const ModelState<S>& model,
                   const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& z_values,
                   int max_nodes, std::uint64_t seed) {
  if (max_nodes < 1) throw ArgumentError("sample_graph: max_nodes must be >= 1");
  const ModelConfig& cfg = model.config;
  Rng rng = make_rng(mix64(seed, 0x9e4a));

  Tape<S> tape;
  ModelTape<S> mt(tape, model.params,
                  ModelTape<S>::freeze({Group::theta_e, Group::theta_r, Group::theta_cls,
                                        Group::theta_d, Group::phi}));
  auto z = tape.constant(z_values);
  DecoderState<S> state(mt, model, z);

  while (state.num_committed_nodes() < max_nodes) {
    auto probs_var = state.begin_node();
    auto probs = tape.value(probs_var);
    if (state.num_committed_nodes() == 0) {
      probs(0, cfg.eos_token()) = S(0);
      probs /= probs.sum();
    }
    const int choice = detail::draw_categorical(probs, rng);
    if (choice == cfg.eos_token()) {
      state.drop_placeholder();
      break;
    }
    state.commit_node_type(choice);
    const int t_idx = state.num_committed_nodes() - 1;
    for (int j = 0; j < t_idx; ++j) {
      auto edge_probs = tape.value(state.edge_probabilities(j));
      state.commit_edge(j, detail::draw_categorical(edge_probs, rng));
    }
  }
  Graph g = state.to_graph();
  g.id = "gen-" + std::to_string(seed);
  return g;
}

// Decodes the structure behind one rationale slot: draw (or take the mean of)
// its latent distribution and run the generator. One graph per sample.
template <typename S>
std::vector<Graph> decode_rationale(const ModelState<S>& model, int rationale_index,
                                    int num_samples, std::uint64_t seed) {
  if (rationale_index < 0 || rationale_index >= model.bank.size())
    throw ArgumentError("decode_rationale: rationale index out of range");
  if (num_samples < 1) throw ArgumentError("decode_rationale: num_samples must be >= 1");

  const Gaussian<S> z_r = rationale_embedding_values(model);
  const auto mean = z_r.mean.row(rationale_index);
  const auto logvar = z_r.log_variance.row(rationale_index);

  std::vector<Graph> out;
  for (int k = 0; k < num_samples; ++k) {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> z = mean;
    if (num_samples > 1) {
      Rng rng = make_rng(mix64(seed, 0xdeca, static_cast<std::uint64_t>(k)));
      for (Eigen::Index i = 0; i < z.cols(); ++i)
        z(0, i) += std::exp(logvar(i) / S(2)) * static_cast<S>(standard_normal(rng));
    }
    Graph g = sample_graph(model, z, model.config.max_nodes,
                           mix64(seed, 0xdec0, static_cast<std::uint64_t>(k)));
    g.id = "rationale-" + std::to_string(rationale_index) + "-" + std::to_string(k);
    g.label = model.bank.class_of[rationale_index];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace graphfnp
