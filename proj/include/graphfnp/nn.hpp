#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphfnp/errors.hpp"
#include "graphfnp/graph.hpp"
#include "graphfnp/rng.hpp"
#include "graphfnp/tape.hpp"

namespace graphfnp {

// The five parameter groups of the model. theta_e: graph encoder; theta_r:
// rationale vectors and their projection heads; theta_cls: local-embedding
// projections and the classifier; theta_d: graph decoder; phi: the amortized
// posterior heads.
enum class Group : int { theta_e = 0, theta_r = 1, theta_cls = 2, theta_d = 3, phi = 4 };

inline constexpr int kNumGroups = 5;

inline const char* group_name(Group g) {
  switch (g) {
    case Group::theta_e: return "theta_e";
    case Group::theta_r: return "theta_r";
    case Group::theta_cls: return "theta_cls";
    case Group::theta_d: return "theta_d";
    case Group::phi: return "phi";
  }
  return "?";
}

inline Group group_from_name(const std::string& name) {
  for (int i = 0; i < kNumGroups; ++i)
    if (name == group_name(static_cast<Group>(i))) return static_cast<Group>(i);
  throw ArgumentError("unknown parameter group '" + name + "'");
}

struct ParamRef {
  Group group = Group::theta_e;
  int index = -1;
  bool valid() const { return index >= 0; }
};

template <typename S>
struct ParamEntry {
  std::string name;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> value;
};

// Named, grouped parameter storage. Entry order is creation order and fixed
// for the life of the model; optimizer state and checkpoints index into it.
template <typename S>
class ParameterSet {
 public:
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  ParamRef add(Group g, std::string name, M init) {
    auto& entries = groups_[static_cast<int>(g)];
    for (const auto& e : entries)
      if (e.name == name)
        throw ArgumentError(std::string("duplicate parameter name ") + group_name(g) + "/" + name);
    if (!init.allFinite())
      throw NumericError(std::string("non-finite init for ") + group_name(g) + "/" + name);
    entries.push_back(ParamEntry<S>{std::move(name), std::move(init)});
    return ParamRef{g, static_cast<int>(entries.size()) - 1};
  }

  ParamEntry<S>& at(ParamRef r) { return groups_[static_cast<int>(r.group)][r.index]; }
  const ParamEntry<S>& at(ParamRef r) const { return groups_[static_cast<int>(r.group)][r.index]; }

  const std::vector<ParamEntry<S>>& group(Group g) const { return groups_[static_cast<int>(g)]; }
  std::vector<ParamEntry<S>>& group(Group g) { return groups_[static_cast<int>(g)]; }

  // Visits every entry in deterministic (group, index) order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (int g = 0; g < kNumGroups; ++g)
      for (int i = 0; i < static_cast<int>(groups_[g].size()); ++i)
        fn(ParamRef{static_cast<Group>(g), i}, groups_[g][i]);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (int g = 0; g < kNumGroups; ++g)
      for (int i = 0; i < static_cast<int>(groups_[g].size()); ++i)
        fn(ParamRef{static_cast<Group>(g), i}, groups_[g][i]);
  }

  int entry_count(Group g) const { return static_cast<int>(groups_[static_cast<int>(g)].size()); }

 private:
  std::array<std::vector<ParamEntry<S>>, kNumGroups> groups_;
};

// Per-entry gradient buffers aligned with a ParameterSet. Slots materialize
// on first touch; absent slots read as zero.
template <typename S>
class GradBuffer {
 public:
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  M& slot(Group g, int index, Eigen::Index rows, Eigen::Index cols) {
    auto& v = buffers_[static_cast<int>(g)];
    if (static_cast<int>(v.size()) <= index) v.resize(index + 1);
    M& m = v[index];
    if (m.size() == 0) m = M::Zero(rows, cols);
    return m;
  }

  const M* find(Group g, int index) const {
    const auto& v = buffers_[static_cast<int>(g)];
    if (index >= static_cast<int>(v.size()) || v[index].size() == 0) return nullptr;
    return &v[index];
  }

  void accumulate(const GradBuffer& other) {
    for (int g = 0; g < kNumGroups; ++g) {
      const auto& src = other.buffers_[g];
      for (int i = 0; i < static_cast<int>(src.size()); ++i) {
        if (src[i].size() == 0) continue;
        slot(static_cast<Group>(g), i, src[i].rows(), src[i].cols()) += src[i];
      }
    }
  }

  void scale(S c) {
    for (auto& group : buffers_)
      for (auto& m : group)
        if (m.size() != 0) m *= c;
  }

 private:
  std::array<std::vector<M>, kNumGroups> buffers_;
};

// Binds a ParameterSet to a tape. Frozen groups enter the tape as constants,
// so their gradients are identically zero by construction; live groups enter
// as leaves exactly once and their gradients can be read back out.
template <typename S>
class ModelTape {
 public:
  using TapeT = Tape<S>;
  using Var = typename TapeT::Var;
  using M = typename TapeT::M;

  ModelTape(TapeT& tape, const ParameterSet<S>& params, std::array<bool, kNumGroups> frozen)
      : tape_(tape), params_(params), frozen_(frozen) {
    for (auto& g : bound_) g.clear();
  }

  static std::array<bool, kNumGroups> freeze(std::initializer_list<Group> groups) {
    std::array<bool, kNumGroups> f{};
    for (Group g : groups) f[static_cast<int>(g)] = true;
    return f;
  }

  TapeT& tape() { return tape_; }
  const ParameterSet<S>& params() const { return params_; }
  bool frozen(Group g) const { return frozen_[static_cast<int>(g)]; }

  Var param(ParamRef r) {
    auto& slots = bound_[static_cast<int>(r.group)];
    if (slots.size() <= static_cast<std::size_t>(r.index)) slots.resize(r.index + 1, Var{-1});
    Var& v = slots[r.index];
    if (!v.valid()) {
      const M& value = params_.at(r).value;
      v = frozen_[static_cast<int>(r.group)] ? tape_.constant(value) : tape_.leaf(value);
    }
    return v;
  }

  // Collects gradients of all live bound parameters into `out`.
  void extract_grads(GradBuffer<S>& out) const {
    for (int g = 0; g < kNumGroups; ++g) {
      if (frozen_[g]) continue;
      const auto& slots = bound_[g];
      for (int i = 0; i < static_cast<int>(slots.size()); ++i) {
        if (!slots[i].valid()) continue;
        M grad = tape_.grad(slots[i]);
        auto& dst = out.slot(static_cast<Group>(g), i, grad.rows(), grad.cols());
        dst += grad;
      }
    }
  }

 private:
  TapeT& tape_;
  const ParameterSet<S>& params_;
  std::array<bool, kNumGroups> frozen_;
  std::array<std::vector<Var>, kNumGroups> bound_;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> glorot_uniform(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(dist(rng));
  return m;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

enum class Activation { relu };

// depth = number of linear layers; ReLU between layers, none after the last.
// depth 1 is a plain linear map, depth 2 the one-hidden-layer default.
struct MLPSpec {
  int in_dim = 1;
  int hidden_dim = 1;
  int out_dim = 1;
  int depth = 2;
  Activation activation = Activation::relu;

  void validate() const {
    if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) throw ArgumentError("MLPSpec: dims must be >= 1");
    if (depth < 1) throw ArgumentError("MLPSpec: depth must be >= 1");
  }
};

template <typename S>
struct MlpHandle {
  MLPSpec spec;
  std::vector<ParamRef> weights;
  std::vector<ParamRef> biases;
};

template <typename S>
MlpHandle<S> make_mlp(ParameterSet<S>& params, Group group, const std::string& prefix,
                      MLPSpec spec, Rng& rng) {
  spec.validate();
  MlpHandle<S> h;
  h.spec = spec;
  for (int l = 0; l < spec.depth; ++l) {
    const int in = (l == 0) ? spec.in_dim : spec.hidden_dim;
    const int out = (l == spec.depth - 1) ? spec.out_dim : spec.hidden_dim;
    h.weights.push_back(params.add(group, prefix + ".w" + std::to_string(l),
                                   glorot_uniform<S>(in, out, rng)));
    h.biases.push_back(params.add(group, prefix + ".b" + std::to_string(l),
                                  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>::Zero(1, out)));
  }
  return h;
}

// Input rows are examples: (batch x in_dim) -> (batch x out_dim).
template <typename S>
typename Tape<S>::Var mlp_forward(ModelTape<S>& mt, const MlpHandle<S>& h,
                                  typename Tape<S>::Var input) {
  auto& t = mt.tape();
  if (t.value(input).cols() != h.spec.in_dim)
    throw ShapeError("mlp_forward: input has " + std::to_string(t.value(input).cols()) +
                     " columns, spec wants " + std::to_string(h.spec.in_dim));
  typename Tape<S>::Var x = input;
  for (std::size_t l = 0; l < h.weights.size(); ++l) {
    x = t.add_row_broadcast(t.matmul(x, mt.param(h.weights[l])), mt.param(h.biases[l]));
    if (l + 1 < h.weights.size()) x = t.relu(x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Graph convolution
// ---------------------------------------------------------------------------

// Symmetric-normalized propagation matrix with self-loops:
// P = D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> normalized_propagation(
    int num_nodes, const std::vector<Edge>& edges) {
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  M a = M::Identity(num_nodes, num_nodes);
  for (const Edge& e : edges) {
    if (e.src < 0 || e.src >= num_nodes || e.dst < 0 || e.dst >= num_nodes)
      throw ShapeError("normalized_propagation: edge index out of range");
    a(e.src, e.dst) = S(1);
    a(e.dst, e.src) = S(1);
  }
  Eigen::Matrix<S, Eigen::Dynamic, 1> dinv = a.rowwise().sum().array().rsqrt();
  return dinv.asDiagonal() * a * dinv.asDiagonal();
}

// Weight plus per-unit bias of one graph-convolution layer.
struct GcnLayerParams {
  ParamRef weight;
  ParamRef bias;
};

template <typename S>
GcnLayerParams make_gcn_layer(ParameterSet<S>& params, Group group, const std::string& prefix,
                              int in_dim, int out_dim, Rng& rng) {
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  return GcnLayerParams{params.add(group, prefix + ".w", glorot_uniform<S>(in_dim, out_dim, rng)),
                        params.add(group, prefix + ".b", M::Zero(1, out_dim))};
}

// One propagation step: relu(P * H * W + b). The bias starts at zero; it is
// what lets constant node features develop per-unit activation patterns
// instead of staying a rank-one image of the degree statistics.
template <typename S>
typename Tape<S>::Var gcn_layer(ModelTape<S>& mt, typename Tape<S>::Var node_states,
                                typename Tape<S>::Var propagation, const GcnLayerParams& layer) {
  auto& t = mt.tape();
  auto propagated = t.matmul(propagation, t.matmul(node_states, mt.param(layer.weight)));
  return t.relu(t.add_row_broadcast(propagated, mt.param(layer.bias)));
}

// Convenience overload taking the raw edge list.
template <typename S>
typename Tape<S>::Var gcn_layer(ModelTape<S>& mt, typename Tape<S>::Var node_states,
                                int num_nodes, const std::vector<Edge>& edges,
                                const GcnLayerParams& layer) {
  auto& t = mt.tape();
  if (t.value(node_states).rows() != num_nodes)
    throw ShapeError("gcn_layer: node_states row count != num_nodes");
  auto prop = t.constant(normalized_propagation<S>(num_nodes, edges));
  return gcn_layer(mt, node_states, prop, layer);
}

// Mean over node rows -> a single pooled row.
template <typename S>
typename Tape<S>::Var aggregate_mean(Tape<S>& t, typename Tape<S>::Var node_states) {
  if (t.value(node_states).rows() < 1) throw ShapeError("aggregate_mean: empty input");
  return t.mean_rows(node_states);
}

// Standardizes a row to zero mean and unit variance across its entries.
// Pooled representations of constant-feature graphs carry their information
// as sub-percent variation on a large common offset, which ReLU heads cannot
// amplify; heads consume the standardized form.
template <typename S>
typename Tape<S>::Var standardize_row(Tape<S>& t, typename Tape<S>::Var row) {
  using M = typename Tape<S>::M;
  const auto& v = t.value(row);
  if (v.rows() != 1) throw ShapeError("standardize_row: input must be a single row");
  const int width = static_cast<int>(v.cols());
  auto ones = t.constant(M::Ones(1, width));
  auto mean = t.scale(t.sum(row), S(1) / S(width));
  auto centered = t.sub(row, t.scale_by(ones, mean));
  auto variance = t.scale(t.sum(t.mul(centered, centered)), S(1) / S(width));
  auto inv_std = t.reciprocal(t.sqrt(t.add_scalar(variance, S(1e-8))));
  return t.scale_by(centered, inv_std);
}

}  // namespace graphfnp
