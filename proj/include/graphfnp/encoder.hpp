#pragma once

#include "graphfnp/gaussian.hpp"
#include "graphfnp/graph.hpp"
#include "graphfnp/model.hpp"
#include "graphfnp/nn.hpp"

namespace graphfnp {

template <typename S>
struct GraphEncoding {
  typename Tape<S>::Var node_states;  // n x hidden
  typename Tape<S>::Var pooled;       // 1 x hidden, mean of node states
  typename Tape<S>::Var normalized;   // standardized pooled row (head input)
  GaussianVar<S> z;                   // graph latent distribution
};

// Graph -> latent Gaussian: stacked graph convolutions, mean pooling, then
// the two encoder heads.
template <typename S>
GraphEncoding<S> encode(ModelTape<S>& mt, const ModelState<S>& model, const Graph& graph) {
  auto& t = mt.tape();
  if (graph.feature_dim() != model.config.feature_dim)
    throw ShapeError("encode: graph '" + graph.id + "' feature_dim " +
                     std::to_string(graph.feature_dim()) + " != configured " +
                     std::to_string(model.config.feature_dim));

  auto prop = t.constant(normalized_propagation<S>(graph.num_nodes(), graph.edges));
  auto h = t.constant(graph.node_features.cast<S>());
  for (const GcnLayerParams& layer : model.encoder_gcn) h = gcn_layer(mt, h, prop, layer);

  GraphEncoding<S> out;
  out.node_states = h;
  out.pooled = aggregate_mean(t, h);
  // heads read the standardized pooled vector; `pooled` itself stays the raw
  // node-state mean
  out.normalized = standardize_row(t, out.pooled);
  out.z = gaussian_head_forward(mt, model.encoder_head, out.normalized);
  return out;
}

// Value-level encoding on a scratch tape; used by metrics and KNN lookups.
template <typename S>
Gaussian<S> encode_values(const ModelState<S>& model, const Graph& graph) {
  Tape<S> tape;
  ModelTape<S> mt(tape, model.params, ModelTape<S>::freeze({}));
  auto enc = encode(mt, model, graph);
  return gaussian_values(tape, enc.z);
}

}  // namespace graphfnp
