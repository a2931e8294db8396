#pragma once

#include "graphfnp/gaussian.hpp"
#include "graphfnp/model.hpp"

namespace graphfnp {

// Latent distributions of every rationale slot, one per row: the free vectors
// pushed through the rationale projection heads.
template <typename S>
GaussianVar<S> rationale_embeddings(ModelTape<S>& mt, const ModelState<S>& model) {
  auto s = mt.param(model.rationale_vectors);
  return gaussian_head_forward(mt, model.rationale_head, s);
}

// Rationales are projected into the local embedding space directly, reusing
// the same projection MLPs that aggregate correlated rationales for graphs.
// The projection reads the distribution means, not samples.
template <typename S>
GaussianVar<S> rationale_local_embedding(ModelTape<S>& mt, const ModelState<S>& model,
                                         const GaussianVar<S>& z_r) {
  return gaussian_head_forward(mt, model.local_head, z_r.mean);
}

// Value-level rationale distributions on a scratch tape (decode/eval paths).
template <typename S>
Gaussian<S> rationale_embedding_values(const ModelState<S>& model) {
  Tape<S> tape;
  ModelTape<S> mt(tape, model.params, ModelTape<S>::freeze({}));
  auto z = rationale_embeddings(mt, model);
  return gaussian_values(tape, z);
}

}  // namespace graphfnp
