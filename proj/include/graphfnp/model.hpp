#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "graphfnp/gaussian.hpp"
#include "graphfnp/nn.hpp"
#include "graphfnp/rng.hpp"

namespace graphfnp {

// Component switches. no_zD drops the graph latent from the classifier input,
// no_C feeds raw kernel weights instead of sampled correlations, no_zR
// removes the rationale path entirely, no_EM trains all groups on the joint
// loss instead of alternating.
struct Ablation {
  bool no_zD = false;
  bool no_C = false;
  bool no_zR = false;
  bool no_EM = false;

  static Ablation from_names(const std::set<std::string>& names) {
    Ablation a;
    for (const std::string& n : names) {
      if (n == "no_zD") a.no_zD = true;
      else if (n == "no_C") a.no_C = true;
      else if (n == "no_zR") a.no_zR = true;
      else if (n == "no_EM") a.no_EM = true;
      else throw ArgumentError("unknown ablation flag '" + n + "'");
    }
    return a;
  }

  std::set<std::string> names() const {
    std::set<std::string> out;
    if (no_zD) out.insert("no_zD");
    if (no_C) out.insert("no_C");
    if (no_zR) out.insert("no_zR");
    if (no_EM) out.insert("no_EM");
    return out;
  }
};

struct ModelConfig {
  int latent_dim = 32;
  int hidden_dim = 64;
  int gcn_layers = 3;
  int decoder_gcn_layers = 2;
  int r_per_class = 5;
  double gamma = 1.0;
  int max_nodes = 50;

  // dataset-derived
  int num_classes = 2;
  int feature_dim = 1;
  int num_node_types = 1;
  int num_edge_types = 1;

  Ablation ablation;

  int num_rationales() const { return num_classes * r_per_class; }
  int eos_token() const { return num_node_types; }
  int no_edge_token() const { return num_edge_types; }

  void validate() const {
    if (latent_dim < 1 || hidden_dim < 1 || gcn_layers < 1 || decoder_gcn_layers < 1)
      throw ArgumentError("model config: dims and layer counts must be >= 1");
    if (r_per_class < 1) throw ArgumentError("model config: r_per_class must be >= 1");
    if (num_classes < 2) throw ArgumentError("model config: num_classes must be >= 2");
    if (!(gamma > 0)) throw ArgumentError("model config: gamma must be > 0");
    if (max_nodes < 1) throw ArgumentError("model config: max_nodes must be >= 1");
  }
};

// Which class each rationale slot explains. Assignments are fixed at
// initialization; training only moves the vectors.
struct RationaleBank {
  std::vector<int> class_of;
  int s_dim = 0;

  int size() const { return static_cast<int>(class_of.size()); }
};

// Free rationale vectors plus the class assignment: r_per_class slots per
// class, drawn from 0.1 * N(0, I).
template <typename S>
std::pair<RationaleBank, Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> init_bank(
    int num_classes, int per_class, int s_dim, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("init_bank: num_classes must be >= 2");
  if (per_class < 1) throw ArgumentError("init_bank: per_class must be >= 1");
  if (s_dim < 1) throw ArgumentError("init_bank: s_dim must be >= 1");
  RationaleBank bank;
  bank.s_dim = s_dim;
  for (int c = 0; c < num_classes; ++c)
    for (int r = 0; r < per_class; ++r) bank.class_of.push_back(c);
  Rng rng = make_rng(mix64(seed, 0xba9c));
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> vectors(bank.size(), s_dim);
  for (Eigen::Index i = 0; i < vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < vectors.cols(); ++j)
      vectors(i, j) = static_cast<S>(0.1 * standard_normal(rng));
  return {bank, vectors};
}

// All learnable state plus the handles describing how entries wire together.
template <typename S>
struct ModelState {
  ModelConfig config;
  ParameterSet<S> params;
  RationaleBank bank;

  // theta_e
  std::vector<GcnLayerParams> encoder_gcn;
  GaussianHead<S> encoder_head;
  // theta_r
  ParamRef rationale_vectors;
  GaussianHead<S> rationale_head;
  // theta_cls
  GaussianHead<S> local_head;   // rationale-to-local projections
  MlpHandle<S> classifier;
  // phi
  GaussianHead<S> posterior_head;
  // theta_d
  ParamRef node_embedding;      // rows: node types, then the untyped placeholder
  std::vector<GcnLayerParams> decoder_gcn;
  MlpHandle<S> node_type_head;
  MlpHandle<S> edge_type_head;
};

template <typename S>
ModelState<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState<S> m;
  m.config = config;

  const int latent = config.latent_dim;
  const int hidden = config.hidden_dim;

  Rng rng = make_rng(mix64(seed, 0x0d31));

  // encoder
  for (int l = 0; l < config.gcn_layers; ++l) {
    const int in = (l == 0) ? config.feature_dim : hidden;
    m.encoder_gcn.push_back(
        make_gcn_layer(m.params, Group::theta_e, "gcn" + std::to_string(l), in, hidden, rng));
  }
  m.encoder_head = make_gaussian_head(m.params, Group::theta_e, "z", hidden, hidden, latent, rng);

  // rationales
  auto [bank, vectors] = init_bank<S>(config.num_classes, config.r_per_class, latent, seed);
  m.bank = bank;
  m.rationale_vectors = m.params.add(Group::theta_r, "s_r", std::move(vectors));
  m.rationale_head = make_gaussian_head(m.params, Group::theta_r, "zr", latent, hidden, latent, rng);

  // classifier side
  m.local_head = make_gaussian_head(m.params, Group::theta_cls, "u", latent, hidden, latent, rng);
  m.classifier = make_mlp(m.params, Group::theta_cls, "cls",
                          MLPSpec{2 * latent, hidden, config.num_classes, 3, Activation::relu}, rng);

  // amortized posterior
  m.posterior_head = make_gaussian_head(m.params, Group::phi, "q", hidden, hidden, latent, rng);

  // decoder
  m.node_embedding = m.params.add(Group::theta_d, "node_embed",
                                  glorot_uniform<S>(config.num_node_types + 1, hidden, rng));
  for (int l = 0; l < config.decoder_gcn_layers; ++l)
    m.decoder_gcn.push_back(
        make_gcn_layer(m.params, Group::theta_d, "gcn" + std::to_string(l), hidden, hidden, rng));
  m.node_type_head = make_mlp(m.params, Group::theta_d, "node_head",
                              MLPSpec{2 * hidden + latent, hidden, config.num_node_types + 1, 2,
                                      Activation::relu},
                              rng);
  m.edge_type_head = make_mlp(m.params, Group::theta_d, "edge_head",
                              MLPSpec{3 * hidden + latent, hidden, config.num_edge_types + 1, 2,
                                      Activation::relu},
                              rng);
  return m;
}

}  // namespace graphfnp
