#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfnp/adam.hpp"
#include "graphfnp/checkpoint.hpp"
#include "graphfnp/datasets.hpp"
#include "graphfnp/decoder.hpp"
#include "graphfnp/fnp.hpp"
#include "graphfnp/parallel.hpp"

namespace graphfnp {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  int latent_dim = 32;
  int hidden_dim = 64;
  int gcn_layers = 3;
  int r_k = 5;
  double gamma = 1.0;
  double learning_rate = 1e-3;
  double decoder_finetune_lr = 1e-5;
  int epochs = 30;
  int e_steps_per_cycle = 0;  // 0 = one full pass
  int m_steps_per_cycle = 0;
  double gumbel_tau_start = 1.0;
  double gumbel_tau_end = 0.1;
  int mc_samples_train = 1;
  int mc_samples_eval = 8;
  int max_nodes = 50;
  std::uint64_t seed = 0;
  Ablation ablation;
  int batch_size = 32;
  int finetune_epochs = 0;
  std::string precision = "f32";

  void validate() const {
    if (latent_dim < 1 || hidden_dim < 1 || gcn_layers < 1 || r_k < 1 || batch_size < 1)
      throw ArgumentError("config: dims, layers, r_k and batch_size must be >= 1");
    if (!(gamma > 0) || !(learning_rate > 0) || !(decoder_finetune_lr > 0))
      throw ArgumentError("config: gamma and learning rates must be > 0");
    if (epochs < 0 || finetune_epochs < 0 || e_steps_per_cycle < 0 || m_steps_per_cycle < 0)
      throw ArgumentError("config: epoch and step counts must be >= 0");
    if (!(gumbel_tau_start > 0) || !(gumbel_tau_end > 0))
      throw ArgumentError("config: gumbel temperatures must be > 0");
    if (gumbel_tau_end > gumbel_tau_start)
      throw ArgumentError("config: gumbel_tau_end must not exceed gumbel_tau_start");
    if (mc_samples_train < 1 || mc_samples_eval < 1)
      throw ArgumentError("config: mc sample counts must be >= 1");
    if (max_nodes < 1) throw ArgumentError("config: max_nodes must be >= 1");
    if (precision != "f32" && precision != "f64")
      throw ArgumentError("config: precision must be f32 or f64");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["latent_dim"] = c.latent_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["gcn_layers"] = c.gcn_layers;
  j["r_k"] = c.r_k;
  j["gamma"] = c.gamma;
  j["learning_rate"] = c.learning_rate;
  j["decoder_finetune_lr"] = c.decoder_finetune_lr;
  j["epochs"] = c.epochs;
  j["e_steps_per_cycle"] = c.e_steps_per_cycle;
  j["m_steps_per_cycle"] = c.m_steps_per_cycle;
  j["gumbel_tau_start"] = c.gumbel_tau_start;
  j["gumbel_tau_end"] = c.gumbel_tau_end;
  j["mc_samples_train"] = c.mc_samples_train;
  j["mc_samples_eval"] = c.mc_samples_eval;
  j["max_nodes"] = c.max_nodes;
  j["seed"] = c.seed;
  j["ablation"] = c.ablation.names();
  j["batch_size"] = c.batch_size;
  j["finetune_epochs"] = c.finetune_epochs;
  j["precision"] = c.precision;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const std::set<std::string> known = {
      "latent_dim", "hidden_dim", "gcn_layers", "r_k", "gamma", "learning_rate",
      "decoder_finetune_lr", "epochs", "e_steps_per_cycle", "m_steps_per_cycle",
      "gumbel_tau_start", "gumbel_tau_end", "mc_samples_train", "mc_samples_eval",
      "max_nodes", "seed", "ablation", "batch_size", "finetune_epochs", "precision",
      "split"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ArgumentError("config: unknown key '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ArgumentError(std::string("config: bad value for key '") + key + "'");
    }
  };
  get("latent_dim", c.latent_dim);
  get("hidden_dim", c.hidden_dim);
  get("gcn_layers", c.gcn_layers);
  get("r_k", c.r_k);
  get("gamma", c.gamma);
  get("learning_rate", c.learning_rate);
  get("decoder_finetune_lr", c.decoder_finetune_lr);
  get("epochs", c.epochs);
  get("e_steps_per_cycle", c.e_steps_per_cycle);
  get("m_steps_per_cycle", c.m_steps_per_cycle);
  get("gumbel_tau_start", c.gumbel_tau_start);
  get("gumbel_tau_end", c.gumbel_tau_end);
  get("mc_samples_train", c.mc_samples_train);
  get("mc_samples_eval", c.mc_samples_eval);
  get("max_nodes", c.max_nodes);
  get("seed", c.seed);
  get("batch_size", c.batch_size);
  get("finetune_epochs", c.finetune_epochs);
  get("precision", c.precision);
  if (j.contains("ablation")) {
    std::set<std::string> names;
    try {
      names = j.at("ablation").get<std::set<std::string>>();
    } catch (const nlohmann::json::exception&) {
      throw ArgumentError("config: bad value for key 'ablation'");
    }
    c.ablation = Ablation::from_names(names);
  }
  c.validate();
  return c;
}

inline std::string config_hash(const TrainConfig& c) {
  return hex64(fnv1a64(train_config_to_json(c).dump()));
}

inline ModelConfig model_config_from(const TrainConfig& c, const Dataset& data) {
  ModelConfig m;
  m.latent_dim = c.latent_dim;
  m.hidden_dim = c.hidden_dim;
  m.gcn_layers = c.gcn_layers;
  m.r_per_class = c.r_k;
  m.gamma = c.gamma;
  m.max_nodes = c.max_nodes;
  m.num_classes = data.num_classes;
  m.feature_dim = data.feature_dim;
  m.num_node_types = data.num_node_types;
  m.num_edge_types = data.num_edge_types;
  m.ablation = c.ablation;
  return m;
}

// ---------------------------------------------------------------------------
// Loss reports
// ---------------------------------------------------------------------------

struct LossReport {
  int epoch = 0;
  double gumbel_tau = 0.0;
  double e_cls_data = 0.0;
  double e_generation = 0.0;
  double e_cls_rationale = 0.0;
  double m_cls_data = 0.0;
  double m_prior_regularization = 0.0;
  double m_cls_rationale = 0.0;

  double e_total() const { return e_cls_data + e_generation + e_cls_rationale; }
  double m_total() const { return m_cls_data + m_prior_regularization + m_cls_rationale; }

  static const char* csv_header() {
    return "epoch,gumbel_tau,e_cls_data,e_generation,e_cls_rationale,e_total,"
           "m_cls_data,m_prior_regularization,m_cls_rationale,m_total";
  }

  std::string csv_row() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", epoch,
                  gumbel_tau, e_cls_data, e_generation, e_cls_rationale, e_total(),
                  m_cls_data, m_prior_regularization, m_cls_rationale, m_total());
    return std::string(buf);
  }
};

// Geometric interpolation, tau_start at epoch 0 down to tau_end at the last.
inline double gumbel_tau_at(int epoch, int total_epochs, double tau_start, double tau_end) {
  if (total_epochs <= 1) return tau_start;
  const double f = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return tau_start * std::pow(tau_end / tau_start, f);
}

// ---------------------------------------------------------------------------
// Step losses
// ---------------------------------------------------------------------------

template <typename S>
struct StepLoss {
  double cls_data = 0.0;
  double generation = 0.0;
  double cls_rationale = 0.0;
  double prior_regularization = 0.0;
  GradBuffer<S> grads;

  double total_e() const { return cls_data + generation + cls_rationale; }
  double total_m() const { return cls_data + prior_regularization + cls_rationale; }
};

namespace detail {

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> draw_normal(Rng& rng, int rows, int cols) {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(standard_normal(rng));
  return m;
}

inline Eigen::RowVectorXd draw_uniform_row(Rng& rng, int n) {
  Eigen::RowVectorXd u(n);
  for (int i = 0; i < n; ++i) u(i) = uniform01(rng);
  return u;
}

// Per-step shared noise: the rationale-latent draws are common to every graph
// in the step (one Monte Carlo draw of the rationale set per loss evaluation).
template <typename S>
struct SharedStepNoise {
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> z_r;  // per mc sample
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> u_r;

  static SharedStepNoise draw(std::uint64_t step_seed, int mc, int R, int L) {
    SharedStepNoise n;
    Rng rng = make_rng(mix64(step_seed, 0x5e3d));
    for (int s = 0; s < mc; ++s) {
      n.z_r.push_back(draw_normal<S>(rng, R, L));
      n.u_r.push_back(draw_normal<S>(rng, R, L));
    }
    return n;
  }
};

template <typename S>
void check_finite(const char* term, S value) {
  if (!std::isfinite(static_cast<double>(value)))
    throw NumericError(std::string("non-finite loss term: ") + term);
}

// Graph-side loss pieces: classification under the latent/correlation path,
// plus the generation term. Which pieces are built is driven by the flags so
// the same function serves both phases and the joint mode.
template <typename S>
struct GraphItemResult {
  double cls = 0.0;
  double extra = 0.0;  // generation (E) or prior regularization (M)
  GradBuffer<S> grads;
};

template <typename S>
GraphItemResult<S> e_graph_item(const ModelState<S>& model, const Graph& graph,
                                const SharedStepNoise<S>& shared, std::uint64_t item_seed,
                                double tau, CorrelationMode mode, int mc,
                                bool random_bfs_start,
                                std::array<bool, kNumGroups> frozen) {
  const ModelConfig& cfg = model.config;
  const int L = cfg.latent_dim;
  const int R = cfg.num_rationales();
  using M = typename Tape<S>::M;

  Tape<S> tape;
  ModelTape<S> mt(tape, model.params, frozen);
  Rng rng = make_rng(mix64(item_seed, 0xe57e));

  auto enc = encode(mt, model, graph);

  // the decoder scores the largest connected component in breadth-first order
  Graph component_storage;
  const Graph* component = &graph;
  if (!is_connected(graph)) {
    component_storage = induced_subgraph(graph, largest_component(graph));
    component = &component_storage;
  }

  typename Tape<S>::Var cls_total = tape.constant_scalar(S(0));
  typename Tape<S>::Var gen_total = tape.constant_scalar(S(0));

  for (int s = 0; s < mc; ++s) {
    auto z_d = sample_gaussian(tape, enc.z, draw_normal<S>(rng, 1, L));
    typename Tape<S>::Var u;
    if (cfg.ablation.no_zR) {
      u = tape.constant(M::Zero(1, L));
    } else {
      auto z_r = rationale_embeddings(mt, model);
      auto z_r_samples = sample_gaussian(tape, z_r, shared.z_r[s]);
      auto kappa = kernel_row(mt, z_d, z_r_samples, static_cast<S>(cfg.gamma));
      typename Tape<S>::Var c_row =
          cfg.ablation.no_C
              ? kappa
              : correlation_row(mt, kappa, mode, static_cast<S>(tau),
                                draw_uniform_row(rng, R));
      auto u_dist = local_rationale_embedding(mt, model, c_row, z_r_samples);
      u = sample_gaussian(tape, u_dist, draw_normal<S>(rng, 1, L));
    }
    auto logits = classify_logits(mt, model, z_d, u);
    cls_total = tape.add(cls_total, tape.cross_entropy_rows(logits, {graph.label}));

    auto z_gen = sample_gaussian(tape, enc.z, draw_normal<S>(rng, 1, L));
    const int start =
        random_bfs_start ? uniform_int(rng, 0, component->num_nodes() - 1) : 0;
    auto seq = bfs_sequence(*component, start, cfg.num_node_types, cfg.num_edge_types);
    gen_total = tape.add(gen_total, tape.neg(sequence_log_likelihood(mt, model, seq, z_gen)));
  }

  cls_total = tape.scale(cls_total, S(1) / S(mc));
  gen_total = tape.scale(gen_total, S(1) / S(mc));
  auto total = tape.add(cls_total, gen_total);
  tape.backward(total);

  GraphItemResult<S> out;
  out.cls = static_cast<double>(tape.value(cls_total)(0, 0));
  out.extra = static_cast<double>(tape.value(gen_total)(0, 0));
  check_finite("cls_data", out.cls);
  check_finite("generation", out.extra);
  mt.extract_grads(out.grads);
  return out;
}

template <typename S>
GraphItemResult<S> m_graph_item(const ModelState<S>& model, const Graph& graph,
                                const SharedStepNoise<S>& shared, std::uint64_t item_seed,
                                double tau, CorrelationMode mode, int mc,
                                std::array<bool, kNumGroups> frozen) {
  const ModelConfig& cfg = model.config;
  const int L = cfg.latent_dim;
  const int R = cfg.num_rationales();
  using M = typename Tape<S>::M;

  Tape<S> tape;
  ModelTape<S> mt(tape, model.params, frozen);
  Rng rng = make_rng(mix64(item_seed, 0x3a7e));

  auto enc = encode(mt, model, graph);

  typename Tape<S>::Var cls_total = tape.constant_scalar(S(0));
  typename Tape<S>::Var kl_total = tape.constant_scalar(S(0));

  for (int s = 0; s < mc; ++s) {
    auto z_d = sample_gaussian(tape, enc.z, draw_normal<S>(rng, 1, L));
    typename Tape<S>::Var u;
    GaussianVar<S> q;
    if (cfg.ablation.no_zR) {
      u = tape.constant(M::Zero(1, L));
    } else {
      q = variational_posterior(mt, model, enc.pooled);
      u = sample_gaussian(tape, q, draw_normal<S>(rng, 1, L));
    }
    auto logits = classify_logits(mt, model, z_d, u);
    cls_total = tape.add(cls_total, tape.cross_entropy_rows(logits, {graph.label}));

    if (!cfg.ablation.no_zR) {
      auto z_r = rationale_embeddings(mt, model);
      auto z_r_samples = sample_gaussian(tape, z_r, shared.z_r[s]);
      auto kappa = kernel_row(mt, z_d, z_r_samples, static_cast<S>(cfg.gamma));
      typename Tape<S>::Var c_row =
          cfg.ablation.no_C
              ? kappa
              : correlation_row(mt, kappa, mode, static_cast<S>(tau),
                                draw_uniform_row(rng, R));
      auto prior = local_rationale_embedding(mt, model, c_row, z_r_samples);
      kl_total = tape.add(kl_total, kl_diagonal(tape, q, prior));
    }
  }

  cls_total = tape.scale(cls_total, S(1) / S(mc));
  kl_total = tape.scale(kl_total, S(1) / S(mc));
  auto total = tape.add(cls_total, kl_total);
  tape.backward(total);

  GraphItemResult<S> out;
  out.cls = static_cast<double>(tape.value(cls_total)(0, 0));
  out.extra = static_cast<double>(tape.value(kl_total)(0, 0));
  check_finite("cls_data", out.cls);
  check_finite("prior_regularization", out.extra);
  mt.extract_grads(out.grads);
  return out;
}

// Rationale classification: each slot's latent sample and its local
// projection must classify as the slot's class. Computed once per step.
template <typename S>
GraphItemResult<S> rationale_item(const ModelState<S>& model,
                                  const SharedStepNoise<S>& shared, int mc,
                                  std::array<bool, kNumGroups> frozen) {
  Tape<S> tape;
  ModelTape<S> mt(tape, model.params, frozen);
  const int R = model.config.num_rationales();

  typename Tape<S>::Var total = tape.constant_scalar(S(0));
  for (int s = 0; s < mc; ++s) {
    auto z_r = rationale_embeddings(mt, model);
    auto z_r_samples = sample_gaussian(tape, z_r, shared.z_r[s]);
    auto u_r = rationale_local_embedding(mt, model, z_r);
    auto u_r_samples = sample_gaussian(tape, u_r, shared.u_r[s]);
    auto logits = classify_logits(mt, model, z_r_samples, u_r_samples);
    total = tape.add(total, tape.cross_entropy_rows(logits, model.bank.class_of));
  }
  total = tape.scale(total, S(1) / S(mc * R));
  tape.backward(total);

  GraphItemResult<S> out;
  out.cls = static_cast<double>(tape.value(total)(0, 0));
  check_finite("cls_rationale", out.cls);
  mt.extract_grads(out.grads);
  return out;
}

}  // namespace detail

// Loss over one batch for the phase that updates the rationale vectors and
// the decoder; the encoder, classifier and posterior stay fixed and receive
// exactly zero gradient.
template <typename S>
StepLoss<S> e_step_loss(const ModelState<S>& model, const std::vector<const Graph*>& batch,
                        double tau, CorrelationMode mode, std::uint64_t step_seed,
                        int mc_samples = 1, bool random_bfs_start = false,
                        bool freeze_others = true) {
  const auto frozen =
      freeze_others
          ? ModelTape<S>::freeze({Group::theta_e, Group::theta_cls, Group::phi})
          : ModelTape<S>::freeze({});
  const int B = static_cast<int>(batch.size());
  const auto shared = detail::SharedStepNoise<S>::draw(step_seed, mc_samples,
                                                       model.config.num_rationales(),
                                                       model.config.latent_dim);

  auto items = parallel_map<detail::GraphItemResult<S>>(B + 1, [&](int i) {
    if (i < B)
      return detail::e_graph_item(model, *batch[i], shared, mix64(step_seed, 0x6a, i), tau,
                                  mode, mc_samples, random_bfs_start, frozen);
    if (model.config.ablation.no_zR) return detail::GraphItemResult<S>{};
    return detail::rationale_item(model, shared, mc_samples, frozen);
  });

  StepLoss<S> out;
  for (int i = 0; i < B; ++i) {
    out.cls_data += items[i].cls / B;
    out.generation += items[i].extra / B;
    items[i].grads.scale(S(1) / S(B));
    out.grads.accumulate(items[i].grads);
  }
  out.cls_rationale = items[B].cls;
  out.grads.accumulate(items[B].grads);
  return out;
}

// Loss over one batch for the phase that updates the encoder, classifier and
// amortized posterior; rationales and decoder stay fixed.
template <typename S>
StepLoss<S> m_step_loss(const ModelState<S>& model, const std::vector<const Graph*>& batch,
                        double tau, CorrelationMode mode, std::uint64_t step_seed,
                        int mc_samples = 1, bool freeze_others = true) {
  const auto frozen = freeze_others
                          ? ModelTape<S>::freeze({Group::theta_r, Group::theta_d})
                          : ModelTape<S>::freeze({});
  const int B = static_cast<int>(batch.size());
  const auto shared = detail::SharedStepNoise<S>::draw(step_seed, mc_samples,
                                                       model.config.num_rationales(),
                                                       model.config.latent_dim);

  auto items = parallel_map<detail::GraphItemResult<S>>(B + 1, [&](int i) {
    if (i < B)
      return detail::m_graph_item(model, *batch[i], shared, mix64(step_seed, 0x6a, i), tau,
                                  mode, mc_samples, frozen);
    if (model.config.ablation.no_zR) return detail::GraphItemResult<S>{};
    return detail::rationale_item(model, shared, mc_samples, frozen);
  });

  StepLoss<S> out;
  for (int i = 0; i < B; ++i) {
    out.cls_data += items[i].cls / B;
    out.prior_regularization += items[i].extra / B;
    items[i].grads.scale(S(1) / S(B));
    out.grads.accumulate(items[i].grads);
  }
  out.cls_rationale = items[B].cls;
  out.grads.accumulate(items[B].grads);
  return out;
}

// Decoder-only loss for the fine-tuning phase.
template <typename S>
StepLoss<S> generation_loss(const ModelState<S>& model, const std::vector<const Graph*>& batch,
                            std::uint64_t step_seed, bool random_bfs_start) {
  const auto frozen = ModelTape<S>::freeze(
      {Group::theta_e, Group::theta_r, Group::theta_cls, Group::phi});
  const int B = static_cast<int>(batch.size());
  const int L = model.config.latent_dim;

  auto items = parallel_map<detail::GraphItemResult<S>>(B, [&](int i) {
    const Graph& graph = *batch[i];
    Tape<S> tape;
    ModelTape<S> mt(tape, model.params, frozen);
    Rng rng = make_rng(mix64(step_seed, 0x6a, i, 0xf1e));

    auto enc = encode(mt, model, graph);
    auto z = sample_gaussian(tape, enc.z, detail::draw_normal<S>(rng, 1, L));

    Graph component_storage;
    const Graph* component = &graph;
    if (!is_connected(graph)) {
      component_storage = induced_subgraph(graph, largest_component(graph));
      component = &component_storage;
    }
    const int start = random_bfs_start ? uniform_int(rng, 0, component->num_nodes() - 1) : 0;
    auto seq = bfs_sequence(*component, start, model.config.num_node_types,
                            model.config.num_edge_types);
    auto loss = tape.neg(sequence_log_likelihood(mt, model, seq, z));
    tape.backward(loss);

    detail::GraphItemResult<S> out;
    out.extra = static_cast<double>(tape.value(loss)(0, 0));
    detail::check_finite("generation", out.extra);
    mt.extract_grads(out.grads);
    return out;
  });

  StepLoss<S> out;
  for (int i = 0; i < B; ++i) {
    out.generation += items[i].extra / B;
    items[i].grads.scale(S(1) / S(B));
    out.grads.accumulate(items[i].grads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainAbort : std::runtime_error {
  std::filesystem::path last_good_checkpoint;
  explicit TrainAbort(std::filesystem::path ckpt)
      : std::runtime_error("training aborted: non-finite loss twice consecutively" +
                           (ckpt.empty() ? std::string()
                                         : "; last good checkpoint: " + ckpt.string())),
        last_good_checkpoint(std::move(ckpt)) {}
};

template <typename S>
struct TrainResult {
  ModelState<S> model;
  std::vector<LossReport> reports;
  std::filesystem::path checkpoint_path;
  std::filesystem::path best_checkpoint_path;
  int best_epoch = -1;
  double best_val_accuracy = -1.0;
};

namespace detail {

template <typename S>
double validation_accuracy(const ModelState<S>& model, const Dataset& val, int mc_eval,
                           std::uint64_t seed) {
  if (val.size() == 0) return 0.0;
  auto correct = parallel_map<int>(val.size(), [&](int i) {
    auto out = predict_distribution(model, val.graphs[i], mc_eval, mix64(seed, i));
    return out.predicted_label == val.graphs[i].label ? 1 : 0;
  });
  int hits = 0;
  for (int c : correct) hits += c;
  return static_cast<double>(hits) / val.size();
}

template <typename S>
void write_manifest(const std::filesystem::path& path, const TrainConfig& cfg,
                    const ModelState<S>& model, int epoch, long optimizer_step,
                    double val_accuracy, int best_epoch) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["optimizer_step"] = optimizer_step;
  j["seed"] = cfg.seed;
  j["config"] = train_config_to_json(cfg);
  j["config_hash"] = config_hash(cfg);
  j["val_accuracy"] = val_accuracy;
  j["best_epoch"] = best_epoch;
  j["bank_class_of"] = model.bank.class_of;
  j["num_classes"] = model.config.num_classes;
  j["feature_dim"] = model.config.feature_dim;
  j["num_node_types"] = model.config.num_node_types;
  j["num_edge_types"] = model.config.num_edge_types;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace detail

// Alternating optimization: each epoch runs one pass of decoder/rationale
// updates followed by one pass of encoder/classifier/posterior updates (or a
// single joint pass under no_EM), anneals the relaxation temperature, tracks
// the best validation accuracy, and checkpoints when out_dir is given.
template <typename S>
TrainResult<S> train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                     std::optional<std::filesystem::path> out_dir = std::nullopt) {
  cfg.validate();
  train_set.validate();
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");

  TrainResult<S> result;
  result.model = init_model<S>(model_config_from(cfg, train_set), cfg.seed);
  ModelState<S>& model = result.model;

  AdamOptimizer<S> adam(static_cast<S>(cfg.learning_rate));
  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    csv.open(*out_dir / "losses.csv");
    csv << LossReport::csv_header() << "\n";
  }

  std::filesystem::path last_ckpt;
  int consecutive_failures = 0;
  const CorrelationMode mode = CorrelationMode::straight_through;

  auto checkpoint_epoch = [&](int epoch, double val_acc) {
    if (!out_dir) return;
    const auto ckpt = *out_dir / "checkpoint.bin";
    save_parameters(ckpt, model.params);
    detail::write_manifest(*out_dir / "manifest.json", cfg, model, epoch,
                           adam.step_count(), val_acc, result.best_epoch);
    last_ckpt = ckpt;
    result.checkpoint_path = ckpt;
    if (epoch == result.best_epoch) {
      const auto best = *out_dir / "checkpoint_best.bin";
      std::filesystem::copy_file(ckpt, best, std::filesystem::copy_options::overwrite_existing);
      detail::write_manifest(*out_dir / "manifest_best.json", cfg, model, epoch,
                             adam.step_count(), val_acc, result.best_epoch);
      result.best_checkpoint_path = best;
    }
  };

  auto batches_of = [&](std::uint64_t shuffle_seed) {
    auto idx = minibatch_indices(train_set.size(), cfg.batch_size, shuffle_seed);
    std::vector<std::vector<const Graph*>> out;
    for (const auto& batch : idx) {
      std::vector<const Graph*> ptrs;
      for (int i : batch) ptrs.push_back(&train_set.graphs[i]);
      out.push_back(std::move(ptrs));
    }
    return out;
  };

  auto guarded = [&](auto&& step_fn) -> bool {
    try {
      step_fn();
      consecutive_failures = 0;
      return true;
    } catch (const NumericError&) {
      if (++consecutive_failures >= 2) throw TrainAbort(last_ckpt);
      return false;
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau =
        gumbel_tau_at(epoch, cfg.epochs, cfg.gumbel_tau_start, cfg.gumbel_tau_end);
    LossReport report;
    report.epoch = epoch;
    report.gumbel_tau = tau;

    const auto batches = batches_of(mix64(cfg.seed, 0x3f, epoch));
    const int nb = static_cast<int>(batches.size());

    if (cfg.ablation.no_EM) {
      int steps = 0;
      for (int b = 0; b < nb; ++b) {
        guarded([&] {
          const std::uint64_t step_seed = mix64(cfg.seed, 0x30e1, epoch, b);
          auto e = e_step_loss(model, batches[b], tau, mode, step_seed, cfg.mc_samples_train,
                               true, /*freeze_others=*/false);
          auto m = m_step_loss(model, batches[b], tau, mode, mix64(step_seed, 1),
                               cfg.mc_samples_train, /*freeze_others=*/false);
          e.grads.accumulate(m.grads);
          adam.step(model.params, e.grads,
                    {Group::theta_e, Group::theta_r, Group::theta_cls, Group::theta_d,
                     Group::phi});
          report.e_cls_data += e.cls_data;
          report.e_generation += e.generation;
          report.e_cls_rationale += e.cls_rationale;
          report.m_cls_data += m.cls_data;
          report.m_prior_regularization += m.prior_regularization;
          report.m_cls_rationale += m.cls_rationale;
          ++steps;
        });
      }
      if (steps > 0) {
        report.e_cls_data /= steps;
        report.e_generation /= steps;
        report.e_cls_rationale /= steps;
        report.m_cls_data /= steps;
        report.m_prior_regularization /= steps;
        report.m_cls_rationale /= steps;
      }
    } else {
      const int e_steps = cfg.e_steps_per_cycle > 0 ? cfg.e_steps_per_cycle : nb;
      int done = 0;
      for (int b = 0; done < e_steps; b = (b + 1) % nb, ++done) {
        guarded([&] {
          auto loss = e_step_loss(model, batches[b], tau, mode,
                                  mix64(cfg.seed, 0xe000, epoch, done),
                                  cfg.mc_samples_train, true);
          adam.step(model.params, loss.grads, {Group::theta_r, Group::theta_d});
          report.e_cls_data += loss.cls_data;
          report.e_generation += loss.generation;
          report.e_cls_rationale += loss.cls_rationale;
        });
      }
      const int m_steps = cfg.m_steps_per_cycle > 0 ? cfg.m_steps_per_cycle : nb;
      int m_done = 0;
      for (int b = 0; m_done < m_steps; b = (b + 1) % nb, ++m_done) {
        guarded([&] {
          auto loss = m_step_loss(model, batches[b], tau, mode,
                                  mix64(cfg.seed, 0xa000, epoch, m_done),
                                  cfg.mc_samples_train, true);
          adam.step(model.params, loss.grads, {Group::theta_e, Group::theta_cls, Group::phi});
          report.m_cls_data += loss.cls_data;
          report.m_prior_regularization += loss.prior_regularization;
          report.m_cls_rationale += loss.cls_rationale;
        });
      }
      if (e_steps > 0) {
        report.e_cls_data /= e_steps;
        report.e_generation /= e_steps;
        report.e_cls_rationale /= e_steps;
      }
      if (m_steps > 0) {
        report.m_cls_data /= m_steps;
        report.m_prior_regularization /= m_steps;
        report.m_cls_rationale /= m_steps;
      }
    }

    result.reports.push_back(report);
    if (csv.is_open()) csv << report.csv_row() << "\n";

    const double val_acc = detail::validation_accuracy(model, val_set, cfg.mc_samples_eval,
                                                       mix64(cfg.seed, 0xea1, epoch));
    if (val_acc > result.best_val_accuracy) {
      result.best_val_accuracy = val_acc;
      result.best_epoch = epoch;
    }
    checkpoint_epoch(epoch, val_acc);
  }

  // optional decoder fine-tuning at its own learning rate
  if (cfg.finetune_epochs > 0) {
    adam.set_learning_rate(static_cast<S>(cfg.decoder_finetune_lr));
    for (int ft = 0; ft < cfg.finetune_epochs; ++ft) {
      const int epoch = cfg.epochs + ft;
      LossReport report;
      report.epoch = epoch;
      report.gumbel_tau = cfg.gumbel_tau_end;
      const auto batches = batches_of(mix64(cfg.seed, 0x3f, epoch));
      int steps = 0;
      for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        guarded([&] {
          auto loss = generation_loss(model, batches[b], mix64(cfg.seed, 0xf7, epoch, b), true);
          adam.step(model.params, loss.grads, {Group::theta_d});
          report.e_generation += loss.generation;
          ++steps;
        });
      }
      if (steps > 0) report.e_generation /= steps;
      result.reports.push_back(report);
      if (csv.is_open()) csv << report.csv_row() << "\n";
      const double val_acc = detail::validation_accuracy(
          model, val_set, cfg.mc_samples_eval, mix64(cfg.seed, 0xea1, epoch));
      if (val_acc > result.best_val_accuracy) {
        result.best_val_accuracy = val_acc;
        result.best_epoch = epoch;
      }
      checkpoint_epoch(epoch, val_acc);
    }
  }

  return result;
}

}  // namespace graphfnp
