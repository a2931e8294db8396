#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "graphfnp/encoder.hpp"
#include "graphfnp/gaussian.hpp"
#include "graphfnp/model.hpp"
#include "graphfnp/rationale.hpp"
#include "graphfnp/rng.hpp"

namespace graphfnp {

// ---------------------------------------------------------------------------
// Correlation kernel
// ---------------------------------------------------------------------------

// exp(-gamma * ||a - b||): 1 at equality, decaying with Euclidean distance
// (the norm itself, not its square).
template <typename S>
S kernel(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& z_a,
         const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& z_b, S gamma) {
  if (z_a.size() != z_b.size()) throw ShapeError("kernel: length mismatch");
  if (!(gamma > S(0))) throw ArgumentError("kernel: gamma must be > 0");
  return std::exp(-gamma * (z_a - z_b).norm());
}

// Kernel similarities between one graph latent (1 x L) and every rationale
// sample (|R| x L), as a 1 x |R| row on the tape.
template <typename S>
typename Tape<S>::Var kernel_row(ModelTape<S>& mt, typename Tape<S>::Var z_graph,
                                 typename Tape<S>::Var z_rationales, S gamma) {
  auto& t = mt.tape();
  const int count = static_cast<int>(t.value(z_rationales).rows());
  auto diff = t.sub(t.replicate_row(z_graph, count), z_rationales);
  auto dist = t.rowwise_norm(diff);  // |R| x 1
  return t.transpose(t.exp(t.scale(dist, -gamma)));
}

// ---------------------------------------------------------------------------
// Stochastic correlations
// ---------------------------------------------------------------------------

enum class CorrelationMode { hard, relaxed, straight_through };

// One matrix of correlation values: hard draws in {0,1}, or relaxed
// binary-concrete values in (0,1).
struct CorrelationSample {
  Eigen::MatrixXd values;
  CorrelationMode mode = CorrelationMode::hard;
  double temperature = 0.0;
};

namespace detail {

inline double logit(double x) { return std::log(x) - std::log1p(-x); }

inline double clamp_kappa(double k) {
  return std::min(std::max(k, 1e-30), 1.0 - 1e-6);
}

}  // namespace detail

// Bernoulli draws (hard) or their binary-concrete relaxation (relaxed) from a
// matrix of kernel similarities. A hard entry is 1 iff its uniform draw falls
// below kappa; the relaxed entry is sigmoid((logit(kappa) - logit(u)) / tau),
// which agrees with the hard rule as tau -> 0 on the same noise.
inline CorrelationSample sample_correlations(const Eigen::MatrixXd& kappa,
                                             CorrelationMode mode, double temperature,
                                             Rng& rng) {
  if (mode != CorrelationMode::hard && !(temperature > 0.0))
    throw ArgumentError("sample_correlations: temperature must be > 0 in relaxed mode");
  CorrelationSample out;
  out.mode = mode;
  out.temperature = temperature;
  out.values.resize(kappa.rows(), kappa.cols());
  for (Eigen::Index i = 0; i < kappa.rows(); ++i) {
    for (Eigen::Index j = 0; j < kappa.cols(); ++j) {
      const double k = kappa(i, j);
      if (!(k > 0.0) || k > 1.0)
        throw ArgumentError("sample_correlations: kappa entries must lie in (0,1]");
      const double u = uniform01(rng);
      if (mode == CorrelationMode::hard) {
        out.values(i, j) = (u < k) ? 1.0 : 0.0;
      } else {
        const double arg = (detail::logit(detail::clamp_kappa(k)) - detail::logit(u)) / temperature;
        const double soft = 1.0 / (1.0 + std::exp(-arg));
        out.values(i, j) = (mode == CorrelationMode::straight_through) ? ((u < k) ? 1.0 : 0.0)
                                                                       : soft;
      }
    }
  }
  return out;
}

// Tape-side correlation row used inside losses. `uniforms` supplies one draw
// per rationale. hard mode yields constants; relaxed mode is differentiable
// w.r.t. kappa; straight_through takes hard forward values with the relaxed
// backward path.
template <typename S>
typename Tape<S>::Var correlation_row(ModelTape<S>& mt, typename Tape<S>::Var kappa_row,
                                      CorrelationMode mode, S temperature,
                                      const Eigen::RowVectorXd& uniforms) {
  using M = typename Tape<S>::M;
  auto& t = mt.tape();
  const auto& kv = t.value(kappa_row);
  if (kv.rows() != 1 || kv.cols() != uniforms.size())
    throw ShapeError("correlation_row: kappa/noise shape mismatch");

  M hard(1, kv.cols());
  for (Eigen::Index j = 0; j < kv.cols(); ++j)
    hard(0, j) = (uniforms(j) < static_cast<double>(kv(0, j))) ? S(1) : S(0);
  if (mode == CorrelationMode::hard) return t.constant(std::move(hard));

  if (!(temperature > S(0)))
    throw ArgumentError("correlation_row: temperature must be > 0 in relaxed mode");
  M noise_logit(1, kv.cols());
  for (Eigen::Index j = 0; j < kv.cols(); ++j)
    noise_logit(0, j) = static_cast<S>(detail::logit(uniforms(j)));

  auto kc = t.clamp(kappa_row, S(1e-30), S(1.0 - 1e-6));
  auto ones = t.constant(M::Ones(1, kv.cols()));
  auto logit_k = t.sub(t.log(kc), t.log(t.sub(ones, kc)));
  auto soft = t.sigmoid(t.scale(t.sub(logit_k, t.constant(noise_logit)), S(1) / temperature));
  if (mode == CorrelationMode::relaxed) return soft;
  return t.straight_through(soft, std::move(hard));
}

// ---------------------------------------------------------------------------
// Local rationale embedding
// ---------------------------------------------------------------------------

// Correlation-weighted average of the projected rationale samples:
//   mean   = (1 / max(1, sum_j C_j)) * sum_j C_j * MLP_mu(z_j)
//   logvar = (1 / max(1, sum_j C_j)) * sum_j C_j * MLP_sigma(z_j)
// An all-zero correlation row therefore yields exactly N(0, I).
template <typename S>
GaussianVar<S> local_rationale_embedding(ModelTape<S>& mt, const ModelState<S>& model,
                                         typename Tape<S>::Var correlation_row,
                                         typename Tape<S>::Var z_rationale_samples) {
  auto& t = mt.tape();
  if (t.value(correlation_row).cols() != t.value(z_rationale_samples).rows())
    throw ShapeError("local_rationale_embedding: correlation row does not match rationale count");
  auto mu_all = mlp_forward(mt, model.local_head.mean_mlp, z_rationale_samples);
  auto lv_all = mlp_forward(mt, model.local_head.logvar_mlp, z_rationale_samples);
  auto inv_norm = t.reciprocal(t.max_const(t.sum(correlation_row), S(1)));
  auto mean = t.scale_by(t.matmul(correlation_row, mu_all), inv_norm);
  auto logvar = t.clamp(t.scale_by(t.matmul(correlation_row, lv_all), inv_norm),
                        S(kLogVarMin), S(kLogVarMax));
  return GaussianVar<S>{mean, logvar};
}

// ---------------------------------------------------------------------------
// Classifier and amortized posterior
// ---------------------------------------------------------------------------

// Class logits from the concatenated graph latent and local rationale
// embedding. Under no_zD the graph latent is replaced by zeros, severing that
// input path.
template <typename S>
typename Tape<S>::Var classify_logits(ModelTape<S>& mt, const ModelState<S>& model,
                                      typename Tape<S>::Var z_sample,
                                      typename Tape<S>::Var u_sample) {
  using M = typename Tape<S>::M;
  auto& t = mt.tape();
  auto z_used = model.config.ablation.no_zD
                    ? t.constant(M::Zero(t.value(z_sample).rows(), t.value(z_sample).cols()))
                    : z_sample;
  return mlp_forward(mt, model.classifier, t.hcat(z_used, u_sample));
}

template <typename S>
typename Tape<S>::Var classify(ModelTape<S>& mt, const ModelState<S>& model,
                               typename Tape<S>::Var z_sample, typename Tape<S>::Var u_sample) {
  return mt.tape().softmax_rows(classify_logits(mt, model, z_sample, u_sample));
}

// q(u | G): Gaussian heads over the pooled graph representation (standardized
// the same way the encoder heads see it).
template <typename S>
GaussianVar<S> variational_posterior(ModelTape<S>& mt, const ModelState<S>& model,
                                     typename Tape<S>::Var pooled) {
  return gaussian_head_forward(mt, model.posterior_head,
                               standardize_row(mt.tape(), pooled));
}

// ---------------------------------------------------------------------------
// Predictive distribution
// ---------------------------------------------------------------------------

struct PredictiveOutput {
  Eigen::MatrixXd probs;       // samples x classes, each row on the simplex
  Eigen::VectorXd mean_probs;  // classes
  int predicted_label = 0;
  double confidence = 0.0;
};

struct PredictionDetail {
  PredictiveOutput output;
  Eigen::VectorXd mean_correlation;  // per rationale, averaged over samples
};

// Monte Carlo predictive distribution: per sample, draw the graph latent and
// rationale latents, draw a hard correlation row from their kernel
// similarities, aggregate the correlated rationales, and classify.
// Deterministic given the seed.
template <typename S>
PredictionDetail predict_detail(const ModelState<S>& model, const Graph& graph,
                                int num_samples, std::uint64_t seed) {
  if (num_samples < 1) throw ArgumentError("predict: num_samples must be >= 1");
  const ModelConfig& cfg = model.config;
  const int R = cfg.num_rationales();
  const int L = cfg.latent_dim;

  PredictionDetail detail;
  detail.output.probs.resize(num_samples, cfg.num_classes);
  detail.mean_correlation = Eigen::VectorXd::Zero(R);

  using M = typename Tape<S>::M;
  for (int s = 0; s < num_samples; ++s) {
    Rng rng = make_rng(mix64(seed, 0x9ed1, static_cast<std::uint64_t>(s)));
    Tape<S> tape;
    ModelTape<S> mt(tape, model.params, ModelTape<S>::freeze({}));

    auto enc = encode(mt, model, graph);
    M z_noise(1, L);
    for (int i = 0; i < L; ++i) z_noise(0, i) = static_cast<S>(standard_normal(rng));
    auto z_sample = sample_gaussian(tape, enc.z, z_noise);

    typename Tape<S>::Var u_sample;
    if (cfg.ablation.no_zR) {
      u_sample = tape.constant(M::Zero(1, L));
    } else {
      auto z_r = rationale_embeddings(mt, model);
      M zr_noise(R, L);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < L; ++j) zr_noise(i, j) = static_cast<S>(standard_normal(rng));
      auto zr_samples = sample_gaussian(tape, z_r, zr_noise);

      auto kappa = kernel_row(mt, z_sample, zr_samples, static_cast<S>(cfg.gamma));
      typename Tape<S>::Var c_row;
      if (cfg.ablation.no_C) {
        c_row = kappa;
      } else {
        Eigen::RowVectorXd uniforms(R);
        for (int j = 0; j < R; ++j) uniforms(j) = uniform01(rng);
        c_row = correlation_row(mt, kappa, CorrelationMode::hard, S(0), uniforms);
      }
      for (int j = 0; j < R; ++j)
        detail.mean_correlation(j) += static_cast<double>(tape.value(c_row)(0, j));

      auto u_dist = local_rationale_embedding(mt, model, c_row, zr_samples);
      M u_noise(1, L);
      for (int i = 0; i < L; ++i) u_noise(0, i) = static_cast<S>(standard_normal(rng));
      u_sample = sample_gaussian(tape, u_dist, u_noise);
    }

    auto probs = classify(mt, model, z_sample, u_sample);
    for (int k = 0; k < cfg.num_classes; ++k)
      detail.output.probs(s, k) = static_cast<double>(tape.value(probs)(0, k));
  }

  detail.mean_correlation /= static_cast<double>(num_samples);
  detail.output.mean_probs = detail.output.probs.colwise().mean().transpose();
  detail.output.mean_probs.maxCoeff(&detail.output.predicted_label);
  detail.output.confidence = detail.output.mean_probs(detail.output.predicted_label);
  return detail;
}

template <typename S>
PredictiveOutput predict_distribution(const ModelState<S>& model, const Graph& graph,
                                      int num_samples, std::uint64_t seed) {
  return predict_detail(model, graph, num_samples, seed).output;
}

}  // namespace graphfnp
