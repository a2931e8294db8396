#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "graphfnp/nn.hpp"
#include "graphfnp/tape.hpp"

namespace graphfnp {

// Log-variances are clamped to this range everywhere a Gaussian head emits
// them, which keeps exp() away from degenerate scales.
inline constexpr double kLogVarMin = -7.0;
inline constexpr double kLogVarMax = 7.0;

// Diagonal Gaussian as plain values. Rows may hold several independent
// Gaussians (one per row).
template <typename S>
struct Gaussian {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> mean;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> log_variance;
};

// Diagonal Gaussian living on a tape.
template <typename S>
struct GaussianVar {
  typename Tape<S>::Var mean;
  typename Tape<S>::Var log_variance;
};

// The recurring "two MLP heads" pattern: mean = MLP(x), variance = exp(MLP(x)).
template <typename S>
struct GaussianHead {
  MlpHandle<S> mean_mlp;
  MlpHandle<S> logvar_mlp;
};

// Fresh log-variance heads start at this output bias (sigma ~ 0.14). Starting
// at zero (sigma 1) buries the early mean signal in sampling noise and the
// kernel similarities underflow, so nothing trains.
inline constexpr double kLogVarBiasInit = -4.0;

template <typename S>
GaussianHead<S> make_gaussian_head(ParameterSet<S>& params, Group group,
                                   const std::string& prefix, int in_dim, int hidden_dim,
                                   int out_dim, Rng& rng) {
  MLPSpec spec{in_dim, hidden_dim, out_dim, 2, Activation::relu};
  GaussianHead<S> head{make_mlp(params, group, prefix + ".mean", spec, rng),
                       make_mlp(params, group, prefix + ".logvar", spec, rng)};
  params.at(head.logvar_mlp.biases.back()).value.array() = S(kLogVarBiasInit);
  return head;
}

template <typename S>
GaussianVar<S> gaussian_head_forward(ModelTape<S>& mt, const GaussianHead<S>& head,
                                     typename Tape<S>::Var input) {
  auto& t = mt.tape();
  return GaussianVar<S>{mlp_forward(mt, head.mean_mlp, input),
                        t.clamp(mlp_forward(mt, head.logvar_mlp, input),
                                S(kLogVarMin), S(kLogVarMax))};
}

// Reparameterized draw: mean + exp(log_variance / 2) .* noise. The noise is a
// fixed input, so gradients flow to mean and log-variance only.
template <typename S>
typename Tape<S>::Var sample_gaussian(Tape<S>& t, const GaussianVar<S>& g,
                                      const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& noise) {
  auto std_dev = t.exp(t.scale(g.log_variance, S(0.5)));
  return t.add(g.mean, t.mul(std_dev, t.constant(noise)));
}

template <typename S>
Gaussian<S> gaussian_values(const Tape<S>& t, const GaussianVar<S>& g) {
  return Gaussian<S>{t.value(g.mean), t.value(g.log_variance)};
}

// Value-level reparameterized draw.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> sample_value(
    const Gaussian<S>& g, const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& noise) {
  return g.mean.array() + (g.log_variance.array() / S(2)).exp() * noise.array();
}

// Closed-form KL(q || p) between diagonal Gaussians, summed over every entry:
// 1/2 * sum( exp(lq - lp) + (mq - mp)^2 * exp(-lp) - 1 + lp - lq ).
template <typename S>
typename Tape<S>::Var kl_diagonal(Tape<S>& t, const GaussianVar<S>& q, const GaussianVar<S>& p) {
  auto dl = t.sub(q.log_variance, p.log_variance);
  auto var_ratio = t.exp(dl);
  auto dm = t.sub(q.mean, p.mean);
  auto maha = t.mul(t.mul(dm, dm), t.exp(t.neg(p.log_variance)));
  auto per_dim = t.sub(t.add(var_ratio, maha), t.add_scalar(dl, S(1)));
  return t.scale(t.sum(per_dim), S(0.5));
}

// Plain-value twin of kl_diagonal for metrics and tests.
template <typename S>
S kl_diagonal_value(const Gaussian<S>& q, const Gaussian<S>& p) {
  const auto dl = (q.log_variance - p.log_variance).array();
  const auto dm = (q.mean - p.mean).array();
  return S(0.5) * (dl.exp() + dm.square() * (-p.log_variance.array()).exp() - S(1) - dl).sum();
}

}  // namespace graphfnp
