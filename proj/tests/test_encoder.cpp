#include <gtest/gtest.h>

#include <cmath>

#include "graphfnp/encoder.hpp"
#include "graphfnp/gradcheck.hpp"

using namespace graphfnp;
using DTape = graphfnp::Tape<double>;
using Mat = Eigen::MatrixXd;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 6;
  cfg.gcn_layers = 3;
  cfg.r_per_class = 2;
  cfg.num_classes = 2;
  cfg.feature_dim = 1;
  cfg.num_node_types = 1;
  cfg.num_edge_types = 1;
  return cfg;
}

Graph path3() {
  Graph g;
  g.node_features = Eigen::MatrixXd::Ones(3, 1);
  g.edges = {{0, 1, 0}, {1, 2, 0}};
  g.id = "path3";
  return g;
}

void zero_group_entries(ParameterSet<double>& params, Group g, const std::string& prefix) {
  for (auto& e : params.group(g))
    if (e.name.rfind(prefix, 0) == 0) e.value.setZero();
}

}  // namespace

TEST(Encoder, ZeroHeadsGiveStandardNormal) {
  auto model = init_model<double>(small_config(), 0);
  zero_group_entries(model.params, Group::theta_e, "z.");

  DTape tape;
  ModelTape<double> mt(tape, model.params, ModelTape<double>::freeze({}));
  auto enc = encode(mt, model, path3());
  EXPECT_TRUE(tape.value(enc.z.mean).isZero());
  EXPECT_TRUE(tape.value(enc.z.log_variance).isZero());
}

TEST(Encoder, InvariantToNodeRelabeling) {
  auto model = init_model<double>(small_config(), 1);

  // a 6-node graph and the same graph under three random relabelings
  Graph g;
  g.node_features = Eigen::MatrixXd::Ones(6, 1);
  g.edges = {{0, 1, 0}, {0, 2, 0}, {1, 3, 0}, {2, 4, 0}, {3, 5, 0}, {4, 5, 0}, {1, 2, 0}};
  g.id = "base";
  const Gaussian<double> base = encode_values(model, g);

  Rng rng = make_rng(99);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<int> pi = {0, 1, 2, 3, 4, 5};
    std::shuffle(pi.begin(), pi.end(), rng);
    Graph h;
    h.node_features = Eigen::MatrixXd::Ones(6, 1);
    for (const Edge& e : g.edges) {
      int a = pi[e.src], b = pi[e.dst];
      h.edges.push_back({std::min(a, b), std::max(a, b), e.type});
    }
    h.id = "perm";
    const Gaussian<double> perm = encode_values(model, h);
    EXPECT_TRUE(perm.mean.isApprox(base.mean, 1e-10));
    EXPECT_TRUE(perm.log_variance.isApprox(base.log_variance, 1e-10));
  }
}

// Independent straight-line recomputation of the whole encoder on a fixture.
TEST(Encoder, MatchesStraightLineReimplementation) {
  auto model = init_model<double>(small_config(), 5);
  const Graph g = path3();
  const Gaussian<double> got = encode_values(model, g);

  // propagation matrix, written out directly
  Mat a_hat(3, 3);
  a_hat << 1, 1, 0,
           1, 1, 1,
           0, 1, 1;
  Eigen::VectorXd dinv = a_hat.rowwise().sum().array().rsqrt();
  Mat p = dinv.asDiagonal() * a_hat * dinv.asDiagonal();

  Mat h = g.node_features;
  for (const GcnLayerParams& layer : model.encoder_gcn) {
    h = p * h * model.params.at(layer.weight).value;
    h.rowwise() += model.params.at(layer.bias).value.row(0);
    h = h.cwiseMax(0.0);
  }
  Mat pooled = h.colwise().mean();
  const double mu = pooled.mean();
  const double var = (pooled.array() - mu).square().mean();
  pooled = ((pooled.array() - mu) / std::sqrt(var + 1e-8)).matrix();

  auto run_mlp = [&](const MlpHandle<double>& mlp, Mat x) {
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
      x = x * model.params.at(mlp.weights[l]).value;
      x.rowwise() += model.params.at(mlp.biases[l]).value.row(0);
      if (l + 1 < mlp.weights.size()) x = x.cwiseMax(0.0);
    }
    return x;
  };
  Mat mean = run_mlp(model.encoder_head.mean_mlp, pooled);
  Mat logvar = run_mlp(model.encoder_head.logvar_mlp, pooled)
                   .cwiseMax(kLogVarMin)
                   .cwiseMin(kLogVarMax);

  EXPECT_TRUE(got.mean.isApprox(mean, 1e-12));
  EXPECT_TRUE(got.log_variance.isApprox(logvar, 1e-12));
}

TEST(Encoder, FeatureDimMismatchThrows) {
  auto model = init_model<double>(small_config(), 0);
  Graph g = path3();
  g.node_features = Eigen::MatrixXd::Ones(3, 2);
  DTape tape;
  ModelTape<double> mt(tape, model.params, ModelTape<double>::freeze({}));
  EXPECT_THROW(encode(mt, model, g), ShapeError);
}

TEST(Sample, ZeroNoiseReturnsMean) {
  Gaussian<double> g;
  g.mean = Mat::Random(1, 4);
  g.log_variance = Mat::Random(1, 4);
  const Mat zero_noise = Mat::Zero(1, 4);
  EXPECT_TRUE(sample_value(g, zero_noise).isApprox(g.mean));
}

TEST(Sample, ClampedFloorVariance) {
  // log-variance pinned at the clamp floor: sample = mean + exp(-3.5) * noise
  auto model = init_model<double>(small_config(), 2);
  for (auto& e : model.params.group(Group::theta_e))
    if (e.name.rfind("z.logvar", 0) == 0) {
      e.value.setZero();
      if (e.name == "z.logvar.b1") e.value.array() = -100.0;
    }
  DTape tape;
  ModelTape<double> mt(tape, model.params, ModelTape<double>::freeze({}));
  auto enc = encode(mt, model, path3());
  EXPECT_TRUE((tape.value(enc.z.log_variance).array() == kLogVarMin).all());

  const Mat unit_noise = Mat::Ones(1, 4);
  auto sample = sample_gaussian(tape, enc.z, unit_noise);
  Mat expected = tape.value(enc.z.mean).array() + std::exp(-3.5);
  EXPECT_TRUE(tape.value(sample).isApprox(expected, 1e-12));
}

TEST(Sample, MonteCarloMeanAndVariance) {
  Gaussian<double> g;
  g.mean = Mat::Zero(1, 3);
  g.mean << 0.3, -1.2, 2.0;
  g.log_variance = Mat::Zero(1, 3);
  g.log_variance << 0.0, -1.0, 0.7;

  const int n = 100000;
  Mat sum = Mat::Zero(1, 3), sumsq = Mat::Zero(1, 3);
  Rng rng = make_rng(1234);
  for (int i = 0; i < n; ++i) {
    Mat noise(1, 3);
    for (int j = 0; j < 3; ++j) noise(0, j) = standard_normal(rng);
    Mat s = sample_value(g, noise);
    sum += s;
    sumsq.array() += s.array().square();
  }
  Mat emp_mean = sum / n;
  Mat emp_var = sumsq.array() / n - emp_mean.array().square();

  for (int j = 0; j < 3; ++j) {
    const double sigma = std::exp(g.log_variance(0, j) / 2);
    EXPECT_NEAR(emp_mean(0, j), g.mean(0, j), 4.0 * sigma / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(emp_var(0, j), sigma * sigma, 0.05 * sigma * sigma);
  }
}

TEST(Encoder, SampleGradientsPassFiniteDifferences) {
  auto model = init_model<double>(small_config(), 3);
  const Graph g = path3();
  const Mat noise = (Mat(1, 4) << 0.3, -0.8, 1.1, 0.2).finished();
  const Mat w = (Mat(1, 4) << 0.7, -0.2, 0.4, 1.0).finished();

  auto forward = [&](GradBuffer<double>* grads) {
    DTape tape;
    ModelTape<double> mt(tape, model.params, ModelTape<double>::freeze({}));
    auto enc = encode(mt, model, g);
    auto s = sample_gaussian(tape, enc.z, noise);
    auto loss = tape.sum(tape.mul(s, tape.constant(w)));
    if (grads) {
      tape.backward(loss);
      mt.extract_grads(*grads);
    }
    return tape.value(loss)(0, 0);
  };
  auto result = gradient_check<double>(
      [&]() { return forward(nullptr); },
      [&]() {
        GradBuffer<double> g2;
        forward(&g2);
        return g2;
      },
      model.params, {Group::theta_e}, 1e-5);
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst_entry;
}
