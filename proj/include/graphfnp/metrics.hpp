#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfnp/decoder.hpp"
#include "graphfnp/encoder.hpp"
#include "graphfnp/errors.hpp"
#include "graphfnp/fnp.hpp"
#include "graphfnp/parallel.hpp"
#include "graphfnp/rationale.hpp"

namespace graphfnp {

// ---------------------------------------------------------------------------
// Expected calibration error
// ---------------------------------------------------------------------------

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  int count = 0;
  double avg_confidence = 0.0;
  double avg_accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
  int num_bins = 0;
};

// Equal-width bins on (0,1]; ece is the count-weighted mean absolute gap
// between confidence and accuracy over non-empty bins.
inline CalibrationReport ece(const std::vector<double>& confidences,
                             const std::vector<bool>& correct, int num_bins) {
  if (confidences.empty()) throw ArgumentError("ece: empty input");
  if (confidences.size() != correct.size()) throw ArgumentError("ece: length mismatch");
  if (num_bins < 1) throw ArgumentError("ece: num_bins must be >= 1");
  for (double c : confidences)
    if (!(c > 0.0) || c > 1.0) throw ArgumentError("ece: confidences must lie in (0,1]");

  CalibrationReport report;
  report.num_bins = num_bins;
  report.bins.resize(num_bins);
  for (int b = 0; b < num_bins; ++b) {
    report.bins[b].lower = static_cast<double>(b) / num_bins;
    report.bins[b].upper = static_cast<double>(b + 1) / num_bins;
  }
  const int n = static_cast<int>(confidences.size());
  for (int i = 0; i < n; ++i) {
    // bin b covers (b/B, (b+1)/B]
    int b = static_cast<int>(std::ceil(confidences[i] * num_bins)) - 1;
    b = std::min(std::max(b, 0), num_bins - 1);
    CalibrationBin& bin = report.bins[b];
    ++bin.count;
    bin.avg_confidence += confidences[i];
    bin.avg_accuracy += correct[i] ? 1.0 : 0.0;
  }
  for (CalibrationBin& bin : report.bins) {
    if (bin.count == 0) continue;
    bin.avg_confidence /= bin.count;
    bin.avg_accuracy /= bin.count;
    report.ece += (static_cast<double>(bin.count) / n) *
                  std::abs(bin.avg_confidence - bin.avg_accuracy);
  }
  return report;
}

// ---------------------------------------------------------------------------
// AUROC (rank statistic with midrank tie handling)
// ---------------------------------------------------------------------------

inline double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auroc: length mismatch");
  const int n = static_cast<int>(scores.size());
  long n_pos = std::count(labels.begin(), labels.end(), true);
  long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ArgumentError("auroc: both classes must be present");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + j) / 2.0;  // 1-based midrank
    for (int k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  return (rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Rationale F1: KNN over embedding means with cosine distance
// ---------------------------------------------------------------------------

struct RF1Report {
  int k = 1;
  double f1 = 0.0;
  std::vector<double> per_class_f1;
};

namespace detail {

inline double cosine_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

inline double macro_f1(const std::vector<int>& predicted, const std::vector<int>& actual,
                       int num_classes, std::vector<double>* per_class) {
  std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == actual[i])
      ++tp[actual[i]];
    else {
      ++fp[predicted[i]];
      ++fn[actual[i]];
    }
  }
  double total = 0.0;
  if (per_class) per_class->assign(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    const double f1 = denom > 0 ? 2.0 * tp[c] / denom : 0.0;
    if (per_class) (*per_class)[c] = f1;
    total += f1;
  }
  return total / num_classes;
}

}  // namespace detail

// Classifies each test graph by majority vote among its k nearest rationale
// means (cosine distance, ties broken toward the lower class index) and
// reports macro-F1.
template <typename S>
RF1Report rationale_f1(const ModelState<S>& model, const Dataset& test, int k) {
  if (model.config.ablation.no_zR)
    throw UnsupportedError("rationale_f1: rationales are disabled (no_zR)");
  if (k < 1 || k > model.bank.size())
    throw ArgumentError("rationale_f1: k must lie in [1, |R|]");
  if (test.size() == 0) throw ArgumentError("rationale_f1: empty test set");

  const Gaussian<S> z_r = rationale_embedding_values(model);
  const Eigen::MatrixXd rationale_means = z_r.mean.template cast<double>();

  auto predictions = parallel_map<int>(test.size(), [&](int i) {
    const Gaussian<S> enc = encode_values(model, test.graphs[i]);
    const Eigen::RowVectorXd emb = enc.mean.template cast<double>().row(0);
    std::vector<std::pair<double, int>> dist;
    for (int r = 0; r < model.bank.size(); ++r)
      dist.push_back({detail::cosine_distance(emb, rationale_means.row(r)), r});
    std::stable_sort(dist.begin(), dist.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<int> votes(model.config.num_classes, 0);
    for (int j = 0; j < k; ++j) ++votes[model.bank.class_of[dist[j].second]];
    int best = 0;
    for (int c = 1; c < model.config.num_classes; ++c)
      if (votes[c] > votes[best]) best = c;  // ties keep the lower class
    return best;
  });

  std::vector<int> actual;
  for (const Graph& g : test.graphs) actual.push_back(g.label);

  RF1Report report;
  report.k = k;
  report.f1 = detail::macro_f1(predictions, actual, model.config.num_classes,
                               &report.per_class_f1);
  return report;
}

// ---------------------------------------------------------------------------
// Temperature scaling
// ---------------------------------------------------------------------------

inline double nll_at_temperature(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                                 double temperature) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::RowVectorXd row = logits.row(i) / temperature;
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(labels[i]);
  }
  return total / static_cast<double>(logits.rows());
}

// Geometric grid from 0.25 to 4.0 (step x1.1) with 1.0 inserted, so the
// identity temperature is always a candidate.
inline std::vector<double> default_temperature_grid() {
  std::vector<double> grid;
  for (double t = 0.25; t <= 4.0 + 1e-12; t *= 1.1) grid.push_back(t);
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

// Grid temperature minimizing validation NLL of softmax(logits / T). Scaling
// by any positive T preserves every argmax.
inline double temperature_scale(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                                const std::vector<double>& grid) {
  if (grid.empty()) throw ArgumentError("temperature_scale: empty grid");
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw ArgumentError("temperature_scale: one label per row required");
  double best_t = grid.front();
  double best_nll = std::numeric_limits<double>::infinity();
  for (double t : grid) {
    if (!(t > 0)) throw ArgumentError("temperature_scale: temperatures must be > 0");
    const double nll = nll_at_temperature(logits, labels, t);
    if (nll < best_nll) {
      best_nll = nll;
      best_t = t;
    }
  }
  return best_t;
}

inline Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
  Eigen::RowVectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

// ---------------------------------------------------------------------------
// Whole-model evaluation
// ---------------------------------------------------------------------------

struct ExplanationRecord {
  std::string graph_id;
  Eigen::VectorXd mean_correlation;
  int rationale_index = -1;
  int rationale_class = -1;
  int predicted_label = -1;
  double confidence = 0.0;
  std::vector<Graph> decoded;  // filled by explain()
};

struct EvaluationRecord {
  double accuracy = 0.0;
  std::optional<double> auroc;  // binary tasks only
  CalibrationReport calibration;
  RF1Report rf1_at_1;
  RF1Report rf1_at_3;
  bool rf1_available = false;
  std::vector<ExplanationRecord> explanations;
  Eigen::MatrixXd log_mean_probs;  // per graph, for post-hoc calibration
  std::vector<int> labels;
  std::vector<int> predicted;
};

// Runs the Monte Carlo predictive distribution over a dataset and assembles
// accuracy, calibration, AUROC (binary), RF1, and per-graph explanations.
template <typename S>
EvaluationRecord evaluate(const ModelState<S>& model, const Dataset& test, int mc_samples,
                          std::uint64_t seed, int ece_bins = 10) {
  if (test.size() == 0) throw ArgumentError("evaluate: empty dataset");
  const int n = test.size();

  auto details = parallel_map<PredictionDetail>(n, [&](int i) {
    return predict_detail(model, test.graphs[i], mc_samples, mix64(seed, 0xe7a1, i));
  });

  EvaluationRecord record;
  record.log_mean_probs.resize(n, model.config.num_classes);
  std::vector<double> confidences(n);
  std::vector<bool> correct(n);
  std::vector<double> scores(n);
  std::vector<bool> bool_labels(n);

  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const PredictiveOutput& out = details[i].output;
    const Graph& g = test.graphs[i];
    record.labels.push_back(g.label);
    record.predicted.push_back(out.predicted_label);
    confidences[i] = out.confidence;
    correct[i] = out.predicted_label == g.label;
    hits += correct[i] ? 1 : 0;
    for (int k = 0; k < model.config.num_classes; ++k)
      record.log_mean_probs(i, k) = std::log(std::max(out.mean_probs(k), 1e-12));
    if (model.config.num_classes == 2) {
      scores[i] = out.mean_probs(1);
      bool_labels[i] = g.label == 1;
    }

    ExplanationRecord ex;
    ex.graph_id = g.id;
    ex.mean_correlation = details[i].mean_correlation;
    ex.predicted_label = out.predicted_label;
    ex.confidence = out.confidence;
    if (!model.config.ablation.no_zR && ex.mean_correlation.size() > 0) {
      Eigen::Index arg = 0;
      ex.mean_correlation.maxCoeff(&arg);
      ex.rationale_index = static_cast<int>(arg);
      ex.rationale_class = model.bank.class_of[ex.rationale_index];
    }
    record.explanations.push_back(std::move(ex));
  }

  record.accuracy = static_cast<double>(hits) / n;
  record.calibration = ece(confidences, correct, ece_bins);
  if (model.config.num_classes == 2) {
    const bool both = std::count(bool_labels.begin(), bool_labels.end(), true) > 0 &&
                      std::count(bool_labels.begin(), bool_labels.end(), false) > 0;
    if (both) record.auroc = auroc(scores, bool_labels);
  }
  if (!model.config.ablation.no_zR) {
    record.rf1_available = true;
    record.rf1_at_1 = rationale_f1(model, test, 1);
    record.rf1_at_3 = rationale_f1(model, test, std::min(3, model.bank.size()));
  }
  return record;
}

// Explanation for one graph: the rationale most correlated with it across MC
// draws, plus decoded structures of that rationale.
template <typename S>
ExplanationRecord explain(const ModelState<S>& model, const Graph& graph, int num_decodes,
                          std::uint64_t seed, int mc_samples = 8) {
  if (model.config.ablation.no_zR)
    throw UnsupportedError("explain: rationales are disabled (no_zR)");
  auto detail = predict_detail(model, graph, mc_samples, mix64(seed, 0xe8));

  ExplanationRecord record;
  record.graph_id = graph.id;
  record.mean_correlation = detail.mean_correlation;
  record.predicted_label = detail.output.predicted_label;
  record.confidence = detail.output.confidence;
  Eigen::Index arg = 0;
  detail.mean_correlation.maxCoeff(&arg);
  record.rationale_index = static_cast<int>(arg);
  record.rationale_class = model.bank.class_of[record.rationale_index];
  if (num_decodes > 0)
    record.decoded = decode_rationale(model, record.rationale_index, num_decodes,
                                      mix64(seed, 0xdc));
  return record;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline nlohmann::json explanation_to_json(const ExplanationRecord& ex) {
  nlohmann::json j;
  j["graph_id"] = ex.graph_id;
  std::vector<double> row(ex.mean_correlation.data(),
                          ex.mean_correlation.data() + ex.mean_correlation.size());
  j["mean_C_row"] = row;
  j["argmax_rationale_index"] = ex.rationale_index;
  j["rationale_class"] = ex.rationale_class;
  j["predicted_label"] = ex.predicted_label;
  j["confidence"] = ex.confidence;
  return j;
}

inline nlohmann::json decoded_graph_to_json(const Graph& g, int rationale_index, int cls) {
  nlohmann::json j;
  std::vector<int> types;
  for (int v = 0; v < g.num_nodes(); ++v) types.push_back(node_type_of(g, v));
  j["nodes"] = types;
  auto edges = nlohmann::json::array();
  for (const Edge& e : g.edges) edges.push_back({e.src, e.dst, e.type});
  j["edges"] = edges;
  j["rationale_index"] = rationale_index;
  j["class"] = cls;
  return j;
}

inline std::string graph_to_dot(const Graph& g, const std::string& name = "G") {
  std::string dot = "graph " + name + " {\n";
  for (int v = 0; v < g.num_nodes(); ++v)
    dot += "  n" + std::to_string(v) + " [label=\"" + std::to_string(node_type_of(g, v)) +
           "\"];\n";
  for (const Edge& e : g.edges)
    dot += "  n" + std::to_string(e.src) + " -- n" + std::to_string(e.dst) + " [label=\"" +
           std::to_string(e.type) + "\"];\n";
  dot += "}\n";
  return dot;
}

inline void write_reliability_csv(const std::filesystem::path& path,
                                  const CalibrationReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_lower,bin_upper,count,avg_confidence,avg_accuracy\n";
  char buf[256];
  for (const CalibrationBin& b : report.bins) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%.17g,%.17g\n", b.lower, b.upper, b.count,
                  b.avg_confidence, b.avg_accuracy);
    out << buf;
  }
}

}  // namespace graphfnp
