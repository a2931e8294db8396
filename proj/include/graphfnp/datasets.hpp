#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "graphfnp/graph.hpp"
#include "graphfnp/rng.hpp"

namespace graphfnp {

// ---------------------------------------------------------------------------
// Synthetic motif data
// ---------------------------------------------------------------------------

namespace detail {

// Preferential-attachment base graph: node 0 and 1 start connected, every
// later node attaches to one existing node picked proportionally to degree.
inline std::vector<Edge> barabasi_albert_edges(int n, Rng& rng) {
  std::vector<Edge> edges;
  std::vector<int> degree(n, 0);
  auto add = [&](int a, int b) {
    edges.push_back(Edge{std::min(a, b), std::max(a, b), 0});
    ++degree[a];
    ++degree[b];
  };
  add(0, 1);
  for (int v = 2; v < n; ++v) {
    int total = 2 * static_cast<int>(edges.size());
    int pick = uniform_int(rng, 0, total - 1);
    int target = 0;
    for (int u = 0; u < v; ++u) {
      pick -= degree[u];
      if (pick < 0) {
        target = u;
        break;
      }
    }
    add(target, v);
  }
  return edges;
}

// 5-node house: a square with a roof node on top of one side.
inline std::vector<std::pair<int, int>> house_motif_edges() {
  return {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}};
}

inline std::vector<std::pair<int, int>> cycle_motif_edges() {
  return {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}};
}

}  // namespace detail

// Balanced two-class dataset: a preferential-attachment base with either a
// house motif (label 0) or a five-node cycle motif (label 1) bridged to it by
// a single edge. Node features are the constant scalar 1 for every node, so
// only structure separates the classes.
inline Dataset generate_ba_motif_dataset(int count, std::pair<int, int> ba_nodes_range,
                                         std::uint64_t seed) {
  if (count < 2 || count % 2 != 0)
    throw ArgumentError("generate_ba_motif_dataset: count must be even and >= 2");
  if (ba_nodes_range.first < 5 || ba_nodes_range.second < ba_nodes_range.first)
    throw ArgumentError("generate_ba_motif_dataset: invalid base-size range (min >= 5)");

  Dataset ds;
  ds.num_classes = 2;
  ds.num_node_types = 1;
  ds.num_edge_types = 1;
  ds.feature_dim = 1;

  Rng rng = make_rng(mix64(seed, 0xba2f));
  for (int i = 0; i < count; ++i) {
    const bool cycle = i >= count / 2;
    const int base_n = uniform_int(rng, ba_nodes_range.first, ba_nodes_range.second);

    Graph g;
    g.label = cycle ? 1 : 0;
    g.id = "ba-" + std::to_string(i);
    g.edges = detail::barabasi_albert_edges(base_n, rng);

    const auto motif = cycle ? detail::cycle_motif_edges() : detail::house_motif_edges();
    for (auto [a, b] : motif)
      g.edges.push_back(Edge{base_n + std::min(a, b), base_n + std::max(a, b), 0});

    const int motif_node = base_n + uniform_int(rng, 0, 4);
    const int base_node = uniform_int(rng, 0, base_n - 1);
    g.edges.push_back(Edge{std::min(base_node, motif_node),
                           std::max(base_node, motif_node), 0});

    std::sort(g.edges.begin(), g.edges.end());
    g.node_features = Eigen::MatrixXd::Ones(base_n + 5, 1);
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// TU-format file ingestion
// ---------------------------------------------------------------------------
// Layout: <name>_A.txt ("src, dst" 1-based pairs), <name>_graph_indicator.txt
// (1-based graph id per node line), <name>_graph_labels.txt (one int per
// graph), optional <name>_node_labels.txt / <name>_edge_labels.txt.

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline long parse_long(const std::string& text, const std::string& file, std::size_t lineno) {
  try {
    std::size_t pos = 0;
    long v = std::stol(text, &pos);
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file + ":" + std::to_string(lineno) + ": expected integer, got '" + text + "'");
  }
}

// Remap arbitrary integer labels to contiguous [0, K) by sorted value.
inline std::map<long, int> contiguous_remap(const std::vector<long>& values) {
  std::set<long> uniq(values.begin(), values.end());
  std::map<long, int> remap;
  int next = 0;
  for (long v : uniq) remap[v] = next++;
  return remap;
}

}  // namespace detail

inline Dataset parse_tu_dataset(const std::filesystem::path& directory,
                                const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path a_file = directory / (name + "_A.txt");
  const fs::path ind_file = directory / (name + "_graph_indicator.txt");
  const fs::path lab_file = directory / (name + "_graph_labels.txt");
  const fs::path nlab_file = directory / (name + "_node_labels.txt");
  const fs::path elab_file = directory / (name + "_edge_labels.txt");

  for (const fs::path& required : {a_file, ind_file, lab_file})
    if (!fs::exists(required)) throw IoError("missing required file: " + required.string());

  const auto ind_lines = detail::read_lines(ind_file);
  const auto lab_lines = detail::read_lines(lab_file);
  const auto a_lines = detail::read_lines(a_file);

  const int total_nodes = static_cast<int>(ind_lines.size());
  const int num_graphs = static_cast<int>(lab_lines.size());

  // graph membership of every node (0-based), and per-graph node offsets
  std::vector<int> graph_of(total_nodes);
  std::vector<int> nodes_per_graph(num_graphs, 0);
  for (int i = 0; i < total_nodes; ++i) {
    long gid = detail::parse_long(ind_lines[i], ind_file.string(), i + 1);
    if (gid < 1 || gid > num_graphs)
      throw FormatError(ind_file.string() + ":" + std::to_string(i + 1) +
                        ": graph id " + std::to_string(gid) + " out of range");
    graph_of[i] = static_cast<int>(gid) - 1;
    ++nodes_per_graph[graph_of[i]];
  }
  std::vector<int> first_node(num_graphs, 0);
  for (int g = 1; g < num_graphs; ++g)
    first_node[g] = first_node[g - 1] + nodes_per_graph[g - 1];
  std::vector<int> local_index(total_nodes);
  {
    std::vector<int> cursor(first_node);
    for (int i = 0; i < total_nodes; ++i) local_index[i] = cursor[graph_of[i]]++ - first_node[graph_of[i]];
  }

  // graph labels, remapped to [0, K)
  std::vector<long> raw_labels(num_graphs);
  for (int g = 0; g < num_graphs; ++g)
    raw_labels[g] = detail::parse_long(lab_lines[g], lab_file.string(), g + 1);
  const auto label_map = detail::contiguous_remap(raw_labels);

  // optional node labels -> one-hot features
  std::vector<int> node_type(total_nodes, 0);
  int num_node_types = 1;
  if (fs::exists(nlab_file)) {
    const auto nlab_lines = detail::read_lines(nlab_file);
    if (static_cast<int>(nlab_lines.size()) != total_nodes)
      throw FormatError(nlab_file.string() + ": expected " + std::to_string(total_nodes) +
                        " lines, got " + std::to_string(nlab_lines.size()));
    std::vector<long> raw(total_nodes);
    for (int i = 0; i < total_nodes; ++i)
      raw[i] = detail::parse_long(nlab_lines[i], nlab_file.string(), i + 1);
    const auto remap = detail::contiguous_remap(raw);
    for (int i = 0; i < total_nodes; ++i) node_type[i] = remap.at(raw[i]);
    num_node_types = static_cast<int>(remap.size());
  }

  // optional edge labels aligned with _A.txt rows
  std::vector<long> raw_edge_labels;
  if (fs::exists(elab_file)) {
    const auto elab_lines = detail::read_lines(elab_file);
    if (elab_lines.size() != a_lines.size())
      throw FormatError(elab_file.string() + ": expected " + std::to_string(a_lines.size()) +
                        " lines, got " + std::to_string(elab_lines.size()));
    raw_edge_labels.resize(elab_lines.size());
    for (std::size_t i = 0; i < elab_lines.size(); ++i)
      raw_edge_labels[i] = detail::parse_long(elab_lines[i], elab_file.string(), i + 1);
  }
  std::map<long, int> edge_label_map;
  int num_edge_types = 1;
  if (!raw_edge_labels.empty()) {
    edge_label_map = detail::contiguous_remap(raw_edge_labels);
    num_edge_types = static_cast<int>(edge_label_map.size());
  }

  Dataset ds;
  ds.num_classes = static_cast<int>(label_map.size());
  ds.num_node_types = num_node_types;
  ds.num_edge_types = num_edge_types;
  ds.feature_dim = fs::exists(nlab_file) ? num_node_types : 1;

  ds.graphs.resize(num_graphs);
  for (int g = 0; g < num_graphs; ++g) {
    Graph& graph = ds.graphs[g];
    graph.label = label_map.at(raw_labels[g]);
    graph.id = name + "-" + std::to_string(g);
    graph.node_features = Eigen::MatrixXd::Zero(nodes_per_graph[g], ds.feature_dim);
  }
  for (int i = 0; i < total_nodes; ++i) {
    Graph& graph = ds.graphs[graph_of[i]];
    if (fs::exists(nlab_file))
      graph.node_features(local_index[i], node_type[i]) = 1.0;
    else
      graph.node_features(local_index[i], 0) = 1.0;
  }

  // edges: 1-based "src, dst"; deduplicate both directions into src < dst
  std::vector<std::set<std::pair<int, int>>> seen(num_graphs);
  for (std::size_t row = 0; row < a_lines.size(); ++row) {
    const std::string& line = a_lines[row];
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError(a_file.string() + ":" + std::to_string(row + 1) + ": expected 'src, dst'");
    long src1 = detail::parse_long(line.substr(0, comma), a_file.string(), row + 1);
    long dst1 = detail::parse_long(line.substr(comma + 1), a_file.string(), row + 1);
    if (src1 < 1 || src1 > total_nodes || dst1 < 1 || dst1 > total_nodes)
      throw FormatError(a_file.string() + ":" + std::to_string(row + 1) + ": dangling node index");
    const int src = static_cast<int>(src1) - 1;
    const int dst = static_cast<int>(dst1) - 1;
    if (graph_of[src] != graph_of[dst])
      throw FormatError(a_file.string() + ":" + std::to_string(row + 1) + ": edge crosses graphs");
    if (src == dst) continue;  // drop self-loops
    const int g = graph_of[src];
    int a = local_index[src], b = local_index[dst];
    if (a > b) std::swap(a, b);
    if (!seen[g].insert({a, b}).second) continue;
    int etype = raw_edge_labels.empty() ? 0 : edge_label_map.at(raw_edge_labels[row]);
    ds.graphs[g].edges.push_back(Edge{a, b, etype});
  }
  for (Graph& graph : ds.graphs) std::sort(graph.edges.begin(), graph.edges.end());

  ds.validate();
  return ds;
}

// Writes the TU layout; parse_tu_dataset(write_tu_dataset(ds)) reproduces ds.
// Node labels are emitted only when the dataset distinguishes node types, and
// edge labels only when it distinguishes edge types.
inline void write_tu_dataset(const Dataset& ds, const std::filesystem::path& directory,
                             const std::string& name) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  std::ofstream a(directory / (name + "_A.txt"));
  std::ofstream ind(directory / (name + "_graph_indicator.txt"));
  std::ofstream lab(directory / (name + "_graph_labels.txt"));
  if (!a || !ind || !lab) throw IoError("cannot write TU files under " + directory.string());

  std::optional<std::ofstream> nlab, elab;
  if (ds.num_node_types > 1) nlab.emplace(directory / (name + "_node_labels.txt"));
  if (ds.num_edge_types > 1) elab.emplace(directory / (name + "_edge_labels.txt"));

  int node_base = 0;
  for (int g = 0; g < ds.size(); ++g) {
    const Graph& graph = ds.graphs[g];
    lab << graph.label << "\n";
    for (int v = 0; v < graph.num_nodes(); ++v) {
      ind << (g + 1) << "\n";
      if (nlab) *nlab << node_type_of(graph, v) << "\n";
    }
    for (const Edge& e : graph.edges) {
      // both directions, matching the usual TU convention
      a << (node_base + e.src + 1) << ", " << (node_base + e.dst + 1) << "\n";
      a << (node_base + e.dst + 1) << ", " << (node_base + e.src + 1) << "\n";
      if (elab) {
        *elab << e.type << "\n";
        *elab << e.type << "\n";
      }
    }
    node_base += graph.num_nodes();
  }
}

// ---------------------------------------------------------------------------
// Splitting and batching
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  bool stratified = true;

  void validate() const {
    for (double f : {train_fraction, val_fraction, test_fraction})
      if (!(f > 0.0 && f < 1.0)) throw ArgumentError("split fractions must lie in (0,1)");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
      throw ArgumentError("split fractions must sum to 1");
  }
};

namespace detail {

// Cut a shuffled index list into train/val/test by floor(count * fraction).
inline void cut_three(const std::vector<int>& order, const SplitSpec& spec,
                      std::vector<int>& train, std::vector<int>& val,
                      std::vector<int>& test) {
  const int n = static_cast<int>(order.size());
  const int n_train = static_cast<int>(std::floor(n * spec.train_fraction));
  const int n_val = static_cast<int>(std::floor(n * spec.val_fraction));
  for (int i = 0; i < n; ++i) {
    if (i < n_train)
      train.push_back(order[i]);
    else if (i < n_train + n_val)
      val.push_back(order[i]);
    else
      test.push_back(order[i]);
  }
}

}  // namespace detail

// Disjoint, exhaustive partition; deterministic given spec.seed. Stratified
// mode shuffles and cuts within each class, keeping per-class counts within
// one graph of the exact proportion.
inline std::array<Dataset, 3> split(const Dataset& dataset, const SplitSpec& spec) {
  spec.validate();
  std::vector<int> train_idx, val_idx, test_idx;
  Rng rng = make_rng(mix64(spec.seed, 0x5b11));

  if (spec.stratified) {
    std::vector<std::vector<int>> by_class(dataset.num_classes);
    for (int i = 0; i < dataset.size(); ++i) by_class[dataset.graphs[i].label].push_back(i);
    for (int c = 0; c < dataset.num_classes; ++c) {
      if (static_cast<int>(by_class[c].size()) < 3)
        throw ArgumentError("split: class " + std::to_string(c) +
                            " has fewer than 3 graphs; cannot stratify");
      std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
      detail::cut_three(by_class[c], spec, train_idx, val_idx, test_idx);
    }
  } else {
    std::vector<int> order(dataset.size());
    for (int i = 0; i < dataset.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    detail::cut_three(order, spec, train_idx, val_idx, test_idx);
  }

  auto take = [&](const std::vector<int>& idx) {
    Dataset out;
    out.num_classes = dataset.num_classes;
    out.num_node_types = dataset.num_node_types;
    out.num_edge_types = dataset.num_edge_types;
    out.feature_dim = dataset.feature_dim;
    for (int i : idx) out.graphs.push_back(dataset.graphs[i]);
    return out;
  };
  return {take(train_idx), take(val_idx), take(test_idx)};
}

// Index batches covering [0, n) exactly once; the last batch may be short.
// Without a shuffle seed the original order is kept.
inline std::vector<std::vector<int>> minibatch_indices(int n, int batch_size,
                                                       std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw ArgumentError("minibatch: batch_size must be >= 1");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    Rng rng = make_rng(mix64(*shuffle_seed, 0xba7c));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> batches;
  for (int at = 0; at < n; at += batch_size) {
    const int end = std::min(n, at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  return batches;
}

}  // namespace graphfnp
