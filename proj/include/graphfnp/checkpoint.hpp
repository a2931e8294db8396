#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "graphfnp/graph.hpp"
#include "graphfnp/model.hpp"
#include "graphfnp/nn.hpp"

namespace graphfnp {

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64)
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Structural hash of a dataset: counts, labels, features, and edges. Stable
// across runs, independent of file paths.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_int = [&](std::int64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  auto mix_double = [&](double v) { h = fnv1a64(&v, sizeof(v), h); };
  mix_int(ds.size());
  mix_int(ds.num_classes);
  mix_int(ds.num_node_types);
  mix_int(ds.num_edge_types);
  mix_int(ds.feature_dim);
  for (const Graph& g : ds.graphs) {
    mix_int(g.num_nodes());
    mix_int(g.label);
    for (Eigen::Index i = 0; i < g.node_features.rows(); ++i)
      for (Eigen::Index j = 0; j < g.node_features.cols(); ++j) mix_double(g.node_features(i, j));
    for (const Edge& e : g.edges) {
      mix_int(e.src);
      mix_int(e.dst);
      mix_int(e.type);
    }
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Parameter container
// ---------------------------------------------------------------------------
// Binary layout: magic, version, entry count, then per entry the "group/name"
// key, the shape, and row-major float64 data. Values are stored at 64-bit
// precision regardless of the in-memory scalar type.

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'G', 'F', 'N', 'P', 'C', 'K', 'P', 'T'};
}

template <typename S>
void save_parameters(const std::filesystem::path& path, const ParameterSet<S>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(detail::kCheckpointMagic, 8);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  std::uint32_t count = 0;
  params.for_each([&](ParamRef, const ParamEntry<S>&) { ++count; });
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  params.for_each([&](ParamRef r, const ParamEntry<S>& e) {
    const std::string key = std::string(group_name(r.group)) + "/" + e.name;
    const std::uint32_t len = static_cast<std::uint32_t>(key.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(key.data(), len);
    const std::int32_t rows = static_cast<std::int32_t>(e.value.rows());
    const std::int32_t cols = static_cast<std::int32_t>(e.value.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index i = 0; i < e.value.rows(); ++i)
      for (Eigen::Index j = 0; j < e.value.cols(); ++j) {
        const double v = static_cast<double>(e.value(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  });
  if (!out) throw IoError("failed while writing checkpoint " + path.string());
}

inline std::map<std::string, Eigen::MatrixXd> load_parameter_arrays(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw FormatError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || version != 1) throw FormatError("unsupported checkpoint version in " + path.string());
  std::map<std::string, Eigen::MatrixXd> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string key(len, '\0');
    in.read(key.data(), len);
    std::int32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows < 0 || cols < 0) throw FormatError("corrupt checkpoint " + path.string());
    Eigen::MatrixXd m(rows, cols);
    for (std::int32_t i = 0; i < rows; ++i)
      for (std::int32_t j = 0; j < cols; ++j) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(i, j) = v;
      }
    if (!in) throw FormatError("truncated checkpoint " + path.string());
    arrays[key] = std::move(m);
  }
  return arrays;
}

// Loads stored arrays into an initialized model, insisting every entry exists
// with the right shape.
template <typename S>
void apply_parameters(const std::map<std::string, Eigen::MatrixXd>& arrays,
                      ModelState<S>& model) {
  model.params.for_each([&](ParamRef r, ParamEntry<S>& e) {
    const std::string key = std::string(group_name(r.group)) + "/" + e.name;
    auto it = arrays.find(key);
    if (it == arrays.end()) throw FormatError("checkpoint is missing entry " + key);
    if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
      throw ShapeError("checkpoint entry " + key + " has shape " +
                       std::to_string(it->second.rows()) + "x" +
                       std::to_string(it->second.cols()) + ", model wants " +
                       std::to_string(e.value.rows()) + "x" + std::to_string(e.value.cols()));
    e.value = it->second.cast<S>();
  });
}

}  // namespace graphfnp
