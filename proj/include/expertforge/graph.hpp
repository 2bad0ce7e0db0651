#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "expertforge/common.hpp"
#include "expertforge/rng.hpp"

namespace expertforge {

using EdgeList = std::vector<std::pair<NodeId, NodeId>>;

/// Compressed sparse adjacency: sorted, duplicate-free neighbor lists.
struct Csr {
  std::vector<std::int64_t> offsets;  // size num_nodes + 1
  std::vector<NodeId> targets;

  NodeId num_nodes() const { return static_cast<NodeId>(offsets.size()) - 1; }
  std::int64_t degree(NodeId u) const { return offsets[u + 1] - offsets[u]; }
  std::span<const NodeId> row(NodeId u) const {
    return {targets.data() + offsets[u], targets.data() + offsets[u + 1]};
  }
  bool has_edge(NodeId u, NodeId v) const {
    auto r = row(u);
    return std::binary_search(r.begin(), r.end(), v);
  }

  static Csr from_sorted_unique(NodeId n, const EdgeList& edges) {
    Csr c;
    c.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    c.targets.reserve(edges.size());
    for (const auto& [u, v] : edges) c.offsets[u + 1]++;
    for (NodeId i = 0; i < n; ++i) c.offsets[i + 1] += c.offsets[i];
    for (const auto& [u, v] : edges) c.targets.push_back(v);
    return c;
  }
};

struct GraphBuildStats {
  std::int64_t self_loops_removed = 0;
  std::int64_t duplicate_edges_removed = 0;
};

/// Sparse topology A, dense features X, integer labels y. Immutable after
/// construction; undirected graphs store a symmetric arc set.
struct Graph {
  NodeId num_nodes = 0;
  bool directed = false;
  Csr out;  // out-neighbors (for undirected graphs: the neighbors)
  Csr in;   // in-neighbors; equals `out` when the arc set is symmetric
  Eigen::MatrixXd features;        // num_nodes x feature_dim
  std::vector<std::int32_t> labels;  // class ids in [0, num_classes)
  std::int32_t num_classes = 0;

  std::int64_t num_arcs() const { return static_cast<std::int64_t>(out.targets.size()); }
  /// Undirected graphs count each symmetric pair once.
  std::int64_t num_edges() const { return directed ? num_arcs() : num_arcs() / 2; }
  std::int64_t feature_dim() const { return features.cols(); }

  /// Stable identity of (node set, labels, splits-free content); used to
  /// refuse mixing experts trained on different datasets.
  std::uint64_t fingerprint() const {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(num_nodes));
    h = mix64(h ^ static_cast<std::uint64_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i)
      h = mix64(h ^ (static_cast<std::uint64_t>(labels[i]) + i * 0x9E3779B9ull));
    return h;
  }
};

namespace detail {

inline void canonicalize_edges(EdgeList& edges, NodeId n, bool symmetrize,
                               GraphBuildStats* stats) {
  for (const auto& [u, v] : edges) {
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw ConfigError("node id out of range: (" + std::to_string(u) + ", " +
                        std::to_string(v) + ") with num_nodes=" + std::to_string(n));
  }
  std::int64_t loops = 0;
  std::erase_if(edges, [&](const auto& e) {
    if (e.first == e.second) {
      ++loops;
      return true;
    }
    return false;
  });
  // Duplicates are counted on the normalized raw list (unordered pairs when
  // the graph is undirected), before symmetrization closes the arc set.
  EdgeList norm = edges;
  if (symmetrize)
    for (auto& [u, v] : norm)
      if (u > v) std::swap(u, v);
  std::sort(norm.begin(), norm.end());
  std::int64_t dups = static_cast<std::int64_t>(norm.size()) -
                      static_cast<std::int64_t>(
                          std::unique(norm.begin(), norm.end()) - norm.begin());
  if (stats) {
    stats->self_loops_removed = loops;
    stats->duplicate_edges_removed = dups;
  }
  if (symmetrize) {
    std::size_t base = edges.size();
    edges.reserve(base * 2);
    for (std::size_t i = 0; i < base; ++i)
      edges.emplace_back(edges[i].second, edges[i].first);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

inline EdgeList reversed(const EdgeList& edges) {
  EdgeList rev;
  rev.reserve(edges.size());
  for (const auto& [u, v] : edges) rev.emplace_back(v, u);
  std::sort(rev.begin(), rev.end());
  return rev;
}

}  // namespace detail

/// Normalizes the edge list (drops self-loops and duplicates, symmetrizes
/// when undirected) and assembles an immutable Graph.
inline Graph make_graph(NodeId num_nodes, EdgeList edges, bool directed,
                        Eigen::MatrixXd features, std::vector<std::int32_t> labels,
                        std::int32_t num_classes, GraphBuildStats* stats = nullptr) {
  if (num_nodes < 0) throw ConfigError("num_nodes must be nonnegative");
  if (features.rows() != num_nodes)
    throw ConfigError("feature matrix has " + std::to_string(features.rows()) +
                      " rows, expected " + std::to_string(num_nodes));
  if (static_cast<NodeId>(labels.size()) != num_nodes)
    throw ConfigError("label vector length mismatch");
  for (auto y : labels)
    if (y < 0 || y >= num_classes)
      throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  detail::canonicalize_edges(edges, num_nodes, !directed, stats);
  Graph g;
  g.num_nodes = num_nodes;
  g.directed = directed;
  g.out = Csr::from_sorted_unique(num_nodes, edges);
  g.in = directed ? Csr::from_sorted_unique(num_nodes, detail::reversed(edges)) : g.out;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.num_classes = num_classes;
  return g;
}

inline EdgeList arcs_of(const Graph& g) {
  EdgeList edges;
  edges.reserve(static_cast<std::size_t>(g.num_arcs()));
  for (NodeId u = 0; u < g.num_nodes; ++u)
    for (NodeId v : g.out.row(u)) edges.emplace_back(u, v);
  return edges;
}

/// Symmetrizes the arc set; idempotent on already-undirected graphs.
inline Graph to_undirected(const Graph& g) {
  return make_graph(g.num_nodes, arcs_of(g), /*directed=*/false, g.features,
                    g.labels, g.num_classes);
}

/// Keeps only edges whose endpoints share a label; everything else
/// (nodes, features, labels, directedness) is unchanged.
inline Graph intra_class_graph(const Graph& g, const std::vector<std::int32_t>& y) {
  if (static_cast<NodeId>(y.size()) != g.num_nodes)
    throw ConfigError("label vector length mismatch");
  EdgeList kept;
  for (NodeId u = 0; u < g.num_nodes; ++u)
    for (NodeId v : g.out.row(u))
      if (y[u] == y[v]) kept.emplace_back(u, v);
  return make_graph(g.num_nodes, std::move(kept), g.directed, g.features, g.labels,
                    g.num_classes);
}

inline Graph intra_class_graph(const Graph& g) { return intra_class_graph(g, g.labels); }

struct Dataset {
  Graph graph;
  Mask train_mask, val_mask, test_mask;
};

inline void validate_dataset(const Dataset& ds) {
  const auto n = static_cast<std::size_t>(ds.graph.num_nodes);
  if (ds.train_mask.size() != n || ds.val_mask.size() != n || ds.test_mask.size() != n)
    throw ConfigError("split mask length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    int hits = (ds.train_mask[i] != 0) + (ds.val_mask[i] != 0) + (ds.test_mask[i] != 0);
    if (hits > 1)
      throw ConfigError("node " + std::to_string(i) + " appears in multiple splits");
  }
  if (mask_count(ds.train_mask) == 0) throw ConfigError("train split is empty");
  std::vector<bool> seen(static_cast<std::size_t>(ds.graph.num_classes), false);
  for (std::size_t i = 0; i < n; ++i)
    if (ds.train_mask[i]) seen[static_cast<std::size_t>(ds.graph.labels[i])] = true;
  for (std::int32_t c = 0; c < ds.graph.num_classes; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      throw ConfigError("class " + std::to_string(c) + " absent from train split");
}

struct SplitFractions {
  double train = 0.5, val = 0.25, test = 0.25;
};

/// Stratified random split: per-class counts land within one node of the
/// requested fractions. Classes with fewer than 3 nodes cannot be split.
inline std::array<Mask, 3> random_masks(NodeId n, SplitFractions f,
                                        const std::vector<std::int32_t>& stratify_by,
                                        std::uint64_t seed) {
  if (f.train <= 0 || f.val <= 0 || f.test <= 0)
    throw ConfigError("split fractions must be positive");
  if (f.train + f.val + f.test > 1.0 + 1e-9)
    throw ConfigError("split fractions sum above 1");
  if (static_cast<NodeId>(stratify_by.size()) != n)
    throw ConfigError("stratify label length mismatch");
  std::int32_t num_classes = 0;
  for (auto y : stratify_by) num_classes = std::max(num_classes, y + 1);
  std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(num_classes));
  for (NodeId i = 0; i < n; ++i)
    by_class[static_cast<std::size_t>(stratify_by[i])].push_back(i);

  std::array<Mask, 3> masks;
  for (auto& m : masks) m.assign(static_cast<std::size_t>(n), 0);
  for (std::int32_t c = 0; c < num_classes; ++c) {
    auto& nodes = by_class[static_cast<std::size_t>(c)];
    if (nodes.empty()) continue;
    if (nodes.size() < 3)
      throw ConfigError("class " + std::to_string(c) +
                        " has fewer than 3 nodes; cannot stratify");
    RngStream rng(seed, "masks", static_cast<std::uint64_t>(c));
    rng.shuffle(nodes);
    auto nc = static_cast<double>(nodes.size());
    auto t = static_cast<std::size_t>(std::floor(f.train * nc + 0.5));
    auto v = static_cast<std::size_t>(std::floor(f.val * nc + 0.5));
    auto te = static_cast<std::size_t>(std::floor(f.test * nc + 0.5));
    while (t + v + te > nodes.size()) {
      if (te > 0)
        --te;
      else if (v > 0)
        --v;
      else
        --t;
    }
    std::size_t idx = 0;
    for (std::size_t k = 0; k < t; ++k) masks[0][static_cast<std::size_t>(nodes[idx++])] = 1;
    for (std::size_t k = 0; k < v; ++k) masks[1][static_cast<std::size_t>(nodes[idx++])] = 1;
    for (std::size_t k = 0; k < te; ++k) masks[2][static_cast<std::size_t>(nodes[idx++])] = 1;
  }
  return masks;
}

}  // namespace expertforge
