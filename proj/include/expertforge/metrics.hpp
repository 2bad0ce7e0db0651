#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expertforge/graph.hpp"
#include "expertforge/propagation.hpp"

namespace expertforge {

/// Per-node metric values with an explicit well-definedness mask; values are
/// finite wherever defined and must not be read elsewhere.
struct NodeScores {
  std::string metric_name;
  Eigen::VectorXd values;
  Mask defined;

  NodeScores() = default;
  NodeScores(std::string name, NodeId n)
      : metric_name(std::move(name)),
        values(Eigen::VectorXd::Zero(n)),
        defined(static_cast<std::size_t>(n), 1) {}

  NodeId size() const { return static_cast<NodeId>(values.size()); }
  std::size_t defined_count() const { return mask_count(defined); }

  void check() const {
    for (NodeId i = 0; i < size(); ++i)
      if (defined[static_cast<std::size_t>(i)] && !std::isfinite(values[i]))
        throw InvariantError(metric_name + ": non-finite value at defined node " +
                             std::to_string(i));
  }
};

struct PearsonResult {
  double r = 0.0;
  bool zero_variance = false;
};

enum class DirectionVerdict { Informative, Neutral, Adverse };

inline const char* verdict_name(DirectionVerdict v) {
  switch (v) {
    case DirectionVerdict::Informative: return "Informative";
    case DirectionVerdict::Neutral: return "Neutral";
    case DirectionVerdict::Adverse: return "Adverse";
  }
  return "?";
}

/// Graph-level directionality summary. rho values are absolute
/// correlations in [0,1]; the verdict is a pure function of di.
struct DirectionReport {
  double rho_dir = 0.0;
  double rho_und = 0.0;
  double di = 0.0;
  double amud = 0.0;
  DirectionVerdict verdict = DirectionVerdict::Neutral;
};

enum class LabelCorrelation { NumericId, OneHotMax };

// Verdict thresholds: clearly positive DI means directionality should be
// modeled, negative means plain degree information beats it.
inline constexpr double kDiInformativeThreshold = 0.1;
inline constexpr double kRhoClamp = 1e-9;

inline DirectionVerdict di_verdict(double di) {
  if (di > kDiInformativeThreshold) return DirectionVerdict::Informative;
  if (di < 0.0) return DirectionVerdict::Adverse;
  return DirectionVerdict::Neutral;
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

inline PearsonResult pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw ConfigError("pearson: length mismatch");
  if (x.size() < 2) throw ConfigError("pearson: need at least 2 samples");
  const auto n = static_cast<double>(x.size());
  double mx = x.mean(), my = y.mean();
  double sxx = 0, syy = 0, sxy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0 || syy <= 0) return {0.0, true};
  double r = sxy / std::sqrt(sxx * syy);
  (void)n;
  return {std::clamp(r, -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// Degree family
// ---------------------------------------------------------------------------

struct DegreeProfile {
  NodeScores d_in, d_out, d_und, d_dir;
};

/// d_und = d_in + d_out; d_dir = (d_in - d_out) / d_und, defined only where
/// d_und > 0. Undirected graphs have d_dir identically 0 on defined nodes.
inline DegreeProfile degree_profile(const Graph& g) {
  DegreeProfile p{NodeScores("d_in", g.num_nodes), NodeScores("d_out", g.num_nodes),
                  NodeScores("d_und", g.num_nodes), NodeScores("d_dir", g.num_nodes)};
  for (NodeId i = 0; i < g.num_nodes; ++i) {
    double din = static_cast<double>(g.in.degree(i));
    double dout = static_cast<double>(g.out.degree(i));
    p.d_in.values[i] = din;
    p.d_out.values[i] = dout;
    p.d_und.values[i] = din + dout;
    if (din + dout > 0) {
      p.d_dir.values[i] = (din - dout) / (din + dout);
    } else {
      p.d_dir.defined[static_cast<std::size_t>(i)] = 0;
    }
  }
  return p;
}

/// Size of the undirected neighborhood (union of in/out neighbors).
inline NodeScores undirected_degree(const Graph& g) {
  Csr und = detail::undirected_csr(g);
  NodeScores s("degree", g.num_nodes);
  for (NodeId i = 0; i < g.num_nodes; ++i)
    s.values[i] = static_cast<double>(und.degree(i));
  return s;
}

// ---------------------------------------------------------------------------
// Centrality
// ---------------------------------------------------------------------------

/// Power iteration with uniform dangling-mass redistribution; stops when the
/// L1 change drops below tol or after max_iter sweeps. Scores sum to 1.
inline NodeScores pagerank(const Graph& g, double damping = 0.85, double tol = 1e-10,
                           int max_iter = 200) {
  if (!(damping > 0.0 && damping < 1.0))
    throw ConfigError("pagerank: damping must lie in (0,1)");
  const NodeId n = g.num_nodes;
  NodeScores s("pagerank", n);
  if (n == 0) return s;
  Eigen::VectorXd pr = Eigen::VectorXd::Constant(n, 1.0 / n);
  Eigen::VectorXd next(n);
  for (int it = 0; it < max_iter; ++it) {
    double dangling = 0;
    for (NodeId i = 0; i < n; ++i)
      if (g.out.degree(i) == 0) dangling += pr[i];
    next.setConstant((1.0 - damping) / n + damping * dangling / n);
    for (NodeId u = 0; u < n; ++u) {
      double share = damping * pr[u] / static_cast<double>(std::max<std::int64_t>(1, g.out.degree(u)));
      for (NodeId v : g.out.row(u)) next[v] += share;
    }
    double delta = (next - pr).lpNorm<1>();
    pr.swap(next);
    if (delta < tol) break;
  }
  s.values = pr;
  return s;
}

/// Local clustering coefficient on the undirected simple projection;
/// undefined below degree 2.
inline NodeScores clustering_coefficient(const Graph& g) {
  Csr und = detail::undirected_csr(g);
  NodeScores s("clustering_coefficient", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    auto nbrs = und.row(v);
    const auto deg = static_cast<std::int64_t>(nbrs.size());
    if (deg < 2) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    std::int64_t closed = 0;  // ordered neighbor pairs (u,w) with edge u-w
    for (NodeId u : nbrs) {
      auto urow = und.row(u);
      // sorted-list intersection
      auto it1 = nbrs.begin();
      auto it2 = urow.begin();
      while (it1 != nbrs.end() && it2 != urow.end()) {
        if (*it1 < *it2)
          ++it1;
        else if (*it2 < *it1)
          ++it2;
        else {
          ++closed;
          ++it1;
          ++it2;
        }
      }
    }
    s.values[v] = static_cast<double>(closed) / static_cast<double>(deg * (deg - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Homophily family (undirected neighborhoods throughout)
// ---------------------------------------------------------------------------

/// Fraction of neighbors sharing the node's class; equals the intra-class
/// degree normalized by the full degree.
inline NodeScores node_homophily(const Graph& g, const std::vector<std::int32_t>& y) {
  Csr und = detail::undirected_csr(g);
  NodeScores s("node_homophily", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    auto nbrs = und.row(v);
    if (nbrs.empty()) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    std::int64_t same = 0;
    for (NodeId u : nbrs) same += (y[static_cast<std::size_t>(u)] == y[static_cast<std::size_t>(v)]);
    s.values[v] = static_cast<double>(same) / static_cast<double>(nbrs.size());
  }
  return s;
}

inline NodeScores node_homophily(const Graph& g) { return node_homophily(g, g.labels); }

/// Fraction of arcs joining same-class endpoints.
inline double edge_homophily(const Graph& g, const std::vector<std::int32_t>& y) {
  std::int64_t same = 0, total = 0;
  for (NodeId u = 0; u < g.num_nodes; ++u)
    for (NodeId v : g.out.row(u)) {
      ++total;
      same += (y[static_cast<std::size_t>(u)] == y[static_cast<std::size_t>(v)]);
    }
  return total > 0 ? static_cast<double>(same) / static_cast<double>(total) : 0.0;
}

inline double edge_homophily(const Graph& g) { return edge_homophily(g, g.labels); }

namespace detail {

template <typename Fn>
inline NodeScores neighbor_label_statistic(const Graph& g,
                                           const std::vector<std::int32_t>& y,
                                           std::string name, Fn&& fn) {
  Csr und = undirected_csr(g);
  NodeScores s(std::move(name), g.num_nodes);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(g.num_classes), 0);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    auto nbrs = und.row(v);
    if (nbrs.empty()) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    std::fill(counts.begin(), counts.end(), 0);
    for (NodeId u : nbrs) counts[static_cast<std::size_t>(y[static_cast<std::size_t>(u)])]++;
    s.values[v] = fn(counts, static_cast<std::int64_t>(nbrs.size()));
  }
  return s;
}

}  // namespace detail

/// Shannon entropy (natural log) of the neighbor label distribution.
inline NodeScores neighborhood_entropy(const Graph& g, const std::vector<std::int32_t>& y) {
  return detail::neighbor_label_statistic(
      g, y, "neighborhood_entropy",
      [](const std::vector<std::int64_t>& counts, std::int64_t deg) {
        double h = 0;
        for (auto c : counts) {
          if (c == 0) continue;
          double p = static_cast<double>(c) / static_cast<double>(deg);
          h -= p * std::log(p);
        }
        return h;
      });
}

inline NodeScores neighborhood_entropy(const Graph& g) {
  return neighborhood_entropy(g, g.labels);
}

/// Largest single-class share of the neighborhood, in (0, 1].
inline NodeScores max_neighbor_ratio(const Graph& g, const std::vector<std::int32_t>& y) {
  return detail::neighbor_label_statistic(
      g, y, "max_neighbor_ratio",
      [](const std::vector<std::int64_t>& counts, std::int64_t deg) {
        std::int64_t best = 0;
        for (auto c : counts) best = std::max(best, c);
        return static_cast<double>(best) / static_cast<double>(deg);
      });
}

inline NodeScores max_neighbor_ratio(const Graph& g) {
  return max_neighbor_ratio(g, g.labels);
}

// ---------------------------------------------------------------------------
// Intra-class graph metrics
// ---------------------------------------------------------------------------

/// Degree in the intra-class graph (undirected neighborhood of the filtered
/// edge set). Computed structurally through intra_class_graph, independent of
/// node_homophily's direct counting path.
inline NodeScores intra_degree(const Graph& g, const std::vector<std::int32_t>& y) {
  Graph intra = intra_class_graph(g, y);
  Csr und = detail::undirected_csr(intra);
  NodeScores s("intra_degree", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v)
    s.values[v] = static_cast<double>(und.degree(v));
  return s;
}

inline NodeScores intra_degree(const Graph& g) { return intra_degree(g, g.labels); }

/// Mean feature dot product with intra-class neighbors; undefined where the
/// intra-class degree is zero. normalize switches to cosine-style products.
inline NodeScores intra_feature_similarity(const Graph& g, const Eigen::MatrixXd& x,
                                           const std::vector<std::int32_t>& y,
                                           bool normalize = false) {
  if (x.rows() != g.num_nodes) throw ConfigError("feature row count mismatch");
  Graph intra = intra_class_graph(g, y);
  Csr und = detail::undirected_csr(intra);
  Eigen::MatrixXd feats = x;
  if (normalize) {
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
      double norm = feats.row(i).norm();
      if (norm > 0) feats.row(i) /= norm;
    }
  }
  NodeScores s("intra_feature_similarity", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    auto nbrs = und.row(v);
    if (nbrs.empty()) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    double acc = 0;
    for (NodeId u : nbrs) acc += feats.row(u).dot(feats.row(v));
    s.values[v] = acc / static_cast<double>(nbrs.size());
  }
  return s;
}

inline NodeScores intra_feature_similarity(const Graph& g, bool normalize = false) {
  return intra_feature_similarity(g, g.features, g.labels, normalize);
}

/// Mean dot product of full-graph neighborhood label-count vectors with
/// intra-class neighbors; undefined where the intra-class degree is zero.
inline NodeScores intra_label_agreement(const Graph& g, const std::vector<std::int32_t>& y) {
  Csr full = detail::undirected_csr(g);
  Eigen::MatrixXd label_profile =
      Eigen::MatrixXd::Zero(g.num_nodes, std::max<std::int32_t>(1, g.num_classes));
  for (NodeId v = 0; v < g.num_nodes; ++v)
    for (NodeId u : full.row(v))
      label_profile(v, y[static_cast<std::size_t>(u)]) += 1.0;

  Graph intra = intra_class_graph(g, y);
  Csr und = detail::undirected_csr(intra);
  NodeScores s("intra_label_agreement", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    auto nbrs = und.row(v);
    if (nbrs.empty()) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    double acc = 0;
    for (NodeId u : nbrs) acc += label_profile.row(u).dot(label_profile.row(v));
    s.values[v] = acc / static_cast<double>(nbrs.size());
  }
  return s;
}

inline NodeScores intra_label_agreement(const Graph& g) {
  return intra_label_agreement(g, g.labels);
}

// ---------------------------------------------------------------------------
// Directionality
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd numeric_labels(const std::vector<std::int32_t>& y) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) v[static_cast<Eigen::Index>(i)] = y[i];
  return v;
}

/// |Corr(x, y)| under the chosen label convention: numeric class ids, or the
/// maximum over per-class one-hot indicators.
inline double abs_label_correlation(const Eigen::VectorXd& x,
                                    const std::vector<std::int32_t>& y_sub,
                                    LabelCorrelation mode) {
  if (mode == LabelCorrelation::NumericId)
    return std::abs(pearson(x, numeric_labels(y_sub)).r);
  std::int32_t num_classes = 0;
  for (auto c : y_sub) num_classes = std::max(num_classes, c + 1);
  double best = 0;
  for (std::int32_t c = 0; c < num_classes; ++c) {
    Eigen::VectorXd ind(static_cast<Eigen::Index>(y_sub.size()));
    for (std::size_t i = 0; i < y_sub.size(); ++i)
      ind[static_cast<Eigen::Index>(i)] = (y_sub[i] == c) ? 1.0 : 0.0;
    best = std::max(best, std::abs(pearson(x, ind).r));
  }
  return best;
}

}  // namespace detail

struct AmudResult {
  double value = 0.0;
  bool degenerate = false;  // both degree-label correlations vanish
};

inline double amud_from_correlations(double rho_in, double rho_out,
                                     double eps = kRhoClamp) {
  double denom = rho_in + rho_out;
  if (denom < eps) return 0.0;
  return std::abs(rho_in - rho_out) / denom;
}

/// First-order AMUD: normalized gap between the in-degree and out-degree
/// label correlations.
inline AmudResult amud(const Graph& g, const std::vector<std::int32_t>& y,
                       LabelCorrelation mode = LabelCorrelation::NumericId) {
  if (!g.directed) throw ConfigError("amud requires a directed graph");
  DegreeProfile p = degree_profile(g);
  double rho_in = detail::abs_label_correlation(p.d_in.values, y, mode);
  double rho_out = detail::abs_label_correlation(p.d_out.values, y, mode);
  AmudResult r;
  r.degenerate = (rho_in + rho_out) < kRhoClamp;
  r.value = amud_from_correlations(rho_in, rho_out);
  return r;
}

inline AmudResult amud(const Graph& g, LabelCorrelation mode = LabelCorrelation::NumericId) {
  return amud(g, g.labels, mode);
}

/// DI = rho_dir * ln(rho_dir / rho_und) with both correlations clamped to
/// [kRhoClamp, 1] so the log stays finite. d_dir is restricted to the nodes
/// where it is defined.
inline DirectionReport direction_informativeness(
    const Graph& g, const std::vector<std::int32_t>& y,
    LabelCorrelation mode = LabelCorrelation::NumericId) {
  if (!g.directed)
    throw ConfigError("direction_informativeness requires a directed graph");
  DegreeProfile p = degree_profile(g);

  std::vector<std::int32_t> y_def;
  std::vector<double> dir_def;
  for (NodeId i = 0; i < g.num_nodes; ++i)
    if (p.d_dir.defined[static_cast<std::size_t>(i)]) {
      y_def.push_back(y[static_cast<std::size_t>(i)]);
      dir_def.push_back(p.d_dir.values[i]);
    }
  if (y_def.size() < 2)
    throw ConfigError("direction_informativeness: fewer than 2 nodes with edges");
  Eigen::VectorXd dir_vec =
      Eigen::Map<const Eigen::VectorXd>(dir_def.data(), static_cast<Eigen::Index>(dir_def.size()));

  DirectionReport rep;
  rep.rho_dir = std::clamp(detail::abs_label_correlation(dir_vec, y_def, mode), kRhoClamp, 1.0);
  rep.rho_und = std::clamp(detail::abs_label_correlation(p.d_und.values, y, mode), kRhoClamp, 1.0);
  rep.di = rep.rho_dir * std::log(rep.rho_dir / rep.rho_und);
  rep.amud = amud(g, y, mode).value;
  rep.verdict = di_verdict(rep.di);
  return rep;
}

inline DirectionReport direction_informativeness(
    const Graph& g, LabelCorrelation mode = LabelCorrelation::NumericId) {
  return direction_informativeness(g, g.labels, mode);
}

// ---------------------------------------------------------------------------
// Feature aggregation
// ---------------------------------------------------------------------------

/// P^hops X with P the row-normalized undirected adjacency with self-loops;
/// the smoothing used to cluster on aggregated rather than raw features.
inline Eigen::MatrixXd aggregate_features(const Graph& g, const Eigen::MatrixXd& x,
                                          int hops) {
  if (hops < 1) throw ConfigError("aggregate_features: hops must be >= 1");
  if (x.rows() != g.num_nodes) throw ConfigError("feature row count mismatch");
  PropagationOperator p = build_propagation(
      g.directed ? to_undirected(g) : g, Filter::RwNorm);
  Eigen::MatrixXd out = x;
  for (int h = 0; h < hops; ++h) out = p.ops[0].apply(out);
  return out;
}

inline Eigen::MatrixXd aggregate_features(const Graph& g, int hops) {
  return aggregate_features(g, g.features, hops);
}

// ---------------------------------------------------------------------------
// Label-filtered view (train/val labels only)
// ---------------------------------------------------------------------------

/// Node homophily computed only from labeled endpoints: edges touching an
/// unlabeled node are dropped, and unlabeled nodes come back undefined.
/// `labeled` typically marks train+val nodes.
inline NodeScores filtered_node_homophily(const Graph& g, const Mask& labeled) {
  if (labeled.size() != static_cast<std::size_t>(g.num_nodes))
    throw ConfigError("labeled mask length mismatch");
  Csr und = detail::undirected_csr(g);
  NodeScores s("filtered_node_homophily", g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    if (!labeled[static_cast<std::size_t>(v)]) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    std::int64_t same = 0, kept = 0;
    for (NodeId u : und.row(v)) {
      if (!labeled[static_cast<std::size_t>(u)]) continue;
      ++kept;
      same += (g.labels[static_cast<std::size_t>(u)] == g.labels[static_cast<std::size_t>(v)]);
    }
    if (kept == 0) {
      s.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    s.values[v] = static_cast<double>(same) / static_cast<double>(kept);
  }
  return s;
}

/// Label statistics of the labeled part of a node's neighborhood; does not
/// need the node's own label, so they are legal gate inputs at inference.
struct LabeledNeighborStats {
  NodeScores entropy;
  NodeScores max_ratio;
};

inline LabeledNeighborStats labeled_neighbor_stats(const Graph& g, const Mask& labeled) {
  Csr und = detail::undirected_csr(g);
  LabeledNeighborStats out{NodeScores("labeled_neighbor_entropy", g.num_nodes),
                           NodeScores("labeled_neighbor_max_ratio", g.num_nodes)};
  std::vector<std::int64_t> counts(static_cast<std::size_t>(g.num_classes), 0);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    std::fill(counts.begin(), counts.end(), 0);
    std::int64_t kept = 0;
    for (NodeId u : und.row(v)) {
      if (!labeled[static_cast<std::size_t>(u)]) continue;
      counts[static_cast<std::size_t>(g.labels[static_cast<std::size_t>(u)])]++;
      ++kept;
    }
    if (kept == 0) {
      out.entropy.defined[static_cast<std::size_t>(v)] = 0;
      out.max_ratio.defined[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    double h = 0;
    std::int64_t best = 0;
    for (auto c : counts) {
      best = std::max(best, c);
      if (c == 0) continue;
      double p = static_cast<double>(c) / static_cast<double>(kept);
      h -= p * std::log(p);
    }
    out.entropy.values[v] = h;
    out.max_ratio.values[v] = static_cast<double>(best) / static_cast<double>(kept);
  }
  return out;
}

}  // namespace expertforge
