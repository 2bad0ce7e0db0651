#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expertforge/graph.hpp"

namespace expertforge {

enum class Filter { Identity, SymNorm, RwNorm, HighPassSym, DirectedPair };

inline const char* filter_name(Filter f) {
  switch (f) {
    case Filter::Identity: return "identity";
    case Filter::SymNorm: return "sym";
    case Filter::RwNorm: return "rw";
    case Filter::HighPassSym: return "lsym";
    case Filter::DirectedPair: return "dir";
  }
  return "?";
}

inline Filter filter_from_name(const std::string& s) {
  if (s == "identity" || s == "I") return Filter::Identity;
  if (s == "sym" || s == "sym-norm") return Filter::SymNorm;
  if (s == "rw" || s == "rw-norm") return Filter::RwNorm;
  if (s == "lsym" || s == "high-pass") return Filter::HighPassSym;
  if (s == "dir" || s == "directed-pair") return Filter::DirectedPair;
  throw ConfigError("unknown filter '" + s + "'");
}

/// Row-indexed sparse matrix with precomputed coefficients.
struct SparseOp {
  NodeId n = 0;
  std::vector<std::int64_t> offsets;
  std::vector<NodeId> cols;
  std::vector<double> vals;

  template <typename Derived>
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> apply(
      const Eigen::MatrixBase<Derived>& x) const {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, x.cols());
    for (NodeId i = 0; i < n; ++i)
      for (std::int64_t k = offsets[i]; k < offsets[i + 1]; ++k)
        out.row(i) += static_cast<Scalar>(vals[static_cast<std::size_t>(k)]) *
                      x.row(cols[static_cast<std::size_t>(k)]);
    return out;
  }

  SparseOp transposed() const {
    SparseOp t;
    t.n = n;
    t.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    for (NodeId c : cols) t.offsets[static_cast<std::size_t>(c) + 1]++;
    for (NodeId i = 0; i < n; ++i) t.offsets[i + 1] += t.offsets[i];
    t.cols.resize(cols.size());
    t.vals.resize(vals.size());
    std::vector<std::int64_t> cursor(t.offsets.begin(), t.offsets.end() - 1);
    for (NodeId i = 0; i < n; ++i)
      for (std::int64_t k = offsets[i]; k < offsets[i + 1]; ++k) {
        auto c = cols[static_cast<std::size_t>(k)];
        auto pos = cursor[static_cast<std::size_t>(c)]++;
        t.cols[static_cast<std::size_t>(pos)] = i;
        t.vals[static_cast<std::size_t>(pos)] = vals[static_cast<std::size_t>(k)];
      }
    return t;
  }
};

/// A graph filter ready for message passing: zero (identity), one, or two
/// (directed pair) sparse operators, with transposes for reverse mode.
struct PropagationOperator {
  Filter filter = Filter::Identity;
  std::vector<SparseOp> ops;
  std::vector<SparseOp> ops_t;

  int fan() const { return filter == Filter::DirectedPair ? 2 : 1; }
};

namespace detail {

inline Csr undirected_csr(const Graph& g) {
  if (!g.directed) return g.out;
  EdgeList arcs = arcs_of(g);
  std::size_t base = arcs.size();
  arcs.reserve(base * 2);
  for (std::size_t i = 0; i < base; ++i) arcs.emplace_back(arcs[i].second, arcs[i].first);
  std::sort(arcs.begin(), arcs.end());
  arcs.erase(std::unique(arcs.begin(), arcs.end()), arcs.end());
  return Csr::from_sorted_unique(g.num_nodes, arcs);
}

inline SparseOp row_normalized_with_self_loops(const Csr& adj) {
  SparseOp op;
  op.n = adj.num_nodes();
  op.offsets.assign(static_cast<std::size_t>(op.n) + 1, 0);
  for (NodeId i = 0; i < op.n; ++i) op.offsets[i + 1] = op.offsets[i] + adj.degree(i) + 1;
  op.cols.reserve(static_cast<std::size_t>(op.offsets[op.n]));
  op.vals.reserve(op.cols.capacity());
  for (NodeId i = 0; i < op.n; ++i) {
    double w = 1.0 / static_cast<double>(adj.degree(i) + 1);
    bool self_emitted = false;
    for (NodeId v : adj.row(i)) {
      if (!self_emitted && v > i) {
        op.cols.push_back(i);
        op.vals.push_back(w);
        self_emitted = true;
      }
      op.cols.push_back(v);
      op.vals.push_back(w);
    }
    if (!self_emitted) {
      op.cols.push_back(i);
      op.vals.push_back(w);
    }
  }
  return op;
}

}  // namespace detail

/// Builds the requested filter. Undirected filters operate on the
/// symmetrized projection of directed inputs; the directed pair keeps the
/// original arc set and requires a directed graph. Isolated nodes keep a
/// self-loop row (sym/rw) or an identity row (high-pass).
inline PropagationOperator build_propagation(const Graph& g, Filter filter) {
  PropagationOperator p;
  p.filter = filter;
  if (filter == Filter::Identity) return p;

  if (filter == Filter::DirectedPair) {
    if (!g.directed) throw ConfigError("directed-pair filter requires a directed graph");
    // Row-normalized (A + I) over out-neighbors, and (A^T + I) over in-neighbors.
    p.ops.push_back(detail::row_normalized_with_self_loops(g.out));
    p.ops.push_back(detail::row_normalized_with_self_loops(g.in));
    for (const auto& op : p.ops) p.ops_t.push_back(op.transposed());
    return p;
  }

  Csr und = detail::undirected_csr(g);
  const NodeId n = und.num_nodes();
  if (filter == Filter::RwNorm) {
    p.ops.push_back(detail::row_normalized_with_self_loops(und));
    p.ops_t.push_back(p.ops[0].transposed());
    return p;
  }

  SparseOp op;
  op.n = n;
  op.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  if (filter == Filter::SymNorm) {
    // D~^{-1/2} (A + I) D~^{-1/2}
    for (NodeId i = 0; i < n; ++i) op.offsets[i + 1] = op.offsets[i] + und.degree(i) + 1;
    op.cols.reserve(static_cast<std::size_t>(op.offsets[n]));
    op.vals.reserve(op.cols.capacity());
    for (NodeId i = 0; i < n; ++i) {
      double di = std::sqrt(static_cast<double>(und.degree(i) + 1));
      bool self_emitted = false;
      for (NodeId v : und.row(i)) {
        if (!self_emitted && v > i) {
          op.cols.push_back(i);
          op.vals.push_back(1.0 / (di * di));
          self_emitted = true;
        }
        double dv = std::sqrt(static_cast<double>(und.degree(v) + 1));
        op.cols.push_back(v);
        op.vals.push_back(1.0 / (di * dv));
      }
      if (!self_emitted) {
        op.cols.push_back(i);
        op.vals.push_back(1.0 / (di * di));
      }
    }
  } else {  // HighPassSym: I - D^{-1/2} A D^{-1/2}, no synthetic self-loops
    for (NodeId i = 0; i < n; ++i) op.offsets[i + 1] = op.offsets[i] + und.degree(i) + 1;
    op.cols.reserve(static_cast<std::size_t>(op.offsets[n]));
    op.vals.reserve(op.cols.capacity());
    for (NodeId i = 0; i < n; ++i) {
      double di = std::sqrt(std::max<double>(1.0, static_cast<double>(und.degree(i))));
      bool self_emitted = false;
      for (NodeId v : und.row(i)) {
        if (!self_emitted && v > i) {
          op.cols.push_back(i);
          op.vals.push_back(1.0);
          self_emitted = true;
        }
        double dv = std::sqrt(std::max<double>(1.0, static_cast<double>(und.degree(v))));
        op.cols.push_back(v);
        op.vals.push_back(-1.0 / (di * dv));
      }
      if (!self_emitted) {
        op.cols.push_back(i);
        op.vals.push_back(1.0);
      }
    }
  }
  // Both variants are symmetric; avoid a redundant transpose pass.
  p.ops.push_back(op);
  p.ops_t.push_back(std::move(op));
  return p;
}

}  // namespace expertforge
