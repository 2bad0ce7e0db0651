#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "expertforge/graph.hpp"
#include "expertforge/rng.hpp"

namespace expertforge {

enum class DirectionMode { None, LabelCoupled, LabelIndependent };

struct SynthBlock {
  double fraction = 1.0;   // share of nodes in this regime
  double p_in = 0.5;       // intra-class edge propensity
  double p_out = 0.5;      // inter-class edge propensity
  double mean_degree = 10.0;
};

struct SynthConfig {
  NodeId num_nodes = 1000;
  std::int32_t num_classes = 2;
  std::vector<SynthBlock> blocks;
  std::int64_t feature_dim = 16;
  double feature_snr = 1.0;  // class-signal power over unit noise power
  DirectionMode direction = DirectionMode::None;
  std::uint64_t seed = 0;
};

inline void validate(const SynthConfig& cfg) {
  if (cfg.num_nodes <= 0) throw ConfigError("synth: num_nodes must be positive");
  if (cfg.num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (cfg.blocks.empty()) throw ConfigError("synth: at least one block required");
  double total = 0;
  for (const auto& b : cfg.blocks) {
    if (b.fraction <= 0) throw ConfigError("synth: block fraction must be positive");
    if (b.p_in < 0 || b.p_in > 1 || b.p_out < 0 || b.p_out > 1)
      throw ConfigError("synth: p_in/p_out must lie in [0,1]");
    if (b.mean_degree < 0) throw ConfigError("synth: mean_degree must be nonnegative");
    total += b.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("synth: block fractions must sum to 1");
  if (cfg.feature_dim <= 0) throw ConfigError("synth: feature_dim must be positive");
  if (cfg.feature_snr < 0) throw ConfigError("synth: feature_snr must be nonnegative");
}

namespace detail {

// Weighted sampling over a fixed node pool via cumulative sums.
struct WeightedPool {
  std::vector<NodeId> nodes;
  std::vector<double> cumulative;
  double total = 0;

  void build(const std::vector<NodeId>& members, const std::vector<double>& weight) {
    nodes = members;
    cumulative.resize(nodes.size());
    double acc = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      acc += weight[static_cast<std::size_t>(nodes[i])];
      cumulative[i] = acc;
    }
    total = acc;
  }

  NodeId draw(RngStream& rng) const {
    double x = rng.uniform() * total;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), x);
    std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    if (idx >= nodes.size()) idx = nodes.size() - 1;
    return nodes[idx];
  }
};

// Probability that a planted-partition edge inside the block is intra-class,
// given per-pair rates p_in/p_out and the block's class sizes.
inline double implied_intra_probability(const SynthBlock& b,
                                        const std::vector<std::int64_t>& class_sizes,
                                        std::int64_t block_size) {
  double intra_pairs = 0;
  for (auto s : class_sizes) intra_pairs += 0.5 * static_cast<double>(s) * (s - 1);
  double all_pairs = 0.5 * static_cast<double>(block_size) * (block_size - 1);
  double intra_mass = b.p_in * intra_pairs;
  double inter_mass = b.p_out * (all_pairs - intra_pairs);
  double denom = intra_mass + inter_mass;
  return denom > 0 ? intra_mass / denom : 0.0;
}

}  // namespace detail

/// Seeded degree-corrected planted-partition generator with per-block
/// homophily regimes; blocks share the label space but not edges, giving the
/// mixture covariate and concept shift across regimes. Deterministic per
/// seed: all draws come from streams derived from cfg.seed.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const NodeId n = cfg.num_nodes;
  const auto C = cfg.num_classes;

  // Contiguous block membership; rounding drift lands in the last block.
  std::vector<NodeId> block_start;
  std::vector<NodeId> block_of(static_cast<std::size_t>(n));
  {
    block_start.push_back(0);
    double acc = 0;
    for (std::size_t b = 0; b + 1 < cfg.blocks.size(); ++b) {
      acc += cfg.blocks[b].fraction;
      block_start.push_back(static_cast<NodeId>(std::llround(acc * n)));
    }
    block_start.push_back(n);
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b)
      for (NodeId i = block_start[b]; i < block_start[b + 1]; ++i)
        block_of[static_cast<std::size_t>(i)] = static_cast<NodeId>(b);
  }

  // Balanced shuffled labels within each block.
  std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    NodeId lo = block_start[b], hi = block_start[b + 1];
    std::vector<std::int32_t> pool;
    pool.reserve(static_cast<std::size_t>(hi - lo));
    for (NodeId i = lo; i < hi; ++i) pool.push_back((i - lo) % C);
    RngStream rng(cfg.seed, "labels", b);
    rng.shuffle(pool);
    for (NodeId i = lo; i < hi; ++i) labels[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i - lo)];
  }

  // Lognormal degree propensities (the degree correction).
  std::vector<double> degree_weight(static_cast<std::size_t>(n));
  {
    RngStream rng(cfg.seed, "degree-weights");
    for (NodeId i = 0; i < n; ++i)
      degree_weight[static_cast<std::size_t>(i)] = std::exp(0.5 * rng.normal());
  }

  EdgeList edges;
  RngStream orient_rng(cfg.seed, "orientation");
  const double kappa = 4.0;  // orientation sharpness for label-coupled digraphs
  auto absorption = [&](std::int32_t c) {
    return C > 1 ? 2.0 * c / (C - 1) - 1.0 : 0.0;
  };
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    NodeId lo = block_start[b], hi = block_start[b + 1];
    std::int64_t block_size = hi - lo;
    if (block_size < 2) continue;

    std::vector<std::vector<NodeId>> class_members(static_cast<std::size_t>(C));
    std::vector<NodeId> all_members;
    for (NodeId i = lo; i < hi; ++i) {
      class_members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
      all_members.push_back(i);
    }
    std::vector<std::int64_t> class_sizes;
    for (const auto& m : class_members) class_sizes.push_back(static_cast<std::int64_t>(m.size()));

    detail::WeightedPool block_pool;
    block_pool.build(all_members, degree_weight);
    std::vector<detail::WeightedPool> class_pools(static_cast<std::size_t>(C));
    for (std::int32_t c = 0; c < C; ++c)
      class_pools[static_cast<std::size_t>(c)].build(class_members[static_cast<std::size_t>(c)], degree_weight);

    const double p_intra = detail::implied_intra_probability(blk, class_sizes, block_size);
    const auto target_edges =
        static_cast<std::int64_t>(std::llround(blk.mean_degree * block_size / 2.0));
    RngStream rng(cfg.seed, "edges", b);
    for (std::int64_t e = 0; e < target_edges; ++e) {
      NodeId u = block_pool.draw(rng);
      NodeId v = u;
      bool intra = rng.uniform() < p_intra;
      const auto yu = labels[static_cast<std::size_t>(u)];
      for (int attempt = 0; attempt < 16 && v == u; ++attempt) {
        if (intra) {
          v = class_pools[static_cast<std::size_t>(yu)].draw(rng);
        } else {
          v = block_pool.draw(rng);
          if (labels[static_cast<std::size_t>(v)] == yu) v = u;  // resample
        }
      }
      if (v == u) continue;  // tiny class or unlucky streak; drop the edge
      if (cfg.direction == DirectionMode::None) {
        edges.emplace_back(u, v);
      } else if (cfg.direction == DirectionMode::LabelIndependent) {
        if (orient_rng.u64() & 1)
          edges.emplace_back(u, v);
        else
          edges.emplace_back(v, u);
      } else {
        // Point the arc toward the class with higher absorption, so
        // sign(d_in - d_out) tracks the class id.
        double gap = absorption(labels[static_cast<std::size_t>(v)]) -
                     absorption(labels[static_cast<std::size_t>(u)]);
        double p_uv = 1.0 / (1.0 + std::exp(-kappa * gap));
        if (orient_rng.uniform() < p_uv)
          edges.emplace_back(u, v);
        else
          edges.emplace_back(v, u);
      }
    }
  }

  // Features: shared unit class means scaled to the requested SNR, plus
  // isotropic noise of unit expected power.
  const auto F = static_cast<Eigen::Index>(cfg.feature_dim);
  Eigen::MatrixXd class_means(C, F);
  {
    RngStream rng(cfg.seed, "class-means");
    for (std::int32_t c = 0; c < C; ++c) {
      for (Eigen::Index j = 0; j < F; ++j) class_means(c, j) = rng.normal();
      double norm = class_means.row(c).norm();
      if (norm > 0) class_means.row(c) /= norm;
    }
  }
  Eigen::MatrixXd features(n, F);
  {
    RngStream rng(cfg.seed, "features");
    const double signal = std::sqrt(cfg.feature_snr);
    const double noise = 1.0 / std::sqrt(static_cast<double>(F));
    for (NodeId i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < F; ++j)
        features(i, j) = signal * class_means(labels[static_cast<std::size_t>(i)], j) +
                         noise * rng.normal();
  }

  Dataset ds;
  ds.graph = make_graph(n, std::move(edges), cfg.direction != DirectionMode::None,
                        std::move(features), labels, C);
  auto masks = random_masks(n, SplitFractions{0.5, 0.25, 0.25}, ds.graph.labels,
                            derive_seed(cfg.seed, "splits"));
  ds.train_mask = std::move(masks[0]);
  ds.val_mask = std::move(masks[1]);
  ds.test_mask = std::move(masks[2]);
  validate_dataset(ds);
  return ds;
}

}  // namespace expertforge
