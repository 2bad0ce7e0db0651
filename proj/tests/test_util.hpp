#pragma once

#include <Eigen/Dense>
#include <vector>

#include "expertforge/ensemble.hpp"
#include "expertforge/experts.hpp"
#include "expertforge/graph.hpp"
#include "expertforge/rng.hpp"
#include "expertforge/synth.hpp"

namespace eftest {

using namespace expertforge;

/// Tiny graph with zero features and the given labels.
inline Graph small_graph(NodeId n, EdgeList edges, std::vector<std::int32_t> labels,
                         bool directed = false, std::int32_t num_classes = 0,
                         Eigen::Index feature_dim = 2) {
  if (num_classes == 0)
    for (auto y : labels) num_classes = std::max(num_classes, y + 1);
  return make_graph(n, std::move(edges), directed,
                    Eigen::MatrixXd::Zero(n, feature_dim), std::move(labels),
                    num_classes);
}

inline Graph random_labeled_graph(NodeId n, double edge_prob, std::int32_t num_classes,
                                  std::uint64_t seed, bool directed = false) {
  RngStream rng(seed, "test-random-graph");
  EdgeList edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = 0; v < n; ++v) {
      if (u == v) continue;
      if (!directed && u > v) continue;
      if (rng.uniform() < edge_prob) edges.emplace_back(u, v);
    }
  std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(num_classes)));
  Eigen::MatrixXd x(n, 3);
  for (NodeId i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  return make_graph(n, std::move(edges), directed, std::move(x), std::move(labels),
                    num_classes);
}

/// The two-regime synthetic dataset shared by the qualitative desk-scale
/// checks: one homophilous block, one heterophilous block, weak features.
/// The mixture is hard enough that one model must compromise across regimes.
inline SynthConfig two_regime_config(std::uint64_t seed, NodeId n = 2000) {
  SynthConfig cfg;
  cfg.num_nodes = n;
  cfg.num_classes = 3;
  cfg.blocks = {
      {0.5, 0.9, 0.1, 10.0},   // homophilous regime
      {0.5, 0.15, 0.85, 8.0},  // heterophilous regime
  };
  cfg.feature_dim = 8;
  cfg.feature_snr = 0.3;
  cfg.direction = DirectionMode::None;
  cfg.seed = seed;
  return cfg;
}

/// Expert configuration used by the two-regime experiments: shallow enough
/// that the heterophilous regime stays hard for a single compromise model.
inline ExpertConfig two_regime_expert_config() {
  ExpertConfig cfg;
  cfg.depth = 1;
  cfg.filter = Filter::SymNorm;
  cfg.hidden_dim = 32;
  cfg.dropout = 0.5;
  cfg.epochs = 500;
  cfg.patience = 80;
  cfg.learning_rate = 0.03;
  return cfg;
}

/// Gate budget for the two-regime experiments.
inline GateConfig two_regime_gate_config() {
  GateConfig cfg;
  cfg.epochs = 600;
  cfg.patience = 100;
  cfg.learning_rate = 0.02;
  return cfg;
}

/// Expert configuration for the digraph experiments.
inline ExpertConfig digraph_expert_config() {
  ExpertConfig cfg;
  cfg.depth = 2;
  cfg.filter = Filter::SymNorm;
  cfg.hidden_dim = 32;
  cfg.dropout = 0.5;
  cfg.epochs = 300;
  cfg.patience = 60;
  cfg.learning_rate = 0.02;
  return cfg;
}

/// Digraph whose edge orientation carries class signal. The default size
/// keeps label-independent DI noise comfortably inside the Neutral band.
inline SynthConfig label_coupled_config(std::uint64_t seed, NodeId n = 5000) {
  SynthConfig cfg;
  cfg.num_nodes = n;
  cfg.num_classes = 3;
  cfg.blocks = {{1.0, 0.3, 0.7, 10.0}};
  cfg.feature_dim = 8;
  cfg.feature_snr = 0.5;
  cfg.direction = DirectionMode::LabelCoupled;
  cfg.seed = seed;
  return cfg;
}

/// Same regime but orientation is an unbiased coin flip.
inline SynthConfig label_independent_config(std::uint64_t seed, NodeId n = 5000) {
  SynthConfig cfg = label_coupled_config(seed, n);
  cfg.direction = DirectionMode::LabelIndependent;
  return cfg;
}

/// Learnable homophilous digraph with coin-flip orientation: with little
/// error mass left, expert disagreement reflects directional signal rather
/// than task noise.
inline SynthConfig label_independent_easy_config(std::uint64_t seed, NodeId n = 5000) {
  SynthConfig cfg;
  cfg.num_nodes = n;
  cfg.num_classes = 3;
  cfg.blocks = {{1.0, 0.8, 0.2, 12.0}};
  cfg.feature_dim = 8;
  cfg.feature_snr = 2.0;
  cfg.direction = DirectionMode::LabelIndependent;
  cfg.seed = seed;
  return cfg;
}

}  // namespace eftest
