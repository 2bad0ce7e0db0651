#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expertforge/ensemble.hpp"
#include "expertforge/experts.hpp"
#include "expertforge/graph.hpp"
#include "expertforge/metrics.hpp"
#include "expertforge/rng.hpp"

namespace expertforge {

/// Hard node -> domain partition with mass weights |domain| / N.
struct DomainAssignment {
  int num_domains = 0;
  std::vector<std::int32_t> assignment;  // domain id per node, in [0, M)
  std::vector<double> weights;
  std::string source;

  Mask domain_mask(std::int32_t m) const {
    Mask mask(assignment.size(), 0);
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == m) mask[i] = 1;
    return mask;
  }

  void check() const {
    if (num_domains < 2) throw InvariantError("domain assignment needs M >= 2");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_domains), 0);
    for (auto d : assignment) {
      if (d < 0 || d >= num_domains) throw InvariantError("domain id out of range");
      counts[static_cast<std::size_t>(d)]++;
    }
    double total = 0;
    for (std::size_t m = 0; m < counts.size(); ++m) {
      double expect = static_cast<double>(counts[m]) / static_cast<double>(assignment.size());
      if (std::abs(weights[m] - expect) > 1e-12)
        throw InvariantError("domain weights inconsistent with counts");
      total += weights[m];
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvariantError("domain weights must sum to 1");
  }
};

namespace detail {

inline DomainAssignment from_assignment(std::vector<std::int32_t> assignment, int M,
                                        std::string source) {
  DomainAssignment d;
  d.num_domains = M;
  d.assignment = std::move(assignment);
  d.weights.assign(static_cast<std::size_t>(M), 0.0);
  for (auto a : d.assignment) d.weights[static_cast<std::size_t>(a)] += 1.0;
  for (auto& w : d.weights) w /= static_cast<double>(d.assignment.size());
  d.source = std::move(source);
  d.check();
  return d;
}

}  // namespace detail

/// Sorts nodes by (score, seeded jitter) and cuts the order into M groups of
/// near-equal size; strictly smaller scores never land in a higher domain.
/// Nodes with undefined scores fall into the lowest-score domain.
inline DomainAssignment quantile_partition(const NodeScores& scores, int M,
                                           std::uint64_t tie_seed) {
  if (M < 2) throw ConfigError("quantile_partition: M must be >= 2");
  const NodeId n = scores.size();
  std::vector<NodeId> defined_nodes;
  for (NodeId i = 0; i < n; ++i)
    if (scores.defined[static_cast<std::size_t>(i)]) defined_nodes.push_back(i);
  if (static_cast<int>(defined_nodes.size()) < M)
    throw ConfigError("quantile_partition: fewer defined scores than domains");

  std::sort(defined_nodes.begin(), defined_nodes.end(), [&](NodeId a, NodeId b) {
    double va = scores.values[a], vb = scores.values[b];
    if (va != vb) return va < vb;
    return derive_seed(tie_seed, "jitter", static_cast<std::uint64_t>(a)) <
           derive_seed(tie_seed, "jitter", static_cast<std::uint64_t>(b));
  });

  std::vector<std::int32_t> assignment(static_cast<std::size_t>(n), 0);
  const std::size_t total = defined_nodes.size();
  const std::size_t base = total / static_cast<std::size_t>(M);
  const std::size_t extra = total % static_cast<std::size_t>(M);
  std::size_t idx = 0;
  for (int m = 0; m < M; ++m) {
    std::size_t size = base + (static_cast<std::size_t>(m) < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k)
      assignment[static_cast<std::size_t>(defined_nodes[idx++])] = m;
  }
  return detail::from_assignment(std::move(assignment), M,
                                 "quantile:" + scores.metric_name);
}

/// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded at
/// the point farthest from its centroid. Deterministic per seed.
inline DomainAssignment kmeans_partition(const Eigen::MatrixXd& x, int M,
                                         std::uint64_t seed, int max_iter = 100) {
  if (M < 2) throw ConfigError("kmeans_partition: M must be >= 2");
  if (max_iter < 1) throw ConfigError("kmeans_partition: max_iter must be >= 1");
  const auto n = x.rows();
  {
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (x(static_cast<Eigen::Index>(a), j) != x(static_cast<Eigen::Index>(b), j))
          return x(static_cast<Eigen::Index>(a), j) < x(static_cast<Eigen::Index>(b), j);
      }
      return false;
    });
    std::int64_t distinct = n > 0 ? 1 : 0;
    for (std::size_t i = 1; i < order.size(); ++i)
      if (x.row(static_cast<Eigen::Index>(order[i])) !=
          x.row(static_cast<Eigen::Index>(order[i - 1])))
        ++distinct;
    if (distinct < M)
      throw ConfigError("kmeans_partition: fewer distinct feature rows than clusters");
  }

  RngStream rng(seed, "kmeans");
  Eigen::MatrixXd centroids(M, x.cols());
  // k-means++ seeding
  centroids.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  Eigen::VectorXd dist2 = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < M; ++c) {
    double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      double target = rng.uniform() * total;
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    centroids.row(c) = x.row(pick);
    dist2 = dist2.cwiseMin((x.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  std::vector<std::int32_t> assignment(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::int32_t best = 0;
      double best_d = (x.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < M; ++c) {
        double d = (x.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[static_cast<std::size_t>(i)] != best) {
        assignment[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, x.cols());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(M), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += x.row(i);
      counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])]++;
    }
    for (int c = 0; c < M; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Re-seed an empty cluster at the farthest point from its centroid.
        Eigen::Index far = 0;
        double far_d = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
          double d = (x.row(i) -
                      centroids.row(assignment[static_cast<std::size_t>(i)]))
                         .squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = x.row(far);
      }
    }
  }
  return detail::from_assignment(std::move(assignment), M, "kmeans");
}

/// Uniform shuffled partition with sizes differing by at most one.
inline DomainAssignment random_partition(NodeId n, int M, std::uint64_t seed) {
  if (M < 2) throw ConfigError("random_partition: M must be >= 2");
  if (n < M) throw ConfigError("random_partition: fewer nodes than domains");
  std::vector<NodeId> order(static_cast<std::size_t>(n));
  for (NodeId i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  RngStream rng(seed, "random-partition");
  rng.shuffle(order);
  std::vector<std::int32_t> assignment(static_cast<std::size_t>(n), 0);
  const std::size_t base = static_cast<std::size_t>(n) / static_cast<std::size_t>(M);
  const std::size_t extra = static_cast<std::size_t>(n) % static_cast<std::size_t>(M);
  std::size_t idx = 0;
  for (int m = 0; m < M; ++m) {
    std::size_t size = base + (static_cast<std::size_t>(m) < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k)
      assignment[static_cast<std::size_t>(order[idx++])] = m;
  }
  return detail::from_assignment(std::move(assignment), M, "random");
}

// ---------------------------------------------------------------------------
// Assignment evaluation (weighted gain of domain experts)
// ---------------------------------------------------------------------------

enum class TrainingMode { Scratch, Finetune };

inline const char* training_mode_name(TrainingMode m) {
  return m == TrainingMode::Scratch ? "scratch" : "finetune";
}

inline TrainingMode training_mode_from_name(const std::string& s) {
  if (s == "scratch") return TrainingMode::Scratch;
  if (s == "finetune") return TrainingMode::Finetune;
  throw ConfigError("unknown training mode '" + s + "'");
}

struct DomainEvalReport {
  struct PerDomain {
    std::int32_t domain = 0;
    double weight = 0;            // renormalized over the kept domains
    double acc_domain_expert = 0; // Acc_{m -> m}
    double acc_full_expert = 0;   // Acc_{all -> m}
    std::int64_t train_count = 0, test_count = 0;
    bool skipped = false;
  };
  std::vector<PerDomain> domains;
  double delta_acc = 0;
  double full_expert_test_acc = 0;
  std::vector<std::string> warnings;

  /// delta_acc must be recomputable from the per-domain fields.
  void check() const {
    double acc = 0;
    for (const auto& d : domains)
      if (!d.skipped) acc += d.weight * (d.acc_domain_expert - d.acc_full_expert);
    if (std::abs(acc - delta_acc) > 1e-12)
      throw InvariantError("delta_acc inconsistent with per-domain fields");
  }
};

struct DomainEvalResult {
  DomainEvalReport report;
  Expert full_expert;
  std::vector<Expert> domain_experts;  // kept domains, in domain id order
  std::vector<std::int32_t> kept_domains;
};

/// Trains one full-data expert plus one expert per domain (scratch: on
/// train ∩ domain; finetune: full pretrain continued on train ∩ domain) and
/// reports the weighted accuracy gain on the domains' own test nodes.
/// Domains lacking train or test nodes are skipped with renormalized weights.
inline DomainEvalResult evaluate_assignment_full(const Dataset& ds,
                                                 const DomainAssignment& dom,
                                                 const ExpertConfig& expert_cfg,
                                                 TrainingMode mode, std::uint64_t seed) {
  dom.check();
  if (dom.assignment.size() != static_cast<std::size_t>(ds.graph.num_nodes))
    throw ConfigError("domain assignment does not cover the dataset");

  ExpertConfig full_cfg = expert_cfg;
  full_cfg.seed = derive_seed(seed, "full-expert");
  DomainEvalResult res;
  res.full_expert = train_expert(ds, full_cfg);

  struct Slot {
    std::int32_t m;
    Mask train, test, domain;
  };
  std::vector<Slot> slots;
  DomainEvalReport& rep = res.report;
  for (std::int32_t m = 0; m < dom.num_domains; ++m) {
    Slot s;
    s.m = m;
    s.domain = dom.domain_mask(m);
    s.train = mask_and(ds.train_mask, s.domain);
    s.test = mask_and(ds.test_mask, s.domain);
    DomainEvalReport::PerDomain pd;
    pd.domain = m;
    pd.train_count = static_cast<std::int64_t>(mask_count(s.train));
    pd.test_count = static_cast<std::int64_t>(mask_count(s.test));
    if (pd.train_count == 0 || pd.test_count == 0) {
      pd.skipped = true;
      rep.warnings.push_back("domain " + std::to_string(m) +
                             " skipped: no train or test nodes");
    }
    rep.domains.push_back(pd);
    if (!pd.skipped) slots.push_back(std::move(s));
  }
  if (slots.empty()) throw ConfigError("every domain lacks train or test nodes");

  double kept_weight = 0;
  for (const auto& s : slots) kept_weight += dom.weights[static_cast<std::size_t>(s.m)];

  std::vector<Expert> experts(slots.size());
  parallel_for_index(slots.size(), effective_workers(static_cast<int>(slots.size())),
                     [&](std::size_t i) {
                       const Slot& s = slots[i];
                       if (mode == TrainingMode::Scratch) {
                         ExpertConfig cfg = expert_cfg;
                         cfg.seed = derive_seed(seed, "domain-expert",
                                                static_cast<std::uint64_t>(s.m));
                         experts[i] = train_expert(ds, cfg, &s.train);
                       } else {
                         FineTuneOptions opt;
                         opt.seed = derive_seed(seed, "domain-finetune",
                                                static_cast<std::uint64_t>(s.m));
                         experts[i] = fine_tune(res.full_expert, ds, s.domain, opt);
                       }
                     });

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot& s = slots[i];
    auto& pd = rep.domains[static_cast<std::size_t>(s.m)];
    pd.weight = dom.weights[static_cast<std::size_t>(s.m)] / kept_weight;
    pd.acc_domain_expert = accuracy_on_mask(experts[i].logits, ds.graph.labels, s.test);
    pd.acc_full_expert =
        accuracy_on_mask(res.full_expert.logits, ds.graph.labels, s.test);
    rep.delta_acc += pd.weight * (pd.acc_domain_expert - pd.acc_full_expert);
    res.domain_experts.push_back(std::move(experts[i]));
    res.kept_domains.push_back(s.m);
  }
  rep.full_expert_test_acc =
      accuracy_on_mask(res.full_expert.logits, ds.graph.labels, ds.test_mask);
  rep.check();
  return res;
}

inline DomainEvalReport evaluate_assignment(const Dataset& ds, const DomainAssignment& dom,
                                            const ExpertConfig& expert_cfg,
                                            TrainingMode mode, std::uint64_t seed) {
  return evaluate_assignment_full(ds, dom, expert_cfg, mode, seed).report;
}

// ---------------------------------------------------------------------------
// Partition method registry (CLI + runner surface)
// ---------------------------------------------------------------------------

enum class PartitionMethod {
  Degree,
  Pagerank,
  ClusterCoef,
  Homophily,
  HomophilyFiltered,
  IntraDegree,
  IntraFeat,
  IntraLabel,
  Kmeans,
  KmeansAggr,
  Random,
  NeighEntropy,
  MaxNeighRatio,
};

inline const char* partition_method_name(PartitionMethod m) {
  switch (m) {
    case PartitionMethod::Degree: return "degree";
    case PartitionMethod::Pagerank: return "pagerank";
    case PartitionMethod::ClusterCoef: return "clustercoef";
    case PartitionMethod::Homophily: return "homophily";
    case PartitionMethod::HomophilyFiltered: return "homophily-filtered";
    case PartitionMethod::IntraDegree: return "intra-degree";
    case PartitionMethod::IntraFeat: return "intra-feat";
    case PartitionMethod::IntraLabel: return "intra-label";
    case PartitionMethod::Kmeans: return "kmeans";
    case PartitionMethod::KmeansAggr: return "kmeans-aggr";
    case PartitionMethod::Random: return "random";
    case PartitionMethod::NeighEntropy: return "neigh-entropy";
    case PartitionMethod::MaxNeighRatio: return "max-neigh-ratio";
  }
  return "?";
}

inline PartitionMethod partition_method_from_name(const std::string& s) {
  for (auto m : {PartitionMethod::Degree, PartitionMethod::Pagerank,
                 PartitionMethod::ClusterCoef, PartitionMethod::Homophily,
                 PartitionMethod::HomophilyFiltered, PartitionMethod::IntraDegree,
                 PartitionMethod::IntraFeat, PartitionMethod::IntraLabel,
                 PartitionMethod::Kmeans, PartitionMethod::KmeansAggr,
                 PartitionMethod::Random, PartitionMethod::NeighEntropy,
                 PartitionMethod::MaxNeighRatio})
    if (s == partition_method_name(m)) return m;
  throw ConfigError("unknown partition method '" + s + "'");
}

/// Builds the assignment for any named method. Score-based methods go
/// through quantile_partition; kmeans and random use their own samplers.
inline DomainAssignment make_partition(const Dataset& ds, PartitionMethod method, int M,
                                       std::uint64_t seed) {
  const Graph& g = ds.graph;
  switch (method) {
    case PartitionMethod::Degree:
      return quantile_partition(undirected_degree(g), M, seed);
    case PartitionMethod::Pagerank:
      return quantile_partition(pagerank(g), M, seed);
    case PartitionMethod::ClusterCoef:
      return quantile_partition(clustering_coefficient(g), M, seed);
    case PartitionMethod::Homophily:
      return quantile_partition(node_homophily(g), M, seed);
    case PartitionMethod::HomophilyFiltered:
      return quantile_partition(
          filtered_node_homophily(g, mask_or(ds.train_mask, ds.val_mask)), M, seed);
    case PartitionMethod::IntraDegree:
      return quantile_partition(intra_degree(g), M, seed);
    case PartitionMethod::IntraFeat:
      return quantile_partition(intra_feature_similarity(g), M, seed);
    case PartitionMethod::IntraLabel:
      return quantile_partition(intra_label_agreement(g), M, seed);
    case PartitionMethod::Kmeans:
      return kmeans_partition(g.features, M, seed);
    case PartitionMethod::KmeansAggr:
      return kmeans_partition(aggregate_features(g, 2), M, seed);
    case PartitionMethod::Random:
      return random_partition(g.num_nodes, M, seed);
    case PartitionMethod::NeighEntropy:
      return quantile_partition(neighborhood_entropy(g, g.labels), M, seed);
    case PartitionMethod::MaxNeighRatio:
      return quantile_partition(max_neighbor_ratio(g, g.labels), M, seed);
  }
  throw ConfigError("unknown partition method");
}

}  // namespace expertforge
