#include "expertforge/domains.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "test_util.hpp"

using namespace expertforge;

namespace {

NodeScores scores_of(std::vector<double> vals, Mask defined = {}) {
  NodeScores s("fixture", static_cast<NodeId>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) s.values[static_cast<Eigen::Index>(i)] = vals[i];
  if (!defined.empty()) s.defined = std::move(defined);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// quantile partition
// ---------------------------------------------------------------------------

TEST(QuantilePartition, SortedScoresSplitEvenly) {
  auto s = scores_of({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto d = quantile_partition(s, 2, 0);
  for (NodeId i = 0; i < 5; ++i) EXPECT_EQ(d.assignment[static_cast<std::size_t>(i)], 0);
  for (NodeId i = 5; i < 10; ++i) EXPECT_EQ(d.assignment[static_cast<std::size_t>(i)], 1);
  EXPECT_DOUBLE_EQ(d.weights[0], 0.5);
}

TEST(QuantilePartition, TiesSplitEvenlyAndSeedStable) {
  auto s = scores_of(std::vector<double>(10, 1.0));
  auto a = quantile_partition(s, 2, 7);
  auto b = quantile_partition(s, 2, 7);
  auto c = quantile_partition(s, 2, 8);
  EXPECT_EQ(a.assignment, b.assignment);
  std::int64_t zeros = 0;
  for (auto v : a.assignment) zeros += (v == 0);
  EXPECT_EQ(zeros, 5);
  EXPECT_NE(a.assignment, c.assignment);  // tie composition moves with the seed
}

TEST(QuantilePartition, UndefinedScoresGoToLowestDomain) {
  Mask defined{1, 1, 0, 1, 1, 1};
  auto s = scores_of({5, 4, 99, 3, 2, 1}, defined);
  auto d = quantile_partition(s, 2, 0);
  EXPECT_EQ(d.assignment[2], 0);
}

TEST(QuantilePartition, MonotoneInScores) {
  auto g = eftest::random_labeled_graph(50, 0.1, 2, 3);
  auto s = undirected_degree(g);
  auto d = quantile_partition(s, 3, 5);
  for (NodeId u = 0; u < 50; ++u)
    for (NodeId v = 0; v < 50; ++v)
      if (s.values[u] < s.values[v])
        EXPECT_LE(d.assignment[static_cast<std::size_t>(u)],
                  d.assignment[static_cast<std::size_t>(v)]);
}

TEST(QuantilePartition, TooFewDefinedRejected) {
  Mask defined{1, 0, 0, 0};
  auto s = scores_of({1, 2, 3, 4}, defined);
  EXPECT_THROW(quantile_partition(s, 2, 0), ConfigError);
  EXPECT_THROW(quantile_partition(scores_of({1, 2, 3}), 1, 0), ConfigError);
}

TEST(QuantilePartition, SeparatesTwoRegimeBlocks) {
  auto ds = generate_synthetic(eftest::two_regime_config(1));
  auto h = node_homophily(ds.graph);
  auto d = quantile_partition(h, 2, 1);
  NodeId half = ds.graph.num_nodes / 2;
  // block A (first half) is homophilous -> domain 1; block B -> domain 0
  std::int64_t a_in_one = 0, b_in_zero = 0;
  for (NodeId i = 0; i < half; ++i) a_in_one += (d.assignment[static_cast<std::size_t>(i)] == 1);
  for (NodeId i = half; i < ds.graph.num_nodes; ++i)
    b_in_zero += (d.assignment[static_cast<std::size_t>(i)] == 0);
  EXPECT_GE(static_cast<double>(a_in_one) / half, 0.9);
  EXPECT_GE(static_cast<double>(b_in_zero) / half, 0.9);
}

// ---------------------------------------------------------------------------
// k-means partition
// ---------------------------------------------------------------------------

TEST(KmeansPartition, SeparatedBlobsRecovered) {
  RngStream rng(5, "blobs");
  const NodeId n = 200;
  Eigen::MatrixXd x(n, 2);
  for (NodeId i = 0; i < n; ++i) {
    double cx = i < n / 2 ? -10.0 : 10.0;
    x(i, 0) = cx + rng.normal() * 0.5;
    x(i, 1) = rng.normal() * 0.5;
  }
  auto d = kmeans_partition(x, 2, 0);
  // every node in the same blob shares a domain
  for (NodeId i = 1; i < n / 2; ++i) EXPECT_EQ(d.assignment[static_cast<std::size_t>(i)], d.assignment[0]);
  for (NodeId i = n / 2; i < n; ++i)
    EXPECT_EQ(d.assignment[static_cast<std::size_t>(i)],
              d.assignment[static_cast<std::size_t>(n / 2)]);
  EXPECT_NE(d.assignment[0], d.assignment[static_cast<std::size_t>(n / 2)]);
}

TEST(KmeansPartition, EachNodeItsOwnDomain) {
  Eigen::MatrixXd x(4, 1);
  x << 0, 10, 20, 30;
  auto d = kmeans_partition(x, 4, 3);
  std::set<std::int32_t> seen(d.assignment.begin(), d.assignment.end());
  EXPECT_EQ(seen.size(), 4u);
}

TEST(KmeansPartition, DeterministicPerSeed) {
  auto g = eftest::random_labeled_graph(80, 0.05, 2, 9);
  auto a = kmeans_partition(g.features, 3, 42);
  auto b = kmeans_partition(g.features, 3, 42);
  EXPECT_EQ(a.assignment, b.assignment);
}

TEST(KmeansPartition, TooFewDistinctRowsRejected) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 2);
  EXPECT_THROW(kmeans_partition(x, 2, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// random partition
// ---------------------------------------------------------------------------

TEST(RandomPartition, BalancedSizes) {
  auto d = random_partition(10, 2, 0);
  std::int64_t zeros = 0;
  for (auto v : d.assignment) zeros += (v == 0);
  EXPECT_EQ(zeros, 5);

  auto d3 = random_partition(7, 3, 1);
  std::vector<std::int64_t> counts(3, 0);
  for (auto v : d3.assignment) counts[static_cast<std::size_t>(v)]++;
  std::sort(counts.begin(), counts.end());
  EXPECT_EQ(counts[0], 2);
  EXPECT_EQ(counts[1], 2);
  EXPECT_EQ(counts[2], 3);
}

TEST(RandomPartition, SeedStable) {
  auto a = random_partition(50, 4, 7);
  auto b = random_partition(50, 4, 7);
  EXPECT_EQ(a.assignment, b.assignment);
}

// ---------------------------------------------------------------------------
// evaluate_assignment
// ---------------------------------------------------------------------------

namespace {

ExpertConfig small_expert_config() {
  ExpertConfig cfg;
  cfg.depth = 2;
  cfg.filter = Filter::SymNorm;
  cfg.hidden_dim = 16;
  cfg.dropout = 0.2;
  cfg.epochs = 80;
  cfg.patience = 30;
  return cfg;
}

}  // namespace

TEST(EvaluateAssignment, DeltaAccRecomputesFromFields) {
  auto ds = generate_synthetic(eftest::two_regime_config(0, 600));
  auto dom = quantile_partition(node_homophily(ds.graph), 2, 0);
  auto rep = evaluate_assignment(ds, dom, small_expert_config(), TrainingMode::Scratch, 0);
  EXPECT_NO_THROW(rep.check());
  double acc = 0;
  for (const auto& d : rep.domains)
    if (!d.skipped) acc += d.weight * (d.acc_domain_expert - d.acc_full_expert);
  EXPECT_NEAR(acc, rep.delta_acc, 1e-12);
}

TEST(EvaluateAssignment, SkipsDomainsWithoutTrainNodes) {
  auto ds = generate_synthetic(eftest::two_regime_config(2, 400));
  // adversarial assignment: domain 1 holds exactly one test-only node
  std::vector<std::int32_t> assignment(static_cast<std::size_t>(ds.graph.num_nodes), 0);
  for (NodeId i = 0; i < ds.graph.num_nodes; ++i)
    if (ds.test_mask[static_cast<std::size_t>(i)]) {
      assignment[static_cast<std::size_t>(i)] = 1;
      break;
    }
  DomainAssignment dom = detail::from_assignment(std::move(assignment), 2, "adversarial");
  auto rep = evaluate_assignment(ds, dom, small_expert_config(), TrainingMode::Scratch, 0);
  ASSERT_EQ(rep.domains.size(), 2u);
  EXPECT_TRUE(rep.domains[1].skipped);
  EXPECT_FALSE(rep.warnings.empty());
  EXPECT_NEAR(rep.domains[0].weight, 1.0, 1e-12);  // renormalized
}

TEST(EvaluateAssignment, FinetuneModeRuns) {
  auto ds = generate_synthetic(eftest::two_regime_config(3, 600));
  auto dom = quantile_partition(node_homophily(ds.graph), 2, 3);
  auto res = evaluate_assignment_full(ds, dom, small_expert_config(),
                                      TrainingMode::Finetune, 3);
  EXPECT_EQ(res.domain_experts.size(), 2u);
  EXPECT_NO_THROW(res.report.check());
}

TEST(MakePartition, AllMethodsProduceValidAssignments) {
  auto ds = generate_synthetic(eftest::two_regime_config(4, 300));
  for (auto m : {PartitionMethod::Degree, PartitionMethod::Pagerank,
                 PartitionMethod::ClusterCoef, PartitionMethod::Homophily,
                 PartitionMethod::HomophilyFiltered, PartitionMethod::IntraDegree,
                 PartitionMethod::IntraFeat, PartitionMethod::IntraLabel,
                 PartitionMethod::Kmeans, PartitionMethod::KmeansAggr,
                 PartitionMethod::Random, PartitionMethod::NeighEntropy,
                 PartitionMethod::MaxNeighRatio}) {
    auto d = make_partition(ds, m, 2, 1);
    EXPECT_NO_THROW(d.check()) << partition_method_name(m);
  }
}

TEST(PartitionMethod, NameRoundTrip) {
  for (auto m : {PartitionMethod::Degree, PartitionMethod::HomophilyFiltered,
                 PartitionMethod::KmeansAggr, PartitionMethod::MaxNeighRatio})
    EXPECT_EQ(partition_method_from_name(partition_method_name(m)), m);
  EXPECT_THROW(partition_method_from_name("nope"), ConfigError);
}
