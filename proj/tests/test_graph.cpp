#include "expertforge/graph.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "expertforge/dataset_io.hpp"
#include "test_util.hpp"

using namespace expertforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("expertforge_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Dataset path3_dataset() {
  // 0 - 1 - 2 path, labels 0,0,1
  Dataset ds;
  ds.graph = eftest::small_graph(3, {{0, 1}, {1, 2}}, {0, 0, 1});
  ds.train_mask = {1, 1, 1};
  ds.val_mask = {0, 0, 0};
  ds.test_mask = {0, 0, 0};
  return ds;
}

}  // namespace

TEST(Graph, BuilderNormalizesEdges) {
  GraphBuildStats stats;
  auto g = make_graph(4, {{0, 1}, {1, 0}, {2, 2}, {1, 2}, {1, 2}}, /*directed=*/true,
                      Eigen::MatrixXd::Zero(4, 1), {0, 0, 1, 1}, 2, &stats);
  EXPECT_EQ(stats.self_loops_removed, 1);
  EXPECT_EQ(stats.duplicate_edges_removed, 1);
  EXPECT_EQ(g.num_arcs(), 3);  // (0,1), (1,0), (1,2)
  EXPECT_TRUE(g.out.has_edge(0, 1));
  EXPECT_TRUE(g.out.has_edge(1, 0));
  EXPECT_TRUE(g.out.has_edge(1, 2));
  EXPECT_EQ(g.in.degree(2), 1);
}

TEST(Graph, UndirectedBuildSymmetrizes) {
  auto g = eftest::small_graph(3, {{0, 1}}, {0, 0, 0});
  EXPECT_FALSE(g.directed);
  EXPECT_EQ(g.num_arcs(), 2);
  EXPECT_EQ(g.num_edges(), 1);
  EXPECT_TRUE(g.out.has_edge(0, 1));
  EXPECT_TRUE(g.out.has_edge(1, 0));
}

TEST(Graph, NodeIdOutOfRangeRejected) {
  EXPECT_THROW(eftest::small_graph(3, {{0, 7}}, {0, 0, 0}), ConfigError);
}

TEST(ToUndirected, SingleArcBecomesPair) {
  auto g = eftest::small_graph(2, {{0, 1}}, {0, 1}, /*directed=*/true);
  auto u = to_undirected(g);
  EXPECT_FALSE(u.directed);
  EXPECT_EQ(u.num_arcs(), 2);
}

TEST(ToUndirected, ReciprocalPairCollapses) {
  auto g = eftest::small_graph(2, {{0, 1}, {1, 0}}, {0, 1}, /*directed=*/true);
  auto u = to_undirected(g);
  EXPECT_EQ(u.num_edges(), 1);
}

TEST(ToUndirected, Idempotent) {
  auto g = eftest::random_labeled_graph(20, 0.2, 3, 11, /*directed=*/true);
  auto once = to_undirected(g);
  auto twice = to_undirected(once);
  EXPECT_EQ(once.out.targets, twice.out.targets);
  EXPECT_EQ(once.out.offsets, twice.out.offsets);
}

TEST(IntraClassGraph, AllSameClassKeepsEverything) {
  auto g = eftest::small_graph(4, {{0, 1}, {1, 2}, {2, 3}}, {1, 1, 1, 1});
  auto intra = intra_class_graph(g);
  EXPECT_EQ(intra.num_arcs(), g.num_arcs());
}

TEST(IntraClassGraph, BipartiteByClassIsEmpty) {
  auto g = eftest::small_graph(4, {{0, 2}, {0, 3}, {1, 2}, {1, 3}}, {0, 0, 1, 1});
  EXPECT_EQ(intra_class_graph(g).num_arcs(), 0);
}

TEST(IntraClassGraph, TriangleKeepsIntraPair) {
  auto g = eftest::small_graph(3, {{0, 1}, {1, 2}, {0, 2}}, {0, 0, 1});
  auto intra = intra_class_graph(g);
  EXPECT_EQ(intra.num_edges(), 1);
  EXPECT_TRUE(intra.out.has_edge(0, 1));
  EXPECT_TRUE(intra.out.has_edge(1, 0));
  EXPECT_FALSE(intra.out.has_edge(1, 2));
}

TEST(IntraClassGraph, IdempotentAndNeverGrows) {
  auto g = eftest::random_labeled_graph(30, 0.15, 3, 5);
  auto once = intra_class_graph(g);
  auto twice = intra_class_graph(once);
  EXPECT_LE(once.num_arcs(), g.num_arcs());
  EXPECT_EQ(once.out.targets, twice.out.targets);
}

TEST(RandomMasks, SingleClassExactSizes) {
  std::vector<std::int32_t> labels(10, 0);
  auto masks = random_masks(10, {0.6, 0.2, 0.2}, labels, 1);
  EXPECT_EQ(mask_count(masks[0]), 6u);
  EXPECT_EQ(mask_count(masks[1]), 2u);
  EXPECT_EQ(mask_count(masks[2]), 2u);
}

TEST(RandomMasks, DeterministicPerSeed) {
  std::vector<std::int32_t> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
  auto a = random_masks(40, {0.5, 0.25, 0.25}, labels, 9);
  auto b = random_masks(40, {0.5, 0.25, 0.25}, labels, 9);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)]);
}

TEST(RandomMasks, StratifiedWithinOneNode) {
  std::vector<std::int32_t> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i < 50 ? 0 : 1);
  auto masks = random_masks(100, {0.5, 0.25, 0.25}, labels, 3);
  for (int c = 0; c < 2; ++c) {
    std::size_t tr = 0, va = 0, te = 0;
    for (int i = 0; i < 100; ++i) {
      if (labels[static_cast<std::size_t>(i)] != c) continue;
      tr += masks[0][static_cast<std::size_t>(i)];
      va += masks[1][static_cast<std::size_t>(i)];
      te += masks[2][static_cast<std::size_t>(i)];
    }
    EXPECT_EQ(tr, 25u);
    EXPECT_GE(va, 12u);
    EXPECT_LE(va, 13u);
    EXPECT_GE(te, 12u);
    EXPECT_LE(te, 13u);
  }
}

TEST(RandomMasks, TinyClassRejected) {
  std::vector<std::int32_t> labels{0, 0, 0, 1, 1};
  EXPECT_THROW(random_masks(5, {0.5, 0.25, 0.25}, labels, 1), ConfigError);
}

TEST(DatasetIo, MinimalPathGraphLoads) {
  auto dir = temp_dir("load_min");
  std::ofstream(dir / "edges.tsv") << "0\t1\n1\t2\n";
  std::ofstream(dir / "features.csv") << "1.0,0.0\n0.5,0.5\n0.0,1.0\n";
  std::ofstream(dir / "labels.csv") << "0\n0\n1\n";
  std::ofstream(dir / "splits.json")
      << R"({"train":[0,2],"val":[1],"test":[],"directed":false,"num_classes":2})";
  auto ds = load_dataset(dir);
  EXPECT_EQ(ds.graph.num_nodes, 3);
  EXPECT_EQ(ds.graph.num_edges(), 2);
  EXPECT_FALSE(ds.graph.directed);
  EXPECT_DOUBLE_EQ(ds.graph.features(1, 0), 0.5);
}

TEST(DatasetIo, OutOfRangeLabelIdRejected) {
  auto dir = temp_dir("load_oor");
  std::ofstream(dir / "edges.tsv") << "0\t7\n";
  std::ofstream(dir / "features.csv") << "0\n0\n0\n0\n0\n";
  std::ofstream(dir / "labels.csv") << "0\n0\n0\n0\n1\n";
  std::ofstream(dir / "splits.json")
      << R"({"train":[0,4],"val":[],"test":[],"directed":false,"num_classes":2})";
  EXPECT_THROW(load_dataset(dir), ConfigError);
}

TEST(DatasetIo, DuplicateEdgeCounted) {
  auto dir = temp_dir("load_dup");
  std::ofstream(dir / "edges.tsv") << "1\t2\n1\t2\n";
  std::ofstream(dir / "features.csv") << "0\n0\n0\n";
  std::ofstream(dir / "labels.csv") << "0\n1\n1\n";
  std::ofstream(dir / "splits.json")
      << R"({"train":[0,1],"val":[],"test":[],"directed":false,"num_classes":2})";
  LoadReport report;
  auto ds = load_dataset(dir, &report);
  EXPECT_EQ(ds.graph.num_edges(), 1);
  EXPECT_EQ(report.stats.duplicate_edges_removed, 1);
}

TEST(DatasetIo, MissingFileRejected) {
  auto dir = temp_dir("load_missing");
  EXPECT_THROW(load_dataset(dir), ConfigError);
}

TEST(DatasetIo, MaskOverlapRejected) {
  auto dir = temp_dir("load_overlap");
  std::ofstream(dir / "edges.tsv") << "0\t1\n";
  std::ofstream(dir / "features.csv") << "0\n0\n0\n";
  std::ofstream(dir / "labels.csv") << "0\n1\n1\n";
  std::ofstream(dir / "splits.json")
      << R"({"train":[0,1],"val":[1],"test":[],"directed":false,"num_classes":2})";
  EXPECT_THROW(load_dataset(dir), ConfigError);
}

TEST(DatasetIo, ClassAbsentFromTrainRejected) {
  auto dir = temp_dir("load_absent");
  std::ofstream(dir / "edges.tsv") << "0\t1\n";
  std::ofstream(dir / "features.csv") << "0\n0\n0\n";
  std::ofstream(dir / "labels.csv") << "0\n1\n1\n";
  std::ofstream(dir / "splits.json")
      << R"({"train":[0],"val":[1],"test":[2],"directed":false,"num_classes":2})";
  EXPECT_THROW(load_dataset(dir), ConfigError);
}

TEST(DatasetIo, RoundTripReproducesDataset) {
  auto cfg = eftest::two_regime_config(3, 300);
  auto ds = generate_synthetic(cfg);
  auto dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  EXPECT_EQ(back.graph.num_nodes, ds.graph.num_nodes);
  EXPECT_EQ(back.graph.out.targets, ds.graph.out.targets);
  EXPECT_EQ(back.graph.out.offsets, ds.graph.out.offsets);
  EXPECT_EQ(back.graph.labels, ds.graph.labels);
  EXPECT_EQ(back.graph.directed, ds.graph.directed);
  EXPECT_TRUE(back.graph.features.isApprox(ds.graph.features, 0.0));
  EXPECT_EQ(back.train_mask, ds.train_mask);
  EXPECT_EQ(back.val_mask, ds.val_mask);
  EXPECT_EQ(back.test_mask, ds.test_mask);

  // Second hop: serializer output is already canonical.
  auto dir2 = temp_dir("roundtrip2");
  save_dataset(back, dir2);
  auto again = load_dataset(dir2);
  EXPECT_TRUE(again.graph.features.isApprox(ds.graph.features, 0.0));
  EXPECT_EQ(again.graph.out.targets, ds.graph.out.targets);
}

TEST(DatasetIo, DirectedRoundTrip) {
  auto ds = generate_synthetic(eftest::label_coupled_config(1, 300));
  auto dir = temp_dir("roundtrip_dir");
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  EXPECT_TRUE(back.graph.directed);
  EXPECT_EQ(back.graph.out.targets, ds.graph.out.targets);
  EXPECT_EQ(back.graph.in.targets, ds.graph.in.targets);
}

TEST(Dataset, ValidationCatchesBadMasks) {
  auto ds = path3_dataset();
  EXPECT_NO_THROW(validate_dataset(ds));
  ds.val_mask[0] = 1;  // overlaps train
  EXPECT_THROW(validate_dataset(ds), ConfigError);
}
