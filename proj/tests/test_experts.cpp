#include "expertforge/experts.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "test_util.hpp"

using namespace expertforge;

namespace {

Dataset tiny_dataset(NodeId n, std::uint64_t seed, bool directed = false) {
  auto g = eftest::random_labeled_graph(n, 0.2, 2, seed, directed);
  // give features some class signal so training moves
  for (NodeId i = 0; i < n; ++i)
    g.features(i, 0) += g.labels[static_cast<std::size_t>(i)] == 0 ? 1.0 : -1.0;
  Dataset ds;
  ds.graph = std::move(g);
  auto masks = random_masks(n, {0.5, 0.25, 0.25}, ds.graph.labels, seed + 1);
  ds.train_mask = masks[0];
  ds.val_mask = masks[1];
  ds.test_mask = masks[2];
  return ds;
}

ExpertConfig quick_config(int depth, Filter filter, Skip skip, std::uint64_t seed) {
  ExpertConfig cfg;
  cfg.depth = depth;
  cfg.filter = filter;
  cfg.skip = skip;
  cfg.hidden_dim = 8;
  cfg.dropout = 0.0;
  cfg.epochs = 40;
  cfg.patience = 0;
  cfg.seed = seed;
  return cfg;
}

bool params_equal(const nn::Params<float>& a, const nn::Params<float>& b) {
  if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size())
    return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i)
    if (std::memcmp(a.weights[i].data(), b.weights[i].data(),
                    sizeof(float) * static_cast<std::size_t>(a.weights[i].size())) != 0)
      return false;
  for (std::size_t i = 0; i < a.biases.size(); ++i)
    if (std::memcmp(a.biases[i].data(), b.biases[i].data(),
                    sizeof(float) * static_cast<std::size_t>(a.biases[i].size())) != 0)
      return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// config validation
// ---------------------------------------------------------------------------

TEST(ExpertConfig, DepthZeroForbidsFilterAndSkip) {
  ExpertConfig cfg = quick_config(0, Filter::Identity, Skip::None, 1);
  EXPECT_NO_THROW(validate(cfg, false));
  cfg.filter = Filter::SymNorm;
  EXPECT_THROW(validate(cfg, false), ConfigError);
  cfg.filter = Filter::Identity;
  cfg.skip = Skip::ResCat;
  EXPECT_THROW(validate(cfg, false), ConfigError);
}

TEST(ExpertConfig, DirRequiresDirectedGraph) {
  ExpertConfig cfg = quick_config(2, Filter::DirectedPair, Skip::None, 1);
  EXPECT_NO_THROW(validate(cfg, true));
  EXPECT_THROW(validate(cfg, false), ConfigError);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

TEST(Forward, DropoutZeroTrainEqualsEval) {
  auto ds = tiny_dataset(12, 2);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::None, 3);
  auto prop = build_propagation(ds.graph, cfg.filter);
  auto params = nn::glorot_init<double>(cfg, ds.graph.feature_dim(), 2, cfg.seed);
  Eigen::MatrixXd x = ds.graph.features;
  RngStream rng(cfg.seed, "dropout", 0);
  auto train_pass = nn::forward<double>(params, cfg, prop, x, true, &rng);
  auto eval_pass = nn::forward<double>(params, cfg, prop, x, false);
  EXPECT_TRUE(train_pass.logits.isApprox(eval_pass.logits, 0.0));
}

TEST(Forward, EvalIsBitwiseReproducible) {
  auto ds = tiny_dataset(12, 4);
  auto cfg = quick_config(1, Filter::RwNorm, Skip::ResCat, 5);
  auto prop = build_propagation(ds.graph, cfg.filter);
  auto params = nn::glorot_init<float>(cfg, ds.graph.feature_dim(), 2, cfg.seed);
  Eigen::MatrixXf x = ds.graph.features.cast<float>();
  auto a = nn::forward<float>(params, cfg, prop, x, false);
  auto b = nn::forward<float>(params, cfg, prop, x, false);
  EXPECT_EQ(0, std::memcmp(a.logits.data(), b.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(a.logits.size())));
}

TEST(Forward, IdentityConstructedCase) {
  // L=1, identity filter, W1 = identity block, zero bias: hidden = relu(X),
  // head = identity slice -> logits = relu(X) columns.
  ExpertConfig cfg = quick_config(1, Filter::Identity, Skip::None, 1);
  cfg.hidden_dim = 2;
  Eigen::MatrixXd x(3, 2);
  x << 1.0, -2.0, -0.5, 0.25, 2.0, 1.0;
  auto g = make_graph(3, {{0, 1}}, false, x, {0, 1, 0}, 2);
  auto prop = build_propagation(g, cfg.filter);
  nn::Params<double> params;
  params.weights = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
  params.biases = {Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 2)};
  auto out = nn::forward<double>(params, cfg, prop, x, false);
  Eigen::MatrixXd expect = x.cwiseMax(0.0);
  EXPECT_TRUE(out.logits.isApprox(expect, 1e-15));
}

// ---------------------------------------------------------------------------
// gradient check (subset: full grid runs in acceptance)
// ---------------------------------------------------------------------------

TEST(GradientCheck, MlpDepthZero) {
  auto g = eftest::random_labeled_graph(8, 0.3, 2, 7);
  auto cfg = quick_config(0, Filter::Identity, Skip::None, 7);
  auto rep = gradient_check(cfg, g);
  EXPECT_LT(rep.max_rel_err, 1e-6);
}

TEST(GradientCheck, SymNormResCatDepthTwo) {
  auto g = eftest::random_labeled_graph(16, 0.25, 3, 9);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::ResCat, 9);
  auto rep = gradient_check(cfg, g);
  EXPECT_LT(rep.max_rel_err, 1e-5);
}

TEST(GradientCheck, DirectedPairDepthOne) {
  auto g = eftest::random_labeled_graph(14, 0.25, 2, 11, /*directed=*/true);
  auto cfg = quick_config(1, Filter::DirectedPair, Skip::None, 11);
  auto rep = gradient_check(cfg, g);
  EXPECT_LT(rep.max_rel_err, 1e-5);
}

TEST(GradientCheck, WithDropoutFixedMask) {
  auto g = eftest::random_labeled_graph(10, 0.3, 2, 13);
  auto cfg = quick_config(1, Filter::SymNorm, Skip::None, 13);
  cfg.dropout = 0.3;
  auto rep = gradient_check(cfg, g);
  EXPECT_LT(rep.max_rel_err, 1e-5);
}

TEST(GradientCheck, LargeGraphRejected) {
  auto g = eftest::random_labeled_graph(80, 0.1, 2, 1);
  EXPECT_THROW(gradient_check(quick_config(0, Filter::Identity, Skip::None, 1), g),
               ConfigError);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TEST(TrainExpert, SeparableMlpReachesPerfectTrainAccuracy) {
  // linearly separable features, no graph signal needed
  const NodeId n = 40;
  Eigen::MatrixXd x(n, 2);
  std::vector<std::int32_t> labels(n);
  for (NodeId i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2;
    x(i, 0) = (i % 2 == 0) ? 1.0 + 0.01 * i : -1.0 - 0.01 * i;
    x(i, 1) = 0.1;
  }
  Dataset ds;
  ds.graph = make_graph(n, {}, false, x, labels, 2);
  ds.train_mask.assign(n, 1);
  ds.val_mask.assign(n, 0);
  ds.test_mask.assign(n, 0);
  ExpertConfig cfg = quick_config(0, Filter::Identity, Skip::None, 21);
  cfg.epochs = 200;
  cfg.dropout = 0.0;
  cfg.weight_decay = 0.0;
  auto expert = train_expert(ds, cfg);
  EXPECT_DOUBLE_EQ(accuracy_on_mask(expert.logits, ds.graph.labels, ds.train_mask), 1.0);
}

TEST(TrainExpert, SameSeedBitwiseIdenticalLogits) {
  auto ds = tiny_dataset(30, 31);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::None, 33);
  cfg.dropout = 0.4;
  auto a = train_expert(ds, cfg);
  auto b = train_expert(ds, cfg);
  ASSERT_EQ(a.logits.size(), b.logits.size());
  EXPECT_EQ(0, std::memcmp(a.logits.data(), b.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(a.logits.size())));
  EXPECT_TRUE(params_equal(a.params, b.params));
}

TEST(TrainExpert, DifferentSeedsDisagreeSomewhere) {
  auto ds = tiny_dataset(40, 37);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::None, 1);
  auto a = train_expert(ds, cfg);
  cfg.seed = 2;
  auto b = train_expert(ds, cfg);
  EXPECT_NE(0, std::memcmp(a.logits.data(), b.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(a.logits.size())));
}

TEST(TrainExpert, SingleClassMaskRejected) {
  auto ds = tiny_dataset(20, 41);
  Mask only_class0(20, 0);
  for (NodeId i = 0; i < 20; ++i)
    if (ds.graph.labels[static_cast<std::size_t>(i)] == 0 && ds.train_mask[static_cast<std::size_t>(i)])
      only_class0[static_cast<std::size_t>(i)] = 1;
  auto cfg = quick_config(1, Filter::SymNorm, Skip::None, 1);
  EXPECT_THROW(train_expert(ds, cfg, &only_class0), ConfigError);
}

TEST(TrainExpert, BestValCheckpointIsArgmaxOfHistory) {
  auto ds = tiny_dataset(40, 43);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::None, 5);
  cfg.epochs = 60;
  auto e = train_expert(ds, cfg);
  ASSERT_FALSE(e.history.empty());
  double best = -1;
  int best_epoch = -1;
  for (std::size_t i = 0; i < e.history.size(); ++i)
    if (e.history[i].val_acc > best) {
      best = e.history[i].val_acc;
      best_epoch = static_cast<int>(i);
    }
  EXPECT_EQ(e.best_epoch, best_epoch);  // earliest epoch wins ties
  EXPECT_DOUBLE_EQ(e.best_val_acc, best);
  EXPECT_DOUBLE_EQ(accuracy_on_mask(e.logits, ds.graph.labels, ds.val_mask), best);
}

TEST(TrainExpert, LogitsReproducibleFromParams) {
  auto ds = tiny_dataset(25, 47);
  auto e = train_expert(ds, quick_config(1, Filter::RwNorm, Skip::None, 3));
  auto z = predict(e, ds.graph);
  EXPECT_EQ(0, std::memcmp(z.data(), e.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(z.size())));
}

TEST(TrainExpert, DepthZeroIgnoresEdgeRewiring) {
  auto ds = tiny_dataset(30, 53);
  auto cfg = quick_config(0, Filter::Identity, Skip::None, 9);
  auto a = train_expert(ds, cfg);
  // rewire: replace edges with a ring
  EdgeList ring;
  for (NodeId i = 0; i < 30; ++i) ring.emplace_back(i, static_cast<NodeId>((i + 1) % 30));
  Dataset rewired = ds;
  rewired.graph = make_graph(30, ring, false, ds.graph.features, ds.graph.labels,
                             ds.graph.num_classes);
  auto b = train_expert(rewired, cfg);
  EXPECT_EQ(0, std::memcmp(a.logits.data(), b.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(a.logits.size())));
}

TEST(TrainExpert, ForwardBackwardPermutationEquivariantInDouble) {
  auto g = eftest::random_labeled_graph(20, 0.25, 2, 59);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::ResCat, 7);
  auto perm = [&](NodeId i) { return static_cast<NodeId>((i * 3 + 5) % 20); };
  EdgeList edges;
  for (NodeId u = 0; u < 20; ++u)
    for (NodeId v : g.out.row(u))
      if (u < v) edges.emplace_back(perm(u), perm(v));
  std::vector<std::int32_t> labels(20);
  Eigen::MatrixXd feats(20, g.features.cols());
  for (NodeId i = 0; i < 20; ++i) {
    labels[static_cast<std::size_t>(perm(i))] = g.labels[static_cast<std::size_t>(i)];
    feats.row(perm(i)) = g.features.row(i);
  }
  auto gp = make_graph(20, edges, false, feats, labels, g.num_classes);

  auto params = nn::glorot_init<double>(cfg, g.feature_dim(), 2, cfg.seed);
  auto prop = build_propagation(g, cfg.filter);
  auto prop_p = build_propagation(gp, cfg.filter);
  Eigen::MatrixXd x = g.features, xp = gp.features;
  auto out = nn::forward<double>(params, cfg, prop, x, false);
  auto out_p = nn::forward<double>(params, cfg, prop_p, xp, false);
  for (NodeId i = 0; i < 20; ++i)
    for (Eigen::Index c = 0; c < 2; ++c)
      EXPECT_NEAR(out.logits(i, c), out_p.logits(perm(i), c), 1e-9);

  Mask mask(20, 1), mask_p(20, 1);
  auto lg = nn::masked_cross_entropy<double>(out.logits, g.labels, mask);
  auto lg_p = nn::masked_cross_entropy<double>(out_p.logits, gp.labels, mask_p);
  EXPECT_NEAR(lg.loss, lg_p.loss, 1e-10);
  auto grads = nn::backward<double>(params, cfg, prop, x, out, lg.dlogits);
  auto grads_p = nn::backward<double>(params, cfg, prop_p, xp, out_p, lg_p.dlogits);
  for (std::size_t t = 0; t < grads.weights.size(); ++t)
    EXPECT_TRUE(grads.weights[t].isApprox(grads_p.weights[t], 1e-8));
}

TEST(TrainExpert, ShortTrainingEquivariantPredictions) {
  // float drift allowed; argmax predictions should still agree nearly everywhere
  auto ds = tiny_dataset(30, 61);
  auto cfg = quick_config(2, Filter::SymNorm, Skip::None, 11);
  cfg.epochs = 25;
  auto base = train_expert(ds, cfg);

  auto perm = [&](NodeId i) { return static_cast<NodeId>((i * 7 + 11) % 30); };
  EdgeList edges;
  for (NodeId u = 0; u < 30; ++u)
    for (NodeId v : ds.graph.out.row(u))
      if (u < v) edges.emplace_back(perm(u), perm(v));
  std::vector<std::int32_t> labels(30);
  Eigen::MatrixXd feats(30, ds.graph.features.cols());
  Dataset dsp;
  dsp.train_mask.assign(30, 0);
  dsp.val_mask.assign(30, 0);
  dsp.test_mask.assign(30, 0);
  for (NodeId i = 0; i < 30; ++i) {
    auto j = static_cast<std::size_t>(perm(i));
    labels[j] = ds.graph.labels[static_cast<std::size_t>(i)];
    feats.row(perm(i)) = ds.graph.features.row(i);
    dsp.train_mask[j] = ds.train_mask[static_cast<std::size_t>(i)];
    dsp.val_mask[j] = ds.val_mask[static_cast<std::size_t>(i)];
    dsp.test_mask[j] = ds.test_mask[static_cast<std::size_t>(i)];
  }
  dsp.graph = make_graph(30, edges, false, feats, labels, ds.graph.num_classes);
  auto permuted = train_expert(dsp, cfg);

  auto pred_base = argmax_classes(base.logits);
  auto pred_perm = argmax_classes(permuted.logits);
  int agree = 0;
  for (NodeId i = 0; i < 30; ++i)
    agree += (pred_base[static_cast<std::size_t>(i)] ==
              pred_perm[static_cast<std::size_t>(perm(i))]);
  EXPECT_GE(agree, 28);
}

TEST(TrainExpert, DivergenceRaisesInvariantError) {
  auto ds = tiny_dataset(20, 67);
  auto cfg = quick_config(4, Filter::SymNorm, Skip::None, 3);
  cfg.learning_rate = 1e12;  // one step pushes float activations past overflow
  cfg.epochs = 50;
  EXPECT_THROW(train_expert(ds, cfg), InvariantError);
}

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

TEST(FineTune, ZeroEpochsKeepsParameters) {
  auto ds = tiny_dataset(30, 71);
  auto base = train_expert(ds, quick_config(1, Filter::SymNorm, Skip::None, 5));
  FineTuneOptions opt;
  opt.epochs = 0;
  Mask all(30, 1);
  auto ft = fine_tune(base, ds, all, opt);
  EXPECT_TRUE(params_equal(base.params, ft.params));
  EXPECT_EQ(0, std::memcmp(base.logits.data(), ft.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(base.logits.size())));
}

TEST(FineTune, FullMaskEqualsContinuedTraining) {
  auto ds = tiny_dataset(30, 73);
  auto base = train_expert(ds, quick_config(1, Filter::SymNorm, Skip::None, 7));
  Mask all(30, 1);
  FineTuneOptions opt;
  opt.epochs = 10;
  opt.seed = 99;
  auto ft = fine_tune(base, ds, all, opt);
  // continued training by hand: same net, same masks, same stream
  ExpertConfig cont_cfg = base.config;
  cont_cfg.learning_rate = base.config.learning_rate * 0.1;
  auto prop = build_propagation(ds.graph, cont_cfg.filter);
  auto outcome = detail::run_training<float>(ds.graph, prop, cont_cfg,
                                             base.params, ds.train_mask, ds.val_mask,
                                             99, 10, cont_cfg.learning_rate, false);
  EXPECT_TRUE(params_equal(ft.params, outcome.best_params));
}

TEST(FineTune, EmptyDomainRejected) {
  auto ds = tiny_dataset(20, 79);
  auto base = train_expert(ds, quick_config(1, Filter::SymNorm, Skip::None, 9));
  Mask empty(20, 0);
  EXPECT_THROW(fine_tune(base, ds, empty), ConfigError);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, SaveLoadRoundTrip) {
  auto ds = tiny_dataset(25, 83);
  auto e = train_expert(ds, quick_config(2, Filter::SymNorm, Skip::ResCat, 13));
  auto path = std::filesystem::temp_directory_path() / "expertforge_ckpt_test.bin";
  save_expert(e, path);
  auto back = load_expert(path);
  EXPECT_EQ(back.config.depth, e.config.depth);
  EXPECT_EQ(back.config.filter, e.config.filter);
  EXPECT_EQ(back.num_nodes, e.num_nodes);
  EXPECT_EQ(back.dataset_fingerprint, e.dataset_fingerprint);
  EXPECT_TRUE(params_equal(back.params, e.params));
  auto z = predict(back, ds.graph);
  EXPECT_EQ(0, std::memcmp(z.data(), e.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(z.size())));
}

TEST(Checkpoint, LogitsCsvRoundTrip) {
  auto ds = tiny_dataset(15, 89);
  auto e = train_expert(ds, quick_config(0, Filter::Identity, Skip::None, 15));
  auto path = std::filesystem::temp_directory_path() / "expertforge_logits_test.csv";
  write_logits_csv(e.logits, path);
  auto back = read_logits_csv(path);
  ASSERT_EQ(back.rows(), e.logits.rows());
  ASSERT_EQ(back.cols(), e.logits.cols());
  EXPECT_EQ(0, std::memcmp(back.data(), e.logits.data(),
                           sizeof(float) * static_cast<std::size_t>(back.size())));
}
