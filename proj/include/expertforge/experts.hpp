#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "expertforge/graph.hpp"
#include "expertforge/propagation.hpp"
#include "expertforge/rng.hpp"

namespace expertforge {

enum class Skip { None, ResCat };

inline const char* skip_name(Skip s) { return s == Skip::None ? "none" : "res-cat"; }

inline Skip skip_from_name(const std::string& s) {
  if (s == "none") return Skip::None;
  if (s == "res-cat" || s == "rescat") return Skip::ResCat;
  throw ConfigError("unknown skip '" + s + "'");
}

/// One point in the expert design space: depth 0 is a plain one-hidden-layer
/// MLP (no propagation, so filter/skip must be identity/none).
struct ExpertConfig {
  int depth = 2;  // propagation layers, 0..4
  Filter filter = Filter::SymNorm;
  Skip skip = Skip::None;
  int hidden_dim = 32;
  double dropout = 0.5;
  int epochs = 300;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  int patience = 50;  // epochs without val improvement before stopping; <= 0 disables
  std::uint64_t seed = 0;
};

inline void validate(const ExpertConfig& cfg, bool graph_directed) {
  if (cfg.depth < 0 || cfg.depth > 4)
    throw ConfigError("expert depth must lie in 0..4");
  if (cfg.depth == 0 && (cfg.filter != Filter::Identity || cfg.skip != Skip::None))
    throw ConfigError("depth 0 experts are pure MLPs: filter must be identity, skip none");
  if (cfg.filter == Filter::DirectedPair && !graph_directed)
    throw ConfigError("directed-pair filter requires a directed graph");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw ConfigError("dropout must lie in [0,1)");
  if (cfg.hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
}

// Adam constants are fixed project-wide; the config only varies lr/decay.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

namespace nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Params {
  std::vector<Mat<S>> weights;  // hidden layers then classifier head
  std::vector<Mat<S>> biases;   // 1 x width each

  template <typename T>
  Params<T> cast() const {
    Params<T> out;
    for (const auto& w : weights) out.weights.push_back(w.template cast<T>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<T>());
    return out;
  }

  double squared_norm() const {
    double acc = 0;
    for (const auto& w : weights) acc += w.template cast<double>().squaredNorm();
    for (const auto& b : biases) acc += b.template cast<double>().squaredNorm();
    return acc;
  }
};

/// Widths of the concatenated input to each hidden layer. depth 0 collapses
/// to a single MLP hidden layer fed by raw features.
struct LayerPlan {
  int hidden_layers = 1;
  int parts = 1;          // propagated fan plus optional res-cat identity part
  bool propagate = true;  // false for depth 0
  std::vector<Eigen::Index> in_widths;
  Eigen::Index hidden = 0;

  static LayerPlan make(const ExpertConfig& cfg, Eigen::Index in_dim) {
    LayerPlan plan;
    plan.hidden = cfg.hidden_dim;
    plan.propagate = cfg.depth >= 1;
    plan.hidden_layers = std::max(cfg.depth, 1);
    int fan = cfg.filter == Filter::DirectedPair ? 2 : 1;
    plan.parts = plan.propagate ? fan + (cfg.skip == Skip::ResCat ? 1 : 0) : 1;
    for (int l = 0; l < plan.hidden_layers; ++l) {
      Eigen::Index base = (l == 0) ? in_dim : plan.hidden;
      plan.in_widths.push_back(base * plan.parts);
    }
    return plan;
  }
};

template <typename S>
Params<S> glorot_init(const ExpertConfig& cfg, Eigen::Index in_dim,
                      std::int32_t num_classes, std::uint64_t seed) {
  LayerPlan plan = LayerPlan::make(cfg, in_dim);
  Params<S> p;
  auto draw = [&](Eigen::Index rows, Eigen::Index cols, std::uint64_t layer) {
    Mat<S> w(rows, cols);
    RngStream rng(seed, "init", layer);
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        w(i, j) = static_cast<S>(rng.uniform(-limit, limit));
    return w;
  };
  for (int l = 0; l < plan.hidden_layers; ++l) {
    p.weights.push_back(draw(plan.in_widths[static_cast<std::size_t>(l)], plan.hidden,
                             static_cast<std::uint64_t>(l)));
    p.biases.push_back(Mat<S>::Zero(1, plan.hidden));
  }
  p.weights.push_back(
      draw(plan.hidden, num_classes, static_cast<std::uint64_t>(plan.hidden_layers)));
  p.biases.push_back(Mat<S>::Zero(1, num_classes));
  return p;
}

template <typename S>
struct ForwardCache {
  std::vector<Mat<S>> inputs;  // concatenated layer inputs Z_l
  std::vector<Mat<S>> pre;     // pre-activations A_l
  std::vector<Mat<S>> post;    // H_l after relu (and dropout in train mode)
  std::vector<Mat<S>> dropmask;  // scale masks; empty rows when unused
  Mat<S> logits;
};

/// One full pass. In train mode with dropout > 0 the masks are drawn from
/// `drop_rng` in row-major order, making the pass replayable.
template <typename S>
ForwardCache<S> forward(const Params<S>& params, const ExpertConfig& cfg,
                        const PropagationOperator& prop, const Mat<S>& x, bool train,
                        RngStream* drop_rng = nullptr) {
  LayerPlan plan = LayerPlan::make(cfg, x.cols());
  ForwardCache<S> cache;
  const bool use_dropout = train && cfg.dropout > 0.0;
  if (use_dropout && !drop_rng)
    throw InvariantError("train-mode forward with dropout needs an rng stream");

  Mat<S> h = x;
  for (int l = 0; l < plan.hidden_layers; ++l) {
    Mat<S> z;
    if (!plan.propagate || cfg.filter == Filter::Identity) {
      if (plan.propagate && cfg.skip == Skip::ResCat) {
        z.resize(h.rows(), h.cols() * 2);
        z << h, h;
      } else {
        z = h;
      }
    } else {
      std::vector<Mat<S>> parts;
      for (const auto& op : prop.ops) parts.push_back(op.apply(h));
      if (cfg.skip == Skip::ResCat) parts.push_back(h);
      z.resize(h.rows(), h.cols() * static_cast<Eigen::Index>(parts.size()));
      Eigen::Index off = 0;
      for (const auto& part : parts) {
        z.middleCols(off, h.cols()) = part;
        off += h.cols();
      }
    }
    Mat<S> a = z * params.weights[static_cast<std::size_t>(l)];
    a.rowwise() += params.biases[static_cast<std::size_t>(l)].row(0);
    Mat<S> r = a.cwiseMax(S(0));
    if (use_dropout) {
      Mat<S> mask(r.rows(), r.cols());
      const S scale = static_cast<S>(1.0 / (1.0 - cfg.dropout));
      for (Eigen::Index i = 0; i < r.rows(); ++i)
        for (Eigen::Index j = 0; j < r.cols(); ++j)
          mask(i, j) = drop_rng->uniform() < cfg.dropout ? S(0) : scale;
      r = r.cwiseProduct(mask);
      cache.dropmask.push_back(std::move(mask));
    } else {
      cache.dropmask.emplace_back();
    }
    cache.inputs.push_back(std::move(z));
    cache.pre.push_back(std::move(a));
    cache.post.push_back(r);
    h = std::move(r);
  }
  cache.logits = h * params.weights.back();
  cache.logits.rowwise() += params.biases.back().row(0);
  return cache;
}

template <typename S>
struct LossGrad {
  double loss = 0;
  Mat<S> dlogits;
};

/// Mean softmax cross-entropy over the mask, numerically stable; rows
/// outside the mask contribute nothing to loss or gradient.
template <typename S>
LossGrad<S> masked_cross_entropy(const Mat<S>& logits,
                                 const std::vector<std::int32_t>& y, const Mask& mask) {
  LossGrad<S> out;
  out.dlogits = Mat<S>::Zero(logits.rows(), logits.cols());
  std::size_t count = mask_count(mask);
  if (count == 0) throw ConfigError("cross-entropy over an empty mask");
  double total = 0;
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      mx = std::max(mx, static_cast<double>(logits(i, c)));
    double denom = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      denom += std::exp(static_cast<double>(logits(i, c)) - mx);
    double logz = mx + std::log(denom);
    const auto yi = y[static_cast<std::size_t>(i)];
    total += logz - static_cast<double>(logits(i, yi));
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      double p = std::exp(static_cast<double>(logits(i, c)) - logz);
      out.dlogits(i, c) = static_cast<S>((p - (c == yi ? 1.0 : 0.0)) * inv);
    }
  }
  out.loss = total * inv;
  return out;
}

/// Reverse-mode pass mirroring `forward`; returns parameter gradients of the
/// data loss (weight decay is added by the caller so the same code serves
/// finite-difference checks).
template <typename S>
Params<S> backward(const Params<S>& params, const ExpertConfig& cfg,
                   const PropagationOperator& prop, const Mat<S>& x,
                   const ForwardCache<S>& cache, const Mat<S>& dlogits) {
  LayerPlan plan = LayerPlan::make(cfg, x.cols());
  Params<S> g;
  g.weights.resize(params.weights.size());
  g.biases.resize(params.biases.size());

  const Mat<S>& h_last = cache.post.back();
  g.weights.back() = h_last.transpose() * dlogits;
  g.biases.back() = dlogits.colwise().sum();
  Mat<S> dh = dlogits * params.weights.back().transpose();

  for (int l = plan.hidden_layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    if (cache.dropmask[lu].size() > 0) dh = dh.cwiseProduct(cache.dropmask[lu]);
    Mat<S> da = (cache.pre[lu].array() > S(0)).template cast<S>().matrix().cwiseProduct(dh);
    g.weights[lu] = cache.inputs[lu].transpose() * da;
    g.biases[lu] = da.colwise().sum();
    if (l == 0) break;  // no gradient w.r.t. the raw features needed
    Mat<S> dz = da * params.weights[lu].transpose();
    const Eigen::Index w = cache.post[lu - 1].cols();
    Mat<S> dprev = Mat<S>::Zero(dz.rows(), w);
    if (!plan.propagate || cfg.filter == Filter::Identity) {
      dprev = dz.middleCols(0, w);
      if (plan.propagate && cfg.skip == Skip::ResCat) dprev += dz.middleCols(w, w);
    } else {
      Eigen::Index off = 0;
      for (const auto& op_t : prop.ops_t) {
        dprev += op_t.apply(dz.middleCols(off, w));
        off += w;
      }
      if (cfg.skip == Skip::ResCat) dprev += dz.middleCols(off, w);
    }
    dh = std::move(dprev);
  }
  return g;
}

template <typename S>
struct Adam {
  double lr;
  Params<S> m, v;
  long t = 0;

  explicit Adam(const Params<S>& shape, double learning_rate) : lr(learning_rate) {
    for (const auto& w : shape.weights) {
      m.weights.push_back(Mat<S>::Zero(w.rows(), w.cols()));
      v.weights.push_back(Mat<S>::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : shape.biases) {
      m.biases.push_back(Mat<S>::Zero(b.rows(), b.cols()));
      v.biases.push_back(Mat<S>::Zero(b.rows(), b.cols()));
    }
  }

  void step(Params<S>& p, const Params<S>& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    auto update = [&](Mat<S>& theta, Mat<S>& mm, Mat<S>& vv, const Mat<S>& grad) {
      mm = static_cast<S>(kAdamBeta1) * mm + static_cast<S>(1.0 - kAdamBeta1) * grad;
      vv = static_cast<S>(kAdamBeta2) * vv +
           static_cast<S>(1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
      for (Eigen::Index i = 0; i < theta.rows(); ++i)
        for (Eigen::Index j = 0; j < theta.cols(); ++j) {
          double mhat = static_cast<double>(mm(i, j)) / bc1;
          double vhat = static_cast<double>(vv(i, j)) / bc2;
          theta(i, j) -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + kAdamEps));
        }
    };
    for (std::size_t i = 0; i < p.weights.size(); ++i)
      update(p.weights[i], m.weights[i], v.weights[i], g.weights[i]);
    for (std::size_t i = 0; i < p.biases.size(); ++i)
      update(p.biases[i], m.biases[i], v.biases[i], g.biases[i]);
  }
};

}  // namespace nn

// ---------------------------------------------------------------------------
// Prediction helpers
// ---------------------------------------------------------------------------

/// Argmax with the lowest class id winning ties, so correctness is
/// deterministic everywhere it is consumed.
template <typename Derived>
std::vector<std::int32_t> argmax_classes(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return out;
}

template <typename Derived>
double accuracy_on_mask(const Eigen::MatrixBase<Derived>& logits,
                        const std::vector<std::int32_t>& y, const Mask& mask) {
  std::size_t total = 0, correct = 0;
  auto pred = argmax_classes(logits);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    correct += (pred[i] == y[i]);
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Trained expert
// ---------------------------------------------------------------------------

struct TrainHistoryEntry {
  double train_loss = 0;
  double val_acc = 0;
};

struct Expert {
  ExpertConfig config;
  Eigen::Index in_dim = 0;
  std::int32_t num_classes = 0;
  NodeId num_nodes = 0;
  std::uint64_t dataset_fingerprint = 0;
  nn::Params<float> params;
  Eigen::MatrixXf logits;  // full-graph eval logits from the best-val epoch
  std::vector<TrainHistoryEntry> history;
  int best_epoch = -1;
  double best_val_acc = 0;
};

/// Recomputes full-graph eval-mode logits from stored parameters.
inline Eigen::MatrixXf predict(const Expert& expert, const Graph& g) {
  PropagationOperator prop = build_propagation(g, expert.config.filter);
  Eigen::MatrixXf x = g.features.cast<float>();
  auto cache = nn::forward<float>(expert.params, expert.config, prop, x, /*train=*/false);
  return cache.logits;
}

namespace detail {

template <typename S>
struct TrainOutcome {
  nn::Params<S> best_params;
  std::vector<TrainHistoryEntry> history;
  int best_epoch = -1;
  double best_val_acc = 0;
};

/// Core loop shared by train_expert and fine_tune: Adam on masked
/// cross-entropy plus L2, best-validation-accuracy checkpointing (ties keep
/// the earliest epoch), optional patience-based early stopping.
template <typename S>
TrainOutcome<S> run_training(const Graph& g, const PropagationOperator& prop,
                             const ExpertConfig& cfg, nn::Params<S> params,
                             const Mask& train_mask, const Mask& val_mask,
                             std::uint64_t seed, int epochs, double lr,
                             bool require_two_classes) {
  if (mask_count(train_mask) == 0) throw ConfigError("effective train mask is empty");
  if (require_two_classes) {
    std::int32_t first = -1;
    bool two = false;
    for (std::size_t i = 0; i < train_mask.size() && !two; ++i) {
      if (!train_mask[i]) continue;
      if (first < 0)
        first = g.labels[i];
      else if (g.labels[i] != first)
        two = true;
    }
    if (!two) throw ConfigError("train mask contains a single class");
  }

  nn::Mat<S> x = g.features.cast<S>();
  nn::Adam<S> adam(params, lr);
  TrainOutcome<S> out;
  out.best_params = params;  // epoch -1 fallback when epochs == 0
  const bool have_val = mask_count(val_mask) > 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    RngStream drop_rng(seed, "dropout", static_cast<std::uint64_t>(epoch));
    auto cache = nn::forward<S>(params, cfg, prop, x, /*train=*/true, &drop_rng);
    auto lg = nn::masked_cross_entropy<S>(cache.logits, g.labels, train_mask);
    double loss = lg.loss + 0.5 * cfg.weight_decay * params.squared_norm();
    if (!std::isfinite(loss))
      throw InvariantError("training diverged at epoch " + std::to_string(epoch) +
                           " (non-finite loss)");
    auto grads = nn::backward<S>(params, cfg, prop, x, cache, lg.dlogits);
    if (cfg.weight_decay > 0) {
      for (std::size_t i = 0; i < params.weights.size(); ++i)
        grads.weights[i] += static_cast<S>(cfg.weight_decay) * params.weights[i];
      for (std::size_t i = 0; i < params.biases.size(); ++i)
        grads.biases[i] += static_cast<S>(cfg.weight_decay) * params.biases[i];
    }
    adam.step(params, grads);

    double val_acc = 0;
    if (have_val) {
      auto eval_cache = nn::forward<S>(params, cfg, prop, x, /*train=*/false);
      val_acc = accuracy_on_mask(eval_cache.logits, g.labels, val_mask);
    }
    out.history.push_back({loss, val_acc});
    const bool improved = have_val ? (val_acc > out.best_val_acc || out.best_epoch < 0)
                                   : true;  // no val: keep the latest epoch
    if (improved) {
      out.best_val_acc = val_acc;
      out.best_epoch = epoch;
      out.best_params = params;
    }
    if (cfg.patience > 0 && have_val && epoch - out.best_epoch >= cfg.patience) break;
  }
  return out;
}

}  // namespace detail

/// Trains a fresh expert on ds.train_mask (or the override, which the caller
/// intersects however it likes). Deterministic per (cfg, dataset, seed).
inline Expert train_expert(const Dataset& ds, const ExpertConfig& cfg,
                           const Mask* train_mask_override = nullptr) {
  const Graph& g = ds.graph;
  validate(cfg, g.directed);
  const Mask& train_mask = train_mask_override ? *train_mask_override : ds.train_mask;
  if (train_mask.size() != static_cast<std::size_t>(g.num_nodes))
    throw ConfigError("train mask length mismatch");

  PropagationOperator prop = build_propagation(g, cfg.filter);
  auto params = nn::glorot_init<float>(cfg, g.feature_dim(), g.num_classes, cfg.seed);
  auto outcome = detail::run_training<float>(g, prop, cfg, std::move(params), train_mask,
                                             ds.val_mask, cfg.seed, cfg.epochs,
                                             cfg.learning_rate,
                                             /*require_two_classes=*/true);

  Expert e;
  e.config = cfg;
  e.in_dim = g.feature_dim();
  e.num_classes = g.num_classes;
  e.num_nodes = g.num_nodes;
  e.dataset_fingerprint = g.fingerprint();
  e.params = std::move(outcome.best_params);
  e.history = std::move(outcome.history);
  e.best_epoch = outcome.best_epoch;
  e.best_val_acc = outcome.best_val_acc;
  e.logits = predict(e, g);
  return e;
}

struct FineTuneOptions {
  double lr_scale = 0.1;       // continued optimization runs slower
  double epochs_scale = 0.5;
  std::optional<int> epochs;   // absolute override
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;  // default: derived from the expert's seed
};

/// Continues optimization of a trained expert on train ∩ domain_mask.
/// Validation for checkpointing narrows to val ∩ domain_mask when nonempty.
inline Expert fine_tune(const Expert& expert, const Dataset& ds, const Mask& domain_mask,
                        FineTuneOptions opt = {}) {
  const Graph& g = ds.graph;
  if (g.fingerprint() != expert.dataset_fingerprint)
    throw ConfigError("fine_tune: expert was trained on a different dataset");
  Mask train = mask_and(ds.train_mask, domain_mask);
  if (mask_count(train) == 0)
    throw ConfigError("fine_tune: domain has no training nodes");
  Mask val = mask_and(ds.val_mask, domain_mask);
  if (mask_count(val) == 0) val = ds.val_mask;

  ExpertConfig cfg = expert.config;
  cfg.learning_rate = opt.learning_rate.value_or(cfg.learning_rate * opt.lr_scale);
  cfg.epochs = opt.epochs.value_or(
      static_cast<int>(std::llround(cfg.epochs * opt.epochs_scale)));
  cfg.seed = opt.seed.value_or(derive_seed(expert.config.seed, "finetune"));

  PropagationOperator prop = build_propagation(g, cfg.filter);
  auto outcome = detail::run_training<float>(g, prop, cfg, expert.params, train, val,
                                             cfg.seed, cfg.epochs, cfg.learning_rate,
                                             /*require_two_classes=*/false);
  Expert e;
  e.config = cfg;
  e.in_dim = expert.in_dim;
  e.num_classes = expert.num_classes;
  e.num_nodes = expert.num_nodes;
  e.dataset_fingerprint = expert.dataset_fingerprint;
  if (outcome.best_epoch < 0 && cfg.epochs == 0) {
    e.params = expert.params;  // zero fine-tune epochs: identity
    e.best_epoch = -1;
    e.best_val_acc = expert.best_val_acc;
  } else {
    e.params = std::move(outcome.best_params);
    e.best_epoch = outcome.best_epoch;
    e.best_val_acc = outcome.best_val_acc;
  }
  e.history = std::move(outcome.history);
  e.logits = predict(e, g);
  return e;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
  struct Tensor {
    std::string name;
    double max_rel_err = 0;
  };
  std::vector<Tensor> tensors;
  double max_rel_err = 0;
  bool passed(double tolerance) const { return max_rel_err < tolerance; }
};

/// Compares hand-derived gradients of the full training loss (cross-entropy
/// plus L2) against central finite differences, entry by entry, in double
/// precision. Dropout masks, when enabled, are drawn once and held fixed so
/// the loss stays differentiable.
inline GradCheckReport gradient_check(const ExpertConfig& cfg, const Graph& g,
                                      double fd_step = 1e-5) {
  if (g.num_nodes > 64)
    throw ConfigError("gradient_check expects a small graph (<= 64 nodes)");
  validate(cfg, g.directed);

  // ~70% train mask, derived from the config seed.
  Mask mask(static_cast<std::size_t>(g.num_nodes), 0);
  {
    RngStream rng(cfg.seed, "gradcheck-mask");
    for (auto& m : mask) m = rng.uniform() < 0.7 ? 1 : 0;
    if (mask_count(mask) == 0) mask[0] = 1;
  }

  PropagationOperator prop = build_propagation(g, cfg.filter);
  auto params = nn::glorot_init<double>(cfg, g.feature_dim(), g.num_classes, cfg.seed);
  nn::Mat<double> x = g.features;

  // Fixed dropout masks via a replayable stream (epoch index 0).
  auto make_rng = [&] { return RngStream(cfg.seed, "dropout", 0); };

  auto loss_of = [&](const nn::Params<double>& p) {
    RngStream rng = make_rng();
    auto cache = nn::forward<double>(p, cfg, prop, x, cfg.dropout > 0, &rng);
    auto lg = nn::masked_cross_entropy<double>(cache.logits, g.labels, mask);
    return lg.loss + 0.5 * cfg.weight_decay * p.squared_norm();
  };

  // Analytic gradient.
  nn::Params<double> analytic;
  {
    RngStream rng = make_rng();
    auto cache = nn::forward<double>(params, cfg, prop, x, cfg.dropout > 0, &rng);
    auto lg = nn::masked_cross_entropy<double>(cache.logits, g.labels, mask);
    analytic = nn::backward<double>(params, cfg, prop, x, cache, lg.dlogits);
    for (std::size_t i = 0; i < params.weights.size(); ++i)
      analytic.weights[i] += cfg.weight_decay * params.weights[i];
    for (std::size_t i = 0; i < params.biases.size(); ++i)
      analytic.biases[i] += cfg.weight_decay * params.biases[i];
  }

  GradCheckReport report;
  auto check_tensor = [&](nn::Mat<double>& theta, const nn::Mat<double>& grad,
                          const std::string& name) {
    double worst = 0;
    for (Eigen::Index i = 0; i < theta.rows(); ++i)
      for (Eigen::Index j = 0; j < theta.cols(); ++j) {
        const double orig = theta(i, j);
        theta(i, j) = orig + fd_step;
        double lp = loss_of(params);
        theta(i, j) = orig - fd_step;
        double lm = loss_of(params);
        theta(i, j) = orig;
        double numeric = (lp - lm) / (2 * fd_step);
        double denom = std::max({1e-6, std::abs(numeric), std::abs(grad(i, j))});
        worst = std::max(worst, std::abs(numeric - grad(i, j)) / denom);
      }
    report.tensors.push_back({name, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l)
    check_tensor(params.weights[l], analytic.weights[l], "W" + std::to_string(l));
  for (std::size_t l = 0; l < params.biases.size(); ++l)
    check_tensor(params.biases[l], analytic.biases[l], "b" + std::to_string(l));
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint + logits files
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ExpertConfig& cfg) {
  return {{"depth", cfg.depth},
          {"filter", filter_name(cfg.filter)},
          {"skip", skip_name(cfg.skip)},
          {"hidden_dim", cfg.hidden_dim},
          {"dropout", cfg.dropout},
          {"epochs", cfg.epochs},
          {"learning_rate", cfg.learning_rate},
          {"weight_decay", cfg.weight_decay},
          {"patience", cfg.patience},
          {"seed", cfg.seed}};
}

inline ExpertConfig config_from_json(const nlohmann::json& j) {
  ExpertConfig cfg;
  cfg.depth = j.at("depth").get<int>();
  cfg.filter = filter_from_name(j.at("filter").get<std::string>());
  cfg.skip = skip_from_name(j.at("skip").get<std::string>());
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.patience = j.at("patience").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline constexpr char kCheckpointMagic[] = "EXPERTFORGE-CKPT1\n";

/// Checkpoint layout: magic line, u64 little-endian JSON header length, JSON
/// header (config, shapes, best epoch/val), then the float32 little-endian
/// parameter blob (weights then biases, column-major within each matrix).
inline void save_expert(const Expert& e, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = config_to_json(e.config);
  header["in_dim"] = e.in_dim;
  header["num_classes"] = e.num_classes;
  header["num_nodes"] = e.num_nodes;
  header["dataset_fingerprint"] = e.dataset_fingerprint;
  header["best_epoch"] = e.best_epoch;
  header["best_val_acc"] = e.best_val_acc;
  auto shapes = nlohmann::json::array();
  auto push_shape = [&](const Eigen::MatrixXf& m) {
    shapes.push_back({m.rows(), m.cols()});
  };
  for (const auto& w : e.params.weights) push_shape(w);
  for (const auto& b : e.params.biases) push_shape(b);
  header["num_weight_tensors"] = e.params.weights.size();
  header["shapes"] = shapes;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write checkpoint: " + path.string());
  std::string hs = header.dump();
  f.write(kCheckpointMagic, static_cast<std::streamsize>(sizeof(kCheckpointMagic) - 1));
  std::uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto write_mat = [&](const Eigen::MatrixXf& m) {
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
  };
  for (const auto& w : e.params.weights) write_mat(w);
  for (const auto& b : e.params.biases) write_mat(b);
}

/// Loads a checkpoint; logits are not stored, call predict() to rebuild them.
inline Expert load_expert(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("missing checkpoint: " + path.string());
  std::string magic(sizeof(kCheckpointMagic) - 1, '\0');
  f.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) throw ConfigError("not an expert checkpoint: " + path.string());
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("corrupt checkpoint header: ") + ex.what());
  }
  Expert e;
  e.config = config_from_json(header.at("config"));
  e.in_dim = header.at("in_dim").get<Eigen::Index>();
  e.num_classes = header.at("num_classes").get<std::int32_t>();
  e.num_nodes = header.at("num_nodes").get<NodeId>();
  e.dataset_fingerprint = header.at("dataset_fingerprint").get<std::uint64_t>();
  e.best_epoch = header.at("best_epoch").get<int>();
  e.best_val_acc = header.at("best_val_acc").get<double>();
  const auto num_w = header.at("num_weight_tensors").get<std::size_t>();
  const auto& shapes = header.at("shapes");
  auto read_mat = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXf m(rows, cols);
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
    if (!f) throw ConfigError("truncated checkpoint blob: " + path.string());
    return m;
  };
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto rows = shapes[i][0].get<Eigen::Index>();
    auto cols = shapes[i][1].get<Eigen::Index>();
    if (i < num_w)
      e.params.weights.push_back(read_mat(rows, cols));
    else
      e.params.biases.push_back(read_mat(rows, cols));
  }
  return e;
}

inline void write_logits_csv(const Eigen::MatrixXf& logits,
                             const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write logits: " + path.string());
  f << "node_id";
  for (Eigen::Index c = 0; c < logits.cols(); ++c) f << ",logit_" << c;
  f << '\n';
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    f << i;
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      f << ',' << format_double(static_cast<double>(logits(i, c)));
    f << '\n';
  }
}

inline Eigen::MatrixXf read_logits_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("missing logits file: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("empty logits file: " + path.string());
  std::vector<std::vector<float>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<float> row;
    std::size_t start = 0;
    bool first = true;
    while (start <= line.size()) {
      auto comma = line.find(',', start);
      auto tok = line.substr(start, comma == std::string::npos ? std::string::npos
                                                               : comma - start);
      if (!first) row.push_back(std::strtof(tok.c_str(), nullptr));
      first = false;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("no logit rows in " + path.string());
  Eigen::MatrixXf m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw ConfigError("ragged logits row in " + path.string());
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  }
  return m;
}

}  // namespace expertforge
