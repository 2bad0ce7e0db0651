#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expertforge/experts.hpp"
#include "expertforge/graph.hpp"
#include "expertforge/metrics.hpp"
#include "expertforge/rng.hpp"

namespace expertforge {

// ---------------------------------------------------------------------------
// Correctness and diversity metrics
// ---------------------------------------------------------------------------

/// c[k][n] = 1 iff expert k's argmax prediction matches the label, over the
/// nodes selected by the evaluation mask.
struct CorrectnessMatrix {
  int num_experts = 0;
  std::int64_t num_samples = 0;
  std::vector<std::uint8_t> c;  // row-major K x N
  std::vector<std::string> expert_ids;
  std::string eval_mask_name;

  std::uint8_t at(int k, std::int64_t n) const {
    return c[static_cast<std::size_t>(k) * static_cast<std::size_t>(num_samples) +
             static_cast<std::size_t>(n)];
  }
  double accuracy(int k) const {
    std::int64_t hits = 0;
    for (std::int64_t n = 0; n < num_samples; ++n) hits += at(k, n);
    return num_samples > 0 ? static_cast<double>(hits) / static_cast<double>(num_samples)
                           : 0.0;
  }
};

template <typename MatT>
CorrectnessMatrix correctness(const std::vector<MatT>& logits,
                              const std::vector<std::int32_t>& y, const Mask& mask,
                              std::string mask_name = "test") {
  if (logits.empty()) throw ConfigError("correctness: no experts");
  CorrectnessMatrix cm;
  cm.num_experts = static_cast<int>(logits.size());
  cm.eval_mask_name = std::move(mask_name);
  std::vector<std::int64_t> nodes;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) nodes.push_back(static_cast<std::int64_t>(i));
  cm.num_samples = static_cast<std::int64_t>(nodes.size());
  cm.c.resize(static_cast<std::size_t>(cm.num_experts) * nodes.size());
  for (int k = 0; k < cm.num_experts; ++k) {
    const auto& z = logits[static_cast<std::size_t>(k)];
    if (z.rows() != static_cast<Eigen::Index>(mask.size()))
      throw ConfigError("correctness: logits row count does not match mask length");
    auto pred = argmax_classes(z);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto n = static_cast<std::size_t>(nodes[i]);
      cm.c[static_cast<std::size_t>(k) * nodes.size() + i] =
          (pred[n] == y[n]) ? 1 : 0;
    }
  }
  return cm;
}

struct ErrorInconsistency {
  Eigen::MatrixXd pairwise;  // K x K, symmetric, zero diagonal
  double set_ei = 0;         // fraction of samples with mixed correctness
};

/// Pairwise EI is the mean |c_i - c_j|; the set value is the fraction of
/// samples where at least one expert is right and at least one is wrong.
inline ErrorInconsistency error_inconsistency(const CorrectnessMatrix& cm) {
  if (cm.num_experts < 2)
    throw ConfigError("error_inconsistency needs at least 2 experts");
  const int K = cm.num_experts;
  ErrorInconsistency out;
  out.pairwise = Eigen::MatrixXd::Zero(K, K);
  if (cm.num_samples == 0) return out;
  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j) {
      std::int64_t diff = 0;
      for (std::int64_t n = 0; n < cm.num_samples; ++n)
        diff += (cm.at(i, n) != cm.at(j, n));
      double ei = static_cast<double>(diff) / static_cast<double>(cm.num_samples);
      out.pairwise(i, j) = ei;
      out.pairwise(j, i) = ei;
    }
  std::int64_t mixed = 0;
  for (std::int64_t n = 0; n < cm.num_samples; ++n) {
    std::uint8_t lo = 1, hi = 0;
    for (int k = 0; k < K; ++k) {
      lo = std::min(lo, cm.at(k, n));
      hi = std::max(hi, cm.at(k, n));
    }
    mixed += (lo == 0 && hi == 1);
  }
  out.set_ei = static_cast<double>(mixed) / static_cast<double>(cm.num_samples);
  return out;
}

struct OracleResult {
  double oracle = 0;
  double cg = 0;
};

/// Oracle accuracy counts samples some expert gets right; CG is its margin
/// over the best single expert. The supplied accuracies must equal the
/// correctness row means.
inline OracleResult oracle_and_cg(const CorrectnessMatrix& cm,
                                  const std::vector<double>& accs) {
  if (static_cast<int>(accs.size()) != cm.num_experts)
    throw ConfigError("oracle_and_cg: accuracy count mismatch");
  for (int k = 0; k < cm.num_experts; ++k)
    if (std::abs(accs[static_cast<std::size_t>(k)] - cm.accuracy(k)) > 1e-12)
      throw InvariantError("oracle_and_cg: accuracy inconsistent with correctness row " +
                           std::to_string(k));
  OracleResult out;
  if (cm.num_samples == 0) return out;
  std::int64_t any = 0;
  for (std::int64_t n = 0; n < cm.num_samples; ++n) {
    for (int k = 0; k < cm.num_experts; ++k)
      if (cm.at(k, n)) {
        ++any;
        break;
      }
  }
  out.oracle = static_cast<double>(any) / static_cast<double>(cm.num_samples);
  out.cg = out.oracle - *std::max_element(accs.begin(), accs.end());
  return out;
}

// ---------------------------------------------------------------------------
// Global scalar-weight ensemble
// ---------------------------------------------------------------------------

struct GlobalWeights {
  std::vector<double> weights;  // on the probability simplex
  double val_acc = 0;
};

namespace detail {

template <typename MatT>
double mixture_accuracy(const std::vector<MatT>& logits, const std::vector<double>& w,
                        const std::vector<std::int32_t>& y, const Mask& mask) {
  const Eigen::Index n = logits[0].rows();
  const Eigen::Index C = logits[0].cols();
  Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(n, C);
  for (std::size_t k = 0; k < logits.size(); ++k)
    mixed += w[k] * logits[k].template cast<double>();
  return accuracy_on_mask(mixed, y, mask);
}

inline std::vector<double> normalized(std::vector<double> w) {
  double total = 0;
  for (double v : w) total += v;
  if (total <= 0) return w;
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

/// Derivative-free search over the weight simplex: the first half of the
/// budget probes every one-hot vertex, the uniform point, and seeded
/// Dirichlet draws; the second half runs coordinate hill-climbing with step
/// halving on stagnation. The returned validation accuracy is never below
/// the best single expert's (the vertices are always probed).
template <typename MatT>
GlobalWeights tune_global_weights(const std::vector<MatT>& logits,
                                  const std::vector<std::int32_t>& y,
                                  const Mask& val_mask, int budget, std::uint64_t seed) {
  const int K = static_cast<int>(logits.size());
  if (K < 2) throw ConfigError("tune_global_weights needs at least 2 experts");
  if (budget < K) throw ConfigError("tune_global_weights: budget below expert count");

  RngStream rng(seed, "global-weights");
  GlobalWeights best;
  best.val_acc = -1;
  auto consider = [&](const std::vector<double>& w) {
    double acc = detail::mixture_accuracy(logits, w, y, val_mask);
    if (acc > best.val_acc) {
      best.val_acc = acc;
      best.weights = w;
      return true;
    }
    return false;
  };

  const int sample_phase = std::max(budget / 2, K + 1);
  int used = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<double> w(static_cast<std::size_t>(K), 0.0);
    w[static_cast<std::size_t>(k)] = 1.0;
    consider(w);
    ++used;
  }
  consider(std::vector<double>(static_cast<std::size_t>(K), 1.0 / K));
  ++used;
  for (; used < sample_phase; ++used) {
    std::vector<double> w(static_cast<std::size_t>(K));
    for (double& v : w) v = -std::log(std::max(rng.uniform(), 1e-300));
    consider(detail::normalized(std::move(w)));
  }

  double step = 0.1;
  int stagnation = 0;
  const int climb_budget = std::max(0, budget - used);
  for (int it = 0; it < climb_budget; ++it) {
    int k = it % K;
    double direction = (rng.u64() & 1) ? 1.0 : -1.0;
    std::vector<double> w = best.weights;
    w[static_cast<std::size_t>(k)] =
        std::max(0.0, w[static_cast<std::size_t>(k)] + direction * step);
    w = detail::normalized(std::move(w));
    if (consider(w)) {
      stagnation = 0;
    } else if (++stagnation >= 2 * K) {
      step *= 0.5;
      stagnation = 0;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Node-adaptive gate
// ---------------------------------------------------------------------------

struct GateConfig {
  int hidden_dim = 64;
  int epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  int patience = 20;
  double holdout_fraction = 0.2;  // share of val used for early stopping
};

/// One-hidden-layer gate mapping per-node inputs (expert softmax
/// probabilities plus optional standardized scalars) to K mixing weights.
/// The output head starts at zero, i.e. uniform mixing.
struct GateModel {
  int num_experts = 0;
  Eigen::Index num_classes = 0;
  Eigen::Index extra_dim = 0;
  Eigen::MatrixXd w1, w2;   // D x hidden, hidden x K
  Eigen::RowVectorXd b1, b2;
  Eigen::RowVectorXd feat_mean, feat_std;  // standardization of the extras

  Eigen::MatrixXd build_inputs(const std::vector<Eigen::MatrixXf>& logits,
                               const Eigen::MatrixXd& extra) const {
    const Eigen::Index n = logits[0].rows();
    Eigen::MatrixXd in(n, static_cast<Eigen::Index>(num_experts) * num_classes + extra_dim);
    for (int k = 0; k < num_experts; ++k) {
      const auto z = logits[static_cast<std::size_t>(k)].cast<double>();
      for (Eigen::Index i = 0; i < n; ++i) {
        double mx = z.row(i).maxCoeff();
        double denom = 0;
        for (Eigen::Index c = 0; c < num_classes; ++c) denom += std::exp(z(i, c) - mx);
        for (Eigen::Index c = 0; c < num_classes; ++c)
          in(i, k * num_classes + c) = std::exp(z(i, c) - mx) / denom;
      }
    }
    for (Eigen::Index j = 0; j < extra_dim; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        in(i, static_cast<Eigen::Index>(num_experts) * num_classes + j) =
            (extra(i, j) - feat_mean[j]) / feat_std[j];
    return in;
  }

  /// Per-node simplex weights over the experts.
  Eigen::MatrixXd node_weights(const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd h = (inputs * w1).rowwise() + b1;
    h = h.cwiseMax(0.0);
    Eigen::MatrixXd gl = (h * w2).rowwise() + b2;
    Eigen::MatrixXd w(gl.rows(), gl.cols());
    for (Eigen::Index i = 0; i < gl.rows(); ++i) {
      double mx = gl.row(i).maxCoeff();
      double denom = 0;
      for (Eigen::Index k = 0; k < gl.cols(); ++k) denom += std::exp(gl(i, k) - mx);
      for (Eigen::Index k = 0; k < gl.cols(); ++k)
        w(i, k) = std::exp(gl(i, k) - mx) / denom;
    }
    return w;
  }

  Eigen::MatrixXd mixed_logits(const std::vector<Eigen::MatrixXf>& logits,
                               const Eigen::MatrixXd& extra) const {
    Eigen::MatrixXd w = node_weights(build_inputs(logits, extra));
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(logits[0].rows(), num_classes);
    for (int k = 0; k < num_experts; ++k)
      mixed += (logits[static_cast<std::size_t>(k)].cast<double>().array().colwise() *
                w.col(k).array())
                   .matrix();
    return mixed;
  }
};

/// Trains the gate on the validation split only (an internal 80/20 split
/// handles early stopping); the loss is cross-entropy of the weight-mixed
/// raw logits. Deterministic per seed.
inline GateModel train_gate(const std::vector<Eigen::MatrixXf>& logits,
                            const Eigen::MatrixXd& extra_features,
                            const std::vector<std::int32_t>& y, const Mask& val_mask,
                            const GateConfig& cfg, std::uint64_t seed) {
  const int K = static_cast<int>(logits.size());
  if (K < 2) throw ConfigError("train_gate needs at least 2 experts");
  const Eigen::Index n = logits[0].rows();
  const Eigen::Index C = logits[0].cols();
  if (extra_features.rows() != 0 && extra_features.rows() != n)
    throw ConfigError("train_gate: extra feature row count mismatch");

  std::vector<std::int64_t> val_nodes;
  for (std::size_t i = 0; i < val_mask.size(); ++i)
    if (val_mask[i]) val_nodes.push_back(static_cast<std::int64_t>(i));
  if (val_nodes.size() < 2) throw ConfigError("degenerate val split for gate training");

  GateModel gate;
  gate.num_experts = K;
  gate.num_classes = C;
  gate.extra_dim = extra_features.rows() == 0 ? 0 : extra_features.cols();
  Eigen::MatrixXd extra = extra_features.rows() == 0
                              ? Eigen::MatrixXd::Zero(n, 0)
                              : extra_features;

  // Standardize extras on the validation nodes.
  gate.feat_mean = Eigen::RowVectorXd::Zero(gate.extra_dim);
  gate.feat_std = Eigen::RowVectorXd::Ones(gate.extra_dim);
  for (Eigen::Index j = 0; j < gate.extra_dim; ++j) {
    double mean = 0;
    for (auto i : val_nodes) mean += extra(i, j);
    mean /= static_cast<double>(val_nodes.size());
    double var = 0;
    for (auto i : val_nodes) var += (extra(i, j) - mean) * (extra(i, j) - mean);
    var /= static_cast<double>(val_nodes.size());
    gate.feat_mean[j] = mean;
    gate.feat_std[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }

  // 80/20 split of the validation nodes for fitting vs early stopping.
  {
    RngStream rng(seed, "gate-split");
    rng.shuffle(val_nodes);
  }
  auto n_fit = static_cast<std::size_t>(
      std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                    std::floor((1.0 - cfg.holdout_fraction) *
                                               static_cast<double>(val_nodes.size())))));
  Mask fit_mask(static_cast<std::size_t>(n), 0), stop_mask(static_cast<std::size_t>(n), 0);
  for (std::size_t i = 0; i < val_nodes.size(); ++i)
    (i < n_fit ? fit_mask : stop_mask)[static_cast<std::size_t>(val_nodes[i])] = 1;
  if (mask_count(stop_mask) == 0) stop_mask = fit_mask;
  {
    std::int32_t first = -1;
    bool two = false;
    for (std::size_t i = 0; i < fit_mask.size() && !two; ++i) {
      if (!fit_mask[i]) continue;
      if (first < 0)
        first = y[i];
      else if (y[i] != first)
        two = true;
    }
    if (!two) throw ConfigError("degenerate val split for gate training");
  }

  const Eigen::Index D = static_cast<Eigen::Index>(K) * C + gate.extra_dim;
  {
    RngStream rng(seed, "gate-init");
    double limit = std::sqrt(6.0 / static_cast<double>(D + cfg.hidden_dim));
    gate.w1.resize(D, cfg.hidden_dim);
    for (Eigen::Index i = 0; i < D; ++i)
      for (Eigen::Index j = 0; j < cfg.hidden_dim; ++j)
        gate.w1(i, j) = rng.uniform(-limit, limit);
  }
  gate.b1 = Eigen::RowVectorXd::Zero(cfg.hidden_dim);
  gate.w2 = Eigen::MatrixXd::Zero(cfg.hidden_dim, K);
  gate.b2 = Eigen::RowVectorXd::Zero(K);

  Eigen::MatrixXd inputs = gate.build_inputs(logits, extra);
  std::vector<Eigen::MatrixXd> z_dense;
  for (const auto& z : logits) z_dense.push_back(z.cast<double>());

  // Adam state for the four tensors.
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(D, cfg.hidden_dim), v1 = m1;
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(cfg.hidden_dim, K), v2 = m2;
  Eigen::RowVectorXd mb1 = Eigen::RowVectorXd::Zero(cfg.hidden_dim), vb1 = mb1;
  Eigen::RowVectorXd mb2 = Eigen::RowVectorXd::Zero(K), vb2 = mb2;
  long t = 0;
  auto adam_update = [&](auto& theta, auto& m, auto& v, const auto& grad, double bc1,
                         double bc2) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
    theta -= (cfg.learning_rate * (m / bc1).array() /
              ((v / bc2).array().sqrt() + kAdamEps))
                 .matrix();
  };

  GateModel best = gate;
  double best_acc = -1;
  int best_epoch = -1;
  std::vector<std::int64_t> fit_nodes;
  for (std::size_t i = 0; i < fit_mask.size(); ++i)
    if (fit_mask[i]) fit_nodes.push_back(static_cast<std::int64_t>(i));
  const double inv_fit = 1.0 / static_cast<double>(fit_nodes.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Forward on the fit nodes.
    Eigen::MatrixXd h_pre = (inputs * gate.w1).rowwise() + gate.b1;
    Eigen::MatrixXd h = h_pre.cwiseMax(0.0);
    Eigen::MatrixXd gl = (h * gate.w2).rowwise() + gate.b2;

    Eigen::MatrixXd dgl = Eigen::MatrixXd::Zero(n, K);
    double loss = 0;
    for (auto i : fit_nodes) {
      // softmax over experts
      double mx = gl.row(i).maxCoeff();
      Eigen::RowVectorXd w(K);
      double denom = 0;
      for (int k = 0; k < K; ++k) {
        w[k] = std::exp(gl(i, k) - mx);
        denom += w[k];
      }
      w /= denom;
      Eigen::RowVectorXd mixed = Eigen::RowVectorXd::Zero(C);
      for (int k = 0; k < K; ++k)
        mixed += w[k] * z_dense[static_cast<std::size_t>(k)].row(i);
      double mmx = mixed.maxCoeff();
      double mdenom = 0;
      for (Eigen::Index c = 0; c < C; ++c) mdenom += std::exp(mixed[c] - mmx);
      double logz = mmx + std::log(mdenom);
      loss += (logz - mixed[y[static_cast<std::size_t>(i)]]) * inv_fit;
      Eigen::RowVectorXd dmixed(C);
      for (Eigen::Index c = 0; c < C; ++c)
        dmixed[c] = (std::exp(mixed[c] - logz) -
                     (c == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) *
                    inv_fit;
      Eigen::RowVectorXd dw(K);
      for (int k = 0; k < K; ++k)
        dw[k] = dmixed.dot(z_dense[static_cast<std::size_t>(k)].row(i));
      double inner = dw.dot(w);
      for (int k = 0; k < K; ++k) dgl(i, k) = w[k] * (dw[k] - inner);
    }
    if (!std::isfinite(loss))
      throw InvariantError("gate training diverged at epoch " + std::to_string(epoch));

    Eigen::MatrixXd dw2 = h.transpose() * dgl;
    Eigen::RowVectorXd db2 = dgl.colwise().sum();
    Eigen::MatrixXd dh = dgl * gate.w2.transpose();
    dh = (h_pre.array() > 0.0).cast<double>().matrix().cwiseProduct(dh);
    Eigen::MatrixXd dw1 = inputs.transpose() * dh;
    Eigen::RowVectorXd db1 = dh.colwise().sum();
    if (cfg.weight_decay > 0) {
      dw1 += cfg.weight_decay * gate.w1;
      dw2 += cfg.weight_decay * gate.w2;
    }

    ++t;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    adam_update(gate.w1, m1, v1, dw1, bc1, bc2);
    adam_update(gate.w2, m2, v2, dw2, bc1, bc2);
    adam_update(gate.b1, mb1, vb1, db1, bc1, bc2);
    adam_update(gate.b2, mb2, vb2, db2, bc1, bc2);

    double stop_acc =
        accuracy_on_mask(gate.mixed_logits(logits, extra), y, stop_mask);
    if (stop_acc > best_acc) {
      best_acc = stop_acc;
      best_epoch = epoch;
      best = gate;
    }
    if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) break;
  }
  return cfg.epochs > 0 && best_epoch >= 0 ? best : gate;
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

struct EnsembleEvalOptions {
  GateConfig gate;
  int weight_budget = 200;
  bool eval_on_val = false;  // evaluate EI/oracle/accuracies on val instead of test
  bool gate_structure_features = true;
  std::uint64_t seed = 0;
};

struct EnsembleReport {
  std::vector<double> expert_accs;
  double max_acc = 0, mean_acc = 0;
  bool has_ei = false;  // false for a single expert
  Eigen::MatrixXd pairwise_ei;
  double set_ei = 0;
  double oracle = 0, cg = 0;
  std::vector<double> ensemble_weights;
  double ensemble_val_acc = 0;
  double ensemble_acc = 0;
  double gate_acc = 0;
  std::string eval_split = "test";

  void check_invariants() const {
    if (expert_accs.empty()) throw InvariantError("report without experts");
    for (double a : expert_accs)
      if (a < 0 || a > 1) throw InvariantError("expert accuracy outside [0,1]");
    if (oracle + 1e-12 < max_acc) throw InvariantError("oracle below best expert");
    if (cg < -1e-12) throw InvariantError("negative complementary gain");
    if (set_ei < -1e-12 || set_ei > 1 + 1e-12) throw InvariantError("set EI outside [0,1]");
  }
};

/// Gate inputs computable without evaluation labels: log-degree plus label
/// statistics of the train+val-labeled part of each neighborhood.
inline Eigen::MatrixXd gate_structure_features(const Dataset& ds) {
  const Graph& g = ds.graph;
  Mask labeled = mask_or(ds.train_mask, ds.val_mask);
  LabeledNeighborStats stats = labeled_neighbor_stats(g, labeled);
  NodeScores deg = undirected_degree(g);
  Eigen::MatrixXd extra(g.num_nodes, 3);
  for (NodeId i = 0; i < g.num_nodes; ++i) {
    extra(i, 0) = std::log1p(deg.values[i]);
    extra(i, 1) = stats.entropy.defined[static_cast<std::size_t>(i)]
                      ? stats.entropy.values[i]
                      : 0.0;
    extra(i, 2) = stats.max_ratio.defined[static_cast<std::size_t>(i)]
                      ? stats.max_ratio.values[i]
                      : 0.0;
  }
  return extra;
}

/// Runs the full §-style evaluation: per-expert accuracy, EI/oracle/CG on
/// the evaluation split, global weights tuned on validation, gate trained on
/// validation, both applied to the evaluation split.
inline EnsembleReport evaluate_expert_set(const Dataset& ds,
                                          const std::vector<Expert>& experts,
                                          const EnsembleEvalOptions& opt = {}) {
  if (experts.empty()) throw ConfigError("evaluate_expert_set: no experts");
  const Graph& g = ds.graph;
  const auto fp = g.fingerprint();
  for (const auto& e : experts) {
    if (e.dataset_fingerprint != fp || e.num_nodes != g.num_nodes ||
        e.num_classes != g.num_classes)
      throw InvariantError("experts were trained on different graphs");
  }
  std::vector<Eigen::MatrixXf> logits;
  logits.reserve(experts.size());
  for (const auto& e : experts) logits.push_back(e.logits);

  const Mask& eval_mask = opt.eval_on_val ? ds.val_mask : ds.test_mask;
  EnsembleReport rep;
  rep.eval_split = opt.eval_on_val ? "val" : "test";
  for (const auto& z : logits)
    rep.expert_accs.push_back(accuracy_on_mask(z, g.labels, eval_mask));
  rep.max_acc = *std::max_element(rep.expert_accs.begin(), rep.expert_accs.end());
  rep.mean_acc = 0;
  for (double a : rep.expert_accs) rep.mean_acc += a;
  rep.mean_acc /= static_cast<double>(rep.expert_accs.size());

  CorrectnessMatrix cm = correctness(logits, g.labels, eval_mask, rep.eval_split);
  OracleResult oc = oracle_and_cg(cm, rep.expert_accs);
  rep.oracle = oc.oracle;
  rep.cg = oc.cg;

  if (experts.size() >= 2) {
    auto ei = error_inconsistency(cm);
    rep.has_ei = true;
    rep.pairwise_ei = std::move(ei.pairwise);
    rep.set_ei = ei.set_ei;

    auto gw = tune_global_weights(logits, g.labels, ds.val_mask, opt.weight_budget,
                                  derive_seed(opt.seed, "ensemble-weights"));
    rep.ensemble_weights = gw.weights;
    rep.ensemble_val_acc = gw.val_acc;
    rep.ensemble_acc = detail::mixture_accuracy(logits, gw.weights, g.labels, eval_mask);

    Eigen::MatrixXd extra = opt.gate_structure_features
                                ? gate_structure_features(ds)
                                : Eigen::MatrixXd::Zero(g.num_nodes, 0);
    GateModel gate = train_gate(logits, extra, g.labels, ds.val_mask, opt.gate,
                                derive_seed(opt.seed, "gate"));
    rep.gate_acc = accuracy_on_mask(gate.mixed_logits(logits, extra), g.labels, eval_mask);
  } else {
    rep.pairwise_ei = Eigen::MatrixXd::Zero(1, 1);
    rep.ensemble_weights = {1.0};
    rep.ensemble_val_acc = accuracy_on_mask(logits[0], g.labels, ds.val_mask);
    rep.ensemble_acc = rep.expert_accs[0];
    rep.gate_acc = rep.expert_accs[0];
  }
  rep.check_invariants();
  return rep;
}

}  // namespace expertforge
