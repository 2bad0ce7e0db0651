#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "expertforge/config.hpp"
#include "expertforge/dataset_io.hpp"
#include "expertforge/domains.hpp"
#include "expertforge/ensemble.hpp"

namespace expertforge {

// ---------------------------------------------------------------------------
// Strategy specifications
// ---------------------------------------------------------------------------

enum class StrategyCategory { Reinit, Hparam, Arch, Direct, DatasetSel };

inline const char* category_name(StrategyCategory c) {
  switch (c) {
    case StrategyCategory::Reinit: return "REINIT";
    case StrategyCategory::Hparam: return "HPARAM";
    case StrategyCategory::Arch: return "ARCH";
    case StrategyCategory::Direct: return "DIRECT";
    case StrategyCategory::DatasetSel: return "DATASET";
  }
  return "?";
}

inline StrategyCategory category_from_name(const std::string& s) {
  for (auto c : {StrategyCategory::Reinit, StrategyCategory::Hparam,
                 StrategyCategory::Arch, StrategyCategory::Direct,
                 StrategyCategory::DatasetSel})
    if (s == category_name(c)) return c;
  throw ConfigError("unknown strategy category '" + s + "'");
}

inline constexpr int kMaxExpertsPerStrategy = 8;

/// One diversification recipe: a base expert plus the axis being perturbed.
/// HPARAM axes: dropout | hidden_dim | epochs. ARCH axes: depth | filter |
/// skip. DIRECT builds the directed/undirected pair. DATASET trains domain
/// experts from a partition method.
struct StrategySpec {
  std::string id;
  StrategyCategory category = StrategyCategory::Reinit;
  ExpertConfig base;
  int num_experts = 2;                  // REINIT
  std::string axis;                     // HPARAM / ARCH
  std::vector<double> values;           // numeric axis values
  std::vector<std::string> names;       // filter / skip axis values
  PartitionMethod method = PartitionMethod::Homophily;  // DATASET
  int domains = 2;
  TrainingMode mode = TrainingMode::Scratch;
  std::vector<std::string> dataset_ids;  // empty: applies to every dataset

  bool applies_to(const std::string& dataset_id) const {
    if (dataset_ids.empty()) return true;
    return std::find(dataset_ids.begin(), dataset_ids.end(), dataset_id) !=
           dataset_ids.end();
  }

  int expert_count() const {
    switch (category) {
      case StrategyCategory::Reinit: return num_experts;
      case StrategyCategory::Hparam: return static_cast<int>(values.size());
      case StrategyCategory::Arch:
        return static_cast<int>(axis == "depth" ? values.size() : names.size());
      case StrategyCategory::Direct: return 2;
      case StrategyCategory::DatasetSel: return domains;
    }
    return 0;
  }
};

inline void validate(const StrategySpec& spec, bool dataset_directed) {
  int k = spec.expert_count();
  if (k < 1) throw ConfigError("strategy '" + spec.id + "': no experts");
  if (k > kMaxExpertsPerStrategy)
    throw ConfigError("strategy '" + spec.id + "': more than " +
                      std::to_string(kMaxExpertsPerStrategy) + " experts");
  switch (spec.category) {
    case StrategyCategory::Hparam:
      if (spec.axis != "dropout" && spec.axis != "hidden_dim" && spec.axis != "epochs")
        throw ConfigError("strategy '" + spec.id + "': unknown HPARAM axis '" +
                          spec.axis + "'");
      break;
    case StrategyCategory::Arch:
      if (spec.axis != "depth" && spec.axis != "filter" && spec.axis != "skip")
        throw ConfigError("strategy '" + spec.id + "': unknown ARCH axis '" + spec.axis +
                          "'");
      break;
    case StrategyCategory::Direct:
      if (!dataset_directed)
        throw ConfigError("strategy '" + spec.id + "': DIRECT requires a directed dataset");
      break;
    default:
      break;
  }
}

struct RunRecord {
  std::string dataset_id;
  std::string strategy_id;
  StrategyCategory category = StrategyCategory::Reinit;
  std::uint64_t seed = 0;
  int num_experts = 0;
  EnsembleReport report;
  std::optional<double> delta_acc;  // DATASET strategies only
  double wall_clock_ms = 0;         // log-only; never written to results.csv
};

// ---------------------------------------------------------------------------
// Strategy execution
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<ExpertConfig> expand_configs(const StrategySpec& spec,
                                                std::uint64_t seed) {
  std::vector<ExpertConfig> cfgs;
  auto seeded = [&](int k) {
    ExpertConfig c = spec.base;
    c.seed = derive_seed(seed, "expert", static_cast<std::uint64_t>(k));
    return c;
  };
  switch (spec.category) {
    case StrategyCategory::Reinit:
      for (int k = 0; k < spec.num_experts; ++k) cfgs.push_back(seeded(k));
      break;
    case StrategyCategory::Hparam:
      for (int k = 0; k < static_cast<int>(spec.values.size()); ++k) {
        ExpertConfig c = seeded(k);
        double v = spec.values[static_cast<std::size_t>(k)];
        if (spec.axis == "dropout")
          c.dropout = v;
        else if (spec.axis == "hidden_dim")
          c.hidden_dim = static_cast<int>(v);
        else
          c.epochs = static_cast<int>(v);
        cfgs.push_back(c);
      }
      break;
    case StrategyCategory::Arch:
      if (spec.axis == "depth") {
        for (int k = 0; k < static_cast<int>(spec.values.size()); ++k) {
          ExpertConfig c = seeded(k);
          c.depth = static_cast<int>(spec.values[static_cast<std::size_t>(k)]);
          if (c.depth == 0) {
            c.filter = Filter::Identity;
            c.skip = Skip::None;
          }
          cfgs.push_back(c);
        }
      } else if (spec.axis == "filter") {
        for (int k = 0; k < static_cast<int>(spec.names.size()); ++k) {
          ExpertConfig c = seeded(k);
          c.filter = filter_from_name(spec.names[static_cast<std::size_t>(k)]);
          cfgs.push_back(c);
        }
      } else {
        for (int k = 0; k < static_cast<int>(spec.names.size()); ++k) {
          ExpertConfig c = seeded(k);
          c.skip = skip_from_name(spec.names[static_cast<std::size_t>(k)]);
          cfgs.push_back(c);
        }
      }
      break;
    default:
      throw InvariantError("expand_configs: category handled elsewhere");
  }
  return cfgs;
}

}  // namespace detail

/// Trains the strategy's expert set on the dataset and evaluates it.
/// Deterministic per (dataset, spec, seed); DATASET strategies also report
/// the weighted domain gain of their experts.
inline RunRecord run_strategy(const Dataset& ds, const StrategySpec& spec,
                              std::uint64_t seed,
                              const EnsembleEvalOptions& eval_base = {}) {
  validate(spec, ds.graph.directed);
  auto started = std::chrono::steady_clock::now();

  EnsembleEvalOptions eval = eval_base;
  eval.seed = derive_seed(seed, "eval");

  RunRecord rec;
  rec.strategy_id = spec.id;
  rec.category = spec.category;
  rec.seed = seed;

  std::vector<Expert> experts;
  if (spec.category == StrategyCategory::DatasetSel) {
    auto dom = make_partition(ds, spec.method, spec.domains, derive_seed(seed, "partition"));
    ExpertConfig base = spec.base;
    base.seed = derive_seed(seed, "expert-base");
    auto res = evaluate_assignment_full(ds, dom, base, spec.mode, derive_seed(seed, "domains"));
    rec.delta_acc = res.report.delta_acc;
    experts = std::move(res.domain_experts);
  } else if (spec.category == StrategyCategory::Direct) {
    Dataset und = ds;
    und.graph = to_undirected(ds.graph);
    ExpertConfig undirected_cfg = spec.base;
    if (undirected_cfg.filter == Filter::DirectedPair) undirected_cfg.filter = Filter::SymNorm;
    undirected_cfg.seed = derive_seed(seed, "expert", 0);
    ExpertConfig directed_cfg = spec.base;
    directed_cfg.filter = Filter::DirectedPair;
    directed_cfg.seed = derive_seed(seed, "expert", 1);
    experts.push_back(train_expert(und, undirected_cfg));
    experts.push_back(train_expert(ds, directed_cfg));
  } else {
    // non-directed filters symmetrize internally, so every expert trains on
    // the same dataset object
    for (const auto& cfg : detail::expand_configs(spec, seed))
      experts.push_back(train_expert(ds, cfg));
  }

  rec.num_experts = static_cast<int>(experts.size());
  rec.report = evaluate_expert_set(ds, experts, eval);
  rec.report.check_invariants();
  rec.wall_clock_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  return rec;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct SuiteDataset {
  std::string id;
  std::string path;                 // dataset directory, or
  std::optional<SynthConfig> synth; // generated on demand
};

struct SuiteConfig {
  std::vector<SuiteDataset> datasets;
  std::vector<StrategySpec> strategies;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
  EnsembleEvalOptions eval;
};

inline StrategySpec strategy_from_json(const nlohmann::json& j, const std::string& origin) {
  StrategySpec spec;
  if (!j.contains("id")) throw ConfigError(origin + ": strategy needs an 'id'");
  spec.id = j.at("id").get<std::string>();
  if (!j.contains("category")) throw ConfigError(origin + ": strategy '" + spec.id + "' needs a 'category'");
  spec.category = category_from_name(j.at("category").get<std::string>());
  if (j.contains("expert"))
    spec.base = expert_config_from_json(j.at("expert"), origin + " [" + spec.id + "].expert");
  spec.num_experts = detail::get_or(j, "num_experts", spec.num_experts, origin);
  spec.axis = detail::get_or<std::string>(j, "axis", "", origin);
  if (j.contains("values")) {
    for (const auto& v : j.at("values")) {
      if (v.is_string())
        spec.names.push_back(v.get<std::string>());
      else
        spec.values.push_back(v.get<double>());
    }
  }
  if (j.contains("method"))
    spec.method = partition_method_from_name(j.at("method").get<std::string>());
  spec.domains = detail::get_or(j, "domains", spec.domains, origin);
  if (j.contains("mode"))
    spec.mode = training_mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("datasets"))
    for (const auto& d : j.at("datasets"))
      spec.dataset_ids.push_back(d.get<std::string>());
  return spec;
}

inline SuiteConfig load_suite_config(const std::string& path) {
  auto j = toml::parse_file(path);
  SuiteConfig suite;
  if (!j.contains("datasets") || !j.at("datasets").is_array() || j.at("datasets").empty())
    throw ConfigError(path + ": suite needs at least one [[datasets]] entry");
  for (const auto& d : j.at("datasets")) {
    SuiteDataset ds;
    if (!d.contains("id")) throw ConfigError(path + ": dataset entry needs an 'id'");
    ds.id = d.at("id").get<std::string>();
    if (d.contains("path")) {
      ds.path = d.at("path").get<std::string>();
    } else if (d.contains("synth")) {
      const auto& s = d.at("synth");
      if (s.is_string())
        ds.synth = load_synth_config(s.get<std::string>());
      else
        ds.synth = synth_config_from_json(s, path + " [" + ds.id + "].synth");
    } else {
      throw ConfigError(path + ": dataset '" + ds.id + "' needs 'path' or 'synth'");
    }
    suite.datasets.push_back(std::move(ds));
  }
  if (j.contains("strategies"))
    for (const auto& s : j.at("strategies"))
      suite.strategies.push_back(strategy_from_json(s, path));
  if (j.contains("seeds"))
    for (const auto& s : j.at("seeds")) suite.seeds.push_back(s.get<std::uint64_t>());
  if (suite.seeds.empty()) suite.seeds = {0};
  suite.workers = detail::get_or(j, "workers", 1, path);
  if (j.contains("eval_split")) {
    auto split = j.at("eval_split").get<std::string>();
    if (split != "test" && split != "val")
      throw ConfigError(path + ": eval_split must be 'test' or 'val'");
    suite.eval.eval_on_val = (split == "val");
  }
  return suite;
}

/// Per-run seeds hash (dataset id, strategy id, replicate), so extending a
/// suite never perturbs existing rows.
inline std::uint64_t run_seed_for(const std::string& dataset_id,
                                  const std::string& strategy_id,
                                  std::uint64_t replicate) {
  return derive_seed(mix64(hash_name(dataset_id)) ^ mix64(hash_name(strategy_id)), "run",
                     replicate);
}

/// Executes the dataset x strategy x seed cross product, up to `workers`
/// runs concurrently; records come back sorted by (dataset, strategy, seed).
inline std::vector<RunRecord> run_suite(const SuiteConfig& suite,
                                        std::ostream* log = nullptr) {
  std::vector<Dataset> datasets;
  datasets.reserve(suite.datasets.size());
  for (const auto& sd : suite.datasets) {
    if (sd.synth)
      datasets.push_back(generate_synthetic(*sd.synth));
    else
      datasets.push_back(load_dataset(sd.path));
  }
  for (std::size_t d = 0; d < suite.datasets.size(); ++d)
    for (const auto& spec : suite.strategies)
      if (spec.applies_to(suite.datasets[d].id))
        validate(spec, datasets[d].graph.directed);

  struct Job {
    std::size_t dataset_idx;
    std::size_t strategy_idx;
    std::uint64_t replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < suite.datasets.size(); ++d)
    for (std::size_t s = 0; s < suite.strategies.size(); ++s) {
      if (!suite.strategies[s].applies_to(suite.datasets[d].id)) continue;
      for (auto rep : suite.seeds) jobs.push_back({d, s, rep});
    }

  std::vector<RunRecord> records(jobs.size());
  parallel_for_index(jobs.size(), suite.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto& spec = suite.strategies[job.strategy_idx];
    const auto& sd = suite.datasets[job.dataset_idx];
    RunRecord rec = run_strategy(datasets[job.dataset_idx], spec,
                                 run_seed_for(sd.id, spec.id, job.replicate), suite.eval);
    rec.dataset_id = sd.id;
    rec.seed = job.replicate;
    records[i] = std::move(rec);
  });
  // jobs are generated in (dataset, strategy, seed) order already
  if (log) {
    for (const auto& r : records)
      (*log) << r.dataset_id << '/' << r.strategy_id << " seed=" << r.seed
             << " set_ei=" << format_double(r.report.set_ei)
             << " oracle=" << format_double(r.report.oracle)
             << " wall_ms=" << format_double(r.wall_clock_ms) << '\n';
  }
  return records;
}

// ---------------------------------------------------------------------------
// results.csv
// ---------------------------------------------------------------------------

inline constexpr char kResultsHeader[] =
    "dataset,strategy,category,seed,num_experts,expert_accs,mean_acc,max_acc,"
    "set_ei,oracle,cg,ensemble_acc,ensemble_val_acc,gate_acc,weights,delta_acc,"
    "eval_split";

inline std::string record_to_csv_row(const RunRecord& r) {
  auto join = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ';';
      out += format_double(v[i]);
    }
    return out;
  };
  std::string row;
  row += r.dataset_id + ',' + r.strategy_id + ',' + category_name(r.category) + ',';
  row += std::to_string(r.seed) + ',' + std::to_string(r.num_experts) + ',';
  row += join(r.report.expert_accs) + ',';
  row += format_double(r.report.mean_acc) + ',' + format_double(r.report.max_acc) + ',';
  row += format_double(r.report.set_ei) + ',' + format_double(r.report.oracle) + ',';
  row += format_double(r.report.cg) + ',' + format_double(r.report.ensemble_acc) + ',';
  row += format_double(r.report.ensemble_val_acc) + ',' +
         format_double(r.report.gate_acc) + ',';
  row += join(r.report.ensemble_weights) + ',';
  row += (r.delta_acc ? format_double(*r.delta_acc) : std::string{}) + ',';
  row += r.report.eval_split;
  return row;
}

inline void write_results_csv(const std::vector<RunRecord>& records,
                              const std::filesystem::path& path) {
  for (const auto& r : records) r.report.check_invariants();
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << kResultsHeader << '\n';
  for (const auto& r : records) f << record_to_csv_row(r) << '\n';
}

inline void write_summary_json(const std::vector<RunRecord>& records,
                               const std::filesystem::path& path) {
  auto quartiles = [](std::vector<double> xs) {
    nlohmann::json q;
    if (xs.empty()) return q;
    std::sort(xs.begin(), xs.end());
    auto at = [&](double p) {
      double idx = p * static_cast<double>(xs.size() - 1);
      auto lo = static_cast<std::size_t>(idx);
      auto hi = std::min(lo + 1, xs.size() - 1);
      double frac = idx - static_cast<double>(lo);
      return xs[lo] * (1 - frac) + xs[hi] * frac;
    };
    q["min"] = xs.front();
    q["q1"] = at(0.25);
    q["median"] = at(0.5);
    q["q3"] = at(0.75);
    q["max"] = xs.back();
    return q;
  };

  std::map<std::string, std::vector<double>> ei_by_category;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& r : records) {
    if (r.report.has_ei)
      ei_by_category[category_name(r.category)].push_back(r.report.set_ei);
    nlohmann::json p;
    p["dataset"] = r.dataset_id;
    p["strategy"] = r.strategy_id;
    p["category"] = category_name(r.category);
    p["seed"] = r.seed;
    p["set_ei"] = r.report.set_ei;
    p["oracle_gain_vs_mean"] = r.report.oracle - r.report.mean_acc;
    p["oracle_gain_vs_max"] = r.report.oracle - r.report.max_acc;
    p["ensemble_gain_vs_mean"] = r.report.ensemble_acc - r.report.mean_acc;
    p["ensemble_gain_vs_max"] = r.report.ensemble_acc - r.report.max_acc;
    p["gate_gain_vs_mean"] = r.report.gate_acc - r.report.mean_acc;
    p["gate_gain_vs_max"] = r.report.gate_acc - r.report.max_acc;
    if (r.delta_acc) p["delta_acc"] = *r.delta_acc;
    pairs.push_back(std::move(p));
  }
  nlohmann::json out;
  out["ei_by_category"] = nlohmann::json::object();
  for (auto& [cat, xs] : ei_by_category) out["ei_by_category"][cat] = quartiles(xs);
  out["runs"] = std::move(pairs);
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << out.dump(2) << '\n';
}

}  // namespace expertforge
