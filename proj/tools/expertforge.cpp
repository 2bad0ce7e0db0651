#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "expertforge/config.hpp"
#include "expertforge/dataset_io.hpp"
#include "expertforge/domains.hpp"
#include "expertforge/ensemble.hpp"
#include "expertforge/experts.hpp"
#include "expertforge/metrics.hpp"
#include "expertforge/report.hpp"
#include "expertforge/runner.hpp"
#include "expertforge/synth.hpp"

namespace fs = std::filesystem;
using namespace expertforge;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitInvariantError = 3;

// --- synth -------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
};

int cmd_synth(const SynthArgs& args) {
  SynthConfig cfg = load_synth_config(args.config);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  Dataset ds = generate_synthetic(cfg);
  save_dataset(ds, args.out);
  nlohmann::json info;
  info["num_nodes"] = ds.graph.num_nodes;
  info["num_edges"] = ds.graph.num_edges();
  info["directed"] = ds.graph.directed;
  info["num_classes"] = ds.graph.num_classes;
  info["edge_homophily"] = edge_homophily(ds.graph);
  info["config"] = synth_config_to_json(cfg);
  std::ofstream(fs::path(args.out) / "synth_info.json") << info.dump(2) << '\n';
  std::cout << "wrote dataset to " << args.out << " (" << ds.graph.num_nodes
            << " nodes, " << ds.graph.num_edges() << " edges)\n";
  return 0;
}

// --- metrics -----------------------------------------------------------

struct MetricsArgs {
  std::string data;
  std::string out = "metrics";
  std::vector<std::string> metrics;
};

int cmd_metrics(const MetricsArgs& args) {
  Dataset ds = load_dataset(args.data);
  const Graph& g = ds.graph;
  std::vector<std::string> wanted = args.metrics;
  if (wanted.empty())
    wanted = {"degree",        "pagerank",        "clustercoef",  "homophily",
              "neigh-entropy", "max-neigh-ratio", "intra-degree", "intra-feat",
              "intra-label"};

  std::vector<NodeScores> columns;
  for (const auto& name : wanted) {
    if (name == "degree")
      columns.push_back(undirected_degree(g));
    else if (name == "pagerank")
      columns.push_back(pagerank(g));
    else if (name == "clustercoef")
      columns.push_back(clustering_coefficient(g));
    else if (name == "homophily")
      columns.push_back(node_homophily(g));
    else if (name == "homophily-filtered")
      columns.push_back(filtered_node_homophily(g, mask_or(ds.train_mask, ds.val_mask)));
    else if (name == "neigh-entropy")
      columns.push_back(neighborhood_entropy(g));
    else if (name == "max-neigh-ratio")
      columns.push_back(max_neighbor_ratio(g));
    else if (name == "intra-degree")
      columns.push_back(intra_degree(g));
    else if (name == "intra-feat")
      columns.push_back(intra_feature_similarity(g));
    else if (name == "intra-label")
      columns.push_back(intra_label_agreement(g));
    else if (name == "d-dir")
      columns.push_back(degree_profile(g).d_dir);
    else if (name == "d-und")
      columns.push_back(degree_profile(g).d_und);
    else
      throw ConfigError("unknown metric '" + name + "'");
  }

  fs::path csv_path = args.out + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path.string());
  csv << "node_id";
  for (const auto& c : columns) csv << ',' << c.metric_name;
  csv << '\n';
  for (NodeId i = 0; i < g.num_nodes; ++i) {
    csv << i;
    for (const auto& c : columns) {
      csv << ',';
      if (c.defined[static_cast<std::size_t>(i)]) csv << format_double(c.values[i]);
    }
    csv << '\n';
  }

  nlohmann::json side;
  side["edge_homophily"] = edge_homophily(g);
  side["directed"] = g.directed;
  if (g.directed) {
    auto rep = direction_informativeness(g);
    side["amud"] = rep.amud;
    side["di"] = rep.di;
    side["rho_dir"] = rep.rho_dir;
    side["rho_und"] = rep.rho_und;
    side["verdict"] = verdict_name(rep.verdict);
  }
  fs::path json_path = args.out + ".json";
  std::ofstream(json_path) << side.dump(2) << '\n';
  std::cout << "wrote " << csv_path.string() << " and " << json_path.string() << '\n';
  return 0;
}

// --- partition -----------------------------------------------------------

struct PartitionArgs {
  std::string data;
  std::string method = "homophily";
  int domains = 2;
  std::int64_t seed = 0;
  std::string out = "partition";
};

int cmd_partition(const PartitionArgs& args) {
  Dataset ds = load_dataset(args.data);
  auto dom = make_partition(ds, partition_method_from_name(args.method), args.domains,
                            static_cast<std::uint64_t>(args.seed));
  fs::path csv_path = args.out + ".csv";
  std::ofstream csv(csv_path);
  csv << "node_id,domain\n";
  for (std::size_t i = 0; i < dom.assignment.size(); ++i)
    csv << i << ',' << dom.assignment[i] << '\n';
  nlohmann::json summary;
  summary["method"] = args.method;
  summary["source"] = dom.source;
  summary["num_domains"] = dom.num_domains;
  summary["weights"] = dom.weights;
  std::ofstream(fs::path(args.out + ".json")) << summary.dump(2) << '\n';
  std::cout << "wrote " << csv_path.string() << '\n';
  return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::int64_t seed = -1;
  std::string checkpoint = "expert.ckpt";
  std::string logits = "logits.csv";
};

int cmd_train(const TrainArgs& args) {
  Dataset ds = load_dataset(args.data);
  ExpertConfig cfg = args.config.empty() ? ExpertConfig{} : load_expert_config(args.config);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  Expert e = train_expert(ds, cfg);
  save_expert(e, args.checkpoint);
  write_logits_csv(e.logits, args.logits);
  std::cout << "trained expert: best epoch " << e.best_epoch << ", val acc "
            << format_double(e.best_val_acc) << ", test acc "
            << format_double(accuracy_on_mask(e.logits, ds.graph.labels, ds.test_mask))
            << '\n';
  return 0;
}

// --- eval-domains ----------------------------------------------------------

struct EvalDomainsArgs {
  std::string data;
  std::string method = "homophily";
  std::string assignment_csv;
  int domains = 2;
  std::string mode = "scratch";
  std::string expert_config;
  std::int64_t seed = 0;
  std::string out = "domain_eval.json";
};

int cmd_eval_domains(const EvalDomainsArgs& args) {
  Dataset ds = load_dataset(args.data);
  DomainAssignment dom;
  if (!args.assignment_csv.empty()) {
    std::ifstream f(args.assignment_csv);
    if (!f) throw ConfigError("missing assignment file: " + args.assignment_csv);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::int32_t> assignment(static_cast<std::size_t>(ds.graph.num_nodes), -1);
    std::int32_t max_dom = 0;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto comma = line.find(',');
      if (comma == std::string::npos)
        throw ConfigError("malformed assignment row: " + line);
      auto node = std::stol(line.substr(0, comma));
      auto d = static_cast<std::int32_t>(std::stol(line.substr(comma + 1)));
      if (node < 0 || node >= ds.graph.num_nodes)
        throw ConfigError("assignment node id out of range: " + std::to_string(node));
      assignment[static_cast<std::size_t>(node)] = d;
      max_dom = std::max(max_dom, d + 1);
    }
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] < 0)
        throw ConfigError("assignment missing node " + std::to_string(i));
    dom = detail::from_assignment(std::move(assignment), max_dom,
                                  "file:" + args.assignment_csv);
  } else {
    dom = make_partition(ds, partition_method_from_name(args.method), args.domains,
                         static_cast<std::uint64_t>(args.seed));
  }
  ExpertConfig cfg =
      args.expert_config.empty() ? ExpertConfig{} : load_expert_config(args.expert_config);
  auto report = evaluate_assignment(ds, dom, cfg, training_mode_from_name(args.mode),
                                    static_cast<std::uint64_t>(args.seed));
  nlohmann::json j;
  j["delta_acc"] = report.delta_acc;
  j["full_expert_test_acc"] = report.full_expert_test_acc;
  j["warnings"] = report.warnings;
  j["source"] = dom.source;
  j["mode"] = args.mode;
  j["domains"] = nlohmann::json::array();
  for (const auto& d : report.domains)
    j["domains"].push_back({{"domain", d.domain},
                            {"weight", d.weight},
                            {"acc_domain_expert", d.acc_domain_expert},
                            {"acc_full_expert", d.acc_full_expert},
                            {"train_count", d.train_count},
                            {"test_count", d.test_count},
                            {"skipped", d.skipped}});
  std::ofstream(args.out) << j.dump(2) << '\n';
  std::cout << "delta_acc = " << format_double(report.delta_acc) << " (wrote " << args.out
            << ")\n";
  return 0;
}

// --- ensemble ---------------------------------------------------------------

struct EnsembleArgs {
  std::string data;
  std::vector<std::string> logits;
  std::string out = "ensemble_report.json";
  std::string csv;
  std::string eval_split = "test";
  std::int64_t seed = 0;
  int budget = 200;
};

int cmd_ensemble(const EnsembleArgs& args) {
  if (args.logits.size() < 2) throw ConfigError("ensemble needs at least 2 logits files");
  Dataset ds = load_dataset(args.data);
  std::vector<Eigen::MatrixXf> zs;
  for (const auto& path : args.logits) {
    auto z = read_logits_csv(path);
    if (z.rows() != ds.graph.num_nodes || z.cols() != ds.graph.num_classes)
      throw ConfigError("logits shape mismatch in " + path);
    zs.push_back(std::move(z));
  }
  if (args.eval_split != "test" && args.eval_split != "val")
    throw ConfigError("--eval-split must be test or val");
  const Mask& eval_mask = args.eval_split == "val" ? ds.val_mask : ds.test_mask;
  const auto seed = static_cast<std::uint64_t>(args.seed);

  EnsembleReport rep;
  rep.eval_split = args.eval_split;
  for (const auto& z : zs)
    rep.expert_accs.push_back(accuracy_on_mask(z, ds.graph.labels, eval_mask));
  rep.max_acc = *std::max_element(rep.expert_accs.begin(), rep.expert_accs.end());
  for (double a : rep.expert_accs) rep.mean_acc += a;
  rep.mean_acc /= static_cast<double>(rep.expert_accs.size());
  auto cm = correctness(zs, ds.graph.labels, eval_mask, args.eval_split);
  auto ei = error_inconsistency(cm);
  rep.has_ei = true;
  rep.pairwise_ei = ei.pairwise;
  rep.set_ei = ei.set_ei;
  auto oc = oracle_and_cg(cm, rep.expert_accs);
  rep.oracle = oc.oracle;
  rep.cg = oc.cg;
  auto gw = tune_global_weights(zs, ds.graph.labels, ds.val_mask, args.budget,
                                derive_seed(seed, "ensemble-weights"));
  rep.ensemble_weights = gw.weights;
  rep.ensemble_val_acc = gw.val_acc;
  rep.ensemble_acc = detail::mixture_accuracy(zs, gw.weights, ds.graph.labels, eval_mask);
  Eigen::MatrixXd extra = gate_structure_features(ds);
  GateModel gate = train_gate(zs, extra, ds.graph.labels, ds.val_mask, GateConfig{},
                              derive_seed(seed, "gate"));
  rep.gate_acc = accuracy_on_mask(gate.mixed_logits(zs, extra), ds.graph.labels, eval_mask);
  rep.check_invariants();

  nlohmann::json j;
  j["expert_accs"] = rep.expert_accs;
  j["mean_acc"] = rep.mean_acc;
  j["max_acc"] = rep.max_acc;
  j["set_ei"] = rep.set_ei;
  auto pw = nlohmann::json::array();
  for (Eigen::Index i = 0; i < rep.pairwise_ei.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < rep.pairwise_ei.cols(); ++k)
      row.push_back(rep.pairwise_ei(i, k));
    pw.push_back(row);
  }
  j["pairwise_ei"] = pw;
  j["oracle"] = rep.oracle;
  j["cg"] = rep.cg;
  j["ensemble_weights"] = rep.ensemble_weights;
  j["ensemble_val_acc"] = rep.ensemble_val_acc;
  j["ensemble_acc"] = rep.ensemble_acc;
  j["gate_acc"] = rep.gate_acc;
  j["eval_split"] = rep.eval_split;
  std::ofstream(args.out) << j.dump(2) << '\n';

  if (!args.csv.empty()) {
    RunRecord rec;
    rec.dataset_id = args.data;
    rec.strategy_id = "cli-ensemble";
    rec.category = StrategyCategory::Reinit;
    rec.seed = seed;
    rec.num_experts = static_cast<int>(zs.size());
    rec.report = rep;
    std::ofstream csv(args.csv);
    csv << kResultsHeader << '\n' << record_to_csv_row(rec) << '\n';
  }
  std::cout << "set_ei=" << format_double(rep.set_ei)
            << " oracle=" << format_double(rep.oracle)
            << " ensemble=" << format_double(rep.ensemble_acc)
            << " gate=" << format_double(rep.gate_acc) << '\n';
  return 0;
}

// --- run / report --------------------------------------------------

struct RunArgs {
  std::string config;
  std::string out = "results";
  int workers = 0;
};

int cmd_run(const RunArgs& args) {
  SuiteConfig suite = load_suite_config(args.config);
  if (args.workers > 0) suite.workers = args.workers;
  fs::create_directories(args.out);
  auto records = run_suite(suite, &std::cerr);
  write_results_csv(records, fs::path(args.out) / "results.csv");
  write_summary_json(records, fs::path(args.out) / "summary.json");
  std::cout << "wrote " << records.size() << " run records to " << args.out << '\n';
  return 0;
}

struct ReportArgs {
  std::string results;
  std::string out = "report";
};

int cmd_report(const ReportArgs& args) {
  auto stats = write_report(args.results, args.out);
  for (const auto& w : stats.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "report over " << stats.rows_used << " rows; spearman(set EI, oracle gain)"
            << " vs mean = " << format_double(stats.spearman_oracle_gain_vs_mean)
            << ", vs max = " << format_double(stats.spearman_oracle_gain_vs_max) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expert diversification toolkit for node classification"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  synth->add_option("--config", synth_args.config, "SynthConfig TOML")->required();
  synth->add_option("--out", synth_args.out, "output dataset directory")->required();
  synth->add_option("--seed", synth_args.seed, "override config seed");

  MetricsArgs metrics_args;
  auto* metrics = app.add_subcommand("metrics", "per-node metric CSV + graph-level JSON");
  metrics->add_option("--data", metrics_args.data, "dataset directory")->required();
  metrics->add_option("--out", metrics_args.out, "output prefix");
  metrics->add_option("--metrics", metrics_args.metrics, "metric names")->delimiter(',');

  PartitionArgs part_args;
  auto* part = app.add_subcommand("partition", "node -> domain assignment");
  part->add_option("--data", part_args.data, "dataset directory")->required();
  part->add_option("--method", part_args.method, "partition method");
  part->add_option("--domains", part_args.domains, "number of domains M");
  part->add_option("--seed", part_args.seed, "seed");
  part->add_option("--out", part_args.out, "output prefix");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one expert");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--config", train_args.config, "ExpertConfig TOML");
  train->add_option("--seed", train_args.seed, "override config seed");
  train->add_option("--checkpoint", train_args.checkpoint, "checkpoint path");
  train->add_option("--logits", train_args.logits, "logits CSV path");

  EvalDomainsArgs evald_args;
  auto* evald = app.add_subcommand("eval-domains", "weighted gain of domain experts");
  evald->add_option("--data", evald_args.data, "dataset directory")->required();
  evald->add_option("--method", evald_args.method, "partition method");
  evald->add_option("--assignment", evald_args.assignment_csv,
                    "node,domain CSV instead of --method");
  evald->add_option("--domains", evald_args.domains, "number of domains M");
  evald->add_option("--mode", evald_args.mode, "scratch | finetune");
  evald->add_option("--expert", evald_args.expert_config, "ExpertConfig TOML");
  evald->add_option("--seed", evald_args.seed, "seed");
  evald->add_option("--out", evald_args.out, "report JSON path");

  EnsembleArgs ens_args;
  auto* ens = app.add_subcommand("ensemble", "evaluate an expert set from logits CSVs");
  ens->add_option("--data", ens_args.data, "dataset directory")->required();
  ens->add_option("--logits", ens_args.logits, "two or more logits CSVs")
      ->required()
      ->expected(-2);
  ens->add_option("--out", ens_args.out, "report JSON path");
  ens->add_option("--csv", ens_args.csv, "also write a flat results.csv row");
  ens->add_option("--eval-split", ens_args.eval_split, "test | val");
  ens->add_option("--seed", ens_args.seed, "seed");
  ens->add_option("--budget", ens_args.budget, "weight search budget");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "execute a suite TOML");
  run->add_option("--config", run_args.config, "suite TOML")->required();
  run->add_option("--out", run_args.out, "output directory");
  run->add_option("--workers", run_args.workers, "concurrent runs");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "plots + tables from results.csv");
  report->add_option("--results", report_args.results, "results.csv path")->required();
  report->add_option("--out", report_args.out, "output directory");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (metrics->parsed()) return cmd_metrics(metrics_args);
    if (part->parsed()) return cmd_partition(part_args);
    if (train->parsed()) return cmd_train(train_args);
    if (evald->parsed()) return cmd_eval_domains(evald_args);
    if (ens->parsed()) return cmd_ensemble(ens_args);
    if (run->parsed()) return cmd_run(run_args);
    if (report->parsed()) return cmd_report(report_args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return kExitInvariantError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvariantError;
  }
  return 0;
}
