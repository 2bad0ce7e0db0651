#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "expertforge/graph.hpp"

// Dataset directory format:
//   edges.tsv     src<TAB>dst, one edge per line
//   features.csv  one row per node, comma-separated decimals
//   labels.csv    one integer per line
//   splits.json   {"train":[ids],"val":[ids],"test":[ids],
//                  "directed":bool,"num_classes":int}

namespace expertforge {

struct LoadReport {
  GraphBuildStats stats;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("missing file: " + p.string());
  return f;
}

inline double parse_double(std::string_view tok, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw ConfigError("bad number '" + std::string(tok) + "' in " + where);
  return v;
}

inline long parse_long(std::string_view tok, const std::string& where) {
  long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw ConfigError("bad integer '" + std::string(tok) + "' in " + where);
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t'))
    s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir,
                            LoadReport* report = nullptr) {
  namespace fs = std::filesystem;
  auto labels_file = detail::open_or_throw(dir / "labels.csv");
  std::vector<std::int32_t> labels;
  std::string line;
  while (std::getline(labels_file, line)) {
    auto t = detail::trim(line);
    if (t.empty()) continue;
    labels.push_back(static_cast<std::int32_t>(detail::parse_long(t, "labels.csv")));
  }
  const auto n = static_cast<NodeId>(labels.size());

  auto feat_file = detail::open_or_throw(dir / "features.csv");
  std::vector<std::vector<double>> rows;
  while (std::getline(feat_file, line)) {
    auto t = detail::trim(line);
    if (t.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= t.size()) {
      auto comma = t.find(',', start);
      auto tok = detail::trim(t.substr(start, comma == std::string_view::npos
                                                  ? std::string_view::npos
                                                  : comma - start));
      row.push_back(detail::parse_double(tok, "features.csv"));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (static_cast<NodeId>(rows.size()) != n)
    throw ConfigError("features.csv has " + std::to_string(rows.size()) +
                      " rows, labels.csv has " + std::to_string(n));
  const auto dim = rows.empty() ? 0 : rows[0].size();
  Eigen::MatrixXd features(n, static_cast<Eigen::Index>(dim));
  for (NodeId i = 0; i < n; ++i) {
    if (rows[static_cast<std::size_t>(i)].size() != dim)
      throw ConfigError("features.csv row " + std::to_string(i) + " has ragged width");
    for (std::size_t j = 0; j < dim; ++j)
      features(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
  }

  auto edges_file = detail::open_or_throw(dir / "edges.tsv");
  EdgeList edges;
  while (std::getline(edges_file, line)) {
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto tab = t.find('\t');
    if (tab == std::string_view::npos) throw ConfigError("edges.tsv line lacks a tab");
    auto u = detail::parse_long(detail::trim(t.substr(0, tab)), "edges.tsv");
    auto v = detail::parse_long(detail::trim(t.substr(tab + 1)), "edges.tsv");
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
  }

  auto splits_file = detail::open_or_throw(dir / "splits.json");
  nlohmann::json splits;
  try {
    splits_file >> splits;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("splits.json: ") + e.what());
  }
  for (const char* key : {"train", "val", "test", "directed", "num_classes"})
    if (!splits.contains(key))
      throw ConfigError(std::string("splits.json missing key '") + key + "'");
  const bool directed = splits["directed"].get<bool>();
  const auto num_classes = splits["num_classes"].get<std::int32_t>();

  GraphBuildStats stats;
  Dataset ds;
  ds.graph = make_graph(n, std::move(edges), directed, std::move(features),
                        std::move(labels), num_classes, &stats);
  auto read_mask = [&](const char* key) {
    Mask m(static_cast<std::size_t>(n), 0);
    for (const auto& id : splits[key]) {
      auto i = id.get<std::int64_t>();
      if (i < 0 || i >= n)
        throw ConfigError("splits.json " + std::string(key) + " id out of range: " +
                          std::to_string(i));
      m[static_cast<std::size_t>(i)] = 1;
    }
    return m;
  };
  ds.train_mask = read_mask("train");
  ds.val_mask = read_mask("val");
  ds.test_mask = read_mask("test");
  validate_dataset(ds);
  if (report) {
    report->stats = stats;
    if (stats.self_loops_removed > 0)
      report->warnings.push_back("dropped " + std::to_string(stats.self_loops_removed) +
                                 " self-loop(s)");
    if (stats.duplicate_edges_removed > 0)
      report->warnings.push_back("dropped " +
                                 std::to_string(stats.duplicate_edges_removed) +
                                 " duplicate edge(s)");
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Graph& g = ds.graph;
  {
    std::ofstream f(dir / "edges.tsv");
    if (g.directed) {
      for (NodeId u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.out.row(u)) f << u << '\t' << v << '\n';
    } else {
      // One line per symmetric pair; load_dataset restores the closure.
      for (NodeId u = 0; u < g.num_nodes; ++u)
        for (NodeId v : g.out.row(u))
          if (u < v) f << u << '\t' << v << '\n';
    }
  }
  {
    std::ofstream f(dir / "features.csv");
    for (NodeId i = 0; i < g.num_nodes; ++i) {
      for (Eigen::Index j = 0; j < g.features.cols(); ++j) {
        if (j) f << ',';
        f << format_double(g.features(i, j));
      }
      f << '\n';
    }
  }
  {
    std::ofstream f(dir / "labels.csv");
    for (auto y : g.labels) f << y << '\n';
  }
  {
    nlohmann::json splits;
    auto ids_of = [](const Mask& m) {
      std::vector<std::int64_t> ids;
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) ids.push_back(static_cast<std::int64_t>(i));
      return ids;
    };
    splits["train"] = ids_of(ds.train_mask);
    splits["val"] = ids_of(ds.val_mask);
    splits["test"] = ids_of(ds.test_mask);
    splits["directed"] = g.directed;
    splits["num_classes"] = g.num_classes;
    std::ofstream f(dir / "splits.json");
    f << splits.dump(2) << '\n';
  }
}

}  // namespace expertforge
