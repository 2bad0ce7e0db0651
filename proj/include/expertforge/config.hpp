#pragma once

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "expertforge/domains.hpp"
#include "expertforge/experts.hpp"
#include "expertforge/synth.hpp"
#include "expertforge/toml.hpp"

// TOML-backed config surfaces. Every loader takes the parsed tree plus an
// origin string and names the offending key on error.

namespace expertforge {

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback,
         const std::string& origin) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(origin + ": bad value for '" + key + "'");
  }
}

}  // namespace detail

inline ExpertConfig expert_config_from_json(const nlohmann::json& j,
                                            const std::string& origin = "expert config") {
  ExpertConfig cfg;
  cfg.depth = detail::get_or(j, "depth", cfg.depth, origin);
  if (j.contains("filter")) cfg.filter = filter_from_name(j.at("filter").get<std::string>());
  if (j.contains("skip")) cfg.skip = skip_from_name(j.at("skip").get<std::string>());
  cfg.hidden_dim = detail::get_or(j, "hidden_dim", cfg.hidden_dim, origin);
  cfg.dropout = detail::get_or(j, "dropout", cfg.dropout, origin);
  cfg.epochs = detail::get_or(j, "epochs", cfg.epochs, origin);
  cfg.learning_rate = detail::get_or(j, "learning_rate", cfg.learning_rate, origin);
  cfg.weight_decay = detail::get_or(j, "weight_decay", cfg.weight_decay, origin);
  cfg.patience = detail::get_or(j, "patience", cfg.patience, origin);
  cfg.seed = detail::get_or(j, "seed", cfg.seed, origin);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    static const std::set<std::string> known{
        "depth",  "filter", "skip",          "hidden_dim",   "dropout",
        "epochs", "patience", "learning_rate", "weight_decay", "seed"};
    if (!known.count(key)) throw ConfigError(origin + ": unknown key '" + key + "'");
  }
  return cfg;
}

inline ExpertConfig load_expert_config(const std::string& path) {
  return expert_config_from_json(toml::parse_file(path), path);
}

inline DirectionMode direction_mode_from_name(const std::string& s) {
  if (s == "none") return DirectionMode::None;
  if (s == "label-coupled") return DirectionMode::LabelCoupled;
  if (s == "label-independent") return DirectionMode::LabelIndependent;
  throw ConfigError("unknown direction mode '" + s + "'");
}

inline const char* direction_mode_name(DirectionMode m) {
  switch (m) {
    case DirectionMode::None: return "none";
    case DirectionMode::LabelCoupled: return "label-coupled";
    case DirectionMode::LabelIndependent: return "label-independent";
  }
  return "?";
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j,
                                          const std::string& origin = "synth config") {
  SynthConfig cfg;
  cfg.num_nodes = detail::get_or(j, "num_nodes", cfg.num_nodes, origin);
  cfg.num_classes = detail::get_or(j, "num_classes", cfg.num_classes, origin);
  cfg.feature_dim = detail::get_or(j, "feature_dim", cfg.feature_dim, origin);
  cfg.feature_snr = detail::get_or(j, "feature_snr", cfg.feature_snr, origin);
  if (j.contains("direction"))
    cfg.direction = direction_mode_from_name(j.at("direction").get<std::string>());
  cfg.seed = detail::get_or(j, "seed", cfg.seed, origin);
  if (!j.contains("blocks") || !j.at("blocks").is_array() || j.at("blocks").empty())
    throw ConfigError(origin + ": needs at least one [[blocks]] entry");
  cfg.blocks.clear();
  for (const auto& b : j.at("blocks")) {
    SynthBlock blk;
    blk.fraction = detail::get_or(b, "fraction", blk.fraction, origin);
    blk.p_in = detail::get_or(b, "p_in", blk.p_in, origin);
    blk.p_out = detail::get_or(b, "p_out", blk.p_out, origin);
    blk.mean_degree = detail::get_or(b, "mean_degree", blk.mean_degree, origin);
    cfg.blocks.push_back(blk);
  }
  validate(cfg);
  return cfg;
}

inline SynthConfig load_synth_config(const std::string& path) {
  return synth_config_from_json(toml::parse_file(path), path);
}

inline nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
  nlohmann::json j;
  j["num_nodes"] = cfg.num_nodes;
  j["num_classes"] = cfg.num_classes;
  j["feature_dim"] = cfg.feature_dim;
  j["feature_snr"] = cfg.feature_snr;
  j["direction"] = direction_mode_name(cfg.direction);
  j["seed"] = cfg.seed;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : cfg.blocks)
    j["blocks"].push_back({{"fraction", b.fraction},
                           {"p_in", b.p_in},
                           {"p_out", b.p_out},
                           {"mean_degree", b.mean_degree}});
  return j;
}

}  // namespace expertforge
