#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "expertforge/common.hpp"
#include "expertforge/metrics.hpp"

// Rendering of suite results: scatter of accuracy gain vs error
// inconsistency, per-category EI boxplots, and the domain-assignment
// markdown table. Plots are static SVG.

namespace expertforge {

struct ResultRow {
  std::string dataset, strategy, category;
  std::uint64_t seed = 0;
  int num_experts = 0;
  std::vector<double> expert_accs;
  double mean_acc = 0, max_acc = 0;
  double set_ei = 0, oracle = 0, cg = 0;
  double ensemble_acc = 0, ensemble_val_acc = 0, gate_acc = 0;
  std::vector<double> weights;
  std::optional<double> delta_acc;
  std::string eval_split;
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos
                                                           : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<double> parse_joined(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& tok : split_on(s, ';')) out.push_back(std::stod(tok));
  return out;
}

}  // namespace detail

/// Reads results.csv back; malformed rows are skipped with a warning, rows
/// violating the oracle >= best-expert bound are rejected as corrupt.
inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path,
                                               std::vector<std::string>* warnings = nullptr) {
  std::ifstream f(path);
  if (!f) throw ConfigError("missing results file: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("empty results file: " + path.string());
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = detail::split_on(line, ',');
    if (cols.size() != 17) {
      warn("skipping malformed row (" + std::to_string(cols.size()) + " columns)");
      continue;
    }
    try {
      ResultRow r;
      r.dataset = cols[0];
      r.strategy = cols[1];
      r.category = cols[2];
      r.seed = std::stoull(cols[3]);
      r.num_experts = std::stoi(cols[4]);
      r.expert_accs = detail::parse_joined(cols[5]);
      r.mean_acc = std::stod(cols[6]);
      r.max_acc = std::stod(cols[7]);
      r.set_ei = std::stod(cols[8]);
      r.oracle = std::stod(cols[9]);
      r.cg = std::stod(cols[10]);
      r.ensemble_acc = std::stod(cols[11]);
      r.ensemble_val_acc = std::stod(cols[12]);
      r.gate_acc = std::stod(cols[13]);
      r.weights = detail::parse_joined(cols[14]);
      if (!cols[15].empty()) r.delta_acc = std::stod(cols[15]);
      r.eval_split = cols[16];
      if (r.oracle + 1e-12 < r.max_acc) {
        warn("rejecting corrupt row: oracle below best expert accuracy");
        continue;
      }
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      warn(std::string("skipping malformed row: ") + e.what());
    }
  }
  return rows;
}

/// Spearman rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("spearman: length mismatch");
  if (x.size() < 2) throw ConfigError("spearman: need at least 2 samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  Eigen::VectorXd ex = Eigen::Map<Eigen::VectorXd>(rx.data(), static_cast<Eigen::Index>(rx.size()));
  Eigen::VectorXd ey = Eigen::Map<Eigen::VectorXd>(ry.data(), static_cast<Eigen::Index>(ry.size()));
  return pearson(ex, ey).r;
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

namespace detail {

class SvgCanvas {
 public:
  SvgCanvas(double width, double height) : w_(width), h_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\""
          << h_ << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n"
          << "<rect width=\"" << w_ << "\" height=\"" << h_ << "\" fill=\"white\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& color,
            double width = 1.0) {
    body_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\""
          << y2 << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& color,
              double opacity = 0.75) {
    body_ << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r << "\" fill=\""
          << color << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "black") {
    body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
          << h << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 12,
            const std::string& anchor = "start") {
    body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s
          << "</text>\n";
  }

  void save(const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << body_.str() << "</svg>\n";
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

struct AxisMap {
  double lo = 0, hi = 1;
  double pix_lo = 0, pix_hi = 1;
  double operator()(double v) const {
    if (hi <= lo) return (pix_lo + pix_hi) / 2;
    return pix_lo + (v - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
};

inline std::pair<double, double> padded_range(std::vector<double> xs) {
  if (xs.empty()) return {0.0, 1.0};
  auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  double lo = *mn, hi = *mx;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = (hi - lo) * 0.08;
  return {lo - pad, hi + pad};
}

}  // namespace detail

/// Scatter of per-run accuracy gain (oracle / ensemble / gate, color-coded)
/// against set EI.
inline void write_gain_scatter_svg(const std::vector<ResultRow>& rows, bool vs_mean,
                                   const std::filesystem::path& path) {
  const double W = 640, H = 480, ml = 70, mr = 20, mt = 40, mb = 55;
  detail::SvgCanvas svg(W, H);
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    double base = vs_mean ? r.mean_acc : r.max_acc;
    xs.push_back(r.set_ei);
    ys.push_back(r.oracle - base);
    ys.push_back(r.ensemble_acc - base);
    ys.push_back(r.gate_acc - base);
  }
  auto [xlo, xhi] = detail::padded_range(xs);
  auto [ylo, yhi] = detail::padded_range(ys);
  detail::AxisMap xm{xlo, xhi, ml, W - mr};
  detail::AxisMap ym{ylo, yhi, H - mb, mt};

  svg.line(ml, H - mb, W - mr, H - mb, "black");
  svg.line(ml, mt, ml, H - mb, "black");
  for (int t = 0; t <= 4; ++t) {
    double xv = xlo + (xhi - xlo) * t / 4.0;
    double yv = ylo + (yhi - ylo) * t / 4.0;
    svg.line(xm(xv), H - mb, xm(xv), H - mb + 4, "black");
    svg.text(xm(xv), H - mb + 18, format_double(std::round(xv * 1000) / 1000), 11, "middle");
    svg.line(ml - 4, ym(yv), ml, ym(yv), "black");
    svg.text(ml - 8, ym(yv) + 4, format_double(std::round(yv * 1000) / 1000), 11, "end");
  }
  if (ylo < 0 && yhi > 0) svg.line(ml, ym(0), W - mr, ym(0), "#cccccc");
  svg.text(W / 2, H - 12, "set error inconsistency", 13, "middle");
  svg.text(W / 2, 20,
           vs_mean ? "accuracy gain vs mean expert" : "accuracy gain vs max expert", 14,
           "middle");
  const char* colors[3] = {"#2e7d32", "#ef6c00", "#1565c0"};  // oracle, ensemble, gate
  const char* labels[3] = {"oracle", "ensemble", "gate"};
  for (int s = 0; s < 3; ++s) {
    svg.circle(W - 150, 38 + 16 * s, 4, colors[s], 1.0);
    svg.text(W - 140, 42 + 16 * s, labels[s], 11);
  }
  for (const auto& r : rows) {
    double base = vs_mean ? r.mean_acc : r.max_acc;
    svg.circle(xm(r.set_ei), ym(r.oracle - base), 4, colors[0]);
    svg.circle(xm(r.set_ei), ym(r.ensemble_acc - base), 4, colors[1]);
    svg.circle(xm(r.set_ei), ym(r.gate_acc - base), 4, colors[2]);
  }
  svg.save(path);
}

/// Box-and-whisker EI summary per strategy category.
inline void write_ei_boxplot_svg(const std::vector<ResultRow>& rows,
                                 const std::filesystem::path& path) {
  std::map<std::string, std::vector<double>> by_cat;
  for (const auto& r : rows)
    if (r.num_experts >= 2) by_cat[r.category].push_back(r.set_ei);
  const double W = 560, H = 420, ml = 70, mr = 20, mt = 40, mb = 55;
  detail::SvgCanvas svg(W, H);
  std::vector<double> all;
  for (auto& [cat, xs] : by_cat) all.insert(all.end(), xs.begin(), xs.end());
  auto [ylo, yhi] = detail::padded_range(all);
  ylo = std::max(0.0, ylo);
  detail::AxisMap ym{ylo, yhi, H - mb, mt};
  svg.line(ml, H - mb, W - mr, H - mb, "black");
  svg.line(ml, mt, ml, H - mb, "black");
  for (int t = 0; t <= 4; ++t) {
    double yv = ylo + (yhi - ylo) * t / 4.0;
    svg.line(ml - 4, ym(yv), ml, ym(yv), "black");
    svg.text(ml - 8, ym(yv) + 4, format_double(std::round(yv * 1000) / 1000), 11, "end");
  }
  svg.text(W / 2, 20, "set error inconsistency by strategy category", 14, "middle");
  const double slot = (W - ml - mr) / std::max<std::size_t>(1, by_cat.size());
  std::size_t idx = 0;
  for (auto& [cat, xs] : by_cat) {
    std::sort(xs.begin(), xs.end());
    auto at = [&](double p) {
      double pos = p * static_cast<double>(xs.size() - 1);
      auto lo = static_cast<std::size_t>(pos);
      auto hi = std::min(lo + 1, xs.size() - 1);
      double frac = pos - static_cast<double>(lo);
      return xs[lo] * (1 - frac) + xs[hi] * frac;
    };
    double cx = ml + slot * (static_cast<double>(idx) + 0.5);
    double bw = slot * 0.4;
    double q1 = at(0.25), q2 = at(0.5), q3 = at(0.75);
    svg.line(cx, ym(xs.front()), cx, ym(q1), "black");
    svg.line(cx, ym(q3), cx, ym(xs.back()), "black");
    svg.line(cx - bw / 4, ym(xs.front()), cx + bw / 4, ym(xs.front()), "black");
    svg.line(cx - bw / 4, ym(xs.back()), cx + bw / 4, ym(xs.back()), "black");
    svg.rect(cx - bw / 2, ym(q3), bw, ym(q1) - ym(q3), "#90caf9");
    svg.line(cx - bw / 2, ym(q2), cx + bw / 2, ym(q2), "black", 2.0);
    svg.text(cx, H - mb + 18, cat, 12, "middle");
    ++idx;
  }
  svg.save(path);
}

/// Markdown table in the shape of the domain-assignment comparison: one row
/// per strategy with mean ΔAcc (when present) and mean EI, in percent.
inline void write_domain_table_md(const std::vector<ResultRow>& rows,
                                  const std::filesystem::path& path) {
  struct Agg {
    std::string category;
    std::vector<double> delta, ei;
  };
  std::map<std::string, Agg> by_strategy;
  for (const auto& r : rows) {
    auto& a = by_strategy[r.strategy];
    a.category = r.category;
    if (r.delta_acc) a.delta.push_back(*r.delta_acc);
    if (r.num_experts >= 2) a.ei.push_back(r.set_ei);
  }
  auto mean = [](const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  };
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "| Method | Category | dAcc (%) | EI (%) |\n";
  f << "|---|---|---|---|\n";
  for (const auto& [name, a] : by_strategy) {
    f << "| " << name << " | " << a.category << " | ";
    if (a.delta.empty())
      f << "-";
    else
      f << format_double(std::round(mean(a.delta) * 10000) / 100);
    f << " | " << format_double(std::round(mean(a.ei) * 10000) / 100) << " |\n";
  }
}

struct ReportStats {
  std::size_t rows_used = 0;
  std::vector<std::string> warnings;
  double spearman_oracle_gain_vs_mean = 0;
  double spearman_oracle_gain_vs_max = 0;
};

/// Renders every artifact the `report` subcommand emits and returns the
/// correlation summary.
inline ReportStats write_report(const std::filesystem::path& results_csv,
                                const std::filesystem::path& out_dir) {
  ReportStats stats;
  auto rows = read_results_csv(results_csv, &stats.warnings);
  if (rows.empty()) throw ConfigError("no usable rows in " + results_csv.string());
  std::filesystem::create_directories(out_dir);
  stats.rows_used = rows.size();
  write_gain_scatter_svg(rows, /*vs_mean=*/true, out_dir / "gain_vs_mean.svg");
  write_gain_scatter_svg(rows, /*vs_mean=*/false, out_dir / "gain_vs_max.svg");
  write_ei_boxplot_svg(rows, out_dir / "ei_boxplots.svg");
  write_domain_table_md(rows, out_dir / "domain_table.md");
  if (rows.size() >= 2) {
    std::vector<double> ei, gain_mean, gain_max;
    for (const auto& r : rows) {
      if (r.num_experts < 2) continue;
      ei.push_back(r.set_ei);
      gain_mean.push_back(r.oracle - r.mean_acc);
      gain_max.push_back(r.oracle - r.max_acc);
    }
    if (ei.size() >= 2) {
      stats.spearman_oracle_gain_vs_mean = spearman(ei, gain_mean);
      stats.spearman_oracle_gain_vs_max = spearman(ei, gain_max);
    }
  }
  nlohmann::json j;
  j["rows_used"] = stats.rows_used;
  j["warnings"] = stats.warnings;
  j["spearman_set_ei_vs_oracle_gain_mean"] = stats.spearman_oracle_gain_vs_mean;
  j["spearman_set_ei_vs_oracle_gain_max"] = stats.spearman_oracle_gain_vs_max;
  std::ofstream f(out_dir / "report.json");
  f << j.dump(2) << '\n';
  return stats;
}

}  // namespace expertforge
