#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/rollout_tree.hpp"
#include "murphy/trainer.hpp"

// Metrics CSV, SVG curve plots, run comparison tables, and the rollout-tree
// pretty printer. All output is deterministic in its inputs: numbers are
// rendered with shortest round-trip formatting, never via locale-dependent
// streams.

namespace murphy::report {

// Shortest decimal string that round-trips to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Metrics CSV (wall time is excluded: it is not reproducible and goes to a
// separate timings file)
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "step",      "mean_turn1_reward", "mean_best_reward",
      "solved_fraction", "objective",   "mean_kl",
      "clip_frac", "rollouts",          "updates"};
  return cols;
}

inline std::string metrics_header() {
  std::string out;
  for (std::size_t i = 0; i < metrics_columns().size(); ++i) {
    if (i) out += ',';
    out += metrics_columns()[i];
  }
  return out;
}

inline std::string metrics_row(const train::MetricsRecord& r) {
  std::string out = std::to_string(r.step);
  out += ',' + fmt_double(r.mean_turn1_reward);
  out += ',' + fmt_double(r.mean_best_reward);
  out += ',' + fmt_double(r.solved_fraction);
  out += ',' + fmt_double(r.objective);
  out += ',' + fmt_double(r.mean_kl);
  out += ',' + fmt_double(r.clip_frac);
  out += ',' + std::to_string(r.rollouts);
  out += ',' + std::to_string(r.updates);
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::vector<train::MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw ParseError("metrics file '" + path + "' is empty");
  }
  std::vector<std::string> header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const std::string& want : metrics_columns()) {
    if (!col.count(want)) {
      throw ParseError("metrics file '" + path + "': missing column '" + want +
                       "'");
    }
  }
  std::vector<train::MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() < header.size()) {
      throw ParseError("metrics file '" + path + "': short row '" + line +
                       "'");
    }
    train::MetricsRecord r;
    r.step = std::stoi(f[col["step"]]);
    r.mean_turn1_reward = std::stod(f[col["mean_turn1_reward"]]);
    r.mean_best_reward = std::stod(f[col["mean_best_reward"]]);
    r.solved_fraction = std::stod(f[col["solved_fraction"]]);
    r.objective = std::stod(f[col["objective"]]);
    r.mean_kl = std::stod(f[col["mean_kl"]]);
    r.clip_frac = std::stod(f[col["clip_frac"]]);
    r.rollouts = std::stoll(f[col["rollouts"]]);
    r.updates = std::stoll(f[col["updates"]]);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG curve plot
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Static vector-graphics artifact: one polyline per series, shared axes,
// legend in the top-left.
inline std::string render_svg(const std::vector<Series>& series,
                              const std::string& title) {
  if (series.empty()) throw ConfigError("plot: no series to render");
  for (const Series& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) {
      throw ConfigError("plot: series '" + s.label + "' is empty or ragged");
    }
  }
  double xmin = series[0].x[0], xmax = xmin, ymin = series[0].y[0], ymax = ymin;
  for (const Series& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double w = 720.0, h = 420.0, ml = 60.0, mr = 20.0, mt = 40.0,
               mb = 40.0;
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
  };
  auto py = [&](double y) {
    return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                 "#ff7f0e", "#9467bd", "#8c564b"};
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         fmt_double(w) + "\" height=\"" + fmt_double(h) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt_double(w / 2) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"monospace\" font-size=\"16\">" + title + "</text>\n";
  // axes
  svg += "<line x1=\"" + fmt_double(ml) + "\" y1=\"" + fmt_double(h - mb) +
         "\" x2=\"" + fmt_double(w - mr) + "\" y2=\"" + fmt_double(h - mb) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt_double(ml) + "\" y1=\"" + fmt_double(mt) +
         "\" x2=\"" + fmt_double(ml) + "\" y2=\"" + fmt_double(h - mb) +
         "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    double fx = xmin + (xmax - xmin) * tick / 4.0;
    double fy = ymin + (ymax - ymin) * tick / 4.0;
    svg += "<text x=\"" + fmt_double(px(fx)) + "\" y=\"" +
           fmt_double(h - mb + 16) + "\" text-anchor=\"middle\" "
           "font-family=\"monospace\" font-size=\"10\">" + fmt_double(fx) +
           "</text>\n";
    svg += "<text x=\"" + fmt_double(ml - 6) + "\" y=\"" +
           fmt_double(py(fy) + 3) + "\" text-anchor=\"end\" "
           "font-family=\"monospace\" font-size=\"10\">" + fmt_double(fy) +
           "</text>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = colors[si % 6];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) points += ' ';
      points += fmt_double(px(s.x[i])) + "," + fmt_double(py(s.y[i]));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    double ly = mt + 14.0 * static_cast<double>(si);
    svg += "<rect x=\"" + fmt_double(ml + 8) + "\" y=\"" + fmt_double(ly) +
           "\" width=\"10\" height=\"3\" fill=\"" + std::string(color) +
           "\"/>\n";
    svg += "<text x=\"" + fmt_double(ml + 24) + "\" y=\"" +
           fmt_double(ly + 5) + "\" font-family=\"monospace\" "
           "font-size=\"11\">" + s.label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Rollout-tree pretty printer
// ---------------------------------------------------------------------------

namespace detail {

inline void render_gen(const tree::RolloutTree& t, tree::NodeId gid,
                       int indent, bool show_pruned, std::string& out) {
  const auto& g = t.gen_at(gid);
  if (g.pruned && !show_pruned) return;
  out.append(static_cast<std::size_t>(indent), ' ');
  out += "gen " + std::to_string(g.id) + ": " + g.tokens.to_string();
  out += "  r=" + fmt_double(g.raw_reward);
  if (g.propagated_reward) {
    out += " -> " + fmt_double(*g.propagated_reward);
  }
  out += "  passed " + std::to_string(g.feedback.passed) + "/" +
         std::to_string(g.feedback.total);
  if (g.pruned) out += "  [pruned]";
  out += '\n';
  if (g.pruned) return;  // descendants hidden for pruned nodes
  if (g.child_prompt) {
    const auto& p = t.prompt_at(*g.child_prompt);
    out.append(static_cast<std::size_t>(indent + 2), ' ');
    out += "prompt " + std::to_string(p.id) + " (turn " +
           std::to_string(p.turn) + ")";
    if (p.pruned) out += "  [pruned]";
    out += '\n';
    for (tree::NodeId c : p.child_generations) {
      render_gen(t, c, indent + 4, show_pruned, out);
    }
  }
}

}  // namespace detail

inline std::string render_tree(const tree::RolloutTree& t,
                               bool show_pruned = true) {
  std::string out = "task " + t.task_id() + "  (max_turns " +
                    std::to_string(t.max_turns()) + ", credit " +
                    (t.credit_applied() ? "applied" : "pending") + ")\n";
  const auto& root = t.prompt_at(t.root());
  out += "prompt 0 (turn 1)\n";
  for (tree::NodeId c : root.child_generations) {
    detail::render_gen(t, c, 2, show_pruned, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

struct RunSummary {
  std::string name;
  double final_solved = 0.0;
  // pass@1 per eval budget; absent budgets are NaN
  std::map<int, double> pass_at_1;
};

// Fixed-width table, one row per run; '*' marks the best value per column.
inline std::string comparison_table(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw ConfigError("compare: no runs given");
  std::vector<int> budgets;
  for (const RunSummary& r : runs) {
    for (const auto& [b, _] : r.pass_at_1) {
      if (std::find(budgets.begin(), budgets.end(), b) == budgets.end()) {
        budgets.push_back(b);
      }
    }
  }
  std::sort(budgets.begin(), budgets.end());
  std::size_t name_w = 4;
  for (const RunSummary& r : runs) name_w = std::max(name_w, r.name.size());

  auto cell = [](double v, bool best) {
    if (std::isnan(v)) return std::string("      --");
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v << (best ? "*" : " ");
    std::string s = os.str();
    while (s.size() < 8) s = " " + s;
    return s;
  };
  double best_solved = runs[0].final_solved;
  for (const RunSummary& r : runs) {
    best_solved = std::max(best_solved, r.final_solved);
  }
  std::map<int, double> best_pass;
  for (int b : budgets) {
    double best = -1.0;
    for (const RunSummary& r : runs) {
      auto it = r.pass_at_1.find(b);
      if (it != r.pass_at_1.end()) best = std::max(best, it->second);
    }
    best_pass[b] = best;
  }

  std::string out(name_w, ' ');
  out.replace(0, 3, "run");
  out += "  final_solved";
  for (int b : budgets) out += "  pass@1_iter" + std::to_string(b);
  out += '\n';
  for (const RunSummary& r : runs) {
    std::string row = r.name;
    row.append(name_w - r.name.size(), ' ');
    row += "      " + cell(r.final_solved, r.final_solved == best_solved);
    for (int b : budgets) {
      auto it = r.pass_at_1.find(b);
      double v = it == r.pass_at_1.end()
                     ? std::numeric_limits<double>::quiet_NaN()
                     : it->second;
      row += "      " + cell(v, !std::isnan(v) && v == best_pass[b]);
    }
    out += row + '\n';
  }
  return out;
}

}  // namespace murphy::report
