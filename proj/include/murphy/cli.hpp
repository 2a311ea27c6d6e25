#pragma once

#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "murphy/common.hpp"
#include "murphy/config.hpp"
#include "murphy/eval_harness.hpp"
#include "murphy/reporting.hpp"
#include "murphy/task_io.hpp"
#include "murphy/trainer.hpp"

// Library-level command implementations behind the CLI binary. Each command
// throws murphy errors on misuse; the binary maps exceptions to nonzero exit
// codes. All run artifacts live in a self-describing run directory:
// manifest, config snapshot, metrics CSV, checkpoints, optional tree dumps.

namespace murphy::cli {

constexpr const char* kEngineVersion = "0.1.0";

namespace fs = std::filesystem;

namespace detail {

inline std::string utc_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file '" + path.string() + "'");
  out << content;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("file '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace detail

struct TrainOptions {
  std::string config_path;            // empty: preset/overrides only
  std::string preset;                 // applied before config and overrides
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string out_dir;
  bool dump_trees = false;  // in addition to the config's dump_trees key
};

// Writes manifest.json, config.snapshot, metrics.csv, timings.csv,
// checkpoints, and (optionally) per-step tree dumps.
inline int cmd_train(const TrainOptions& opt, std::ostream& log = std::cout) {
  config::ConfigBuilder builder;
  if (!opt.preset.empty()) builder.apply_preset(opt.preset);
  if (!opt.config_path.empty()) builder.load_file(opt.config_path);
  for (const auto& [k, v] : opt.overrides) builder.set(k, v);
  config::RunConfig cfg = builder.finalize();
  if (opt.dump_trees) cfg.dump_trees = true;

  fs::path out(opt.out_dir);
  fs::create_directories(out);
  fs::create_directories(out / "checkpoints");
  if (cfg.dump_trees) fs::create_directories(out / "trees");

  const std::string config_hash = builder.config_hash();
  detail::write_file(out / "config.snapshot", builder.canonical_text());

  nlohmann::json manifest = {
      {"run_id", out.filename().string()},
      {"config_hash", config_hash},
      {"engine_version", kEngineVersion},
      {"seeds",
       {{"env", cfg.train.env_seed},
        {"sample", cfg.train.sample_seed},
        {"eval", cfg.eval.seed}}},
      {"started_at", detail::utc_now()},
      {"finished_at", nullptr},
      {"artifacts",
       {{"config", "config.snapshot"},
        {"metrics", "metrics.csv"},
        {"timings", "timings.csv"},
        {"checkpoint_final", "checkpoint_final.json"}}}};
  detail::write_file(out / "manifest.json", manifest.dump(2) + "\n");

  train::Trainer trainer(cfg.train);
  std::ofstream metrics(out / "metrics.csv", std::ios::binary);
  std::ofstream timings(out / "timings.csv", std::ios::binary);
  metrics << report::metrics_header() << '\n';
  timings << "step,wall_time_ms\n";

  auto write_checkpoint = [&](const fs::path& path) {
    nlohmann::json ckpt = trainer.checkpoint();
    ckpt["config_hash"] = config_hash;
    detail::write_file(path, ckpt.dump() + "\n");
  };

  for (int s = 0; s < cfg.train.steps; ++s) {
    train::StepResult res = trainer.step();
    metrics << report::metrics_row(res.metrics) << '\n';
    timings << res.metrics.step << ','
            << report::fmt_double(res.metrics.wall_time_ms) << '\n';
    if (cfg.dump_trees) {
      std::ofstream td(out / "trees" /
                           ("step_" + std::to_string(res.metrics.step) +
                            ".jsonl"),
                       std::ios::binary);
      for (const auto& t : res.forest) t.dump(td);
    }
    if ((s + 1) % cfg.train.checkpoint_every == 0) {
      write_checkpoint(out / "checkpoints" /
                       ("checkpoint_" + std::to_string(res.metrics.step) +
                        ".json"));
    }
  }
  write_checkpoint(out / "checkpoint_final.json");

  manifest["finished_at"] = detail::utc_now();
  detail::write_file(out / "manifest.json", manifest.dump(2) + "\n");
  log << "train: " << cfg.train.steps << " steps -> " << out.string() << "\n";
  return 0;
}

struct EvalOptions {
  std::string checkpoint_path;
  std::string task_file;  // either this, or family + env_seed + n_tasks
  std::string family = "hidden-offset";
  std::uint64_t env_seed = 1;
  int n_tasks = 40;
  int max_iterations = 3;
  int repetitions = 3;
  double temperature = 0.6;
  double top_p = 1.0;
  std::uint64_t eval_seed = 0;
  std::string out_dir;  // empty: print only
};

inline policy::PolicyParams load_checkpoint_params(const std::string& path) {
  nlohmann::json ckpt = detail::read_json_file(path);
  if (!ckpt.contains("kind") || ckpt["kind"] != "murphy-checkpoint") {
    throw ParseError("file '" + path + "' is not a training checkpoint");
  }
  return train::Trainer::params_from_json(ckpt.at("policy"));
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& log = std::cout) {
  if (opt.max_iterations < 1) {
    throw ConfigError("eval: iterations must be >= 1");
  }
  // The checkpoint's bucket count is authoritative for encoding contexts.
  policy::PolicyParams params = load_checkpoint_params(opt.checkpoint_path);
  std::vector<env::Task> tasks;
  if (!opt.task_file.empty()) {
    tasks = env::load_tasks_file(opt.task_file);
  } else {
    env::Family family = env::family_from_name(opt.family);
    std::mt19937_64 rng(
        Fnv64().u64(opt.env_seed).str("eval-tasks").digest());
    for (int i = 0; i < opt.n_tasks; ++i) {
      tasks.push_back(env::sample_task(rng(), family));
    }
  }
  eval::EvalConfig cfg;
  cfg.max_iterations = opt.max_iterations;
  cfg.repetitions = opt.repetitions;
  cfg.temperature = opt.temperature;
  cfg.top_p = opt.top_p;
  cfg.seed = opt.eval_seed;
  cfg.buckets = params.buckets;
  eval::EvalReport rep = eval::evaluate(params, tasks, cfg);

  for (std::size_t bi = 0; bi < rep.budgets.size(); ++bi) {
    log << "iter-" << rep.budgets[bi]
        << " pass@1 = " << report::fmt_double(rep.pass_at_1[bi]) << " +/- "
        << report::fmt_double(rep.pass_stdev[bi]) << "\n";
  }
  if (!opt.out_dir.empty()) {
    fs::path out(opt.out_dir);
    fs::create_directories(out);
    nlohmann::json j = eval::report_to_json(rep);
    j["checkpoint"] = opt.checkpoint_path;
    j["n_tasks"] = tasks.size();
    detail::write_file(out / "eval_report.json", j.dump(2) + "\n");
    std::string csv = "budget,pass_at_1,stdev\n";
    for (std::size_t bi = 0; bi < rep.budgets.size(); ++bi) {
      csv += std::to_string(rep.budgets[bi]) + ',' +
             report::fmt_double(rep.pass_at_1[bi]) + ',' +
             report::fmt_double(rep.pass_stdev[bi]) + '\n';
    }
    detail::write_file(out / "eval_report.csv", csv);
  }
  return 0;
}

// Splits a per-step tree dump file (concatenated single-tree dumps) on its
// header lines and loads the tree whose header names the requested task.
inline tree::RolloutTree load_tree_from_dump(const std::string& path,
                                             const std::string& task_id) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("no tree dump at '" + path +
                      "'; rerun training with --dump-trees");
  }
  std::string line;
  std::string current;
  std::string current_task;
  auto matches = [&]() {
    return !current.empty() && (task_id.empty() || current_task == task_id);
  };
  while (std::getline(in, line)) {
    if (line.rfind("{\"tree\"", 0) == 0) {
      if (matches()) return tree::RolloutTree::loads(current);
      current = line + "\n";
      current_task =
          nlohmann::json::parse(line).at("tree").at("task").get<std::string>();
    } else if (!current.empty()) {
      current += line + "\n";
    }
  }
  if (matches()) return tree::RolloutTree::loads(current);
  throw ConfigError(task_id.empty()
                        ? "tree dump '" + path + "' contains no trees"
                        : "task '" + task_id + "' not found in '" + path +
                              "'");
}

inline int cmd_inspect_tree(const std::string& run_dir, int step,
                            const std::string& task_id,
                            std::ostream& log = std::cout) {
  fs::path path =
      fs::path(run_dir) / "trees" / ("step_" + std::to_string(step) + ".jsonl");
  if (!fs::exists(path)) {
    throw ConfigError("no tree dump for step " + std::to_string(step) +
                      " in '" + run_dir +
                      "'; rerun training with --dump-trees");
  }
  tree::RolloutTree t = load_tree_from_dump(path.string(), task_id);
  log << report::render_tree(t);
  return 0;
}

inline int cmd_plot(const std::vector<std::string>& csv_paths,
                    const std::vector<std::string>& metrics,
                    const std::string& out_path,
                    std::ostream& log = std::cout) {
  if (csv_paths.empty()) throw ConfigError("plot: no metrics files given");
  std::vector<report::Series> series;
  for (const std::string& path : csv_paths) {
    std::vector<train::MetricsRecord> rows = report::read_metrics(path);
    if (rows.empty()) {
      throw ParseError("metrics file '" + path + "' has no data rows");
    }
    std::string run = fs::path(path).parent_path().filename().string();
    if (run.empty()) run = path;
    for (const std::string& metric : metrics) {
      report::Series s;
      s.label = run + ":" + metric;
      for (const train::MetricsRecord& r : rows) {
        s.x.push_back(static_cast<double>(r.step));
        double v = 0.0;
        if (metric == "mean_turn1_reward") v = r.mean_turn1_reward;
        else if (metric == "mean_best_reward") v = r.mean_best_reward;
        else if (metric == "solved_fraction") v = r.solved_fraction;
        else if (metric == "objective") v = r.objective;
        else if (metric == "mean_kl") v = r.mean_kl;
        else if (metric == "clip_frac") v = r.clip_frac;
        else throw ConfigError("plot: unknown metric '" + metric + "'");
        s.y.push_back(v);
      }
      series.push_back(std::move(s));
    }
  }
  detail::write_file(out_path, report::render_svg(series, "training metrics"));
  log << "plot: wrote " << out_path << "\n";
  return 0;
}

inline int cmd_compare(const std::vector<std::string>& run_dirs,
                       std::ostream& log = std::cout) {
  if (run_dirs.empty()) throw ConfigError("compare: no run directories given");
  std::vector<report::RunSummary> runs;
  for (const std::string& dir : run_dirs) {
    report::RunSummary summary;
    summary.name = fs::path(dir).filename().string();
    if (summary.name.empty()) summary.name = dir;
    std::vector<train::MetricsRecord> rows =
        report::read_metrics((fs::path(dir) / "metrics.csv").string());
    if (!rows.empty()) summary.final_solved = rows.back().solved_fraction;
    fs::path report_path = fs::path(dir) / "eval" / "eval_report.json";
    if (!fs::exists(report_path)) {
      report_path = fs::path(dir) / "eval_report.json";
    }
    if (fs::exists(report_path)) {
      nlohmann::json j = detail::read_json_file(report_path.string());
      for (const nlohmann::json& row : j.at("budgets")) {
        summary.pass_at_1[row.at("budget").get<int>()] =
            row.at("pass_at_1").get<double>();
      }
    }
    runs.push_back(std::move(summary));
  }
  log << report::comparison_table(runs);
  return 0;
}

}  // namespace murphy::cli
