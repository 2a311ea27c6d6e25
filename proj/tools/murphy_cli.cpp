#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "murphy/cli.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& item : raw) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw murphy::ConfigError("override '" + item +
                                "' is not of the form key=value");
    }
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"murphy: multi-turn feedback-conditioned GRPO engine"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a training job");
  std::string config_path, preset, out_dir;
  std::vector<std::string> raw_overrides;
  bool dump_trees = false;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--preset", preset,
                    "named preset (reference-2turn, reference-3turn)");
  train->add_option("--set", raw_overrides,
                    "config override key=value (repeatable)");
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_flag("--dump-trees", dump_trees,
                  "write per-step rollout-tree dumps");

  // eval
  auto* eval = app.add_subcommand("eval", "Reflexion evaluation of a checkpoint");
  murphy::cli::EvalOptions eopt;
  eval->add_option("--checkpoint", eopt.checkpoint_path, "checkpoint JSON")
      ->required();
  eval->add_option("--tasks", eopt.task_file, "task JSONL file");
  eval->add_option("--family", eopt.family,
                   "task family (linear, quadratic, hidden-offset)");
  eval->add_option("--env-seed", eopt.env_seed, "task sampling seed");
  eval->add_option("--n-tasks", eopt.n_tasks, "number of sampled tasks");
  eval->add_option("--iters", eopt.max_iterations, "iteration budget");
  eval->add_option("--reps", eopt.repetitions, "repetitions");
  eval->add_option("--temperature", eopt.temperature, "sampling temperature");
  eval->add_option("--top-p", eopt.top_p, "nucleus truncation");
  eval->add_option("--seed", eopt.eval_seed, "evaluation seed");
  eval->add_option("--out", eopt.out_dir, "report output directory");

  // inspect-tree
  auto* inspect = app.add_subcommand("inspect-tree",
                                     "pretty-print a dumped rollout tree");
  std::string run_dir, task_id;
  int step = 0;
  inspect->add_option("--run", run_dir, "run directory")->required();
  inspect->add_option("--step", step, "training step")->required();
  inspect->add_option("--task", task_id, "task id (default: first tree)");

  // plot
  auto* plot = app.add_subcommand("plot", "render metric curves as SVG");
  std::vector<std::string> csvs;
  std::vector<std::string> metrics = {"solved_fraction", "mean_turn1_reward"};
  std::string plot_out;
  plot->add_option("--metrics-file", csvs, "metrics CSV (repeatable)")
      ->required();
  plot->add_option("--metric", metrics, "metric column (repeatable)");
  plot->add_option("--out", plot_out, "output SVG path")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "side-by-side run summary");
  std::vector<std::string> run_dirs;
  compare->add_option("runs", run_dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      murphy::cli::TrainOptions opt;
      opt.config_path = config_path;
      opt.preset = preset;
      opt.overrides = parse_overrides(raw_overrides);
      opt.out_dir = out_dir;
      opt.dump_trees = dump_trees;
      return murphy::cli::cmd_train(opt);
    }
    if (eval->parsed()) return murphy::cli::cmd_eval(eopt);
    if (inspect->parsed()) {
      return murphy::cli::cmd_inspect_tree(run_dir, step, task_id);
    }
    if (plot->parsed()) return murphy::cli::cmd_plot(csvs, metrics, plot_out);
    if (compare->parsed()) return murphy::cli::cmd_compare(run_dirs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
