#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "murphy/common.hpp"
#include "murphy/policy.hpp"
#include "murphy/rollout_tree.hpp"
#include "murphy/toy_env.hpp"

// Reflexion-style iterative evaluation: sample one program, run the visible
// tests, re-prompt conditioned on the accumulated (program, feedback) chain,
// until the visible suite passes or the iteration budget runs out. The last
// program produced is scored once against the hidden suite.

namespace murphy::eval {

struct EvalConfig {
  int max_iterations = 3;
  int repetitions = 3;
  double temperature = 0.6;
  double top_p = 1.0;  // nucleus truncation off by default
  std::uint64_t seed = 0;
  int buckets = policy::kDefaultBuckets;

  void validate() const {
    if (max_iterations < 1) {
      throw ConfigError("eval: max_iterations must be >= 1");
    }
    if (repetitions < 1) throw ConfigError("eval: repetitions must be >= 1");
    if (temperature <= 0.0) throw ConfigError("eval: temperature must be > 0");
    if (top_p <= 0.0 || top_p > 1.0) {
      throw ConfigError("eval: top_p must be in (0,1]");
    }
    if (buckets < 1) throw ConfigError("eval: buckets must be >= 1");
  }
};

struct EpisodeResult {
  std::vector<env::Program> programs;  // one per iteration actually run
  int iterations_used = 0;
  bool visible_solved = false;
  bool hidden_pass = false;  // of the last program
};

// Sampler signature: env::Program(const tree::ContextChain&). Scripted
// samplers make the harness testable without a policy.
template <typename Sampler>
EpisodeResult reflexion_episode_with(const env::Task& task, int max_iterations,
                                     Sampler&& sampler) {
  if (max_iterations < 1) {
    throw ConfigError("eval: max_iterations must be >= 1");
  }
  EpisodeResult res;
  tree::ContextChain chain;
  chain.task_id = task.id;
  chain.prompt_key = task.prompt_key;
  for (int it = 1; it <= max_iterations; ++it) {
    env::Program prog = sampler(static_cast<const tree::ContextChain&>(chain));
    env::EvalOutcome out = env::evaluate(task, prog, env::Suite::Visible);
    res.programs.push_back(prog);
    res.iterations_used = it;
    if (out.reward == 1.0) {
      res.visible_solved = true;
      break;
    }
    chain.segments.push_back({std::move(prog), std::move(out.feedback)});
  }
  env::EvalOutcome hidden = env::evaluate(task, res.programs.back(),
                                          env::Suite::Hidden);
  res.hidden_pass = hidden.reward == 1.0;
  return res;
}

template <typename Rng>
EpisodeResult reflexion_episode(const policy::PolicyParams& params,
                                const env::Task& task, int max_iterations,
                                Rng& rng, double temperature = 0.6,
                                double top_p = 1.0,
                                int buckets = policy::kDefaultBuckets) {
  return reflexion_episode_with(
      task, max_iterations, [&](const tree::ContextChain& chain) {
        policy::ContextEncoding ctx = policy::encode_context(chain, buckets);
        return policy::sample(params, ctx, 1, temperature, rng, top_p)[0]
            .tokens;
      });
}

struct EvalReport {
  std::vector<int> budgets;          // 1..max_iterations
  std::vector<double> pass_at_1;     // mean over repetitions, per budget
  std::vector<double> pass_stdev;    // population stdev over repetitions
  // outcomes[rep][task][budget index]: hidden pass under that budget
  std::vector<std::vector<std::vector<bool>>> outcomes;
  // solve_histogram[i] counts tasks (over all reps) first solving the
  // visible suite at iteration i+1; the final slot counts never-solved.
  std::vector<long long> solve_histogram;
};

// A single max-budget episode yields the outcome at every smaller budget:
// with the same seed stream, a budget-b run produces exactly the first
// min(solve iteration, b) programs of the full run.
inline EvalReport evaluate(const policy::PolicyParams& params,
                           const std::vector<env::Task>& tasks,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("eval: empty task list");
  EvalReport rep;
  for (int b = 1; b <= cfg.max_iterations; ++b) rep.budgets.push_back(b);
  rep.solve_histogram.assign(static_cast<std::size_t>(cfg.max_iterations) + 1,
                             0);
  std::vector<std::vector<long long>> passes(
      static_cast<std::size_t>(cfg.repetitions),
      std::vector<long long>(rep.budgets.size(), 0));
  rep.outcomes.resize(static_cast<std::size_t>(cfg.repetitions));
  for (int r = 0; r < cfg.repetitions; ++r) {
    std::mt19937_64 rng(Fnv64()
                            .u64(cfg.seed)
                            .u64(static_cast<std::uint64_t>(r))
                            .str("eval")
                            .digest());
    auto& rep_outcomes = rep.outcomes[static_cast<std::size_t>(r)];
    rep_outcomes.reserve(tasks.size());
    for (const env::Task& task : tasks) {
      EpisodeResult ep = reflexion_episode(params, task, cfg.max_iterations,
                                           rng, cfg.temperature, cfg.top_p,
                                           cfg.buckets);
      std::vector<bool> by_budget(rep.budgets.size(), false);
      for (std::size_t bi = 0; bi < rep.budgets.size(); ++bi) {
        int stop = std::min(rep.budgets[bi], ep.iterations_used);
        const env::Program& final_prog =
            ep.programs[static_cast<std::size_t>(stop - 1)];
        bool pass =
            env::evaluate(task, final_prog, env::Suite::Hidden).reward == 1.0;
        by_budget[bi] = pass;
        if (pass) ++passes[static_cast<std::size_t>(r)][bi];
      }
      rep_outcomes.push_back(std::move(by_budget));
      std::size_t slot = ep.visible_solved
                             ? static_cast<std::size_t>(ep.iterations_used - 1)
                             : rep.solve_histogram.size() - 1;
      ++rep.solve_histogram[slot];
    }
  }
  const double n_tasks = static_cast<double>(tasks.size());
  const double n_reps = static_cast<double>(cfg.repetitions);
  rep.pass_at_1.resize(rep.budgets.size());
  rep.pass_stdev.resize(rep.budgets.size());
  for (std::size_t bi = 0; bi < rep.budgets.size(); ++bi) {
    double mean = 0.0;
    for (int r = 0; r < cfg.repetitions; ++r) {
      mean += static_cast<double>(passes[static_cast<std::size_t>(r)][bi]) /
              n_tasks;
    }
    mean /= n_reps;
    double ss = 0.0;
    for (int r = 0; r < cfg.repetitions; ++r) {
      double v = static_cast<double>(passes[static_cast<std::size_t>(r)][bi]) /
                 n_tasks;
      ss += (v - mean) * (v - mean);
    }
    rep.pass_at_1[bi] = mean;
    rep.pass_stdev[bi] = std::sqrt(ss / n_reps);
  }
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json budgets = nlohmann::json::array();
  for (std::size_t bi = 0; bi < rep.budgets.size(); ++bi) {
    budgets.push_back({{"budget", rep.budgets[bi]},
                       {"pass_at_1", rep.pass_at_1[bi]},
                       {"stdev", rep.pass_stdev[bi]}});
  }
  nlohmann::json outcomes = nlohmann::json::array();
  for (const auto& per_rep : rep.outcomes) {
    nlohmann::json rep_arr = nlohmann::json::array();
    for (const auto& per_task : per_rep) {
      rep_arr.push_back(std::vector<int>(per_task.begin(), per_task.end()));
    }
    outcomes.push_back(std::move(rep_arr));
  }
  return {{"budgets", std::move(budgets)},
          {"solve_histogram", rep.solve_histogram},
          {"outcomes", std::move(outcomes)}};
}

}  // namespace murphy::eval
