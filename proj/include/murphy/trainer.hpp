#pragma once

#include <chrono>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "murphy/common.hpp"
#include "murphy/credit.hpp"
#include "murphy/objective.hpp"
#include "murphy/policy.hpp"
#include "murphy/pruning.hpp"
#include "murphy/rollout_tree.hpp"
#include "murphy/toy_env.hpp"

// Training orchestration: per step, snapshot the policy, build rollout
// trees (multi-turn with fan-out, single chains for the naive baseline, or
// plain single-turn groups), prune + propagate credit, take one ascent step
// on the objective with decoupled weight decay.

namespace murphy::train {

enum class Mode { Grpo, Murphy, MurphySimple };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Grpo: return "grpo";
    case Mode::Murphy: return "murphy";
    case Mode::MurphySimple: return "murphy_simple";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "grpo") return Mode::Grpo;
  if (s == "murphy") return Mode::Murphy;
  if (s == "murphy_simple") return Mode::MurphySimple;
  throw ConfigError("unknown mode: '" + s + "'");
}

struct TrainConfig {
  Mode mode = Mode::Murphy;
  int max_turns = 2;
  std::vector<int> schedule = {8, 8};
  credit::CreditConfig credit;
  prune::PruneConfig prune;
  objective::ObjectiveConfig objective;
  double learning_rate = 0.05;  // toy-scale default; reference presets use 1e-6
  double weight_decay = 0.1;
  int steps = 200;
  int tasks_per_step = 40;
  env::Family family = env::Family::HiddenOffset;
  std::uint64_t env_seed = 1;
  std::uint64_t sample_seed = 2;
  int buckets = policy::kDefaultBuckets;
  double train_temperature = 1.0;  // keeps behavior logprobs exact
  int checkpoint_every = 50;

  void validate() const {
    if (mode == Mode::Grpo && max_turns != 1) {
      throw ConfigError("config: mode grpo forces max_turns = 1, got " +
                        std::to_string(max_turns));
    }
    if (max_turns < 1) throw ConfigError("config: max_turns must be >= 1");
    if (static_cast<int>(schedule.size()) != max_turns) {
      throw ConfigError("config: schedule length " +
                        std::to_string(schedule.size()) +
                        " does not match max_turns " +
                        std::to_string(max_turns));
    }
    for (int g : schedule) {
      if (g < 1) throw ConfigError("config: schedule entries must be >= 1");
    }
    if (learning_rate < 0.0) {
      throw ConfigError("config: learning_rate must be >= 0");
    }
    if (weight_decay < 0.0) {
      throw ConfigError("config: weight_decay must be >= 0");
    }
    if (steps < 0) throw ConfigError("config: steps must be >= 0");
    if (tasks_per_step < 1) {
      throw ConfigError("config: tasks_per_step must be >= 1");
    }
    if (buckets < 1) throw ConfigError("config: buckets must be >= 1");
    if (train_temperature <= 0.0) {
      throw ConfigError("config: train_temperature must be > 0");
    }
    if (checkpoint_every < 1) {
      throw ConfigError("config: checkpoint_every must be >= 1");
    }
    credit.validate();
    prune.validate();
    objective.validate();
  }
};

struct MetricsRecord {
  int step = 0;
  double mean_turn1_reward = 0.0;
  double mean_best_reward = 0.0;
  double solved_fraction = 0.0;
  double objective = 0.0;
  double mean_kl = 0.0;
  double clip_frac = 0.0;
  long long rollouts = 0;
  long long updates = 0;
  double wall_time_ms = 0.0;  // reported separately, never in the metrics CSV
};

// Multi-turn rollout with fan-out: every generation short of the maximum
// reward is expanded and re-sampled with G_{s+1} feedback-conditioned
// children, until the turn budget.
template <typename Rng>
std::vector<tree::RolloutTree> rollout_phase(const std::vector<env::Task>& tasks,
                                             const policy::PolicyParams& old_snapshot,
                                             const TrainConfig& cfg, Rng& rng) {
  std::vector<tree::RolloutTree> forest;
  forest.reserve(tasks.size());
  for (const env::Task& task : tasks) {
    tree::RolloutTree t(task.id, cfg.schedule, cfg.max_turns, task.prompt_key);
    t.set_behavior_version(old_snapshot.version);
    std::vector<tree::NodeId> frontier = {t.root()};
    for (int s = 1; s <= cfg.max_turns; ++s) {
      std::vector<tree::NodeId> next;
      for (tree::NodeId pid : frontier) {
        policy::ContextEncoding ctx =
            policy::encode_context(t.prompt_at(pid).context, cfg.buckets);
        auto samples =
            policy::sample(old_snapshot, ctx, cfg.schedule[static_cast<std::size_t>(s - 1)],
                           cfg.train_temperature, rng);
        std::vector<tree::GenRecord> records;
        records.reserve(samples.size());
        for (auto& sm : samples) {
          env::EvalOutcome out = env::evaluate(task, sm.tokens, env::Suite::Train);
          records.push_back({std::move(sm.tokens), std::move(sm.logprobs),
                             out.reward, std::move(out.feedback)});
        }
        std::vector<tree::NodeId> ids = t.attach_generations(pid, records);
        if (s < cfg.max_turns) {
          for (tree::NodeId gid : ids) {
            if (t.gen_at(gid).raw_reward < 1.0) next.push_back(t.expand(gid));
          }
        }
      }
      frontier = std::move(next);
    }
    forest.push_back(std::move(t));
  }
  return forest;
}

// Naive multi-turn baseline: failed generations are extended by a single
// feedback-conditioned child per turn (chains, no fan-out).
template <typename Rng>
std::vector<tree::RolloutTree> rollout_phase_simple(
    const std::vector<env::Task>& tasks,
    const policy::PolicyParams& old_snapshot, const TrainConfig& cfg,
    Rng& rng) {
  std::vector<tree::RolloutTree> forest;
  forest.reserve(tasks.size());
  for (const env::Task& task : tasks) {
    tree::RolloutTree t(task.id, cfg.schedule, cfg.max_turns, task.prompt_key);
    t.set_behavior_version(old_snapshot.version);
    policy::ContextEncoding root_ctx =
        policy::encode_context(t.prompt_at(t.root()).context, cfg.buckets);
    auto samples = policy::sample(old_snapshot, root_ctx,
                                  cfg.schedule[0], cfg.train_temperature, rng);
    std::vector<tree::GenRecord> records;
    for (auto& sm : samples) {
      env::EvalOutcome out = env::evaluate(task, sm.tokens, env::Suite::Train);
      records.push_back({std::move(sm.tokens), std::move(sm.logprobs),
                         out.reward, std::move(out.feedback)});
    }
    std::vector<tree::NodeId> frontier = t.attach_generations(t.root(), records);
    for (int s = 2; s <= cfg.max_turns; ++s) {
      std::vector<tree::NodeId> next;
      for (tree::NodeId gid : frontier) {
        if (t.gen_at(gid).raw_reward >= 1.0) continue;
        tree::NodeId pid = t.expand(gid);
        policy::ContextEncoding ctx =
            policy::encode_context(t.prompt_at(pid).context, cfg.buckets);
        auto chain_samples =
            policy::sample(old_snapshot, ctx, 1, cfg.train_temperature, rng);
        env::EvalOutcome out =
            env::evaluate(task, chain_samples[0].tokens, env::Suite::Train);
        std::vector<tree::GenRecord> rec = {
            {std::move(chain_samples[0].tokens),
             std::move(chain_samples[0].logprobs), out.reward,
             std::move(out.feedback)}};
        next.push_back(t.attach_generations(pid, rec)[0]);
      }
      frontier = std::move(next);
    }
    forest.push_back(std::move(t));
  }
  return forest;
}

namespace detail {

// Last generation of the chain starting at a turn-1 generation.
inline tree::NodeId chain_tail(const tree::RolloutTree& t, tree::NodeId gid) {
  for (;;) {
    const auto& g = t.gen_at(gid);
    if (!g.child_prompt) return gid;
    const auto& child_prompt = t.prompt_at(*g.child_prompt);
    if (child_prompt.child_generations.empty()) return gid;
    gid = child_prompt.child_generations.front();
  }
}

}  // namespace detail

// Objective items of the naive baseline: one advantage group per task from
// the chain-final rewards; gradient applies to the chain-final generations.
inline objective::Stats simple_loss_and_grad(
    const std::vector<tree::RolloutTree>& forest,
    const policy::PolicyParams& params,
    const policy::PolicyParams& old_snapshot,
    const policy::PolicyParams& ref_snapshot,
    const objective::ObjectiveConfig& cfg, int buckets,
    policy::GradTable& grad) {
  std::vector<objective::UpdateItem> items;
  for (const auto& t : forest) {
    if (t.behavior_version() != old_snapshot.version) {
      throw StateError("objective: tree '" + t.task_id() +
                       "' was rolled out under a different snapshot");
    }
    std::vector<tree::NodeId> tails;
    std::vector<double> finals;
    for (tree::NodeId gid : t.prompt_at(t.root()).child_generations) {
      tree::NodeId tail = detail::chain_tail(t, gid);
      tails.push_back(tail);
      finals.push_back(t.gen_at(tail).raw_reward);
    }
    if (tails.empty()) continue;
    std::vector<double> adv = objective::group_advantages(finals, cfg);
    for (std::size_t i = 0; i < tails.size(); ++i) {
      const auto& g = t.gen_at(tails[i]);
      objective::UpdateItem item;
      item.ctx = policy::encode_context(
          t.prompt_at(g.parent_prompt).context, buckets);
      item.tokens = &g.tokens;
      item.behavior_logprobs = &g.behavior_logprobs;
      item.advantage = adv[i];
      item.weight = 1.0 / (static_cast<double>(tails.size()) *
                           static_cast<double>(g.tokens.tokens.size()));
      items.push_back(item);
    }
  }
  return objective::loss_and_grad(items, params, ref_snapshot, cfg,
                                  static_cast<double>(forest.size()), grad);
}

struct StepResult {
  MetricsRecord metrics;
  std::vector<tree::RolloutTree> forest;  // post pruning/credit
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    params_ = policy::PolicyParams::zeros(cfg_.buckets, env::kProgramLen,
                                          env::kVocabSize);
    ref_ = params_;  // frozen copy of initialization
    rng_env_.seed(Fnv64().u64(cfg_.env_seed).str("env").digest());
    rng_sample_.seed(Fnv64().u64(cfg_.sample_seed).str("sample").digest());
  }

  const TrainConfig& config() const { return cfg_; }
  const policy::PolicyParams& params() const { return params_; }
  const policy::PolicyParams& reference() const { return ref_; }
  int step_index() const { return step_; }

  StepResult step() {
    auto t0 = std::chrono::steady_clock::now();
    policy::PolicyParams old = policy::snapshot(params_);

    std::vector<env::Task> tasks;
    tasks.reserve(static_cast<std::size_t>(cfg_.tasks_per_step));
    for (int i = 0; i < cfg_.tasks_per_step; ++i) {
      tasks.push_back(env::sample_task(rng_env_(), cfg_.family));
    }

    std::vector<tree::RolloutTree> forest =
        cfg_.mode == Mode::MurphySimple
            ? rollout_phase_simple(tasks, old, cfg_, rng_sample_)
            : rollout_phase(tasks, old, cfg_, rng_sample_);

    MetricsRecord rec = train_step(forest, old);
    rec.step = step_;
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    ++step_;
    return {rec, std::move(forest)};
  }

  // Prune + propagate credit, one ascent step with decoupled weight decay.
  MetricsRecord train_step(std::vector<tree::RolloutTree>& forest,
                           const policy::PolicyParams& old_snapshot) {
    MetricsRecord rec;
    double turn1_sum = 0.0;
    long long turn1_count = 0;
    double best_sum = 0.0;
    long long solved = 0;
    for (const auto& t : forest) {
      double best = 0.0;
      bool any_solved = false;
      for (int s = 1; s <= t.max_turns(); ++s) {
        for (tree::NodeId gid : t.generations_at_turn(s)) {
          double r = t.gen_at(gid).raw_reward;
          best = std::max(best, r);
          if (r == 1.0) any_solved = true;
          if (s == 1) {
            turn1_sum += r;
            ++turn1_count;
          }
        }
      }
      best_sum += best;
      solved += any_solved ? 1 : 0;
      rec.rollouts += t.total_generations();
    }
    rec.mean_turn1_reward =
        turn1_count ? turn1_sum / static_cast<double>(turn1_count) : 0.0;
    rec.mean_best_reward =
        forest.empty() ? 0.0 : best_sum / static_cast<double>(forest.size());
    rec.solved_fraction =
        forest.empty() ? 0.0
                       : static_cast<double>(solved) /
                             static_cast<double>(forest.size());

    policy::GradTable grad = policy::GradTable::zeros_like(params_);
    objective::Stats stats;
    if (cfg_.mode == Mode::MurphySimple) {
      stats = simple_loss_and_grad(forest, params_, old_snapshot, ref_,
                                   cfg_.objective, cfg_.buckets, grad);
    } else {
      for (auto& t : forest) {
        prune::prune_and_propagate(t, cfg_.prune, cfg_.credit);
      }
      stats = objective::murphy_loss_and_grad(forest, params_, old_snapshot,
                                              ref_, cfg_.objective, grad);
    }
    rec.objective = stats.objective;
    rec.mean_kl = stats.mean_kl;
    rec.clip_frac = stats.clip_frac;
    rec.updates = stats.n_updates;

    if (cfg_.learning_rate != 0.0) {
      for (std::size_t i = 0; i < params_.w_ctx.size(); ++i) {
        params_.w_ctx[i] += cfg_.learning_rate *
                            (grad.w_ctx[i] - cfg_.weight_decay * params_.w_ctx[i]);
      }
      for (std::size_t i = 0; i < params_.w_big.size(); ++i) {
        params_.w_big[i] += cfg_.learning_rate *
                            (grad.w_big[i] - cfg_.weight_decay * params_.w_big[i]);
      }
    }
    params_.version = old_snapshot.version;  // one snapshot per step
    return rec;
  }

  // Full serialized trainer state; resuming from this continues the run
  // bit-identically.
  nlohmann::json checkpoint() const {
    std::ostringstream env_state, sample_state;
    env_state << rng_env_;
    sample_state << rng_sample_;
    return {{"kind", "murphy-checkpoint"},
            {"objective_sign", "maximize"},
            {"step", step_},
            {"policy", params_to_json(params_)},
            {"reference", params_to_json(ref_)},
            {"rng_env", env_state.str()},
            {"rng_sample", sample_state.str()}};
  }

  static Trainer from_checkpoint(const nlohmann::json& j, TrainConfig cfg) {
    Trainer t(std::move(cfg));
    if (!j.contains("kind") || j["kind"] != "murphy-checkpoint") {
      throw ParseError("checkpoint: missing or wrong 'kind' marker");
    }
    t.step_ = j.at("step").get<int>();
    t.params_ = params_from_json(j.at("policy"));
    t.ref_ = params_from_json(j.at("reference"));
    std::istringstream(j.at("rng_env").get<std::string>()) >> t.rng_env_;
    std::istringstream(j.at("rng_sample").get<std::string>()) >> t.rng_sample_;
    return t;
  }

  static nlohmann::json params_to_json(const policy::PolicyParams& p) {
    return {{"buckets", p.buckets}, {"length", p.length},
            {"vocab", p.vocab},     {"version", p.version},
            {"w_ctx", p.w_ctx},     {"w_big", p.w_big}};
  }

  static policy::PolicyParams params_from_json(const nlohmann::json& j) {
    policy::PolicyParams p;
    try {
      p.buckets = j.at("buckets").get<int>();
      p.length = j.at("length").get<int>();
      p.vocab = j.at("vocab").get<int>();
      p.version = j.at("version").get<int>();
      p.w_ctx = j.at("w_ctx").get<std::vector<double>>();
      p.w_big = j.at("w_big").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("checkpoint policy record: " + std::string(e.what()));
    }
    if (p.w_ctx.size() != static_cast<std::size_t>(p.buckets) * p.length * p.vocab ||
        p.w_big.size() != 2 * static_cast<std::size_t>(p.vocab + 1) * p.vocab) {
      throw ParseError("checkpoint policy record: weight shapes inconsistent");
    }
    return p;
  }

 private:
  TrainConfig cfg_;
  policy::PolicyParams params_;
  policy::PolicyParams ref_;
  std::mt19937_64 rng_env_;
  std::mt19937_64 rng_sample_;
  int step_ = 0;
};

}  // namespace murphy::train
