#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/policy.hpp"
#include "murphy/rollout_tree.hpp"

// Advantage computation, clipped-ratio surrogate with per-token KL
// regularization, and the multi-turn objective over a forest of
// credit-assigned rollout trees. The single-turn case is exactly GRPO.
//
// Sign convention: the objective is maximized; callers that minimize must
// negate. The gradient treats the ratio denominator (behavior logprobs) and
// the advantages as constants; clipping introduces zero-gradient regions.

namespace murphy::objective {

struct ObjectiveConfig {
  double clip_eps = 0.2;
  double beta = 0.04;
  double adv_eps = 1e-8;  // zero-variance guard

  void validate() const {
    if (clip_eps <= 0.0) {
      throw DomainError("objective: clip_eps must be > 0, got " +
                        std::to_string(clip_eps));
    }
    if (beta < 0.0) {
      throw DomainError("objective: beta must be >= 0, got " +
                        std::to_string(beta));
    }
    if (adv_eps < 0.0) {
      throw DomainError("objective: adv_eps must be >= 0, got " +
                        std::to_string(adv_eps));
    }
  }
};

// Group-standardized advantages with population statistics. Zero-variance
// groups yield all-zero advantages rather than being skipped.
inline std::vector<double> group_advantages(const std::vector<double>& rewards,
                                            const ObjectiveConfig& cfg) {
  if (rewards.empty()) {
    throw DomainError("group_advantages: empty reward group");
  }
  double sum = 0.0;
  for (double r : rewards) sum += r;
  double mean = sum / static_cast<double>(rewards.size());
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  double sigma = std::sqrt(ss / static_cast<double>(rewards.size()));
  std::vector<double> adv(rewards.size(), 0.0);
  if (sigma <= cfg.adv_eps) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    adv[i] = (rewards[i] - mean) / sigma;
  }
  return adv;
}

// k3 estimator of KL(pi || ref) at one token: r - log r - 1 with
// r = exp(ref_logprob - pi_logprob). Nonnegative, zero iff equal.
inline double kl_token(double pi_logprob, double ref_logprob) {
  double d = ref_logprob - pi_logprob;
  return std::exp(d) - d - 1.0;
}

struct Stats {
  double objective = 0.0;
  double mean_ratio = 0.0;
  double clip_frac = 0.0;
  double mean_kl = 0.0;
  double grad_norm = 0.0;
  long long n_updates = 0;  // generations contributing gradient
  long long n_tokens = 0;
};

// One generation's contribution to the objective: a token sequence, its
// behavior logprobs (the fixed ratio denominator), the group-standardized
// advantage, and the 1/(G_s * |o|) weight of its prompt term.
struct UpdateItem {
  policy::ContextEncoding ctx;
  const env::Program* tokens = nullptr;
  const std::vector<double>* behavior_logprobs = nullptr;
  double advantage = 0.0;
  double weight = 0.0;
};

// Accumulates objective value and gradient over items in input order, then
// scales both by 1/batch_div (the task-batch mean). Deterministic: a fixed
// reduction order regardless of any caller-side parallelism.
inline Stats loss_and_grad(const std::vector<UpdateItem>& items,
                           const policy::PolicyParams& params,
                           const policy::PolicyParams& ref_snapshot,
                           const ObjectiveConfig& cfg, double batch_div,
                           policy::GradTable& grad) {
  cfg.validate();
  if (!params.same_shape(ref_snapshot)) {
    throw StateError("objective: params and reference policy shapes differ");
  }
  Stats stats;
  double value = 0.0;
  double ratio_sum = 0.0;
  double kl_sum = 0.0;
  long long clipped = 0;
  std::vector<double> coeff;
  for (const UpdateItem& item : items) {
    const env::Program& tokens = *item.tokens;
    const std::vector<double>& behavior = *item.behavior_logprobs;
    std::vector<double> pi_lp = policy::logprob(params, item.ctx, tokens);
    std::vector<double> ref_lp = policy::logprob(ref_snapshot, item.ctx, tokens);
    coeff.assign(tokens.tokens.size(), 0.0);
    for (std::size_t t = 0; t < tokens.tokens.size(); ++t) {
      double ratio = std::exp(pi_lp[t] - behavior[t]);
      double clamped =
          std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      double a = item.advantage;
      double surrogate = std::min(ratio * a, clamped * a);
      double kl = kl_token(pi_lp[t], ref_lp[t]);
      value += item.weight * (surrogate - cfg.beta * kl);

      double c = 0.0;
      if (ratio * a <= clamped * a) c += a * ratio;  // unclipped branch
      else ++clipped;
      double r_kl = std::exp(ref_lp[t] - pi_lp[t]);
      c += cfg.beta * (r_kl - 1.0);  // d(-beta*kl)/d pi_logprob
      coeff[t] = item.weight * c;

      ratio_sum += ratio;
      kl_sum += kl;
      ++stats.n_tokens;
    }
    policy::accumulate_logprob_grad(params, item.ctx, tokens, coeff, grad);
    ++stats.n_updates;
  }
  if (batch_div != 1.0) {
    double inv = 1.0 / batch_div;
    value *= inv;
    for (double& g : grad.w_ctx) g *= inv;
    for (double& g : grad.w_big) g *= inv;
  }
  stats.objective = value;
  if (stats.n_tokens > 0) {
    stats.mean_ratio = ratio_sum / static_cast<double>(stats.n_tokens);
    stats.mean_kl = kl_sum / static_cast<double>(stats.n_tokens);
    stats.clip_frac =
        static_cast<double>(clipped) / static_cast<double>(stats.n_tokens);
  }
  double norm_sq = 0.0;
  for (double g : grad.w_ctx) norm_sq += g * g;
  for (double g : grad.w_big) norm_sq += g * g;
  stats.grad_norm = std::sqrt(norm_sq);
  return stats;
}

// Builds the update items of one credit-assigned tree: one advantage group
// per unpruned prompt node, advantages from propagated rewards, the
// standard 1/(G_s |o|) token averaging within each prompt term.
inline void collect_tree_items(const tree::RolloutTree& t,
                               const ObjectiveConfig& cfg, int buckets,
                               std::vector<UpdateItem>& items) {
  if (!t.credit_applied()) {
    throw StateError("objective: tree '" + t.task_id() +
                     "' has no credit assignment applied");
  }
  for (int turn = 1; turn <= t.max_turns(); ++turn) {
    for (tree::NodeId pid : t.prompts_at_turn(turn)) {
      const auto& prompt = t.prompt_at(pid);
      std::vector<tree::NodeId> gens;
      std::vector<double> rewards;
      for (tree::NodeId gid : prompt.child_generations) {
        const auto& g = t.gen_at(gid);
        if (g.pruned) continue;
        gens.push_back(gid);
        rewards.push_back(*g.propagated_reward);
      }
      if (gens.empty()) continue;
      std::vector<double> adv = group_advantages(rewards, cfg);
      policy::ContextEncoding ctx =
          policy::encode_context(prompt.context, buckets);
      for (std::size_t i = 0; i < gens.size(); ++i) {
        const auto& g = t.gen_at(gens[i]);
        UpdateItem item;
        item.ctx = ctx;
        item.tokens = &g.tokens;
        item.behavior_logprobs = &g.behavior_logprobs;
        item.advantage = adv[i];
        item.weight = 1.0 / (static_cast<double>(gens.size()) *
                             static_cast<double>(g.tokens.tokens.size()));
        items.push_back(item);
      }
    }
  }
}

// Full multi-turn objective over a forest: per-prompt terms summed over all
// turns and trees, batch-meaned over trees.
inline Stats murphy_loss_and_grad(const std::vector<tree::RolloutTree>& forest,
                                  const policy::PolicyParams& params,
                                  const policy::PolicyParams& old_snapshot,
                                  const policy::PolicyParams& ref_snapshot,
                                  const ObjectiveConfig& cfg,
                                  policy::GradTable& grad) {
  for (const auto& t : forest) {
    if (t.behavior_version() != old_snapshot.version) {
      throw StateError("objective: tree '" + t.task_id() +
                       "' has behavior logprobs from snapshot version " +
                       std::to_string(t.behavior_version()) +
                       ", expected " + std::to_string(old_snapshot.version));
    }
  }
  std::vector<UpdateItem> items;
  for (const auto& t : forest) {
    collect_tree_items(t, cfg, params.buckets, items);
  }
  return loss_and_grad(items, params, ref_snapshot, cfg,
                       static_cast<double>(forest.size()), grad);
}

// Standalone single-turn groups (the GRPO shape).
struct Group {
  policy::ContextEncoding ctx;
  std::vector<env::Program> tokens;
  std::vector<std::vector<double>> behavior_logprobs;
  std::vector<double> rewards;
};

inline Stats grpo_loss_and_grad(const std::vector<Group>& groups,
                                const policy::PolicyParams& params,
                                const policy::PolicyParams& ref_snapshot,
                                const ObjectiveConfig& cfg,
                                policy::GradTable& grad) {
  std::vector<UpdateItem> items;
  std::vector<std::vector<double>> adv_by_group;
  adv_by_group.reserve(groups.size());
  for (const Group& g : groups) {
    adv_by_group.push_back(group_advantages(g.rewards, cfg));
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    for (std::size_t i = 0; i < g.tokens.size(); ++i) {
      UpdateItem item;
      item.ctx = g.ctx;
      item.tokens = &g.tokens[i];
      item.behavior_logprobs = &g.behavior_logprobs[i];
      item.advantage = adv_by_group[gi][i];
      item.weight = 1.0 / (static_cast<double>(g.tokens.size()) *
                           static_cast<double>(g.tokens[i].tokens.size()));
      items.push_back(item);
    }
  }
  return loss_and_grad(items, params, ref_snapshot, cfg,
                       static_cast<double>(groups.size()), grad);
}

}  // namespace murphy::objective
