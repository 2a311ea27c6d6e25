#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/credit.hpp"
#include "murphy/rollout_tree.hpp"

// Rollout-tree pruning: IntraP keeps the max-variance subset of trajectories
// within a sibling group, InterP ranks whole child groups by a UCB-style
// score and keeps the top b per tree level. Pruning interleaves with credit
// propagation level by level, pruning first.

namespace murphy::prune {

enum class Strategy { None, IntraP, InterP };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::None: return "none";
    case Strategy::IntraP: return "intra";
    case Strategy::InterP: return "inter";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "none") return Strategy::None;
  if (s == "intra") return Strategy::IntraP;
  if (s == "inter") return Strategy::InterP;
  throw ConfigError("unknown pruning strategy: '" + s + "'");
}

struct PruneConfig {
  Strategy strategy = Strategy::None;
  int budget = 4;
  double alpha1 = 0.0;  // InterP only
  double alpha2 = 1.0;  // InterP only

  void validate() const {
    if (strategy != Strategy::None && budget <= 0) {
      throw DomainError("pruning: budget must be positive, got " +
                        std::to_string(budget));
    }
  }
};

// Population mean/stddev over values taken in ascending order, so that
// equal multisets produce bit-identical results regardless of input order.
inline double population_variance_sorted(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size());
}

// UCB-style group score alpha1 * mean + alpha2 * population stddev.
inline double score_group(const std::vector<double>& rewards, double alpha1,
                          double alpha2) {
  if (rewards.empty()) throw DomainError("score_group: empty reward group");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  double mean = sum / static_cast<double>(rewards.size());
  double sigma = std::sqrt(population_variance_sorted(rewards));
  return alpha1 * mean + alpha2 * sigma;
}

// Size-b subset whose retained rewards have maximal variance. The optimum
// always consists of the k smallest plus the (b-k) largest values for some
// k, so a scan over the b+1 extremes candidates is exact. Ties prefer the
// smaller k, then the lexicographically smallest index set.
inline std::vector<int> select_intra(const std::vector<double>& rewards,
                                     int b) {
  if (b <= 0) {
    throw DomainError("select_intra: budget must be positive, got " +
                      std::to_string(b));
  }
  const int n = static_cast<int>(rewards.size());
  if (b >= n) {
    std::vector<int> all(rewards.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<double> sorted = rewards;
  std::sort(sorted.begin(), sorted.end());

  int best_k = 0;
  double best_var = -1.0;
  std::vector<double> best_multiset;
  for (int k = 0; k <= b; ++k) {
    std::vector<double> kept;
    kept.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < k; ++i) kept.push_back(sorted[static_cast<std::size_t>(i)]);
    for (int i = n - (b - k); i < n; ++i) {
      kept.push_back(sorted[static_cast<std::size_t>(i)]);
    }
    double var = population_variance_sorted(kept);
    if (var > best_var) {
      best_var = var;
      best_k = k;
      best_multiset = std::move(kept);
    }
  }
  (void)best_k;

  // Realize the winning value multiset with the smallest original indices.
  std::map<double, int> need;
  for (double v : best_multiset) ++need[v];
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(b));
  for (int i = 0; i < n && static_cast<int>(selected.size()) < b; ++i) {
    auto it = need.find(rewards[static_cast<std::size_t>(i)]);
    if (it != need.end() && it->second > 0) {
      --it->second;
      selected.push_back(i);
    }
  }
  return selected;
}

// Within each sibling group at this turn, keep the max-variance subset of
// size b; everything else is flagged pruned together with its descendants.
inline void prune_level_intra(tree::RolloutTree& t, int turn, int b) {
  for (tree::NodeId pid : t.prompts_at_turn(turn)) {
    std::vector<tree::NodeId> gens;
    std::vector<double> rewards;
    for (tree::NodeId gid : t.prompt_at(pid).child_generations) {
      const auto& g = t.gen_at(gid);
      if (g.pruned) continue;
      gens.push_back(gid);
      rewards.push_back(t.current_reward(g));
    }
    if (static_cast<int>(gens.size()) <= b) continue;
    std::vector<int> keep = select_intra(rewards, b);
    std::vector<char> kept(gens.size(), 0);
    for (int i : keep) kept[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < gens.size(); ++i) {
      if (!kept[i]) t.mark_pruned(gens[i]);
    }
  }
}

// Ranks all child groups at this turn by the UCB score (ties keep parent
// creation order) and keeps the top b groups per tree level.
inline void prune_level_inter(tree::RolloutTree& t, int turn, int b,
                              double alpha1, double alpha2) {
  if (turn < 2) {
    throw DomainError("prune_level_inter: groups exist only at turns >= 2");
  }
  std::vector<tree::NodeId> groups = t.prompts_at_turn(turn);
  if (static_cast<int>(groups.size()) <= b) return;
  std::vector<double> scores;
  scores.reserve(groups.size());
  for (tree::NodeId pid : groups) {
    std::vector<double> rewards;
    for (tree::NodeId gid : t.prompt_at(pid).child_generations) {
      const auto& g = t.gen_at(gid);
      if (!g.pruned) rewards.push_back(t.current_reward(g));
    }
    scores.push_back(rewards.empty()
                         ? -std::numeric_limits<double>::infinity()
                         : score_group(rewards, alpha1, alpha2));
  }
  std::vector<int> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(c)];
  });
  for (std::size_t rank = static_cast<std::size_t>(b); rank < order.size();
       ++rank) {
    t.mark_pruned(groups[static_cast<std::size_t>(order[rank])]);
  }
}

// Level-by-level backward sweep: prune, then propagate credit into the
// level. IntraP thins the sibling groups at turn s itself; InterP thins the
// child groups one turn below. Strategy None reduces to pure propagation.
inline void prune_and_propagate(tree::RolloutTree& t, const PruneConfig& pcfg,
                                const credit::CreditConfig& ccfg) {
  pcfg.validate();
  ccfg.validate();
  if (t.credit_applied()) {
    throw StateError("prune_and_propagate: credit already applied");
  }
  const int total_turns = t.max_turns();
  credit::propagate_level(t, total_turns, ccfg);
  for (int s = total_turns - 1; s >= 1; --s) {
    switch (pcfg.strategy) {
      case Strategy::None:
        break;
      case Strategy::IntraP:
        prune_level_intra(t, s, pcfg.budget);
        break;
      case Strategy::InterP:
        prune_level_inter(t, s + 1, pcfg.budget, pcfg.alpha1, pcfg.alpha2);
        break;
    }
    credit::propagate_level(t, s, ccfg);
  }
  t.mark_credit_applied();
}

}  // namespace murphy::prune
