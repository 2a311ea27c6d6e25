#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/rollout_tree.hpp"

// Backward reward propagation over a rollout tree, from turn S-1 down to
// the root. MaRS keeps the best outcome reachable through feedback; MeRS
// averages child outcomes, discounted and normalized by remaining depth.

namespace murphy::credit {

enum class Strategy { MaRS, MeRS };

inline const char* strategy_name(Strategy s) {
  return s == Strategy::MaRS ? "mars" : "mers";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "mars") return Strategy::MaRS;
  if (s == "mers") return Strategy::MeRS;
  throw ConfigError("unknown credit strategy: '" + s + "'");
}

struct CreditConfig {
  Strategy strategy = Strategy::MaRS;
  double gamma = 0.9;  // MeRS only

  void validate() const {
    if (strategy == Strategy::MeRS && (gamma < 0.0 || gamma > 1.0)) {
      throw DomainError("credit: gamma " + std::to_string(gamma) +
                        " outside [0,1]");
    }
  }
};

// Sets propagated_reward on every unpruned generation at one turn, using
// the children's already-propagated values. Final-turn rewards stay
// bit-identical to raw.
inline void propagate_level(tree::RolloutTree& t, int turn,
                            const CreditConfig& cfg) {
  const int total_turns = t.max_turns();
  for (tree::NodeId id : t.generations_at_turn(turn)) {
    auto& g = t.gen_at(id);
    if (turn == total_turns) {
      g.propagated_reward = g.raw_reward;
      continue;
    }
    std::vector<double> child = t.children_rewards(id);
    if (cfg.strategy == Strategy::MaRS) {
      double best = g.raw_reward;
      for (double r : child) best = std::max(best, r);
      g.propagated_reward = best;
    } else {
      if (!g.child_prompt) {
        // Never expanded: a childless node is not penalized.
        g.propagated_reward = g.raw_reward;
        continue;
      }
      // Expanded node; an all-pruned child set defaults to mean zero.
      double mean = 0.0;
      if (!child.empty()) {
        double sum = 0.0;
        for (double r : child) sum += r;
        mean = sum / static_cast<double>(child.size());
      }
      g.propagated_reward = (g.raw_reward + cfg.gamma * mean) /
                            static_cast<double>(total_turns - turn + 1);
    }
  }
}

// Full bottom-up sweep without the single-application guard.
inline void propagate_levels(tree::RolloutTree& t, const CreditConfig& cfg) {
  cfg.validate();
  for (int s = t.max_turns(); s >= 1; --s) propagate_level(t, s, cfg);
}

inline void propagate(tree::RolloutTree& t, const CreditConfig& cfg) {
  if (t.credit_applied()) {
    throw StateError("credit: propagation already applied to this tree");
  }
  propagate_levels(t, cfg);
  t.mark_credit_applied();
}

inline void propagate_mars(tree::RolloutTree& t) {
  propagate(t, {Strategy::MaRS, 0.0});
}

inline void propagate_mers(tree::RolloutTree& t, double gamma) {
  propagate(t, {Strategy::MeRS, gamma});
}

}  // namespace murphy::credit
