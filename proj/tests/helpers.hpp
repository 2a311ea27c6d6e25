#pragma once

#include <random>
#include <string>
#include <vector>

#include "murphy/rollout_tree.hpp"
#include "murphy/toy_env.hpp"

// Shared test fixtures: random programs, feedback, and rollout trees with
// rewards drawn from the exact rationals k/12.

namespace testutil {

using murphy::env::FeedbackRecord;
using murphy::env::Program;
using murphy::tree::GenRecord;
using murphy::tree::NodeId;
using murphy::tree::RolloutTree;

inline Program random_program(std::mt19937_64& rng) {
  Program p;
  for (int i = 0; i < murphy::env::kProgramLen; ++i) {
    p.tokens.push_back(static_cast<murphy::env::Tok>(rng() % 10));
  }
  return p;
}

// Feedback consistent with its own counts; failures carry either integer
// results or error codes.
inline FeedbackRecord random_feedback(std::mt19937_64& rng) {
  FeedbackRecord fb;
  int failures = static_cast<int>(rng() % 4);
  fb.passed = static_cast<int>(rng() % 5);
  fb.total = fb.passed + failures;
  for (int i = 0; i < failures; ++i) {
    murphy::env::Failure f;
    f.input = static_cast<std::int64_t>(rng() % 9) - 4;
    f.expected = static_cast<std::int64_t>(rng() % 21) - 10;
    if (rng() % 3 == 0) {
      f.got = static_cast<murphy::env::DslError>(rng() % 3);
    } else {
      f.got = static_cast<std::int64_t>(rng() % 21) - 10;
    }
    fb.failures.push_back(std::move(f));
  }
  return fb;
}

inline GenRecord random_gen_record(std::mt19937_64& rng, double reward) {
  GenRecord rec;
  rec.tokens = random_program(rng);
  for (int i = 0; i < murphy::env::kProgramLen; ++i) {
    rec.logprobs.push_back(-static_cast<double>(rng() % 40) / 10.0 - 0.1);
  }
  rec.reward = reward;
  rec.feedback = random_feedback(rng);
  return rec;
}

inline double random_reward_k12(std::mt19937_64& rng) {
  return static_cast<double>(rng() % 13) / 12.0;
}

// Random valid rollout tree: depth <= max_depth, branching <= max_branch,
// rewards k/12, random expansion of failed generations.
inline RolloutTree random_tree(std::mt19937_64& rng, int max_depth = 4,
                               int max_branch = 4) {
  int turns = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_depth));
  std::vector<int> schedule;
  for (int s = 0; s < turns; ++s) {
    schedule.push_back(1 +
                       static_cast<int>(rng() % static_cast<unsigned>(max_branch)));
  }
  RolloutTree t("rt-" + std::to_string(rng() % 1000000), schedule, turns);
  std::vector<NodeId> frontier = {t.root()};
  for (int s = 1; s <= turns; ++s) {
    std::vector<NodeId> next;
    for (NodeId pid : frontier) {
      int count = 1 + static_cast<int>(
                          rng() % static_cast<unsigned>(
                                      schedule[static_cast<std::size_t>(s - 1)]));
      std::vector<GenRecord> records;
      for (int i = 0; i < count; ++i) {
        records.push_back(random_gen_record(rng, random_reward_k12(rng)));
      }
      std::vector<NodeId> ids = t.attach_generations(pid, records);
      if (s < turns) {
        for (NodeId gid : ids) {
          if (t.gen_at(gid).raw_reward < 1.0 && rng() % 3 != 0) {
            next.push_back(t.expand(gid));
          }
        }
      }
    }
    frontier = std::move(next);
  }
  return t;
}

// Randomly flags some generation subtrees as pruned, keeping at least one
// unpruned generation per sibling group.
inline void random_prune(std::mt19937_64& rng, RolloutTree& t) {
  for (int s = 1; s <= t.max_turns(); ++s) {
    for (NodeId pid : t.prompts_at_turn(s)) {
      const auto& children = t.prompt_at(pid).child_generations;
      if (children.size() < 2) continue;
      for (std::size_t i = 1; i < children.size(); ++i) {
        if (rng() % 4 == 0) t.mark_pruned(children[i]);
      }
    }
  }
}

}  // namespace testutil
