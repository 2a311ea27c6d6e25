#pragma once

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "murphy/common.hpp"
#include "murphy/toy_env.hpp"

// Arena-backed rollout tree for one task: prompt nodes alternate with
// generation nodes along every root-to-leaf path. Pruned nodes are flagged,
// never deallocated, so node ids stay stable and dumps stay auditable.

namespace murphy::tree {

using NodeId = int;

struct Segment {
  env::Program generation;
  env::FeedbackRecord feedback;
  bool operator==(const Segment&) const = default;
};

// Structured stand-in for the textual [prompt, output, feedback, ...]
// concatenation: the policy consumes typed segments, not prose.
struct ContextChain {
  std::string task_id;
  std::string prompt_key;
  std::vector<Segment> segments;  // size == turn - 1
  bool operator==(const ContextChain&) const = default;
};

struct PromptNode {
  NodeId id = 0;
  int turn = 1;  // s >= 1
  std::optional<NodeId> parent_generation;
  ContextChain context;
  std::vector<NodeId> child_generations;
  bool pruned = false;
  bool operator==(const PromptNode&) const = default;
};

struct GenerationNode {
  NodeId id = 0;
  NodeId parent_prompt = 0;
  env::Program tokens;
  std::vector<double> behavior_logprobs;  // under the rollout-time snapshot
  double raw_reward = 0.0;                // passed/total, stored unmodified
  std::optional<double> propagated_reward;
  env::FeedbackRecord feedback;
  std::optional<NodeId> child_prompt;
  bool pruned = false;
  bool operator==(const GenerationNode&) const = default;
};

using Node = std::variant<PromptNode, GenerationNode>;

struct GenRecord {
  env::Program tokens;
  std::vector<double> logprobs;
  double reward = 0.0;
  env::FeedbackRecord feedback;
};

// Total generation count when every generation fails until the last turn:
// sum over s of prod_{k<=s} G_k.
inline long long worst_case_rollouts(const std::vector<int>& schedule) {
  long long total = 0;
  long long layer = 1;
  for (int g : schedule) {
    layer *= g;
    total += layer;
  }
  return total;
}

class RolloutTree {
 public:
  RolloutTree() = default;

  RolloutTree(std::string task_id, std::vector<int> schedule, int max_turns,
              std::string prompt_key = {}) {
    if (max_turns < 1) {
      throw ConfigError("rollout tree: max_turns must be >= 1, got " +
                        std::to_string(max_turns));
    }
    if (static_cast<int>(schedule.size()) != max_turns) {
      throw ConfigError("rollout tree: schedule has " +
                        std::to_string(schedule.size()) + " entries, expected " +
                        std::to_string(max_turns));
    }
    for (int g : schedule) {
      if (g < 1) {
        throw ConfigError("rollout tree: schedule entries must be >= 1");
      }
    }
    task_id_ = std::move(task_id);
    schedule_ = std::move(schedule);
    max_turns_ = max_turns;
    PromptNode root;
    root.id = 0;
    root.turn = 1;
    root.context.task_id = task_id_;
    root.context.prompt_key = prompt_key.empty() ? task_id_ : prompt_key;
    nodes_.push_back(std::move(root));
  }

  const std::string& task_id() const { return task_id_; }
  int max_turns() const { return max_turns_; }
  const std::vector<int>& schedule() const { return schedule_; }
  NodeId root() const { return 0; }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool credit_applied() const { return credit_applied_; }
  int behavior_version() const { return behavior_version_; }
  void set_behavior_version(int v) { behavior_version_ = v; }

  // credit_applied flips to true exactly once.
  void mark_credit_applied() {
    if (credit_applied_) {
      throw StateError("rollout tree: credit assignment already applied");
    }
    credit_applied_ = true;
  }

  bool is_prompt(NodeId id) const {
    return std::holds_alternative<PromptNode>(node_at(id));
  }
  bool is_generation(NodeId id) const {
    return std::holds_alternative<GenerationNode>(node_at(id));
  }

  const PromptNode& prompt_at(NodeId id) const {
    const auto* p = std::get_if<PromptNode>(&node_at(id));
    if (!p) {
      throw LookupError("node " + std::to_string(id) + " is not a prompt node");
    }
    return *p;
  }
  const GenerationNode& gen_at(NodeId id) const {
    const auto* g = std::get_if<GenerationNode>(&node_at(id));
    if (!g) {
      throw LookupError("node " + std::to_string(id) +
                        " is not a generation node");
    }
    return *g;
  }
  GenerationNode& gen_at(NodeId id) {
    return const_cast<GenerationNode&>(
        static_cast<const RolloutTree*>(this)->gen_at(id));
  }

  int turn_of(NodeId id) const {
    const Node& n = node_at(id);
    if (const auto* p = std::get_if<PromptNode>(&n)) return p->turn;
    return prompt_at(std::get<GenerationNode>(n).parent_prompt).turn;
  }

  double current_reward(const GenerationNode& g) const {
    return g.propagated_reward.value_or(g.raw_reward);
  }

  std::vector<NodeId> attach_generations(NodeId prompt,
                                         const std::vector<GenRecord>& records) {
    PromptNode& pn = mutable_prompt(prompt);
    if (!pn.child_generations.empty()) {
      throw StateError("attach_generations: prompt node " +
                       std::to_string(prompt) + " already has children");
    }
    int limit = schedule_[static_cast<std::size_t>(pn.turn - 1)];
    if (static_cast<int>(records.size()) > limit) {
      throw DomainError("attach_generations: " +
                        std::to_string(records.size()) +
                        " records exceed schedule limit " +
                        std::to_string(limit) + " at turn " +
                        std::to_string(pn.turn));
    }
    for (const GenRecord& r : records) {
      if (r.reward < 0.0 || r.reward > 1.0) {
        throw DomainError("attach_generations: reward " +
                          std::to_string(r.reward) + " outside [0,1]");
      }
    }
    const bool parent_pruned = pn.pruned;  // pn dangles once nodes_ grows
    std::vector<NodeId> ids;
    ids.reserve(records.size());
    for (const GenRecord& r : records) {
      GenerationNode g;
      g.id = static_cast<NodeId>(nodes_.size());
      g.parent_prompt = prompt;
      g.tokens = r.tokens;
      g.behavior_logprobs = r.logprobs;
      g.raw_reward = r.reward;
      g.feedback = r.feedback;
      g.pruned = parent_pruned;
      ids.push_back(g.id);
      nodes_.push_back(std::move(g));
      mutable_prompt(prompt).child_generations.push_back(ids.back());
    }
    return ids;
  }

  // Feedback-conditioned expansion: only failed, unexpanded, unpruned
  // generations below the turn budget get a child prompt.
  NodeId expand(NodeId generation) {
    GenerationNode& g = gen_at(generation);
    const PromptNode& parent = prompt_at(g.parent_prompt);
    if (g.raw_reward == 1.0) {
      throw StateError("expand: generation " + std::to_string(generation) +
                       " already has the maximum reward");
    }
    if (parent.turn >= max_turns_) {
      throw StateError("expand: generation " + std::to_string(generation) +
                       " is at the final turn");
    }
    if (g.child_prompt.has_value()) {
      throw StateError("expand: generation " + std::to_string(generation) +
                       " already expanded");
    }
    if (g.pruned) {
      throw StateError("expand: generation " + std::to_string(generation) +
                       " is pruned");
    }
    PromptNode child;
    child.id = static_cast<NodeId>(nodes_.size());
    child.turn = parent.turn + 1;
    child.parent_generation = generation;
    child.context = parent.context;
    child.context.segments.push_back({g.tokens, g.feedback});
    g.child_prompt = child.id;
    nodes_.push_back(std::move(child));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  // Current rewards of the unpruned generations under this node's child
  // prompt. Empty when there is no child prompt or everything under it was
  // pruned; the zero default for empty sets is applied by the credit module.
  std::vector<double> children_rewards(NodeId generation) const {
    const GenerationNode& g = gen_at(generation);
    std::vector<double> out;
    if (!g.child_prompt) return out;
    for (NodeId cid : prompt_at(*g.child_prompt).child_generations) {
      const GenerationNode& c = gen_at(cid);
      if (!c.pruned) out.push_back(current_reward(c));
    }
    return out;
  }

  std::vector<NodeId> unpruned_children(NodeId generation) const {
    const GenerationNode& g = gen_at(generation);
    std::vector<NodeId> out;
    if (!g.child_prompt) return out;
    for (NodeId cid : prompt_at(*g.child_prompt).child_generations) {
      if (!gen_at(cid).pruned) out.push_back(cid);
    }
    return out;
  }

  // Flags a node and its whole subtree.
  void mark_pruned(NodeId id) {
    Node& n = nodes_.at(check_id(id));
    if (auto* p = std::get_if<PromptNode>(&n)) {
      p->pruned = true;
      for (NodeId c : p->child_generations) mark_pruned(c);
    } else {
      auto& g = std::get<GenerationNode>(n);
      g.pruned = true;
      if (g.child_prompt) mark_pruned(*g.child_prompt);
    }
  }

  // Ids of unpruned prompt nodes at a given turn, in creation order.
  std::vector<NodeId> prompts_at_turn(int turn) const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_) {
      if (const auto* p = std::get_if<PromptNode>(&n)) {
        if (p->turn == turn && !p->pruned) out.push_back(p->id);
      }
    }
    return out;
  }

  // Unpruned generations at a given turn, in creation order.
  std::vector<NodeId> generations_at_turn(int turn) const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_) {
      if (const auto* g = std::get_if<GenerationNode>(&n)) {
        if (!g->pruned && prompt_at(g->parent_prompt).turn == turn) {
          out.push_back(g->id);
        }
      }
    }
    return out;
  }

  long long total_generations() const {
    long long n = 0;
    for (const Node& node : nodes_) {
      if (std::holds_alternative<GenerationNode>(node)) ++n;
    }
    return n;
  }

  long long unpruned_generations() const {
    long long n = 0;
    for (const Node& node : nodes_) {
      if (const auto* g = std::get_if<GenerationNode>(&node)) {
        if (!g->pruned) ++n;
      }
    }
    return n;
  }

  bool operator==(const RolloutTree& other) const {
    return task_id_ == other.task_id_ && schedule_ == other.schedule_ &&
           max_turns_ == other.max_turns_ &&
           credit_applied_ == other.credit_applied_ &&
           behavior_version_ == other.behavior_version_ &&
           nodes_ == other.nodes_;
  }

  // Full traversal check: acyclic, single parent, exactly one path to root,
  // consistent bidirectional links. Throws StateError on violation.
  void validate() const {
    std::vector<int> seen(nodes_.size(), 0);
    validate_walk(0, seen);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (seen[i] != 1) {
        throw StateError("tree validation: node " + std::to_string(i) +
                         " reached " + std::to_string(seen[i]) +
                         " times from the root");
      }
    }
  }

  void dump(std::ostream& os) const;
  std::string dumps() const {
    std::ostringstream os;
    dump(os);
    return os.str();
  }
  static RolloutTree load(std::istream& is);
  static RolloutTree loads(const std::string& text) {
    std::istringstream is(text);
    return load(is);
  }

 private:
  std::size_t check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw LookupError("unknown node id " + std::to_string(id));
    }
    return static_cast<std::size_t>(id);
  }
  const Node& node_at(NodeId id) const { return nodes_[check_id(id)]; }
  PromptNode& mutable_prompt(NodeId id) {
    auto* p = std::get_if<PromptNode>(&nodes_.at(check_id(id)));
    if (!p) {
      throw LookupError("node " + std::to_string(id) + " is not a prompt node");
    }
    return *p;
  }

  void validate_walk(NodeId id, std::vector<int>& seen) const {
    ++seen[check_id(id)];
    const Node& n = node_at(id);
    if (const auto* p = std::get_if<PromptNode>(&n)) {
      if (static_cast<int>(p->child_generations.size()) >
          schedule_[static_cast<std::size_t>(p->turn - 1)]) {
        throw StateError("tree validation: sibling group at prompt " +
                         std::to_string(id) + " exceeds the schedule");
      }
      for (NodeId c : p->child_generations) {
        if (gen_at(c).parent_prompt != id) {
          throw StateError("tree validation: broken parent link at node " +
                           std::to_string(c));
        }
        validate_walk(c, seen);
      }
    } else {
      const auto& g = std::get<GenerationNode>(n);
      if (g.child_prompt) {
        if (g.raw_reward == 1.0 || prompt_at(g.parent_prompt).turn >= max_turns_) {
          throw StateError("tree validation: illegal expansion at node " +
                           std::to_string(id));
        }
        if (prompt_at(*g.child_prompt).parent_generation != id) {
          throw StateError("tree validation: broken child link at node " +
                           std::to_string(id));
        }
        validate_walk(*g.child_prompt, seen);
      }
    }
  }

  std::string task_id_;
  std::vector<int> schedule_;
  int max_turns_ = 0;
  bool credit_applied_ = false;
  int behavior_version_ = 0;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline json feedback_to_json(const env::FeedbackRecord& fb) {
  json failures = json::array();
  for (const env::Failure& f : fb.failures) {
    json got;
    if (const auto* v = std::get_if<std::int64_t>(&f.got)) {
      got = *v;
    } else {
      got = env::dsl_error_name(std::get<env::DslError>(f.got));
    }
    failures.push_back(
        {{"input", f.input}, {"expected", f.expected}, {"got", got}});
  }
  return {{"passed", fb.passed}, {"total", fb.total}, {"failures", failures}};
}

inline json require_field(const json& j, const char* field, int line) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw ParseError("tree dump line " + std::to_string(line) +
                     ": missing field '" + field + "'");
  }
  return *it;
}

inline env::FeedbackRecord feedback_from_json(const json& j, int line) {
  env::FeedbackRecord fb;
  fb.passed = require_field(j, "passed", line).get<int>();
  fb.total = require_field(j, "total", line).get<int>();
  for (const json& fj : require_field(j, "failures", line)) {
    env::Failure f;
    f.input = require_field(fj, "input", line).get<std::int64_t>();
    f.expected = require_field(fj, "expected", line).get<std::int64_t>();
    json got = require_field(fj, "got", line);
    if (got.is_string()) {
      f.got = env::dsl_error_from_name(got.get<std::string>());
    } else {
      f.got = got.get<std::int64_t>();
    }
    fb.failures.push_back(std::move(f));
  }
  return fb;
}

inline json tokens_to_json(const env::Program& p) {
  json arr = json::array();
  for (env::Tok t : p.tokens) arr.push_back(env::token_name(t));
  return arr;
}

inline env::Program tokens_from_json(const json& arr, int line) {
  env::Program p;
  for (const json& t : arr) {
    if (!t.is_string()) {
      throw ParseError("tree dump line " + std::to_string(line) +
                       ": token entries must be strings");
    }
    p.tokens.push_back(env::token_from_name(t.get<std::string>()));
  }
  return p;
}

}  // namespace detail

inline void RolloutTree::dump(std::ostream& os) const {
  using detail::json;
  json header = {{"tree",
                  {{"task", task_id_},
                   {"prompt_key", prompt_at(0).context.prompt_key},
                   {"max_turns", max_turns_},
                   {"schedule", schedule_},
                   {"credit_applied", credit_applied_},
                   {"behavior_version", behavior_version_},
                   {"root", 0}}}};
  os << header.dump() << '\n';
  for (const Node& n : nodes_) {
    json line;
    if (const auto* p = std::get_if<PromptNode>(&n)) {
      line = {{"node", p->id},
              {"kind", "prompt"},
              {"turn", p->turn},
              {"parent", p->parent_generation
                             ? json(*p->parent_generation)
                             : json(nullptr)},
              {"tokens", nullptr},
              {"raw_reward", nullptr},
              {"propagated_reward", nullptr},
              {"feedback", nullptr},
              {"pruned", p->pruned}};
    } else {
      const auto& g = std::get<GenerationNode>(n);
      line = {{"node", g.id},
              {"kind", "gen"},
              {"turn", prompt_at(g.parent_prompt).turn},
              {"parent", g.parent_prompt},
              {"tokens", detail::tokens_to_json(g.tokens)},
              {"logprobs", g.behavior_logprobs},
              {"raw_reward", g.raw_reward},
              {"propagated_reward", g.propagated_reward
                                        ? json(*g.propagated_reward)
                                        : json(nullptr)},
              {"feedback", detail::feedback_to_json(g.feedback)},
              {"pruned", g.pruned}};
    }
    os << line.dump() << '\n';
  }
}

inline RolloutTree RolloutTree::load(std::istream& is) {
  using detail::json;
  using detail::require_field;
  std::string text;
  int line_no = 0;
  auto next_line = [&](std::string& out) {
    while (std::getline(is, out)) {
      ++line_no;
      if (!out.empty()) return true;
    }
    return false;
  };
  if (!next_line(text)) throw ParseError("tree dump: empty input");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError("tree dump line 1: " + std::string(e.what()));
  }
  json meta = require_field(header, "tree", 1);
  RolloutTree tree;
  tree.task_id_ = require_field(meta, "task", 1).get<std::string>();
  tree.max_turns_ = require_field(meta, "max_turns", 1).get<int>();
  tree.schedule_ = require_field(meta, "schedule", 1).get<std::vector<int>>();
  tree.credit_applied_ = require_field(meta, "credit_applied", 1).get<bool>();
  tree.behavior_version_ =
      require_field(meta, "behavior_version", 1).get<int>();
  std::string prompt_key = require_field(meta, "prompt_key", 1);

  while (next_line(text)) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError("tree dump line " + std::to_string(line_no) + ": " +
                       std::string(e.what()));
    }
    NodeId id = require_field(j, "node", line_no).get<NodeId>();
    if (id != static_cast<NodeId>(tree.nodes_.size())) {
      throw ParseError("tree dump line " + std::to_string(line_no) +
                       ": node ids must be dense and in order, got " +
                       std::to_string(id));
    }
    std::string kind = require_field(j, "kind", line_no).get<std::string>();
    json parent = require_field(j, "parent", line_no);
    bool pruned = require_field(j, "pruned", line_no).get<bool>();
    if (kind == "prompt") {
      PromptNode p;
      p.id = id;
      p.turn = require_field(j, "turn", line_no).get<int>();
      p.pruned = pruned;
      if (!parent.is_null()) {
        p.parent_generation = parent.get<NodeId>();
        GenerationNode& pg = tree.gen_at(*p.parent_generation);
        pg.child_prompt = id;
        p.context = tree.prompt_at(pg.parent_prompt).context;
        p.context.segments.push_back({pg.tokens, pg.feedback});
      } else {
        if (id != 0) {
          throw ParseError("tree dump line " + std::to_string(line_no) +
                           ": non-root prompt without a parent");
        }
        p.context.task_id = tree.task_id_;
        p.context.prompt_key = prompt_key;
      }
      tree.nodes_.push_back(std::move(p));
    } else if (kind == "gen") {
      GenerationNode g;
      g.id = id;
      g.parent_prompt = parent.get<NodeId>();
      g.tokens =
          detail::tokens_from_json(require_field(j, "tokens", line_no), line_no);
      g.behavior_logprobs =
          require_field(j, "logprobs", line_no).get<std::vector<double>>();
      g.raw_reward = require_field(j, "raw_reward", line_no).get<double>();
      json prop = require_field(j, "propagated_reward", line_no);
      if (!prop.is_null()) g.propagated_reward = prop.get<double>();
      g.feedback = detail::feedback_from_json(
          require_field(j, "feedback", line_no), line_no);
      g.pruned = pruned;
      tree.mutable_prompt(g.parent_prompt).child_generations.push_back(id);
      tree.nodes_.push_back(std::move(g));
    } else {
      throw ParseError("tree dump line " + std::to_string(line_no) +
                       ": unknown node kind '" + kind + "'");
    }
  }
  if (tree.nodes_.empty()) throw ParseError("tree dump: no node lines");
  return tree;
}

}  // namespace murphy::tree
