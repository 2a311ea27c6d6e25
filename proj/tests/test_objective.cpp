#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "murphy/credit.hpp"
#include "murphy/objective.hpp"
#include "murphy/policy.hpp"

using namespace murphy;
using objective::ObjectiveConfig;
using policy::GradTable;
using policy::PolicyParams;
using tree::GenRecord;
using tree::NodeId;
using tree::RolloutTree;

namespace {

constexpr int kBuckets = 64;

PolicyParams random_params(std::mt19937_64& rng, double scale,
                           int buckets = kBuckets) {
  PolicyParams p = PolicyParams::zeros(buckets);
  for (double& w : p.w_ctx) w = scale * (2.0 * uniform01(rng) - 1.0);
  for (double& w : p.w_big) w = scale * (2.0 * uniform01(rng) - 1.0);
  return p;
}

// Tree whose behavior logprobs come from actual temperature-1 samples of
// `snap`, with synthetic rewards k/12 < 1 so every generation expands.
RolloutTree sampled_tree(const PolicyParams& snap, std::mt19937_64& rng,
                         const std::vector<int>& schedule,
                         const std::string& id) {
  int turns = static_cast<int>(schedule.size());
  RolloutTree t(id, schedule, turns);
  t.set_behavior_version(snap.version);
  std::vector<NodeId> frontier = {t.root()};
  for (int s = 1; s <= turns; ++s) {
    std::vector<NodeId> next;
    for (NodeId pid : frontier) {
      policy::ContextEncoding ctx =
          policy::encode_context(t.prompt_at(pid).context, snap.buckets);
      auto samples = policy::sample(
          snap, ctx, schedule[static_cast<std::size_t>(s - 1)], 1.0, rng);
      std::vector<GenRecord> recs;
      for (auto& smp : samples) {
        GenRecord r;
        r.tokens = smp.tokens;
        r.logprobs = smp.logprobs;
        r.reward = static_cast<double>(rng() % 12) / 12.0;
        r.feedback = testutil::random_feedback(rng);
        recs.push_back(std::move(r));
      }
      auto ids = t.attach_generations(pid, recs);
      if (s < turns) {
        for (NodeId g : ids) next.push_back(t.expand(g));
      }
    }
    frontier = std::move(next);
  }
  return t;
}

double objective_value(const std::vector<RolloutTree>& forest,
                       const PolicyParams& params, const PolicyParams& old_snap,
                       const PolicyParams& ref, const ObjectiveConfig& cfg) {
  GradTable g = GradTable::zeros_like(params);
  return objective::murphy_loss_and_grad(forest, params, old_snap, ref, cfg, g)
      .objective;
}

// Smallest distance of any token ratio to a clip boundary; finite-difference
// probes are only valid away from the min/clamp kinks.
double min_boundary_distance(const std::vector<RolloutTree>& forest,
                             const PolicyParams& params,
                             const ObjectiveConfig& cfg) {
  std::vector<objective::UpdateItem> items;
  for (const auto& t : forest) {
    objective::collect_tree_items(t, cfg, params.buckets, items);
  }
  double dist = 1e300;
  for (const auto& item : items) {
    std::vector<double> pi_lp = policy::logprob(params, item.ctx, *item.tokens);
    for (std::size_t k = 0; k < pi_lp.size(); ++k) {
      double ratio = std::exp(pi_lp[k] - (*item.behavior_logprobs)[k]);
      dist = std::min(dist, std::abs(ratio - (1.0 - cfg.clip_eps)));
      dist = std::min(dist, std::abs(ratio - (1.0 + cfg.clip_eps)));
    }
  }
  return dist;
}

std::vector<RolloutTree> credited_forest(const PolicyParams& snap,
                                         std::mt19937_64& rng, int n_trees,
                                         const std::vector<int>& schedule) {
  std::vector<RolloutTree> forest;
  for (int i = 0; i < n_trees; ++i) {
    forest.push_back(
        sampled_tree(snap, rng, schedule, "t" + std::to_string(i)));
    credit::propagate(forest.back(),
                      {i % 2 == 0 ? credit::Strategy::MaRS
                                  : credit::Strategy::MeRS,
                       0.9});
  }
  return forest;
}

double total_logprob(const PolicyParams& params, policy::ContextEncoding ctx,
                     const env::Program& tokens) {
  double sum = 0.0;
  for (double lp : policy::logprob(params, ctx, tokens)) sum += lp;
  return sum;
}

}  // namespace

TEST_CASE("group_advantages examples") {
  ObjectiveConfig cfg;
  CHECK(objective::group_advantages({1.0, 0.0}, cfg) ==
        std::vector<double>{1.0, -1.0});
  CHECK(objective::group_advantages({0.7, 0.7, 0.7}, cfg) ==
        std::vector<double>{0.0, 0.0, 0.0});
  CHECK(objective::group_advantages({0.25}, cfg) == std::vector<double>{0.0});
  CHECK_THROWS_AS(objective::group_advantages({}, cfg), DomainError);

  // mean 0.375, population sigma sqrt(15)/8
  std::vector<double> adv = objective::group_advantages(
      {1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0}, cfg);
  for (int i = 0; i < 3; ++i) {
    CHECK(adv[static_cast<std::size_t>(i)] ==
          doctest::Approx(1.2909944487358056).epsilon(1e-14));
  }
  for (int i = 3; i < 8; ++i) {
    CHECK(adv[static_cast<std::size_t>(i)] ==
          doctest::Approx(-0.7745966692414834).epsilon(1e-14));
  }
}

TEST_CASE("group_advantages mean is zero") {
  std::mt19937_64 rng(31);
  ObjectiveConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng() % 8);
    std::vector<double> rewards;
    for (int i = 0; i < n; ++i) {
      rewards.push_back(testutil::random_reward_k12(rng));
    }
    std::vector<double> adv = objective::group_advantages(rewards, cfg);
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-9);
  }
}

TEST_CASE("kl_token") {
  CHECK(objective::kl_token(-1.3, -1.3) == 0.0);
  double log2 = std::log(2.0);
  // ref/pi = 2: 2 - log 2 - 1
  CHECK(objective::kl_token(-log2, 0.0) ==
        doctest::Approx(1.0 - log2).epsilon(1e-14));
  // ref/pi = 1/2: 0.5 + log 2 - 1
  CHECK(objective::kl_token(0.0, -log2) ==
        doctest::Approx(log2 - 0.5).epsilon(1e-14));

  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    double pi = -4.0 * uniform01(rng) - 0.01;
    double ref = -4.0 * uniform01(rng) - 0.01;
    double kl = objective::kl_token(pi, ref);
    CHECK(kl >= 0.0);
    if (pi != ref) CHECK(kl > 0.0);
  }
}

TEST_CASE("config validation") {
  ObjectiveConfig bad_clip{0.0, 0.04, 1e-8};
  CHECK_THROWS_AS(bad_clip.validate(), DomainError);
  ObjectiveConfig bad_beta{0.2, -0.1, 1e-8};
  CHECK_THROWS_AS(bad_beta.validate(), DomainError);
  ObjectiveConfig bad_eps{0.2, 0.04, -1.0};
  CHECK_THROWS_AS(bad_eps.validate(), DomainError);
  ObjectiveConfig ok{};
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("unit ratios at the trust-region center") {
  std::mt19937_64 rng(77);
  PolicyParams params = random_params(rng, 0.5);
  PolicyParams snap = policy::snapshot(params);

  objective::Group group;
  group.ctx = {13};
  for (int i = 0; i < 2; ++i) {
    auto s = policy::sample(snap, group.ctx, 1, 1.0, rng);
    group.tokens.push_back(s[0].tokens);
    group.behavior_logprobs.push_back(s[0].logprobs);
  }
  group.rewards = {1.0, 0.0};

  ObjectiveConfig cfg;
  GradTable grad = GradTable::zeros_like(params);
  objective::Stats stats =
      objective::grpo_loss_and_grad({group}, params, snap, cfg, grad);
  // ratio == 1 everywhere, advantages +1/-1 with equal token counts
  CHECK(stats.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats.clip_frac == 0.0);
  CHECK(stats.mean_kl == doctest::Approx(0.0).epsilon(1e-12));
  // sampled behavior logprobs agree with logprob() only to rounding, so the
  // +1/-1 surrogates cancel to rounding rather than bitwise
  CHECK(std::abs(stats.objective) < 1e-12);
  CHECK(stats.n_updates == 2);
  CHECK(stats.n_tokens == 14);

  // clipping is inert at the center: a different clip_eps changes nothing
  ObjectiveConfig wide = cfg;
  wide.clip_eps = 0.37;
  GradTable grad2 = GradTable::zeros_like(params);
  objective::Stats stats2 =
      objective::grpo_loss_and_grad({group}, params, snap, wide, grad2);
  CHECK(stats2.objective == stats.objective);
  CHECK(grad2.w_ctx == grad.w_ctx);
  CHECK(grad2.w_big == grad.w_big);
}

TEST_CASE("zero advantages with beta=0 give zero value and gradient") {
  std::mt19937_64 rng(78);
  PolicyParams params = random_params(rng, 0.5);
  PolicyParams snap = policy::snapshot(params);
  objective::Group group;
  group.ctx = {3};
  for (int i = 0; i < 3; ++i) {
    auto s = policy::sample(snap, group.ctx, 1, 1.0, rng);
    group.tokens.push_back(s[0].tokens);
    group.behavior_logprobs.push_back(s[0].logprobs);
  }
  group.rewards = {0.5, 0.5, 0.5};
  ObjectiveConfig cfg;
  cfg.beta = 0.0;
  GradTable grad = GradTable::zeros_like(params);
  objective::Stats stats =
      objective::grpo_loss_and_grad({group}, params, snap, cfg, grad);
  CHECK(stats.objective == 0.0);
  CHECK(stats.grad_norm == 0.0);
}

TEST_CASE("murphy on single-turn forests is exactly grpo") {
  std::mt19937_64 rng(910);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyParams params = random_params(rng, 0.3);
    PolicyParams snap = policy::snapshot(params);

    std::vector<RolloutTree> forest;
    std::vector<objective::Group> groups;
    int n_trees = 2 + static_cast<int>(rng() % 3);
    for (int i = 0; i < n_trees; ++i) {
      RolloutTree t = sampled_tree(snap, rng, {4}, "t" + std::to_string(i));
      credit::propagate_mars(t);
      objective::Group g;
      g.ctx = policy::encode_context(t.prompt_at(t.root()).context,
                                     snap.buckets);
      for (NodeId gid : t.generations_at_turn(1)) {
        g.tokens.push_back(t.gen_at(gid).tokens);
        g.behavior_logprobs.push_back(t.gen_at(gid).behavior_logprobs);
        g.rewards.push_back(t.gen_at(gid).raw_reward);
      }
      groups.push_back(std::move(g));
      forest.push_back(std::move(t));
    }

    ObjectiveConfig cfg;
    GradTable ga = GradTable::zeros_like(params);
    GradTable gb = GradTable::zeros_like(params);
    objective::Stats a =
        objective::murphy_loss_and_grad(forest, params, snap, snap, cfg, ga);
    objective::Stats b =
        objective::grpo_loss_and_grad(groups, params, snap, cfg, gb);
    CHECK(a.objective == b.objective);
    CHECK(a.mean_kl == b.mean_kl);
    CHECK(a.clip_frac == b.clip_frac);
    CHECK(a.grad_norm == b.grad_norm);
    CHECK(ga.w_ctx == gb.w_ctx);
    CHECK(ga.w_big == gb.w_big);
  }
}

TEST_CASE("finite-difference gradient check, multi-turn") {
  std::mt19937_64 rng(1234);
  ObjectiveConfig cfg;  // beta 0.04, clip 0.2
  int checked = 0;
  for (int trial = 0; trial < 12 && checked < 6; ++trial) {
    PolicyParams behavior = random_params(rng, 0.1);
    PolicyParams snap = policy::snapshot(behavior);
    std::vector<RolloutTree> forest = credited_forest(snap, rng, 2, {2, 2});

    PolicyParams params = snap;
    for (double& w : params.w_ctx) w += 0.05 * (2.0 * uniform01(rng) - 1.0);
    for (double& w : params.w_big) w += 0.05 * (2.0 * uniform01(rng) - 1.0);
    PolicyParams ref = random_params(rng, 0.1);
    ref.version = snap.version;  // shape twin; only version equality matters

    if (min_boundary_distance(forest, params, cfg) < 1e-3) continue;
    ++checked;

    GradTable grad = GradTable::zeros_like(params);
    objective::murphy_loss_and_grad(forest, params, snap, ref, cfg, grad);

    const double h = 1e-5;
    auto probe = [&](std::vector<double>& table, std::size_t idx,
                     double analytic) {
      double keep = table[idx];
      table[idx] = keep + h;
      double up = objective_value(forest, params, snap, ref, cfg);
      table[idx] = keep - h;
      double down = objective_value(forest, params, snap, ref, cfg);
      table[idx] = keep;
      double numeric = (up - down) / (2.0 * h);
      CHECK(std::abs(numeric - analytic) <
            1e-7 + 1e-5 * std::max(1.0, std::abs(analytic)));
    };

    // all nonzero ctx entries, a few zero ones, and the full bigram table
    int probed = 0;
    for (std::size_t i = 0; i < grad.w_ctx.size() && probed < 60; ++i) {
      if (grad.w_ctx[i] != 0.0) {
        probe(params.w_ctx, i, grad.w_ctx[i]);
        ++probed;
      }
    }
    CHECK(probed > 0);
    for (std::size_t i = 0; i < 5; ++i) {
      probe(params.w_ctx, (i * 977) % params.w_ctx.size(),
            grad.w_ctx[(i * 977) % params.w_ctx.size()]);
    }
    for (std::size_t i = 0; i < grad.w_big.size(); ++i) {
      probe(params.w_big, i, grad.w_big[i]);
    }
  }
  CHECK(checked >= 3);
}

TEST_CASE("finite-difference gradient check with active clipping") {
  std::mt19937_64 rng(4321);
  ObjectiveConfig cfg;
  int checked = 0;
  for (int trial = 0; trial < 20 && checked < 3; ++trial) {
    PolicyParams behavior = random_params(rng, 0.1);
    PolicyParams snap = policy::snapshot(behavior);
    std::vector<RolloutTree> forest = credited_forest(snap, rng, 1, {2, 2});

    // a large move away from the snapshot pushes ratios past the clip range
    PolicyParams params = snap;
    for (double& w : params.w_ctx) w += 1.5 * (2.0 * uniform01(rng) - 1.0);
    for (double& w : params.w_big) w += 1.5 * (2.0 * uniform01(rng) - 1.0);

    if (min_boundary_distance(forest, params, cfg) < 1e-3) continue;

    GradTable grad = GradTable::zeros_like(params);
    objective::Stats stats =
        objective::murphy_loss_and_grad(forest, params, snap, snap, cfg, grad);
    if (stats.clip_frac == 0.0) continue;
    ++checked;

    const double h = 1e-5;
    int probed = 0;
    for (std::size_t i = 0; i < params.w_big.size() && probed < 30; ++i) {
      double keep = params.w_big[i];
      params.w_big[i] = keep + h;
      double up = objective_value(forest, params, snap, snap, cfg);
      params.w_big[i] = keep - h;
      double down = objective_value(forest, params, snap, snap, cfg);
      params.w_big[i] = keep;
      double numeric = (up - down) / (2.0 * h);
      CHECK(std::abs(numeric - grad.w_big[i]) <
            1e-7 + 1e-5 * std::max(1.0, std::abs(grad.w_big[i])));
      ++probed;
    }
  }
  CHECK(checked >= 1);
}

TEST_CASE("ascent step raises the solved program, lowers the failed one") {
  std::mt19937_64 rng(55);
  PolicyParams params = PolicyParams::zeros(kBuckets);
  PolicyParams snap = policy::snapshot(params);
  policy::ContextEncoding ctx{7};

  objective::Group group;
  group.ctx = ctx;
  while (group.tokens.size() < 2) {
    auto s = policy::sample(snap, ctx, 1, 1.0, rng);
    if (!group.tokens.empty() && s[0].tokens == group.tokens[0]) continue;
    group.tokens.push_back(s[0].tokens);
    group.behavior_logprobs.push_back(s[0].logprobs);
  }
  group.rewards = {1.0, 0.0};

  ObjectiveConfig cfg;
  cfg.beta = 0.0;
  GradTable grad = GradTable::zeros_like(params);
  objective::grpo_loss_and_grad({group}, params, snap, cfg, grad);

  PolicyParams stepped = params;
  double lr = 0.1;
  for (std::size_t i = 0; i < stepped.w_ctx.size(); ++i) {
    stepped.w_ctx[i] += lr * grad.w_ctx[i];
  }
  for (std::size_t i = 0; i < stepped.w_big.size(); ++i) {
    stepped.w_big[i] += lr * grad.w_big[i];
  }
  CHECK(total_logprob(stepped, ctx, group.tokens[0]) >
        total_logprob(params, ctx, group.tokens[0]));
  CHECK(total_logprob(stepped, ctx, group.tokens[1]) <
        total_logprob(params, ctx, group.tokens[1]));
}

TEST_CASE("state errors: credit missing, version mismatch, shape mismatch") {
  std::mt19937_64 rng(66);
  PolicyParams params = random_params(rng, 0.1);
  PolicyParams snap = policy::snapshot(params);
  ObjectiveConfig cfg;

  RolloutTree raw = sampled_tree(snap, rng, {2}, "t0");
  std::vector<objective::UpdateItem> items;
  CHECK_THROWS_AS(objective::collect_tree_items(raw, cfg, kBuckets, items),
                  StateError);

  RolloutTree stale = sampled_tree(snap, rng, {2}, "t1");
  stale.set_behavior_version(snap.version + 3);
  credit::propagate_mars(stale);
  GradTable grad = GradTable::zeros_like(params);
  CHECK_THROWS_AS(objective::murphy_loss_and_grad({stale}, params, snap, snap,
                                                  cfg, grad),
                  StateError);

  PolicyParams small = PolicyParams::zeros(8);
  GradTable grad2 = GradTable::zeros_like(params);
  CHECK_THROWS_AS(
      objective::loss_and_grad({}, params, small, cfg, 1.0, grad2),
      StateError);
}
