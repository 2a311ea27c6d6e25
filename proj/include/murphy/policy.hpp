#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/rollout_tree.hpp"
#include "murphy/toy_env.hpp"

// Tiny autoregressive softmax policy with closed-form log-prob gradients.
// logits(b, p, u) = W_ctx[b, p, :] + W_big[table, u, :], where b is a
// context bucket, p the position and u the previous token (a dedicated
// start row stands in at position 0). The bigram table is split between
// first attempts (table 0) and feedback-conditioned repair turns (table 1):
// repairs pool their shared program shape across all conditioning buckets
// without being dragged toward the first-attempt distribution.

namespace murphy::policy {

struct ContextEncoding {
  int bucket = 0;
  int table = 0;  // 0 = first attempt, 1 = repair turn
};

constexpr int kDefaultBuckets = 4096;

struct PolicyParams {
  int buckets = kDefaultBuckets;
  int length = env::kProgramLen;
  int vocab = env::kVocabSize;
  std::vector<double> w_ctx;  // buckets * length * vocab
  std::vector<double> w_big;  // 2 tables * (vocab + 1) rows * vocab
  int version = 0;

  static PolicyParams zeros(int buckets = kDefaultBuckets,
                            int length = env::kProgramLen,
                            int vocab = env::kVocabSize) {
    PolicyParams p;
    p.buckets = buckets;
    p.length = length;
    p.vocab = vocab;
    p.w_ctx.assign(static_cast<std::size_t>(buckets) * length * vocab, 0.0);
    p.w_big.assign(2 * static_cast<std::size_t>(vocab + 1) * vocab, 0.0);
    return p;
  }

  int start_row() const { return vocab; }
  // raw w_big row of a (table, previous-token) pair
  int big_row(int table, int prev) const { return table * (vocab + 1) + prev; }

  double& ctx(int b, int p, int v) {
    return w_ctx[(static_cast<std::size_t>(b) * length + p) * vocab + v];
  }
  double ctx(int b, int p, int v) const {
    return w_ctx[(static_cast<std::size_t>(b) * length + p) * vocab + v];
  }
  double& big(int u, int v) {
    return w_big[static_cast<std::size_t>(u) * vocab + v];
  }
  double big(int u, int v) const {
    return w_big[static_cast<std::size_t>(u) * vocab + v];
  }

  bool same_shape(const PolicyParams& o) const {
    return buckets == o.buckets && length == o.length && vocab == o.vocab;
  }
  bool operator==(const PolicyParams&) const = default;
};

// Deep frozen copy; the returned value is the old policy / reference policy
// of a rollout phase and must never be mutated.
inline PolicyParams snapshot(const PolicyParams& params) {
  PolicyParams copy = params;
  copy.version = params.version + 1;
  return copy;
}

// Dense gradient accumulator with the same shapes as PolicyParams. The
// nonzero rows are exactly the (bucket, position) and prev-token rows that
// were actually observed.
struct GradTable {
  int buckets = 0;
  int length = 0;
  int vocab = 0;
  std::vector<double> w_ctx;
  std::vector<double> w_big;

  static GradTable zeros_like(const PolicyParams& p) {
    GradTable g;
    g.buckets = p.buckets;
    g.length = p.length;
    g.vocab = p.vocab;
    g.w_ctx.assign(p.w_ctx.size(), 0.0);
    g.w_big.assign(p.w_big.size(), 0.0);
    return g;
  }
  double& ctx(int b, int p, int v) {
    return w_ctx[(static_cast<std::size_t>(b) * length + p) * vocab + v];
  }
  double& big(int u, int v) {
    return w_big[static_cast<std::size_t>(u) * vocab + v];
  }
};

struct GenerationSample {
  env::Program tokens;
  std::vector<double> logprobs;  // under the distribution actually sampled
};

// Deterministic bucket for a context chain: prompt key, turn, and per
// segment the generation tokens plus the feedback error-pattern digest.
// Tokens after a segment's first PAD never reach the evaluator, so they are
// excluded from the hash: junk suffixes must not fragment the conditioning
// buckets of otherwise identical programs.
inline ContextEncoding encode_context(const tree::ContextChain& chain,
                                      int buckets = kDefaultBuckets) {
  Fnv64 h;
  h.str(chain.prompt_key);
  h.u64(static_cast<std::uint64_t>(chain.segments.size() + 1));  // turn
  for (const tree::Segment& seg : chain.segments) {
    for (env::Tok t : seg.generation.tokens) {
      h.u64(static_cast<std::uint64_t>(t));
      if (t == env::Tok::Pad) break;
    }
    h.u64(env::feedback_digest(seg.feedback));
  }
  return {static_cast<int>(h.digest() % static_cast<std::uint64_t>(buckets)),
          chain.segments.empty() ? 0 : 1};
}

inline std::vector<double> logits(const PolicyParams& params,
                                  ContextEncoding ctx, int position,
                                  int prev_token) {
  if (ctx.bucket < 0 || ctx.bucket >= params.buckets || position < 0 ||
      position >= params.length || prev_token < 0 ||
      prev_token > params.vocab) {
    throw DomainError("logits: index out of range (bucket " +
                      std::to_string(ctx.bucket) + ", position " +
                      std::to_string(position) + ", prev " +
                      std::to_string(prev_token) + ")");
  }
  std::vector<double> out(static_cast<std::size_t>(params.vocab));
  int row = params.big_row(ctx.table, prev_token);
  for (int v = 0; v < params.vocab; ++v) {
    out[static_cast<std::size_t>(v)] =
        params.ctx(ctx.bucket, position, v) + params.big(row, v);
  }
  return out;
}

namespace detail {

// Stable log-softmax; writes probabilities and returns per-token logprobs.
inline void softmax_inplace(std::vector<double>& logit_vec,
                            std::vector<double>* logprob_out = nullptr) {
  double m = *std::max_element(logit_vec.begin(), logit_vec.end());
  double z = 0.0;
  for (double l : logit_vec) z += std::exp(l - m);
  double log_z = std::log(z);
  if (logprob_out) {
    logprob_out->resize(logit_vec.size());
    for (std::size_t i = 0; i < logit_vec.size(); ++i) {
      (*logprob_out)[i] = logit_vec[i] - m - log_z;
    }
  }
  for (double& l : logit_vec) l = std::exp(l - m) / z;
}

inline int prev_of(const PolicyParams& params, const env::Program& prog,
                   int position) {
  return position == 0 ? params.start_row()
                       : static_cast<int>(prog.tokens[position - 1]);
}

}  // namespace detail

// Per-token distribution at sampling temperature. top_p < 1 truncates to the
// smallest high-probability prefix and renormalizes (evaluation-only option;
// recorded logprobs are under the truncated distribution actually used).
inline std::vector<double> token_distribution(const PolicyParams& params,
                                              ContextEncoding ctx,
                                              int position, int prev_token,
                                              double temperature,
                                              double top_p = 1.0) {
  if (temperature <= 0.0) {
    throw DomainError("sample: temperature must be positive, got " +
                      std::to_string(temperature));
  }
  std::vector<double> probs = logits(params, ctx, position, prev_token);
  for (double& l : probs) l /= temperature;
  detail::softmax_inplace(probs);
  if (top_p < 1.0) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size() && cum < top_p) {
      cum += probs[static_cast<std::size_t>(order[keep])];
      ++keep;
    }
    std::vector<double> trunc(probs.size(), 0.0);
    double mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
      mass += probs[static_cast<std::size_t>(order[i])];
    }
    for (std::size_t i = 0; i < keep; ++i) {
      int v = order[i];
      trunc[static_cast<std::size_t>(v)] =
          probs[static_cast<std::size_t>(v)] / mass;
    }
    probs = std::move(trunc);
  }
  return probs;
}

// G independent length-L samples; deterministic in the rng state.
template <typename Rng>
std::vector<GenerationSample> sample(const PolicyParams& params,
                                     ContextEncoding ctx, int count,
                                     double temperature, Rng& rng,
                                     double top_p = 1.0) {
  if (count < 1) throw DomainError("sample: count must be >= 1");
  std::vector<GenerationSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int g = 0; g < count; ++g) {
    GenerationSample s;
    s.tokens.tokens.reserve(static_cast<std::size_t>(params.length));
    for (int p = 0; p < params.length; ++p) {
      int prev = detail::prev_of(params, s.tokens, p);
      std::vector<double> probs =
          token_distribution(params, ctx, p, prev, temperature, top_p);
      double u = uniform01(rng);
      int chosen = params.vocab - 1;
      double cum = 0.0;
      for (int v = 0; v < params.vocab; ++v) {
        cum += probs[static_cast<std::size_t>(v)];
        if (u < cum) {
          chosen = v;
          break;
        }
      }
      s.tokens.tokens.push_back(static_cast<env::Tok>(chosen));
      s.logprobs.push_back(std::log(probs[static_cast<std::size_t>(chosen)]));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Per-token log pi_theta(token | context, prefix) at temperature 1.
inline std::vector<double> logprob(const PolicyParams& params,
                                   ContextEncoding ctx,
                                   const env::Program& tokens) {
  std::vector<double> out;
  out.reserve(tokens.tokens.size());
  std::vector<double> logprobs;
  for (std::size_t p = 0; p < tokens.tokens.size(); ++p) {
    int prev = detail::prev_of(params, tokens, static_cast<int>(p));
    std::vector<double> l = logits(params, ctx, static_cast<int>(p), prev);
    detail::softmax_inplace(l, &logprobs);
    out.push_back(logprobs[static_cast<std::size_t>(tokens.tokens[p])]);
  }
  return out;
}

// Accumulates sum_t coeff[t] * d log pi(token_t)/d theta into grad. The
// per-token score gradient is phi(chosen) - E_pi[phi], which touches only
// the active (bucket, position) row of W_ctx and the prev-token row of
// W_big.
inline void accumulate_logprob_grad(const PolicyParams& params,
                                    ContextEncoding ctx,
                                    const env::Program& tokens,
                                    const std::vector<double>& coeff,
                                    GradTable& grad) {
  for (std::size_t p = 0; p < tokens.tokens.size(); ++p) {
    double c = coeff[p];
    if (c == 0.0) continue;
    int prev = detail::prev_of(params, tokens, static_cast<int>(p));
    std::vector<double> probs = logits(params, ctx, static_cast<int>(p), prev);
    detail::softmax_inplace(probs);
    int chosen = static_cast<int>(tokens.tokens[p]);
    int row = params.big_row(ctx.table, prev);
    for (int v = 0; v < params.vocab; ++v) {
      double score =
          (v == chosen ? 1.0 : 0.0) - probs[static_cast<std::size_t>(v)];
      grad.ctx(ctx.bucket, static_cast<int>(p), v) += c * score;
      grad.big(row, v) += c * score;
    }
  }
}

inline GradTable logprob_grad(const PolicyParams& params, ContextEncoding ctx,
                              const env::Program& tokens) {
  GradTable grad = GradTable::zeros_like(params);
  std::vector<double> ones(tokens.tokens.size(), 1.0);
  accumulate_logprob_grad(params, ctx, tokens, ones, grad);
  return grad;
}

}  // namespace murphy::policy
