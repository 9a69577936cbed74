#include "cascade/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rng.hpp"

namespace cascade::policy {

namespace {

constexpr std::size_t kMaxParams = std::size_t{1} << 26;

void validate_sampling(SamplingParams sampling) {
  if (!(sampling.temperature > 0.0) || !std::isfinite(sampling.temperature))
    throw InvalidArgument("temperature must be positive");
  if (!(sampling.top_p > 0.0) || sampling.top_p > 1.0)
    throw InvalidArgument("top_p must be in (0, 1]");
}

}  // namespace

PolicyParams::PolicyParams(int vocab_size, int context_order, std::string version_tag)
    : vocab_size_(vocab_size), context_order_(context_order), version_tag_(std::move(version_tag)) {
  if (vocab_size < 0) throw InvalidArgument("vocab_size must be non-negative");
  if (context_order < 0) throw InvalidArgument("context_order must be non-negative");
  num_contexts_ = 1;
  for (int i = 0; i < context_order; ++i) {
    num_contexts_ *= static_cast<std::size_t>(std::max(vocab_size, 1));
    if (num_contexts_ > kMaxParams) throw InvalidArgument("policy table too large");
  }
  if (num_contexts_ * static_cast<std::size_t>(vocab_size) > kMaxParams)
    throw InvalidArgument("policy table too large");
  logits_.assign(num_contexts_ * static_cast<std::size_t>(vocab_size), 0.0);
}

std::size_t PolicyParams::context_index(std::span<const TokenId> prefix) const {
  std::size_t index = 0;
  const std::size_t k = static_cast<std::size_t>(context_order_);
  const std::size_t v = static_cast<std::size_t>(vocab_size_);
  for (std::size_t i = 0; i < k; ++i) {
    // Position i of the window maps to prefix[size - k + i]; missing positions are end tokens.
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(prefix.size()) -
                               static_cast<std::ptrdiff_t>(k) + static_cast<std::ptrdiff_t>(i);
    TokenId t = kEndToken;
    if (pos >= 0) {
      t = prefix[static_cast<std::size_t>(pos)];
      check_token(t);
    }
    index = index * v + static_cast<std::size_t>(t);
  }
  return index;
}

std::size_t PolicyParams::advance(std::size_t context, TokenId token) const noexcept {
  if (context_order_ == 0) return 0;
  return (context * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(token)) %
         num_contexts_;
}

std::span<double> PolicyParams::row(std::size_t context) noexcept {
  return {logits_.data() + context * static_cast<std::size_t>(vocab_size_),
          static_cast<std::size_t>(vocab_size_)};
}

std::span<const double> PolicyParams::row(std::size_t context) const noexcept {
  return {logits_.data() + context * static_cast<std::size_t>(vocab_size_),
          static_cast<std::size_t>(vocab_size_)};
}

void PolicyParams::check_token(TokenId token) const {
  if (token < 0 || token >= vocab_size_)
    throw InvalidArgument("token " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(vocab_size_));
}

std::size_t Rollout::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count(valid_mask.begin(), valid_mask.end(), 1));
}

void log_softmax(std::span<const double> logits, double temperature, std::span<double> out) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double z : logits) max_logit = std::max(max_logit, z / temperature);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - max_logit);
  const double log_norm = max_logit + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - log_norm;
}

void sampling_distribution(std::span<const double> logits, SamplingParams params,
                           std::span<double> probs) {
  log_softmax(logits, params.temperature, probs);
  for (double& p : probs) p = std::exp(p);
  if (params.top_p >= 1.0) return;

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= params.top_p) break;
  }
  for (std::size_t i = keep; i < order.size(); ++i) probs[order[i]] = 0.0;
  for (double& p : probs) p /= mass;
}

double token_logprob(const PolicyParams& params, std::span<const TokenId> prefix, TokenId token,
                     double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  params.check_token(token);
  std::vector<double> lp(static_cast<std::size_t>(params.vocab_size()));
  log_softmax(params.row(params.context_index(prefix)), temperature, lp);
  return std::max(kLogProbFloor, lp[static_cast<std::size_t>(token)]);
}

std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const TokenId> prompt,
                                      std::span<const TokenId> response, SamplingParams sampling) {
  validate_sampling(sampling);
  std::vector<double> out;
  out.reserve(response.size());
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  std::size_t ctx = params.context_index(prompt);
  for (TokenId y : response) {
    params.check_token(y);
    double lp;
    if (sampling.top_p >= 1.0) {
      log_softmax(params.row(ctx), sampling.temperature, probs);
      lp = probs[static_cast<std::size_t>(y)];
    } else {
      sampling_distribution(params.row(ctx), sampling, probs);
      const double p = probs[static_cast<std::size_t>(y)];
      lp = p > 0.0 ? std::log(p) : kLogProbFloor;
    }
    out.push_back(std::max(kLogProbFloor, lp));
    ctx = params.advance(ctx, y);
  }
  return out;
}

Rollout sample_response(const PolicyParams& params, std::span<const TokenId> prompt, int max_len,
                        SamplingParams sampling, std::uint64_t seed) {
  if (params.vocab_size() == 0) throw InvalidState("cannot sample from an empty vocabulary");
  validate_sampling(sampling);
  if (max_len < 1) throw InvalidArgument("max_len must be at least 1");

  Rollout r;
  r.prompt.assign(prompt.begin(), prompt.end());
  Rng rng(seed);
  const std::size_t v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> probs(v), logp(v);
  const bool nucleus = sampling.top_p < 1.0;
  std::size_t ctx = params.context_index(prompt);
  for (int t = 0; t < max_len; ++t) {
    if (nucleus) {
      sampling_distribution(params.row(ctx), sampling, probs);
    } else {
      // Keep the recorded log-prob bit-identical to token_logprob / sequence_logprobs.
      log_softmax(params.row(ctx), sampling.temperature, logp);
      for (std::size_t i = 0; i < v; ++i) probs[i] = std::exp(logp[i]);
    }
    const double u = rng.uniform();
    double cum = 0.0;
    TokenId chosen = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      chosen = static_cast<TokenId>(i);
      cum += probs[i];
      if (u < cum) break;
    }
    const double lp = nucleus ? std::log(probs[static_cast<std::size_t>(chosen)])
                              : logp[static_cast<std::size_t>(chosen)];
    r.response.push_back(chosen);
    r.inf_logprobs.push_back(std::max(kLogProbFloor, lp));
    if (chosen == kEndToken) {
      r.completed = true;
      break;
    }
    ctx = params.advance(ctx, chosen);
  }
  r.valid_mask.assign(r.response.size(), 1);
  return r;
}

double mean_token_entropy(const PolicyParams& params, const Rollout& rollout,
                          SamplingParams sampling) {
  if (rollout.response.empty()) return 0.0;
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  std::size_t ctx = params.context_index(rollout.prompt);
  double total = 0.0;
  for (TokenId y : rollout.response) {
    sampling_distribution(params.row(ctx), sampling, probs);
    for (double p : probs)
      if (p > 0.0) total -= p * std::log(p);
    ctx = params.advance(ctx, y);
  }
  return total / static_cast<double>(rollout.response.size());
}

Gradient weighted_nll_gradient(const PolicyParams& params, std::span<const WeightedSequence> batch,
                               int workers) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].weights.size() != batch[i].response.size())
      throw InvalidArgument("weight count does not match response length for sequence " +
                            std::to_string(i));
    for (TokenId t : batch[i].response) params.check_token(t);
  }
  Gradient grad(params.num_params(), 0.0);
  kernels::omp::nll_gradient(params, batch, grad, workers);
  return grad;
}

double state_kl(const PolicyParams& p, const PolicyParams& q, std::size_t context) {
  const std::size_t v = static_cast<std::size_t>(p.vocab_size());
  std::vector<double> lp(v), lq(v);
  log_softmax(p.row(context), 1.0, lp);
  log_softmax(q.row(context), 1.0, lq);
  double kl = 0.0;
  for (std::size_t j = 0; j < v; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
  return kl;
}

void accumulate_kl_gradient(const PolicyParams& params, const PolicyParams& reference,
                            std::span<const WeightedState> states, Gradient& grad) {
  if (reference.vocab_size() != params.vocab_size() ||
      reference.context_order() != params.context_order())
    throw InvalidArgument("reference policy shape differs from the trained policy");
  if (grad.size() != params.num_params()) throw InvalidArgument("gradient shape mismatch");
  const std::size_t v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> lp(v), lq(v);
  for (const WeightedState& s : states) {
    if (s.weight == 0.0) continue;
    log_softmax(params.row(s.context), 1.0, lp);
    log_softmax(reference.row(s.context), 1.0, lq);
    double kl = 0.0;
    for (std::size_t j = 0; j < v; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
    double* g = grad.data() + s.context * v;
    for (std::size_t j = 0; j < v; ++j) g[j] += s.weight * std::exp(lp[j]) * (lp[j] - lq[j] - kl);
  }
}

double l2_norm(std::span<const double> values) {
  double sum = 0.0;
  for (double x : values) sum += x * x;
  return std::sqrt(sum);
}

}  // namespace cascade::policy
