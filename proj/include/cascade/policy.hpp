#pragma once

// Exact toy autoregressive policy: an order-k n-gram softmax table.
//
// A state is the tuple of the last k tokens of (prompt ++ response); positions before the
// start of the sequence read as the end token (id 0). Each state owns one row of
// `vocab_size` logits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cascade::policy {

using TokenId = std::int32_t;

/// Reserved end-of-sequence token; emitting it completes a response.
inline constexpr TokenId kEndToken = 0;

/// Log-probabilities are clamped from below so ratios of them stay finite.
inline constexpr double kLogProbFloor = -50.0;

class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(int vocab_size, int context_order, std::string version_tag = "init");

  int vocab_size() const noexcept { return vocab_size_; }
  int context_order() const noexcept { return context_order_; }
  std::size_t num_contexts() const noexcept { return num_contexts_; }
  std::size_t num_params() const noexcept { return logits_.size(); }

  const std::string& version_tag() const noexcept { return version_tag_; }
  void set_version_tag(std::string tag) { version_tag_ = std::move(tag); }

  /// State index of the last k tokens of `prefix` (left-padded with the end token).
  std::size_t context_index(std::span<const TokenId> prefix) const;
  /// State reached from `context` after emitting `token`.
  std::size_t advance(std::size_t context, TokenId token) const noexcept;

  std::span<double> row(std::size_t context) noexcept;
  std::span<const double> row(std::size_t context) const noexcept;

  std::vector<double>& logits() noexcept { return logits_; }
  const std::vector<double>& logits() const noexcept { return logits_; }

  void check_token(TokenId token) const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  int vocab_size_ = 0;
  int context_order_ = 0;
  std::size_t num_contexts_ = 0;
  std::vector<double> logits_;
  std::string version_tag_;
};

/// One sampled response together with the behavior policy's per-token log-probs.
struct Rollout {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;      // includes the end token when `completed`
  std::vector<double> inf_logprobs;   // log pi_inf(y_t | s_t) under the sampling transform
  bool completed = false;
  std::vector<std::uint8_t> valid_mask;  // 1 = token counts towards the loss

  std::size_t length() const noexcept { return response.size(); }
  std::size_t valid_count() const noexcept;
};

/// Temperature / nucleus settings applied when turning logits into a sampling distribution.
struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
};

/// Log-softmax of `logits / temperature` into `out`.
void log_softmax(std::span<const double> logits, double temperature, std::span<double> out);

/// Sampling distribution for one row: temperature softmax, then the smallest probability-sorted
/// prefix whose mass reaches top_p (index order breaks ties), renormalized. Tokens outside the
/// nucleus get probability 0.
void sampling_distribution(std::span<const double> logits, SamplingParams params,
                           std::span<double> probs);

/// log pi(token | prefix) under the temperature-scaled softmax.
double token_logprob(const PolicyParams& params, std::span<const TokenId> prefix, TokenId token,
                     double temperature = 1.0);

/// Per-token log-probs of `response` after `prompt` under the sampling transform, floored at
/// kLogProbFloor. With top_p = 1 and temperature = 1 this is the plain policy log-prob.
std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const TokenId> prompt,
                                      std::span<const TokenId> response,
                                      SamplingParams sampling = {});

Rollout sample_response(const PolicyParams& params, std::span<const TokenId> prompt, int max_len,
                        SamplingParams sampling, std::uint64_t seed);

/// Mean per-token entropy (nats) of the sampling distribution along a rollout's states.
double mean_token_entropy(const PolicyParams& params, const Rollout& rollout,
                          SamplingParams sampling = {});

/// Gradient table with the same layout as PolicyParams::logits().
using Gradient = std::vector<double>;

/// A response with one loss weight per response token.
struct WeightedSequence {
  std::span<const TokenId> prompt;
  std::span<const TokenId> response;
  std::span<const double> weights;
};

/// d/dlogits of L = -sum_seq sum_t w_t log pi(y_t | s_t) at temperature 1.
/// Callers fold normalization into the weights.
Gradient weighted_nll_gradient(const PolicyParams& params, std::span<const WeightedSequence> batch,
                               int workers = 0);

/// A visited state and the weight of its KL term.
struct WeightedState {
  std::size_t context;
  double weight;
};

/// Adds sum_s weight_s * d/dlogits KL(pi(.|s) || reference(.|s)) into `grad`.
void accumulate_kl_gradient(const PolicyParams& params, const PolicyParams& reference,
                            std::span<const WeightedState> states, Gradient& grad);

/// KL(p || q) between the temperature-1 next-token distributions of two policies at one state.
double state_kl(const PolicyParams& p, const PolicyParams& q, std::size_t context);

double l2_norm(std::span<const double> values);

}  // namespace cascade::policy
