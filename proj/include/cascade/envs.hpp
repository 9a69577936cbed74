#pragma once

// Verifiable toy environments. Every prompt ends with its domain's marker token, so an order-3
// policy sees exactly the task-defining tokens when it starts answering.
//
//   domain       prompt                         accepted response body
//   math         [d(a), d(b), MATH]             [d((a+b) mod 10)]
//   code         [l(x), l(y), CODE]             [l(y), l(x)]            (reverse the string)
//   instruction  [d(n), d(c), INST]             any body with <= n tokens that contains d(c)
//   mcqa         [d(x), d(y), MCQA]             [l((3x+y) mod 4)]
//   tool         [l(f), d(a), TOOL]             [l(f), d(a)]            (call f with argument a)
//   rlhf         [l(t) or d(t), RLHF]           any body containing the topic token
//   longctx      [LONG, filler..., d(n), LONG]  [d(n)]                  (needle before the query)
//
// d(k) is the digit token for k, l(k) the k-th letter token. A response's body is everything
// before the first end token.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/policy.hpp"

namespace cascade::envs {

using policy::TokenId;

enum class Domain { math, code, instruction, mcqa, tool, rlhf, longctx };

inline constexpr Domain kAllDomains[] = {Domain::math,  Domain::code, Domain::instruction,
                                         Domain::mcqa,  Domain::tool, Domain::rlhf,
                                         Domain::longctx};

std::string_view to_string(Domain d);
/// Throws InvalidArgument for unknown tags.
Domain parse_domain(std::string_view tag);

namespace tokens {
inline constexpr int kVocabSize = 32;
inline constexpr TokenId kEnd = policy::kEndToken;
inline constexpr TokenId kDigit0 = 1;   // digits 0-9 -> 1..10
inline constexpr TokenId kLetter0 = 11; // letters a-h -> 11..18
inline constexpr int kNumLetters = 8;
inline constexpr TokenId kEq = 19;
inline constexpr TokenId kSep = 20;
inline constexpr TokenId kDomainMarker0 = 21;  // one marker per Domain, 21..27
inline constexpr TokenId kThinkOpen = 28;
inline constexpr TokenId kThinkClose = 29;
inline constexpr TokenId kToolCallOpen = 30;
inline constexpr TokenId kToolCallClose = 31;

constexpr TokenId digit(int d) { return kDigit0 + d; }
constexpr TokenId letter(int i) { return kLetter0 + i; }
constexpr TokenId marker(Domain d) { return kDomainMarker0 + static_cast<TokenId>(d); }

/// Reserved ids of the chat markers ("<think>", "</think>", "<tool_call>", "</tool_call>").
std::optional<TokenId> chat_marker(std::string_view text);
}  // namespace tokens

/// Expected-answer record. Unique-answer domains use `expected`; instruction uses `max_tokens`
/// and `required`; rlhf uses `required`.
struct VerifierSpec {
  std::vector<TokenId> expected;
  int max_tokens = -1;
  TokenId required = -1;

  friend bool operator==(const VerifierSpec&, const VerifierSpec&) = default;
};

struct Task {
  std::string task_id;
  Domain domain = Domain::math;
  std::vector<TokenId> prompt;
  VerifierSpec verifier;

  friend bool operator==(const Task&, const Task&) = default;
};

/// Body of a response: tokens before the first end token.
std::span<const TokenId> response_body(std::span<const TokenId> response);

/// Strict binary reward: 1 iff the response body satisfies the task's verifier.
double verify(const Task& task, std::span<const TokenId> response);

/// The canonical accepted body for a task (used to build initial policies and exact scores).
std::vector<TokenId> reference_body(const Task& task);

/// True for domains with exactly one accepted body.
bool has_unique_answer(Domain d);

/// Deterministic task family for a domain.
std::vector<Task> make_domain_tasks(Domain d, std::uint64_t seed = 0);

/// Task pools per domain with an access log, so pipeline stages can be checked for isolation.
class EnvRegistry {
 public:
  struct Access {
    std::string stage;
    Domain domain;
    friend bool operator==(const Access&, const Access&) = default;
  };

  /// Registers every domain's default task family.
  explicit EnvRegistry(std::uint64_t seed = 0);
  /// Registers exactly the given pools (possibly empty).
  explicit EnvRegistry(std::map<Domain, std::vector<Task>> pools);

  EnvRegistry(const EnvRegistry& other);
  EnvRegistry& operator=(const EnvRegistry&) = delete;

  bool has_domain(Domain d) const;
  /// Training pool for a domain; recorded in the access log under the active stage.
  std::span<const Task> train_pool(Domain d) const;
  /// Validation pool for a domain; not logged.
  std::span<const Task> validation_pool(Domain d) const;

  void replace_pool(Domain d, std::vector<Task> tasks);

  void set_active_stage(std::string stage) const;
  std::vector<Access> access_log() const;
  void clear_access_log() const;

 private:
  std::map<Domain, std::vector<Task>> pools_;
  mutable std::mutex mu_;
  mutable std::string active_stage_;
  mutable std::vector<Access> log_;
};

/// Draws n tasks: the domain of each task follows the normalized weights, the task within the
/// domain is uniform. Reproducible by seed.
std::vector<Task> make_blend(const EnvRegistry& registry, const std::map<Domain, double>& weights,
                             int n, std::uint64_t seed);

/// Line-delimited task corpus, one JSON object per line with fields
///   task_id (string), domain (string), prompt (int array),
///   expected (int array), max_tokens (int), required (int).
void write_task_corpus(std::ostream& out, std::span<const Task> tasks);
std::vector<Task> read_task_corpus(std::istream& in);

struct InitialPolicyOptions {
  int vocab_size = tokens::kVocabSize;
  int context_order = 3;
  /// Logit bonus on each token of the reference answer (and the end token after it).
  double answer_bias = 3.0;
  /// Standard deviation of Gaussian noise added to every logit.
  double noise = 0.05;
  std::uint64_t seed = 0;
  std::string version_tag = "initial";
};

/// A behavior-cloned starting checkpoint: weakly prefers the reference answers of every task
/// in `tasks`.
policy::PolicyParams make_initial_policy(std::span<const Task> tasks,
                                         const InitialPolicyOptions& options = {});

/// Exact probability that the policy emits the reference body followed by the end token within
/// max_len tokens (temperature 1, no nucleus). Only meaningful for unique-answer domains.
double exact_success_probability(const policy::PolicyParams& params, const Task& task,
                                 int max_len);

/// Mean exact success probability over tasks (unique-answer domains only).
double exact_mean_reward(const policy::PolicyParams& params, std::span<const Task> tasks,
                         int max_len);

/// Monte-Carlo mean reward with `samples_per_task` rollouts per task; deterministic by seed.
double sampled_mean_reward(const policy::PolicyParams& params, std::span<const Task> tasks,
                           int max_len, int samples_per_task, std::uint64_t seed,
                           int workers = 0);

}  // namespace cascade::envs
