#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "cascade/envs.hpp"
#include "cascade/policy.hpp"

namespace cascade::rewards {

/// G rollouts for one prompt and their scalar rewards.
struct RolloutGroup {
  envs::Task task;
  std::vector<policy::Rollout> rollouts;
  std::vector<double> rewards;
  bool loss_masked = false;

  std::size_t size() const noexcept { return rollouts.size(); }
};

enum class OverlongMode { off, zero_reward, filter };

std::string_view to_string(OverlongMode m);
OverlongMode parse_overlong_mode(std::string_view s);

/// Truncated rollouts (completed == false) get reward 0 (zero_reward) or an all-false valid
/// mask (filter). Completed rollouts are never touched.
RolloutGroup apply_overlong(RolloutGroup group, OverlongMode mode);

/// Keeps groups whose binary rewards contain both a 0 and a 1. With `strict`, a reward outside
/// {0, 1} throws InvalidArgument.
std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups, bool strict = true);

/// Sets loss_masked iff no rollout's reward exceeds tau. Rewards are untouched.
std::vector<RolloutGroup> threshold_mask(std::vector<RolloutGroup> groups, double tau = 0.5);

/// Outcome of one ordered comparison (first = rollout i, second = rollout j).
struct JudgeVerdict {
  enum class Winner { first, second, tie };
  Winner winner = Winner::tie;
  double helpfulness_first = 0.0;   // in [0, 10]
  double helpfulness_second = 0.0;  // in [0, 10]
};

using PairJudge = std::function<JudgeVerdict(const RolloutGroup&, std::size_t i, std::size_t j)>;

struct PreferenceConfig {
  double conciseness_beta = 0.1;
  double quality_delta = 0.05;
  int max_len = 1;
};

/// Pairwise preference reward. The judge sees every ordered pair (i, j), i != j.
///   win_i  = mean over both orders and all opponents of {1 win, 0.5 tie, 0 loss}
///   help_i = mean helpfulness_i / 10 over all comparisons involving i
///   base_i = (win_i + help_i) / 2
/// Rollouts with base_i >= max_k base_k - quality_delta get + beta * (1 - len_i / max_len).
std::vector<double> preference_rewards(const RolloutGroup& group, const PairJudge& judge,
                                       const PreferenceConfig& config);

/// Programmatic judge: helpfulness 9 for a verified response, 3 for an unverified completed
/// one, 1 for a truncated one; the more helpful side wins, equal helpfulness ties.
PairJudge make_mock_judge();

struct DifficultyInstance {
  envs::Task task;
  int pass_count = 0;
  int total = 0;
};

/// Whether the index-th zero-pass instance survives; counter-based so it can be replayed.
bool keep_zero_pass(std::uint64_t seed, std::size_t index, double keep_frac_zero);

/// Drops fully solved instances, keeps zero-pass instances with probability keep_frac_zero,
/// keeps everything else.
std::vector<envs::Task> difficulty_filter(std::span<const DifficultyInstance> instances,
                                          double keep_frac_zero, std::uint64_t seed);

/// Verification requests per generation step in the code stage: 128 prompts x 16 rollouts.
inline constexpr std::size_t kDefaultVerificationBatch = 128 * 16;

struct VerificationJob {
  const envs::Task* task = nullptr;
  std::span<const policy::TokenId> response;
  std::size_t rollout_index = 0;
};

using Verifier = std::function<double(const envs::Task&, std::span<const policy::TokenId>)>;

struct FaultRecord {
  std::string task_id;
  std::size_t rollout_index = 0;
  std::string fault;
};

/// Collects verifier faults; optionally mirrors each record as a JSON line to a stream.
class FaultLog {
 public:
  FaultLog() = default;
  explicit FaultLog(std::ostream* sink) : sink_(sink) {}

  void append(FaultRecord record);
  std::vector<FaultRecord> records() const;

 private:
  mutable std::mutex mu_;
  std::vector<FaultRecord> records_;
  std::ostream* sink_ = nullptr;
};

/// Runs the verifier over all jobs on up to max_workers threads and returns rewards in job
/// order. A throwing or non-finite verifier yields reward 0 and a fault record; fault records
/// are appended in job order.
std::vector<double> dispatch_verification(std::span<const VerificationJob> jobs, int max_workers,
                                          const Verifier& verifier = envs::verify,
                                          FaultLog* faults = nullptr);

}  // namespace cascade::rewards
