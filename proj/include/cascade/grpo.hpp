#pragma once

// Strict on-policy GRPO: one generation batch, group-normalized advantages, token-level loss,
// exactly one optimizer update.

#include <cstdint>
#include <span>
#include <vector>

#include "cascade/envs.hpp"
#include "cascade/metrics.hpp"
#include "cascade/optimizer.hpp"
#include "cascade/policy.hpp"
#include "cascade/rewards.hpp"
#include "cascade/stage_config.hpp"

namespace cascade::grpo {

struct AdvantageSet {
  std::vector<double> advantages;
  double mean = 0.0;
  double std = 0.0;
  /// Zero reward variance: advantages are all zero and the group carries no signal.
  bool degenerate = false;
};

/// (r_i - mean) / std with the population standard deviation.
AdvantageSet group_advantages(std::span<const double> rewards);

/// Token weights of one group: A_i / (sum of valid tokens in the group) on valid tokens, 0 on
/// masked ones. Loss-masked and degenerate groups get all-zero weights.
std::vector<std::vector<double>> grpo_loss_weights(const rewards::RolloutGroup& group,
                                                   const AdvantageSet& advantages);

/// Whether a group takes part in the update.
bool contributes(const rewards::RolloutGroup& group, const AdvantageSet& advantages);

/// Surrogate loss of a shaped batch, averaged over contributing groups:
///   L = -(1/n) sum_g sum_i sum_t w_{g,i,t} log pi(y_t | s_t)
///       + kl_coef (1/n) sum_g sum_{valid t} KL(pi(.|s_t) || ref(.|s_t)) / |o_g|
/// where |o_g| is the group's valid token count. The KL term is skipped when reference is null
/// or kl_coef is 0.
double surrogate_loss(const policy::PolicyParams& params, std::span<const rewards::RolloutGroup> groups,
                      const policy::PolicyParams* reference = nullptr, double kl_coef = 0.0);

/// Exact gradient of surrogate_loss.
policy::Gradient surrogate_gradient(const policy::PolicyParams& params,
                                    std::span<const rewards::RolloutGroup> groups,
                                    const policy::PolicyParams* reference = nullptr,
                                    double kl_coef = 0.0, int workers = 0);

/// rollout_size samples for every task, seeded per (task index, rollout index).
std::vector<rewards::RolloutGroup> sample_groups(const policy::PolicyParams& policy,
                                                 std::span<const envs::Task> tasks,
                                                 const stage::StageConfig& config,
                                                 std::uint64_t seed, int workers = 0);

struct GrpoOptions {
  /// Stage-start policy for the KL regularizer; required when kl_coef > 0.
  const policy::PolicyParams* reference = nullptr;
  /// Judge for preference rewards; the programmatic mock judge when empty.
  rewards::PairJudge judge;
  /// Verifier for binary rewards; envs::verify when empty.
  rewards::Verifier verifier;
  rewards::FaultLog* faults = nullptr;
  int workers = 0;
};

/// One generation batch over `tasks` and one optimizer update. When every group is filtered the
/// policy is left untouched and the metrics are marked skipped.
metrics::StepMetrics grpo_step(policy::PolicyParams& policy, policy::OptimizerState& optimizer,
                               std::span<const envs::Task> tasks, const stage::StageConfig& config,
                               int step, std::uint64_t seed, const GrpoOptions& options = {});

}  // namespace cascade::grpo
