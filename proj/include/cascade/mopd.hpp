#pragma once

// Multi-domain on-policy distillation: the student samples its own responses and every sampled
// token is pushed towards its domain teacher by the log-prob gap, with truncated importance
// weighting against the inference policy.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cascade/envs.hpp"
#include "cascade/metrics.hpp"
#include "cascade/optimizer.hpp"
#include "cascade/policy.hpp"
#include "cascade/stage_config.hpp"

namespace cascade::mopd {

/// a_t = log pi_teacher(y_t | s_t) - log pi_train(y_t | s_t).
double mopd_advantage(double teacher_lp, double train_lp);

/// r = exp(train_lp - inf_lp); r if eps_low <= r <= eps_high, else 0.
double truncated_weight(double train_lp, double inf_lp, double eps_low = 0.5, double eps_high = 2.0);

/// One sampled response with the three aligned log-prob sequences.
struct DistillRollout {
  policy::Rollout rollout;             // inf_logprobs come from the sampling policy
  std::vector<double> train_logprobs;  // training policy, same sampling transform
  std::vector<double> teacher_logprobs;
  envs::Domain domain = envs::Domain::math;
};

using DistillBatch = std::vector<DistillRollout>;

/// weight_t = w_t * a_t / |V(y)| on valid tokens, 0 elsewhere; one vector per rollout.
std::vector<std::vector<double>> mopd_loss_weights(const DistillBatch& batch, double eps_low = 0.5,
                                                   double eps_high = 2.0);

/// Domain-routed teachers. Teachers are shared, so one checkpoint can serve several domains.
class TeacherPool {
 public:
  void add(envs::Domain domain, std::shared_ptr<const policy::PolicyParams> teacher,
           std::string ref = {});
  void add(envs::Domain domain, policy::PolicyParams teacher, std::string ref = {});

  bool has(envs::Domain domain) const { return teachers_.count(domain) > 0; }
  /// Throws ConfigError for an unmapped domain.
  const policy::PolicyParams& teacher(envs::Domain domain) const;
  const std::string& ref(envs::Domain domain) const;
  std::vector<envs::Domain> domains() const;

  /// Throws InvalidArgument when a teacher's vocabulary or context order differs from the student's.
  void check_compatible(const policy::PolicyParams& student) const;

 private:
  struct Entry {
    std::shared_ptr<const policy::PolicyParams> params;
    std::string ref;
  };
  std::map<envs::Domain, Entry> teachers_;
};

/// The teacher for a task, looked up by its domain.
const policy::PolicyParams& select_domain(const envs::Task& task, const TeacherPool& pool);

/// Linear from start_lr at step 0 to base_lr at warmup_steps, constant afterwards.
double warmup_lr(int step, double base_lr = 2e-6, double start_lr = 2e-7, int warmup_steps = 30);

/// Copy of `policy` with N(0, noise^2) added to every logit; the identity when noise is 0.
policy::PolicyParams perturbed_policy(const policy::PolicyParams& policy, double noise,
                                      std::uint64_t seed);

/// Sequence-level KL(student || teacher) over responses of at most max_len tokens, averaged over
/// tasks, each task against its domain teacher.
double exact_reverse_kl(const policy::PolicyParams& student, const TeacherPool& pool,
                        std::span<const envs::Task> tasks, int max_len, int workers = 0);

/// Samples rollout_size responses per task from `behavior` and fills in the training and
/// teacher log-probs. Overlong handling from the config is applied to the valid masks.
DistillBatch build_batch(const policy::PolicyParams& student, const policy::PolicyParams& behavior,
                         const TeacherPool& pool, std::span<const envs::Task> tasks,
                         const stage::StageConfig& config, std::uint64_t seed, int workers = 0);

/// L = -(1/B) sum_rollouts sum_t weight_t log pi(y_t | s_t) with the weights held fixed, where B
/// counts rollouts with at least one valid token.
double surrogate_loss(const policy::PolicyParams& params, const DistillBatch& batch,
                      std::span<const std::vector<double>> weights);
policy::Gradient surrogate_gradient(const policy::PolicyParams& params, const DistillBatch& batch,
                                    std::span<const std::vector<double>> weights, int workers = 0);

struct MopdOptions {
  int workers = 0;
  /// Also report exact_reverse_kl over the step's tasks (costly for long responses).
  bool exact_kl = false;
};

/// One generation pass under the (optionally perturbed) inference policy and one update at the
/// warm-up learning rate for `step`.
metrics::StepMetrics mopd_step(policy::PolicyParams& student, policy::OptimizerState& optimizer,
                               const TeacherPool& pool, std::span<const envs::Task> tasks,
                               const stage::StageConfig& config, int step, std::uint64_t seed,
                               const MopdOptions& options = {});

}  // namespace cascade::mopd
