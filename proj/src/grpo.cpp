#include "cascade/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rng.hpp"

namespace cascade::grpo {

using policy::PolicyParams;
using rewards::RolloutGroup;

AdvantageSet group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidArgument("group advantages need at least two rewards");
  AdvantageSet out;
  const auto g = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / g;
  double var = 0.0;
  for (double r : rewards) var += (r - out.mean) * (r - out.mean);
  out.std = std::sqrt(var / g);
  out.advantages.assign(rewards.size(), 0.0);
  if (out.std == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - out.mean) / out.std;
  return out;
}

namespace {

std::size_t group_valid_tokens(const RolloutGroup& group) {
  std::size_t n = 0;
  for (const auto& r : group.rollouts) n += r.valid_count();
  return n;
}

struct Contribution {
  const RolloutGroup* group;
  std::vector<std::vector<double>> weights;
  std::size_t valid_tokens;
};

std::vector<Contribution> collect(std::span<const RolloutGroup> groups) {
  std::vector<Contribution> out;
  for (const auto& g : groups) {
    const AdvantageSet adv = group_advantages(g.rewards);
    if (!contributes(g, adv)) continue;
    out.push_back({&g, grpo_loss_weights(g, adv), group_valid_tokens(g)});
  }
  return out;
}

}  // namespace

bool contributes(const RolloutGroup& group, const AdvantageSet& advantages) {
  return !group.loss_masked && !advantages.degenerate && group_valid_tokens(group) > 0;
}

std::vector<std::vector<double>> grpo_loss_weights(const RolloutGroup& group,
                                                   const AdvantageSet& advantages) {
  if (advantages.advantages.size() != group.rollouts.size())
    throw InvalidArgument("advantage count does not match group size");
  std::vector<std::vector<double>> weights(group.rollouts.size());
  const std::size_t total = group_valid_tokens(group);
  const bool active = !group.loss_masked && !advantages.degenerate && total > 0;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& r = group.rollouts[i];
    weights[i].assign(r.response.size(), 0.0);
    if (!active) continue;
    const double w = advantages.advantages[i] / static_cast<double>(total);
    for (std::size_t t = 0; t < r.response.size(); ++t)
      if (r.valid_mask[t]) weights[i][t] = w;
  }
  return weights;
}

double surrogate_loss(const PolicyParams& params, std::span<const RolloutGroup> groups,
                      const PolicyParams* reference, double kl_coef) {
  const auto contributions = collect(groups);
  if (contributions.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(contributions.size());
  const bool use_kl = reference && kl_coef != 0.0;
  double loss = 0.0;
  for (const auto& c : contributions) {
    const double kl_weight = kl_coef * inv_n / static_cast<double>(c.valid_tokens);
    for (std::size_t i = 0; i < c.group->rollouts.size(); ++i) {
      const auto& r = c.group->rollouts[i];
      const auto lp = policy::sequence_logprobs(params, r.prompt, r.response);
      for (std::size_t t = 0; t < lp.size(); ++t) loss -= inv_n * c.weights[i][t] * lp[t];
      if (!use_kl) continue;
      std::size_t ctx = params.context_index(r.prompt);
      for (std::size_t t = 0; t < r.response.size(); ++t) {
        if (r.valid_mask[t]) loss += kl_weight * policy::state_kl(params, *reference, ctx);
        ctx = params.advance(ctx, r.response[t]);
      }
    }
  }
  return loss;
}

policy::Gradient surrogate_gradient(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                    const PolicyParams* reference, double kl_coef, int workers) {
  auto contributions = collect(groups);
  if (contributions.empty()) return policy::Gradient(params.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(contributions.size());
  std::vector<policy::WeightedSequence> batch;
  for (auto& c : contributions) {
    for (std::size_t i = 0; i < c.group->rollouts.size(); ++i) {
      for (double& w : c.weights[i]) w *= inv_n;
      const auto& r = c.group->rollouts[i];
      batch.push_back({r.prompt, r.response, c.weights[i]});
    }
  }
  policy::Gradient grad = policy::weighted_nll_gradient(params, batch, workers);
  if (reference && kl_coef != 0.0) {
    std::vector<policy::WeightedState> states;
    for (const auto& c : contributions) {
      const double w = kl_coef * inv_n / static_cast<double>(c.valid_tokens);
      for (const auto& r : c.group->rollouts) {
        std::size_t ctx = params.context_index(r.prompt);
        for (std::size_t t = 0; t < r.response.size(); ++t) {
          if (r.valid_mask[t]) states.push_back({ctx, w});
          ctx = params.advance(ctx, r.response[t]);
        }
      }
    }
    policy::accumulate_kl_gradient(params, *reference, states, grad);
  }
  return grad;
}

std::vector<RolloutGroup> sample_groups(const PolicyParams& policy, std::span<const envs::Task> tasks,
                                        const stage::StageConfig& config, std::uint64_t seed,
                                        int workers) {
  const auto g = static_cast<std::size_t>(config.rollout_size);
  std::vector<kernels::SampleJob> jobs;
  jobs.reserve(tasks.size() * g);
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = 0; j < g; ++j) jobs.push_back({tasks[i].prompt, derive_seed(seed, {i, j})});
  auto rollouts = kernels::omp::sample_batch(policy, jobs, config.max_response_len,
                                             {config.temperature, config.top_p}, workers);
  std::vector<RolloutGroup> groups(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    groups[i].task = tasks[i];
    groups[i].rollouts.assign(std::make_move_iterator(rollouts.begin() + static_cast<std::ptrdiff_t>(i * g)),
                              std::make_move_iterator(rollouts.begin() + static_cast<std::ptrdiff_t>((i + 1) * g)));
    groups[i].rewards.assign(g, 0.0);
  }
  return groups;
}

namespace {

std::vector<const policy::Rollout*> flatten(const std::vector<RolloutGroup>& groups) {
  std::vector<const policy::Rollout*> out;
  for (const auto& g : groups)
    for (const auto& r : g.rollouts) out.push_back(&r);
  return out;
}

void assign_rewards(std::vector<RolloutGroup>& groups, const stage::StageConfig& config,
                    const GrpoOptions& options) {
  if (config.reward == stage::RewardKind::preference) {
    const rewards::PairJudge judge = options.judge ? options.judge : rewards::make_mock_judge();
    const rewards::PreferenceConfig pc{config.conciseness_beta, config.quality_delta,
                                       config.max_response_len};
    for (auto& g : groups) g.rewards = rewards::preference_rewards(g, judge, pc);
    return;
  }
  std::vector<rewards::VerificationJob> jobs;
  for (const auto& g : groups)
    for (std::size_t i = 0; i < g.rollouts.size(); ++i)
      jobs.push_back({&g.task, g.rollouts[i].response, i});
  const auto verifier = options.verifier ? options.verifier : rewards::Verifier(envs::verify);
  const auto scores = rewards::dispatch_verification(
      jobs, kernels::resolve_workers(options.workers), verifier, options.faults);
  std::size_t k = 0;
  for (auto& g : groups)
    for (double& r : g.rewards) r = scores[k++];
}

}  // namespace

metrics::StepMetrics grpo_step(PolicyParams& policy, policy::OptimizerState& optimizer,
                               std::span<const envs::Task> tasks, const stage::StageConfig& config,
                               int step, std::uint64_t seed, const GrpoOptions& options) {
  stage::validate_stage(config);
  if (config.kl_coef > 0.0 && !options.reference)
    throw InvalidArgument("kl_coef > 0 needs a reference policy");
  if (tasks.empty()) throw InvalidArgument("grpo_step needs at least one task");

  metrics::StepMetrics m;
  m.stage = config.stage_name;
  m.algorithm = "grpo";
  m.step = step;
  m.lr = config.lr;

  auto groups = sample_groups(policy, tasks, config, seed, options.workers);
  const auto all = flatten(groups);
  const auto n = static_cast<std::ptrdiff_t>(all.size());
  const policy::SamplingParams sampling{config.temperature, config.top_p};

  // Re-evaluate the sampled tokens under the training policy; both sides use the same weights,
  // so the ratio is 1 up to floating-point evaluation order.
  std::vector<double> ratio_dev(all.size(), 0.0), entropy(all.size(), 0.0);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::resolve_workers(options.workers))
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto& r = *all[static_cast<std::size_t>(s)];
    const auto train_lp = policy::sequence_logprobs(policy, r.prompt, r.response, sampling);
    double dev = 0.0;
    for (std::size_t t = 0; t < train_lp.size(); ++t)
      dev = std::max(dev, std::abs(std::exp(train_lp[t] - r.inf_logprobs[t]) - 1.0));
    ratio_dev[static_cast<std::size_t>(s)] = dev;
    entropy[static_cast<std::size_t>(s)] = policy::mean_token_entropy(policy, r, sampling);
  }

  assign_rewards(groups, config, options);

  double reward_sum = 0.0, len_sum = 0.0, entropy_sum = 0.0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    m.ratio_dev = std::max(m.ratio_dev, ratio_dev[k]);
    entropy_sum += entropy[k];
    len_sum += static_cast<double>(all[k]->length());
    m.num_tokens += all[k]->length();
  }
  for (const auto& g : groups)
    for (double r : g.rewards) reward_sum += r;
  m.num_rollouts = all.size();
  m.mean_reward = reward_sum / static_cast<double>(all.size());
  m.mean_len = len_sum / static_cast<double>(all.size());
  m.entropy = entropy_sum / static_cast<double>(all.size());

  const std::size_t total_groups = groups.size();
  for (auto& g : groups) g = rewards::apply_overlong(std::move(g), config.overlong_mode);
  if (config.dynamic_filtering) groups = rewards::dynamic_filter(std::move(groups));
  if (config.loss_mask_tau) groups = rewards::threshold_mask(std::move(groups), *config.loss_mask_tau);

  std::size_t contributing = 0;
  for (const auto& g : groups)
    if (contributes(g, group_advantages(g.rewards))) ++contributing;
  m.filtered_frac = 1.0 - static_cast<double>(contributing) / static_cast<double>(total_groups);
  if (contributing == 0) {
    m.skipped = true;
    return m;
  }

  const double kl = options.reference ? config.kl_coef : 0.0;
  const auto grad = surrogate_gradient(policy, groups, options.reference, kl, options.workers);
  m.grad_norm = policy::l2_norm(grad);
  policy::adamw_update(policy, optimizer, grad, config.lr, options.workers);
  return m;
}

}  // namespace cascade::grpo
