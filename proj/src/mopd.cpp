#include "cascade/mopd.hpp"

#include <algorithm>
#include <cmath>

#include "cascade/errors.hpp"
#include "cascade/grpo.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rewards.hpp"
#include "cascade/rng.hpp"

namespace cascade::mopd {

using policy::PolicyParams;

double mopd_advantage(double teacher_lp, double train_lp) { return teacher_lp - train_lp; }

double truncated_weight(double train_lp, double inf_lp, double eps_low, double eps_high) {
  const double r = std::exp(train_lp - inf_lp);
  return (r >= eps_low && r <= eps_high) ? r : 0.0;
}

std::vector<std::vector<double>> mopd_loss_weights(const DistillBatch& batch, double eps_low,
                                                   double eps_high) {
  std::vector<std::vector<double>> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& d = batch[b];
    const auto& r = d.rollout;
    const std::size_t n = r.response.size();
    if (d.train_logprobs.size() != n || d.teacher_logprobs.size() != n || r.inf_logprobs.size() != n ||
        r.valid_mask.size() != n)
      throw InvalidArgument("distillation log-probs are not aligned with the response");
    out[b].assign(n, 0.0);
    const std::size_t valid = r.valid_count();
    if (valid == 0) continue;
    const double inv_valid = 1.0 / static_cast<double>(valid);
    for (std::size_t t = 0; t < n; ++t) {
      if (!r.valid_mask[t]) continue;
      const double w = truncated_weight(d.train_logprobs[t], r.inf_logprobs[t], eps_low, eps_high);
      out[b][t] = w * mopd_advantage(d.teacher_logprobs[t], d.train_logprobs[t]) * inv_valid;
    }
  }
  return out;
}

void TeacherPool::add(envs::Domain domain, std::shared_ptr<const PolicyParams> teacher, std::string ref) {
  if (!teacher) throw InvalidArgument("null teacher");
  teachers_[domain] = {std::move(teacher), std::move(ref)};
}

void TeacherPool::add(envs::Domain domain, PolicyParams teacher, std::string ref) {
  add(domain, std::make_shared<const PolicyParams>(std::move(teacher)), std::move(ref));
}

const PolicyParams& TeacherPool::teacher(envs::Domain domain) const {
  auto it = teachers_.find(domain);
  if (it == teachers_.end())
    throw ConfigError("no teacher bound for domain '" + std::string(envs::to_string(domain)) + "'");
  return *it->second.params;
}

const std::string& TeacherPool::ref(envs::Domain domain) const {
  auto it = teachers_.find(domain);
  if (it == teachers_.end())
    throw ConfigError("no teacher bound for domain '" + std::string(envs::to_string(domain)) + "'");
  return it->second.ref;
}

std::vector<envs::Domain> TeacherPool::domains() const {
  std::vector<envs::Domain> out;
  for (const auto& [d, e] : teachers_) out.push_back(d);
  return out;
}

void TeacherPool::check_compatible(const PolicyParams& student) const {
  for (const auto& [d, e] : teachers_) {
    if (e.params->vocab_size() != student.vocab_size() ||
        e.params->context_order() != student.context_order())
      throw InvalidArgument("teacher for domain '" + std::string(envs::to_string(d)) +
                            "' does not share the student's vocabulary and context order");
  }
}

const PolicyParams& select_domain(const envs::Task& task, const TeacherPool& pool) {
  return pool.teacher(task.domain);
}

double warmup_lr(int step, double base_lr, double start_lr, int warmup_steps) {
  if (step < 0) throw InvalidArgument("step must be non-negative");
  if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return start_lr + (base_lr - start_lr) * frac;
}

PolicyParams perturbed_policy(const PolicyParams& policy, double noise, std::uint64_t seed) {
  PolicyParams out = policy;
  if (noise == 0.0) return out;
  Rng rng(seed);
  for (double& z : out.logits()) z += noise * rng.normal();
  return out;
}

double exact_reverse_kl(const PolicyParams& student, const TeacherPool& pool,
                        std::span<const envs::Task> tasks, int max_len, int workers) {
  if (tasks.empty()) return 0.0;
  std::vector<kernels::KlJob> jobs;
  jobs.reserve(tasks.size());
  for (const auto& t : tasks) jobs.push_back({t.prompt, &select_domain(t, pool)});
  const auto kl = kernels::omp::reverse_kl(student, jobs, max_len, workers);
  double sum = 0.0;
  for (double x : kl) sum += x;
  return sum / static_cast<double>(kl.size());
}

DistillBatch build_batch(const PolicyParams& student, const PolicyParams& behavior,
                         const TeacherPool& pool, std::span<const envs::Task> tasks,
                         const stage::StageConfig& config, std::uint64_t seed, int workers) {
  for (const auto& t : tasks) select_domain(t, pool);
  auto groups = grpo::sample_groups(behavior, tasks, config, seed, workers);
  DistillBatch batch;
  for (auto& g : groups) {
    g = rewards::apply_overlong(std::move(g), config.overlong_mode);
    for (auto& r : g.rollouts) batch.push_back({std::move(r), {}, {}, g.task.domain});
  }
  const policy::SamplingParams sampling{config.temperature, config.top_p};
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  const std::size_t g = static_cast<std::size_t>(config.rollout_size);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::resolve_workers(workers))
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    auto& d = batch[static_cast<std::size_t>(s)];
    const auto& teacher = select_domain(tasks[static_cast<std::size_t>(s) / g], pool);
    d.train_logprobs = policy::sequence_logprobs(student, d.rollout.prompt, d.rollout.response, sampling);
    d.teacher_logprobs = policy::sequence_logprobs(teacher, d.rollout.prompt, d.rollout.response, sampling);
  }
  return batch;
}

namespace {

double active_rollouts(const DistillBatch& batch) {
  std::size_t n = 0;
  for (const auto& d : batch)
    if (d.rollout.valid_count() > 0) ++n;
  return static_cast<double>(n);
}

}  // namespace

double surrogate_loss(const PolicyParams& params, const DistillBatch& batch,
                      std::span<const std::vector<double>> weights) {
  const double b = active_rollouts(batch);
  if (b == 0.0) return 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i].rollout;
    const auto lp = policy::sequence_logprobs(params, r.prompt, r.response);
    for (std::size_t t = 0; t < lp.size(); ++t) loss -= weights[i][t] * lp[t] / b;
  }
  return loss;
}

policy::Gradient surrogate_gradient(const PolicyParams& params, const DistillBatch& batch,
                                    std::span<const std::vector<double>> weights, int workers) {
  if (weights.size() != batch.size()) throw InvalidArgument("one weight vector per rollout expected");
  const double b = active_rollouts(batch);
  if (b == 0.0) return policy::Gradient(params.num_params(), 0.0);
  std::vector<std::vector<double>> scaled(weights.begin(), weights.end());
  std::vector<policy::WeightedSequence> seqs;
  seqs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (double& w : scaled[i]) w /= b;
    seqs.push_back({batch[i].rollout.prompt, batch[i].rollout.response, scaled[i]});
  }
  return policy::weighted_nll_gradient(params, seqs, workers);
}

metrics::StepMetrics mopd_step(PolicyParams& student, policy::OptimizerState& optimizer,
                               const TeacherPool& pool, std::span<const envs::Task> tasks,
                               const stage::StageConfig& config, int step, std::uint64_t seed,
                               const MopdOptions& options) {
  stage::validate_stage(config);
  pool.check_compatible(student);
  if (tasks.empty()) throw InvalidArgument("mopd_step needs at least one task");

  metrics::StepMetrics m;
  m.stage = config.stage_name;
  m.algorithm = "mopd";
  m.step = step;
  m.lr = warmup_lr(step, config.lr, config.warmup_start_lr, config.warmup_steps);

  if (options.exact_kl)
    m.exact_reverse_kl = exact_reverse_kl(student, pool, tasks, config.max_response_len, options.workers);

  const PolicyParams behavior_copy =
      config.inference_noise > 0.0 ? perturbed_policy(student, config.inference_noise, derive_seed(seed, {0x1F}))
                                   : PolicyParams{};
  const PolicyParams& behavior = config.inference_noise > 0.0 ? behavior_copy : student;
  const DistillBatch batch = build_batch(student, behavior, pool, tasks, config, seed, options.workers);
  const auto weights = mopd_loss_weights(batch, config.eps_low, config.eps_high);

  double kl_sum = 0.0, reward_sum = 0.0, len_sum = 0.0, entropy_sum = 0.0;
  std::size_t valid_tokens = 0, masked = 0;
  const policy::SamplingParams sampling{config.temperature, config.top_p};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& d = batch[i];
    const auto& r = d.rollout;
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      const double ratio = std::exp(d.train_logprobs[t] - r.inf_logprobs[t]);
      m.ratio_dev = std::max(m.ratio_dev, std::abs(ratio - 1.0));
      if (!r.valid_mask[t]) continue;
      ++valid_tokens;
      kl_sum += d.train_logprobs[t] - d.teacher_logprobs[t];
      if (truncated_weight(d.train_logprobs[t], r.inf_logprobs[t], config.eps_low, config.eps_high) == 0.0)
        ++masked;
    }
    reward_sum += envs::verify(tasks[i / static_cast<std::size_t>(config.rollout_size)], r.response);
    len_sum += static_cast<double>(r.length());
    entropy_sum += policy::mean_token_entropy(student, r, sampling);
    m.num_tokens += r.length();
  }
  const auto count = static_cast<double>(batch.size());
  m.num_rollouts = batch.size();
  m.mean_reward = reward_sum / count;
  m.mean_len = len_sum / count;
  m.entropy = entropy_sum / count;
  m.reverse_kl = valid_tokens ? kl_sum / static_cast<double>(valid_tokens) : 0.0;
  m.masked_frac = valid_tokens ? static_cast<double>(masked) / static_cast<double>(valid_tokens) : 0.0;

  if (valid_tokens == 0) {
    m.skipped = true;
    m.filtered_frac = 1.0;
    return m;
  }
  const auto grad = surrogate_gradient(student, batch, weights, options.workers);
  m.grad_norm = policy::l2_norm(grad);
  policy::adamw_update(student, optimizer, grad, m.lr, options.workers);
  return m;
}

}  // namespace cascade::mopd
