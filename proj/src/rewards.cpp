#include "cascade/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cascade/errors.hpp"
#include "cascade/rng.hpp"

namespace cascade::rewards {

std::string_view to_string(OverlongMode m) {
  switch (m) {
    case OverlongMode::off: return "off";
    case OverlongMode::zero_reward: return "zero_reward";
    case OverlongMode::filter: return "filter";
  }
  return "off";
}

OverlongMode parse_overlong_mode(std::string_view s) {
  for (OverlongMode m : {OverlongMode::off, OverlongMode::zero_reward, OverlongMode::filter})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown overlong mode '" + std::string(s) + "'");
}

RolloutGroup apply_overlong(RolloutGroup group, OverlongMode mode) {
  if (mode == OverlongMode::off) return group;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    auto& r = group.rollouts[i];
    if (r.completed) continue;
    if (mode == OverlongMode::zero_reward) {
      group.rewards[i] = 0.0;
    } else {
      std::fill(r.valid_mask.begin(), r.valid_mask.end(), std::uint8_t{0});
    }
  }
  return group;
}

std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups, bool strict) {
  std::vector<RolloutGroup> kept;
  for (auto& g : groups) {
    bool has_zero = false, has_one = false;
    for (double r : g.rewards) {
      if (r == 0.0) has_zero = true;
      else if (r == 1.0) has_one = true;
      else if (strict) throw InvalidArgument("dynamic filtering expects binary rewards, got " + std::to_string(r));
    }
    if (has_zero && has_one) kept.push_back(std::move(g));
  }
  return kept;
}

std::vector<RolloutGroup> threshold_mask(std::vector<RolloutGroup> groups, double tau) {
  for (auto& g : groups) {
    const bool any_above = std::any_of(g.rewards.begin(), g.rewards.end(), [&](double r) { return r > tau; });
    g.loss_masked = !any_above;
  }
  return groups;
}

std::vector<double> preference_rewards(const RolloutGroup& group, const PairJudge& judge,
                                       const PreferenceConfig& config) {
  const std::size_t g = group.size();
  if (g < 2) throw InvalidArgument("preference rewards need at least two rollouts");
  if (config.max_len < 1) throw InvalidArgument("max_len must be positive");

  std::vector<double> win(g, 0.0), help(g, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      if (i == j) continue;
      const JudgeVerdict v = judge(group, i, j);
      const double first_score = v.winner == JudgeVerdict::Winner::first    ? 1.0
                                 : v.winner == JudgeVerdict::Winner::second ? 0.0
                                                                            : 0.5;
      win[i] += first_score;
      win[j] += 1.0 - first_score;
      help[i] += std::clamp(v.helpfulness_first, 0.0, 10.0);
      help[j] += std::clamp(v.helpfulness_second, 0.0, 10.0);
    }
  }
  // Each rollout takes part in 2(G-1) ordered comparisons.
  const double comparisons = 2.0 * static_cast<double>(g - 1);
  std::vector<double> reward(g);
  for (std::size_t i = 0; i < g; ++i)
    reward[i] = 0.5 * (win[i] / comparisons) + 0.5 * (help[i] / comparisons / 10.0);

  const double best = *std::max_element(reward.begin(), reward.end());
  const auto max_len = static_cast<double>(config.max_len);
  for (std::size_t i = 0; i < g; ++i) {
    if (reward[i] < best - config.quality_delta) continue;
    const double len = std::min(static_cast<double>(group.rollouts[i].length()), max_len);
    reward[i] += config.conciseness_beta * (1.0 - len / max_len);
  }
  return reward;
}

PairJudge make_mock_judge() {
  return [](const RolloutGroup& group, std::size_t i, std::size_t j) {
    const auto helpfulness = [&](std::size_t k) {
      const auto& r = group.rollouts[k];
      if (envs::verify(group.task, r.response) > 0.5) return 9.0;
      return r.completed ? 3.0 : 1.0;
    };
    JudgeVerdict v;
    v.helpfulness_first = helpfulness(i);
    v.helpfulness_second = helpfulness(j);
    if (v.helpfulness_first > v.helpfulness_second) v.winner = JudgeVerdict::Winner::first;
    else if (v.helpfulness_first < v.helpfulness_second) v.winner = JudgeVerdict::Winner::second;
    return v;
  };
}

bool keep_zero_pass(std::uint64_t seed, std::size_t index, double keep_frac_zero) {
  return uniform_at(seed, {0xD1FF, index}) < keep_frac_zero;
}

std::vector<envs::Task> difficulty_filter(std::span<const DifficultyInstance> instances,
                                          double keep_frac_zero, std::uint64_t seed) {
  std::vector<envs::Task> kept;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.pass_count < 0 || inst.pass_count > inst.total)
      throw InvalidArgument("pass_count outside [0, total] for " + inst.task.task_id);
    if (inst.pass_count == inst.total) continue;
    if (inst.pass_count == 0 && !keep_zero_pass(seed, i, keep_frac_zero)) continue;
    kept.push_back(inst.task);
  }
  return kept;
}

void FaultLog::append(FaultRecord record) {
  std::lock_guard lock(mu_);
  if (sink_) {
    nlohmann::json j{{"task_id", record.task_id},
                     {"rollout_index", record.rollout_index},
                     {"fault", record.fault}};
    *sink_ << j.dump() << '\n';
  }
  records_.push_back(std::move(record));
}

std::vector<FaultRecord> FaultLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::vector<double> dispatch_verification(std::span<const VerificationJob> jobs, int max_workers,
                                          const Verifier& verifier, FaultLog* faults) {
  if (max_workers < 1) throw InvalidArgument("max_workers must be at least 1");
  std::vector<double> rewards(jobs.size(), 0.0);
  std::vector<std::optional<std::string>> job_faults(jobs.size());
  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic) num_threads(max_workers)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto k = static_cast<std::size_t>(s);
    try {
      const double r = verifier(*jobs[k].task, jobs[k].response);
      if (!std::isfinite(r)) {
        job_faults[k] = "verifier returned a non-finite reward";
      } else {
        rewards[k] = r;
      }
    } catch (const std::exception& e) {
      job_faults[k] = e.what();
    } catch (...) {
      job_faults[k] = "unknown verifier fault";
    }
  }
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (!job_faults[k]) continue;
    rewards[k] = 0.0;
    if (faults) faults->append({jobs[k].task->task_id, jobs[k].rollout_index, *job_faults[k]});
  }
  return rewards;
}

}  // namespace cascade::rewards
