#pragma once
// Brute-force reference implementations used as test oracles. They are written for clarity,
// not speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cascade/elo.hpp"
#include "cascade/rewards.hpp"
#include "cascade/rng.hpp"
#include "cascade/tts.hpp"

namespace cascade::oracle {

/// A random group of 1..max_g rollouts with binary or continuous rewards, random lengths and
/// random completion flags.
inline rewards::RolloutGroup random_group(Rng& rng, bool binary, std::size_t max_g = 8) {
  rewards::RolloutGroup g;
  g.task.task_id = "t" + std::to_string(rng.below(1000));
  const std::size_t n = 1 + rng.below(max_g);
  for (std::size_t i = 0; i < n; ++i) {
    policy::Rollout r;
    const std::size_t len = 1 + rng.below(6);
    for (std::size_t t = 0; t < len; ++t) {
      r.response.push_back(static_cast<policy::TokenId>(1 + rng.below(20)));
      r.inf_logprobs.push_back(-rng.uniform());
    }
    r.completed = rng.below(3) != 0;
    r.valid_mask.assign(len, 1);
    g.rollouts.push_back(std::move(r));
    g.rewards.push_back(binary ? static_cast<double>(rng.below(2)) : std::round(rng.uniform() * 10.0) / 10.0);
  }
  // Bias some groups to be uniform so both filter branches are exercised.
  if (binary && rng.below(3) == 0) std::fill(g.rewards.begin(), g.rewards.end(), static_cast<double>(rng.below(2)));
  return g;
}

inline std::vector<std::size_t> dynamic_filter_indices(const std::vector<rewards::RolloutGroup>& groups) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    double sum = 0.0;
    for (double r : groups[i].rewards) sum += r;
    if (sum > 0.0 && sum < static_cast<double>(groups[i].rewards.size())) keep.push_back(i);
  }
  return keep;
}

inline bool threshold_masked(const rewards::RolloutGroup& g, double tau) {
  for (double r : g.rewards)
    if (r > tau) return false;
  return true;
}

/// Expected (rewards, valid masks) after overlong handling.
inline void overlong_reference(const rewards::RolloutGroup& g, rewards::OverlongMode mode,
                               std::vector<double>& rewards_out,
                               std::vector<std::vector<std::uint8_t>>& masks_out) {
  rewards_out = g.rewards;
  masks_out.clear();
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto mask = g.rollouts[i].valid_mask;
    if (!g.rollouts[i].completed) {
      if (mode == rewards::OverlongMode::zero_reward) rewards_out[i] = 0.0;
      if (mode == rewards::OverlongMode::filter) std::fill(mask.begin(), mask.end(), 0);
    }
    masks_out.push_back(mask);
  }
}

inline std::vector<std::string> difficulty_reference(std::span<const rewards::DifficultyInstance> xs,
                                                     double keep_frac_zero, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].pass_count == xs[i].total) continue;
    if (xs[i].pass_count == 0 && !(uniform_at(seed, {0xD1FF, i}) < keep_frac_zero)) continue;
    ids.push_back(xs[i].task.task_id);
  }
  return ids;
}

/// Expected points by enumerating every success/failure pattern of n attempts; the first success
/// at attempt k scores the penalized value for k.
inline double enumerate_expected_score(double value, double p, int n, const elo::PenaltyModel& penalty) {
  double total = 0.0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    double prob = 1.0;
    int first = 0;
    for (int k = 0; k < n; ++k) {
      const bool hit = (mask >> k) & 1u;
      prob *= hit ? p : 1.0 - p;
      if (hit && first == 0) first = k + 1;
    }
    if (first == 0) continue;
    const int wrong = first - 1;
    const double pts = penalty.kind == elo::PenaltyModel::Kind::additive
                           ? std::max(penalty.floor * value, value - penalty.per_wrong * wrong)
                           : value * std::max(penalty.floor, std::pow(1.0 - penalty.decrement, wrong));
    total += prob * pts;
  }
  return total;
}

/// Rank from inserting the model into the standings; humans only go ahead when strictly better.
inline int insertion_rank(const elo::ContestSpec& c, double score, double penalty) {
  int ahead = 0;
  for (const auto& h : c.standings) {
    const bool better = c.style == elo::Style::icpc ? (h.score > score || (h.score == score && h.penalty < penalty))
                                                    : h.score > score;
    ahead += better;
  }
  return 1 + ahead;
}

inline double logistic_wins(double r, const std::vector<double>& field) {
  double s = 0.0;
  for (double x : field) s += 1.0 / (1.0 + std::pow(10.0, (x - r) / 400.0));
  return s;
}

/// Grid point (step 0.5) whose expected wins are closest to the smoothed beaten count.
inline double grid_rating(int est_rank, const std::vector<double>& field) {
  const double h = static_cast<double>(field.size());
  const double target = (h + 1.0 - est_rank + 0.5) * h / (h + 1.0);
  double best = 0.0, best_gap = std::numeric_limits<double>::infinity();
  for (double r = -2000.0; r <= 6000.0; r += 0.5) {
    const double gap = std::abs(logistic_wins(r, field) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = r;
    }
  }
  return best;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

/// Scripted proof stack: verification scores come from {0, 0.5, 0.9} as a pure function of the
/// payload and index, so candidates tie often and the threshold is never reached.
struct ScriptedProofStack {
  static double score(const std::string& payload, int index) {
    const double u = uniform_at(fnv1a(payload), {static_cast<std::uint64_t>(index)});
    return u < 0.3 ? 0.0 : (u < 0.7 ? 0.5 : 0.9);
  }
  tts::ProofGenerator generator = [](const tts::Problem&, int count, std::uint64_t) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) out.push_back("g" + std::to_string(i));
    return out;
  };
  tts::ProofVerifier verifier = [](const tts::Problem&, const tts::ProofCandidate& c, int index, std::uint64_t) {
    return tts::VerificationAnalysis{0, 0, score(c.payload, index), score(c.payload, index + 1000), ""};
  };
  tts::ProofRefiner refiner = [](const tts::Problem&, const tts::ProofCandidate& c,
                                 std::span<const tts::VerificationAnalysis>, int count, std::uint64_t) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) out.push_back(c.payload + "/r" + std::to_string(i));
    return out;
  };
};

/// Expected selections per round: a stable sort by mean score, descending, truncated to k; the
/// final round selects nothing. `means_by_round` holds the round's candidate means in log order.
inline std::vector<std::vector<std::size_t>> top_k_reference(const std::vector<std::vector<double>>& means_by_round, int k) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t r = 0; r < means_by_round.size(); ++r) {
    const auto& means = means_by_round[r];
    std::vector<std::size_t> order(means.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
    if (r + 1 == means_by_round.size()) order.clear();
    else order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
    out.push_back(order);
  }
  return out;
}

/// Replays a contest schedule: script[s][k] is the score of the k-th submission for subtask s.
struct ContestReplay {
  std::vector<tts::SubmissionRecord> history;
  std::vector<double> best_by_round;
  std::map<std::string, double> best;
  int rounds = 0;
};

inline ContestReplay replay_contest(const tts::ContestProblem& p, const std::map<std::string, std::vector<double>>& script,
                                    int max_rounds) {
  ContestReplay out;
  std::map<std::string, int> used;
  for (const auto& s : p.subtasks) out.best[s.id] = 0.0;
  const auto all_full = [&] {
    for (const auto& s : p.subtasks)
      if (out.best[s.id] < s.max_score) return false;
    return true;
  };
  for (int round = 1; round <= max_rounds && !all_full(); ++round) {
    out.rounds = round;
    double total = 0.0;
    for (const auto& s : p.subtasks) {
      if (out.best[s.id] < s.max_score) {
        const int k = used[s.id]++;
        const double score = script.at(s.id).at(static_cast<std::size_t>(k));
        out.history.push_back({round, s.id, s.id + ":" + std::to_string(k),
                               score >= s.max_score ? tts::Verdict::accepted : tts::Verdict::partial, score});
        out.best[s.id] = std::max(out.best[s.id], score);
      }
    }
    for (const auto& s : p.subtasks) total += out.best[s.id];
    out.best_by_round.push_back(total);
  }
  return out;
}

/// Generator and judge that follow a script: the k-th candidate for a subtask is named
/// "<subtask>:<k>" and the judge awards script[subtask][k].
struct ScriptedContest {
  std::map<std::string, std::vector<double>> script;
  std::map<std::string, int> calls;
  tts::CodeGenerator generator() {
    return [this](const tts::ContestProblem&, const tts::Subtask& s, const std::string&, int, std::uint64_t) {
      return std::vector<tts::CodeCandidate>{{s.id + ":" + std::to_string(calls[s.id]++), 0.0}};
    };
  }
  tts::ContestJudge judge() const {
    return [this](const tts::ContestProblem&, const tts::Subtask& s, const std::string& code) {
      const int k = std::stoi(code.substr(code.find(':') + 1));
      const double score = script.at(s.id).at(static_cast<std::size_t>(k));
      return tts::JudgeResult{score >= s.max_score ? tts::Verdict::accepted : tts::Verdict::partial, score};
    };
  }
};

/// Random script over max_rounds submissions per subtask; about one in six submissions is full.
inline std::map<std::string, std::vector<double>> random_script(Rng& rng, const tts::ContestProblem& p, int max_rounds) {
  std::map<std::string, std::vector<double>> script;
  for (const auto& s : p.subtasks)
    for (int k = 0; k < max_rounds; ++k)
      script[s.id].push_back(rng.below(6) == 0 ? s.max_score : std::round(s.max_score * rng.uniform() * 10.0) / 10.0);
  return script;
}

}  // namespace cascade::oracle
