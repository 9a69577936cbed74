// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cascade/elo.hpp"
#include "cascade/envs.hpp"
#include "cascade/experiment.hpp"
#include "cascade/grpo.hpp"
#include "cascade/mopd.hpp"
#include "cascade/rewards.hpp"
#include "cascade/tts.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cascade;
using envs::Domain;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed sub-checks so a criterion reports every reason it failed.
struct Checks {
  std::vector<std::string> failures;
  void require(bool ok, std::string what) {
    if (!ok) failures.push_back(std::move(what));
  }
  Outcome outcome(std::string detail) const {
    if (failures.empty()) return {true, std::move(detail)};
    std::string all = failures.front();
    for (std::size_t i = 1; i < failures.size(); ++i) all += "; " + failures[i];
    return {false, detail + " | " + all};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

stage::StageConfig math_grpo_stage() {
  stage::StageConfig c;
  c.stage_name = "grpo";
  c.blend = {{Domain::math, 1.0}};
  c.max_response_len = 3;
  c.batch_prompts = 64;
  c.rollout_size = 8;
  c.lr = 0.4;
  c.dynamic_filtering = true;
  return c;
}

stage::StageConfig math_mopd_stage() {
  stage::StageConfig c;
  c.stage_name = "mopd";
  c.algorithm = stage::Algorithm::mopd;
  c.blend = {{Domain::math, 1.0}};
  c.max_response_len = 3;
  c.batch_prompts = 128;
  c.rollout_size = 4;
  c.lr = 0.04;
  c.warmup_start_lr = 0.004;
  c.warmup_steps = 8;
  return c;
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t tag, int step) {
  return derive_seed(seed, {tag, static_cast<std::uint64_t>(step)});
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks c;
  double worst = 0.0;
  std::size_t largest = 0;
  for (const auto& [vocab, order] : {std::pair{5, 1}, std::pair{5, 2}}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto p = test::random_policy(vocab, order, seed, 1.0);
      largest = std::max(largest, p.num_params());
      c.require(p.num_params() <= 200, "policy exceeds 200 parameters");

      const auto ref = test::random_policy(vocab, order, seed + 50, 1.0);
      std::vector<rewards::RolloutGroup> groups;
      for (int gi = 0; gi < 2; ++gi) {
        rewards::RolloutGroup g;
        g.task.prompt = {static_cast<policy::TokenId>(1 + gi), static_cast<policy::TokenId>(2 + gi)};
        for (std::size_t i = 0; i < 4; ++i) {
          g.rollouts.push_back(policy::sample_response(p, g.task.prompt, 4, {}, derive_seed(seed, {static_cast<std::uint64_t>(gi), i})));
          g.rewards.push_back(static_cast<double>((i + static_cast<std::size_t>(gi)) % 2));
        }
        groups.push_back(std::move(g));
      }
      for (double kl : {0.0, 0.3}) {
        const auto g = grpo::surrogate_gradient(p, groups, &ref, kl, 2);
        const auto fd = test::finite_difference(p, [&](const policy::PolicyParams& q) { return grpo::surrogate_loss(q, groups, &ref, kl); });
        worst = std::max(worst, test::max_relative_error(g, fd));
      }

      const auto teacher = test::random_policy(vocab, order, seed + 30, 1.5);
      const auto behavior = mopd::perturbed_policy(p, 0.3, seed);
      mopd::TeacherPool pool;
      pool.add(Domain::math, teacher);
      std::vector<envs::Task> tasks(3);
      for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].prompt = {static_cast<policy::TokenId>(1 + i), 1};
      auto cfg = math_mopd_stage();
      cfg.max_response_len = 4;
      const auto batch = mopd::build_batch(p, behavior, pool, tasks, cfg, seed, 1);
      const auto w = mopd::mopd_loss_weights(batch);
      const auto g = mopd::surrogate_gradient(p, batch, w, 2);
      const auto fd = test::finite_difference(p, [&](const policy::PolicyParams& q) { return mopd::surrogate_loss(q, batch, w); });
      worst = std::max(worst, test::max_relative_error(g, fd));
    }
  }
  const double secs = seconds_since(t0);
  c.require(worst <= 1e-5, fmt::format("relative error {:.3g} > 1e-5", worst));
  c.require(secs < 5.0, fmt::format("took {:.2f} s", secs));
  return c.outcome(fmt::format("max relative error {:.3g} on policies up to {} parameters", worst, largest));
}

Outcome on_policy_exactness() {
  const envs::EnvRegistry reg(0);
  const auto cfg = math_grpo_stage();
  auto p = envs::make_initial_policy(reg.validation_pool(Domain::math), {.answer_bias = 3.0});
  policy::OptimizerState opt(p, stage::optimizer_config(cfg));
  double worst = 0.0;
  std::size_t tokens = 0;
  int steps = 0;
  for (; tokens < 10000 || steps < 5; ++steps) {
    const auto batch = envs::make_blend(reg, cfg.blend, cfg.batch_prompts, step_seed(1, 0xB, steps));
    const auto m = grpo::grpo_step(p, opt, batch, cfg, steps, step_seed(1, 0, steps), {.workers = 2});
    worst = std::max(worst, m.ratio_dev);
    tokens += m.num_tokens;
  }
  Checks c;
  c.require(worst <= 1e-12, fmt::format("ratio deviation {:.3g}", worst));
  return c.outcome(fmt::format("max |r-1| = {:.3g} over {} tokens in {} steps", worst, tokens, steps));
}

Outcome advantage_normalization() {
  Rng rng(2024);
  double worst_mean = 0.0, worst_std = 0.0;
  int retained = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(2 + rng.below(15));
    const bool binary = trial % 2 == 0;
    for (double& x : r) x = binary ? static_cast<double>(rng.below(2)) : rng.normal() * 3.0;
    const auto s = grpo::group_advantages(r);
    if (s.degenerate) continue;
    ++retained;
    const double n = static_cast<double>(r.size());
    const double mean = std::accumulate(s.advantages.begin(), s.advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double x : s.advantages) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / n) - 1.0));
  }
  Checks c;
  c.require(worst_mean <= 1e-9 && worst_std <= 1e-9, "normalization error above 1e-9");
  return c.outcome(fmt::format("{} retained groups; max |mean| {:.2g}, max |std-1| {:.2g}", retained, worst_mean, worst_std));
}

Outcome filter_oracles() {
  Checks c;
  Rng rng(99);
  const int n_groups = 10000;
  std::vector<rewards::RolloutGroup> binary, cont;
  for (int i = 0; i < n_groups; ++i) {
    binary.push_back(oracle::random_group(rng, true));
    cont.push_back(oracle::random_group(rng, false));
  }

  const auto keep = oracle::dynamic_filter_indices(binary);
  const auto kept = rewards::dynamic_filter(binary);
  bool dyn_ok = kept.size() == keep.size();
  for (std::size_t k = 0; dyn_ok && k < keep.size(); ++k)
    dyn_ok = kept[k].rewards == binary[keep[k]].rewards && kept[k].task.task_id == binary[keep[k]].task.task_id;
  c.require(dyn_ok, "dynamic_filter differs from the oracle");

  const auto masked = rewards::threshold_mask(cont, 0.5);
  bool mask_ok = masked.size() == cont.size();
  for (std::size_t i = 0; mask_ok && i < cont.size(); ++i) mask_ok = masked[i].loss_masked == oracle::threshold_masked(cont[i], 0.5);
  c.require(mask_ok, "threshold_mask differs from the oracle");

  bool over_ok = true;
  for (const auto& g : cont)
    for (auto mode : {rewards::OverlongMode::off, rewards::OverlongMode::zero_reward, rewards::OverlongMode::filter}) {
      std::vector<double> r;
      std::vector<std::vector<std::uint8_t>> m;
      oracle::overlong_reference(g, mode, r, m);
      const auto out = rewards::apply_overlong(g, mode);
      over_ok = over_ok && out.rewards == r;
      for (std::size_t i = 0; i < m.size(); ++i) over_ok = over_ok && out.rollouts[i].valid_mask == m[i];
    }
  c.require(over_ok, "apply_overlong differs from the oracle");

  std::vector<rewards::DifficultyInstance> mixed, zeros;
  for (std::size_t i = 0; i < 10000; ++i) {
    const int total = 1 + static_cast<int>(rng.below(16));
    rewards::DifficultyInstance d;
    d.task.task_id = "t" + std::to_string(i);
    d.total = total;
    d.pass_count = static_cast<int>(rng.below(static_cast<std::uint64_t>(total) + 1));
    mixed.push_back(d);
    d.pass_count = 0;
    zeros.push_back(d);
  }
  std::vector<std::string> ids;
  for (const auto& t : rewards::difficulty_filter(mixed, 0.1, 5)) ids.push_back(t.task_id);
  c.require(ids == oracle::difficulty_reference(mixed, 0.1, 5), "difficulty_filter differs from the oracle");

  const double survivors = static_cast<double>(rewards::difficulty_filter(zeros, 0.1, 17).size());
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  c.require(std::abs(survivors - 1000.0) <= 3.0 * sigma, "zero-pass keep rate outside 3 sigma");
  return c.outcome(fmt::format("{} groups per filter; zero-pass kept {}/10000 (10% +/- 3 sigma = [{:.0f}, {:.0f}])", n_groups,
                               survivors, 1000 - 3 * sigma, 1000 + 3 * sigma));
}

Outcome mopd_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const envs::EnvRegistry reg(0);
  const auto tasks = reg.validation_pool(Domain::math);
  const auto cfg = math_mopd_stage();
  mopd::TeacherPool pool;
  pool.add(Domain::math, envs::make_initial_policy(tasks, {.answer_bias = 6.0, .seed = 7}));
  const int seeds = 5;
  double start = 0.0, end = 0.0;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    auto student = envs::make_initial_policy(tasks, {.answer_bias = 3.0});
    policy::OptimizerState opt(student, stage::optimizer_config(cfg));
    start += mopd::exact_reverse_kl(student, pool, tasks, cfg.max_response_len) / seeds;
    for (int step = 0; step < 60; ++step) {
      const auto batch = envs::make_blend(reg, cfg.blend, cfg.batch_prompts, step_seed(seed, 0xB, step));
      mopd::mopd_step(student, opt, pool, batch, cfg, step, derive_seed(seed, {static_cast<std::uint64_t>(step)}));
    }
    end += mopd::exact_reverse_kl(student, pool, tasks, cfg.max_response_len) / seeds;
  }
  const double drop = 1.0 - end / start;
  const double secs = seconds_since(t0);
  Checks c;
  c.require(drop >= 0.5, "reverse KL dropped by less than 50%");
  c.require(secs < 60.0, fmt::format("took {:.1f} s", secs));
  return c.outcome(fmt::format("exact reverse KL {:.3f} -> {:.3f} after 60 steps ({:.0f}% drop, {:.1f} s)", start, end, 100 * drop, secs));
}

Outcome mopd_vs_grpo() {
  const auto t0 = std::chrono::steady_clock::now();
  const envs::EnvRegistry reg(0);
  const auto tasks = reg.validation_pool(Domain::math);
  const int len = 3;
  // Both arms spend 512 sampled responses and the same learning rate per update.
  const auto mcfg = math_mopd_stage();
  stage::StageConfig gcfg = math_grpo_stage();
  gcfg.batch_prompts = 32;
  gcfg.rollout_size = 16;
  gcfg.lr = mcfg.lr;

  const auto teacher = envs::make_initial_policy(tasks, {.answer_bias = 6.0, .seed = 7});
  mopd::TeacherPool pool;
  pool.add(Domain::math, teacher);
  const double target = envs::exact_mean_reward(teacher, tasks, len) - 0.02;
  const auto init = envs::make_initial_policy(tasks, {.answer_bias = 1.5});
  const double init_reward = envs::exact_mean_reward(init, tasks, len);
  const int max_steps = 600, seeds = 5;

  double mopd_mean = 0.0, grpo_mean = 0.0;
  bool all_reached = true;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    auto s = init, q = init;
    policy::OptimizerState ms(s, stage::optimizer_config(mcfg)), gs(q, stage::optimizer_config(gcfg));
    int mopd_steps = -1, grpo_steps = -1;
    for (int step = 0; step < max_steps && (mopd_steps < 0 || grpo_steps < 0); ++step) {
      if (mopd_steps < 0) {
        const auto batch = envs::make_blend(reg, mcfg.blend, mcfg.batch_prompts, step_seed(seed, 0xB, step));
        mopd::mopd_step(s, ms, pool, batch, mcfg, step, step_seed(seed, 0, step));
        if (envs::exact_mean_reward(s, tasks, len) >= target) mopd_steps = step + 1;
      }
      if (grpo_steps < 0) {
        const auto batch = envs::make_blend(reg, gcfg.blend, gcfg.batch_prompts, step_seed(seed, 0xC, step));
        grpo::grpo_step(q, gs, batch, gcfg, step, step_seed(seed, 0xD, step));
        if (envs::exact_mean_reward(q, tasks, len) >= target) grpo_steps = step + 1;
      }
    }
    all_reached = all_reached && mopd_steps > 0 && grpo_steps > 0;
    mopd_mean += (mopd_steps > 0 ? mopd_steps : max_steps) / static_cast<double>(seeds);
    grpo_mean += (grpo_steps > 0 ? grpo_steps : max_steps) / static_cast<double>(seeds);
  }
  const double secs = seconds_since(t0);
  Checks c;
  c.require(all_reached, "an arm never reached the teacher reward");
  c.require(mopd_mean <= grpo_mean, "distillation needed more steps");
  c.require(secs < 300.0, fmt::format("took {:.0f} s", secs));
  return c.outcome(fmt::format("reward {:.3f} -> teacher {:.3f}: distillation {:.1f} steps, GRPO {:.1f} steps (5-seed mean, {:.0f} s)",
                               init_reward, target + 0.02, mopd_mean, grpo_mean, secs));
}

Outcome truncated_weights() {
  const envs::EnvRegistry reg(0);
  const auto pool_tasks = reg.validation_pool(Domain::math);
  const auto tasks = envs::make_blend(reg, {{Domain::math, 1.0}}, 128, 3);
  mopd::TeacherPool pool;
  pool.add(Domain::math, envs::make_initial_policy(pool_tasks, {.answer_bias = 6.0, .seed = 7}));
  Checks c;
  std::string detail;
  for (double noise : {0.0, 0.5, 1.0}) {
    auto cfg = math_mopd_stage();
    cfg.inference_noise = noise;
    c.require(cfg.eps_low == 0.5 && cfg.eps_high == 2.0, "truncation bounds are not (0.5, 2)");
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto student = envs::make_initial_policy(pool_tasks, {.answer_bias = 3.0});
      const auto before = student;
      policy::OptimizerState opt(student, stage::optimizer_config(cfg));
      const auto m = mopd::mopd_step(student, opt, pool, tasks, cfg, 0, seed);

      const auto behavior = noise > 0.0 ? mopd::perturbed_policy(before, noise, derive_seed(seed, {0x1F})) : before;
      const auto batch = mopd::build_batch(before, behavior, pool, tasks, cfg, seed, 1);
      std::size_t valid = 0, masked = 0;
      for (const auto& d : batch) {
        const auto train = policy::sequence_logprobs(before, d.rollout.prompt, d.rollout.response);
        const auto inf = policy::sequence_logprobs(behavior, d.rollout.prompt, d.rollout.response);
        for (std::size_t t = 0; t < train.size(); ++t) {
          if (!d.rollout.valid_mask[t]) continue;
          ++valid;
          const double r = std::exp(train[t] - inf[t]);
          masked += r < 0.5 || r > 2.0;
        }
      }
      const double expected = static_cast<double>(masked) / static_cast<double>(valid);
      c.require(*m.masked_frac == expected, fmt::format("noise {} seed {}: {} vs {}", noise, seed, *m.masked_frac, expected));
      if (noise == 0.0) c.require(*m.masked_frac == 0.0, "masked tokens without perturbation");
      if (seed == 0) detail += fmt::format("{}noise {}: {:.4f}", detail.empty() ? "masked fraction at " : ", ", noise, *m.masked_frac);
    }
  }
  return c.outcome(detail);
}

Outcome tts_engine() {
  Checks c;
  const tts::Problem problem{"p", "statement"};
  const tts::TtsConfig cfg{128, 64, 32, 8, 4, 4};
  oracle::ScriptedProofStack s;
  std::mutex mu;
  std::map<std::uint64_t, std::map<int, double>> seen;
  const tts::ProofVerifier recording = [&](const tts::Problem& p, const tts::ProofCandidate& cand, int index, std::uint64_t seed) {
    auto a = s.verifier(p, cand, index, seed);
    const std::lock_guard lock(mu);
    seen[cand.id][index] = a.score;
    return a;
  };
  const auto r = tts::generate_verify_refine(problem, s.generator, recording, s.refiner, cfg, 7, 4);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(r.rounds));
  for (const auto& e : r.log) {
    const auto& sc = seen.at(e.candidate_id);
    double sum = 0.0;
    for (const auto& [_, v] : sc) sum += v;
    means[static_cast<std::size_t>(e.round - 1)].push_back(sum / static_cast<double>(sc.size()));
  }
  c.require(r.rounds == 4, "scripted run did not use every round");
  c.require(r.selected_by_round == oracle::top_k_reference(means, 32), "selection differs from the sort oracle");
  const std::size_t bound = 128 + 3 * 32 * 4;
  c.require(r.generator_calls <= bound, "generator-call budget exceeded");

  const auto again = tts::generate_verify_refine(problem, s.generator, s.verifier, s.refiner, cfg, 7, 1);
  c.require(again.log == r.log, "round log differs across reruns");
  const auto mock = tts::make_mock_proof_stack();
  const auto m1 = tts::generate_verify_refine(problem, mock.generator, mock.verifier, mock.refiner, {}, 3, 1);
  const auto m2 = tts::generate_verify_refine(problem, mock.generator, mock.verifier, mock.refiner, {}, 3, 4);
  c.require(m1.log == m2.log, "mock round log differs across reruns");

  // A candidate verified at 1.0 first appears in round `target`; below-threshold means never stop.
  std::vector<int> stop_rounds;
  for (int target : {1, 2, 3}) {
    oracle::ScriptedProofStack t;
    t.verifier = [target](const tts::Problem&, const tts::ProofCandidate& cand, int, std::uint64_t) {
      const bool perfect = cand.round == target && cand.id % 7 == 3;
      return tts::VerificationAnalysis{0, 0, perfect ? 1.0 : 0.99998, 0.0, ""};
    };
    const auto run = tts::generate_verify_refine(problem, t.generator, t.verifier, t.refiner, cfg, 1);
    c.require(run.rounds == target && run.reached_threshold && run.best.mean_score() >= 0.99999,
              fmt::format("threshold met in round {} but stopped after {}", target, run.rounds));
    stop_rounds.push_back(run.rounds);
  }
  oracle::ScriptedProofStack below;
  below.verifier = [](const tts::Problem&, const tts::ProofCandidate&, int, std::uint64_t) {
    return tts::VerificationAnalysis{0, 0, 0.99998, 0.0, ""};
  };
  const auto never = tts::generate_verify_refine(problem, below.generator, below.verifier, below.refiner, cfg, 1);
  c.require(never.rounds == cfg.max_rounds && !never.reached_threshold, "stopped below the threshold");

  const double vals[] = {0.0, 0.5, 1.0};
  int multisets = 0;
  bool veto_ok = true;
  for (int n = 1; n <= 4; ++n) {
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
      std::vector<double> v;
      for (int i : idx) v.push_back(vals[i]);
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
      const bool zero = std::find(v.begin(), v.end(), 0.0) != v.end();
      veto_ok = veto_ok && tts::veto_mean(v) == (zero ? 0.0 : mean);
      ++multisets;
      int k = n - 1;
      while (k >= 0 && idx[static_cast<std::size_t>(k)] == 2) --k;
      if (k < 0) break;
      const int next = ++idx[static_cast<std::size_t>(k)];
      for (int j = k + 1; j < n; ++j) idx[static_cast<std::size_t>(j)] = next;
    }
  }
  c.require(veto_ok && multisets == 34, "veto_mean differs from enumeration");
  return c.outcome(fmt::format("top-32 matched the sort oracle over {} rounds, {} generator calls (bound {}), "
                               "threshold stops in rounds {}/{}/{}, {} veto multisets",
                               r.rounds, r.generator_calls, bound, stop_rounds[0], stop_rounds[1], stop_rounds[2], multisets));
}

Outcome contest_loop() {
  Checks c;
  const tts::ContestProblem problem{"c", "statement", {{"a", "n <= 10", 20.0}, {"b", "n <= 1e3", 30.0}, {"c", "n <= 1e6", 50.0}}};

  int max_offered = 0;
  const tts::CodeGenerator flood = [&](const tts::ContestProblem&, const tts::Subtask& s, const std::string&, int count, std::uint64_t) {
    max_offered = std::max(max_offered, count);
    std::vector<tts::CodeCandidate> out;
    for (int i = 0; i < 64; ++i) out.push_back({s.id + "#" + std::to_string(i), i == 50 ? 2.0 : i == 7 ? 1.0 : 0.0});
    return out;
  };
  const tts::ContestJudge never = [](const tts::ContestProblem&, const tts::Subtask&, const std::string& code) {
    return tts::JudgeResult{tts::Verdict::wrong_answer, code.ends_with("#50") ? 1.0 : 0.0};
  };
  const auto capped = tts::generate_select_submit(problem, flood, never, {}, 1);
  c.require(max_offered == 40, "generator was not asked for 40 candidates");
  c.require(capped.generated == 40 * capped.history.size(), "more than 40 candidates kept per round");
  c.require(std::all_of(capped.history.begin(), capped.history.end(), [](const auto& h) { return h.code.ends_with("#7"); }),
            "a candidate past the cap was submitted");
  c.require(capped.rounds == 50, "unsolved problem did not stop at 50 rounds");
  bool rejects = false;
  try {
    tts::generate_select_submit(problem, flood, never, {40, 51}, 1);
  } catch (const stage::ValidationError&) {
    rejects = true;
  }
  c.require(rejects, "more than 50 rounds accepted");

  Rng rng(4242);
  int replay_ok = 0;
  bool monotone = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int max_rounds = 1 + static_cast<int>(rng.below(50));
    oracle::ScriptedContest scripted{oracle::random_script(rng, problem, max_rounds), {}};
    const auto r = tts::generate_select_submit(problem, scripted.generator(), scripted.judge(), {40, max_rounds},
                                               static_cast<std::uint64_t>(trial));
    const auto expected = oracle::replay_contest(problem, scripted.script, max_rounds);
    replay_ok += r.history == expected.history && r.best_by_round == expected.best_by_round && r.rounds == expected.rounds;
    monotone = monotone && std::is_sorted(r.best_by_round.begin(), r.best_by_round.end());
  }
  const auto mock = tts::make_mock_contest_stack();
  const auto m = tts::generate_select_submit(problem, mock.generator, mock.judge, {}, 9);
  monotone = monotone && std::is_sorted(m.best_by_round.begin(), m.best_by_round.end());
  c.require(replay_ok == 100, fmt::format("{} of 100 scripts replayed", replay_ok));
  c.require(monotone, "best-score curve decreased");
  return c.outcome(fmt::format("cap 40/round and 50 rounds enforced; {}/100 scripts replayed; mock solved in {} rounds", replay_ok, m.rounds));
}

Outcome elo_module() {
  Checks c;
  Rng rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    elo::PenaltyModel model;
    if (trial % 2) model = {elo::PenaltyModel::Kind::additive, 0.1, 0.2, 5.0 + 20.0 * rng.uniform()};
    const double value = 1.0 + 99.0 * rng.uniform();
    const double p = rng.uniform();
    const double e = oracle::enumerate_expected_score(value, p, 8, model);
    worst = std::max(worst, std::abs(elo::expected_problem_score(value, p, 8, model) - e));
  }
  c.require(worst <= 1e-12, fmt::format("expected score error {:.3g}", worst));

  int rank_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    elo::ContestSpec spec;
    spec.style = trial % 2 ? elo::Style::icpc : elo::Style::points_with_penalty;
    std::vector<elo::Standing> rows(1 + rng.below(60));
    for (auto& s : rows) {
      s.score = static_cast<double>(rng.below(10));
      s.penalty = static_cast<double>(10 * rng.below(6));
    }
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      return elo::ranks_ahead(spec.style, a.score, a.penalty, b.score, b.penalty);
    });
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
    spec.standings = rows;
    const double score = static_cast<double>(rng.below(11));
    const double pen = static_cast<double>(10 * rng.below(6));
    rank_mismatch += elo::estimate_rank(spec, score, pen) != oracle::insertion_rank(spec, score, pen);
  }
  c.require(rank_mismatch == 0, fmt::format("{} rank mismatches", rank_mismatch));

  const auto contests = elo::synthetic_contests(50, 2026);
  const auto est = elo::evaluate_contests(contests);
  double grid_gap = 0.0;
  for (std::size_t i = 0; i < contests.size(); ++i)
    grid_gap = std::max(grid_gap, std::abs(est.contests[i].elo - oracle::grid_rating(est.contests[i].est_rank, contests[i].ratings)));
  c.require(grid_gap <= 1.0, fmt::format("bisection {:.3f} points from the grid", grid_gap));
  return c.outcome(fmt::format("score error {:.2g}, 1000 ranks matched, max grid gap {:.3f} over 50 contests (mean elo {:.0f})",
                               worst, grid_gap, est.rating));
}

Outcome pipeline_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = test::scratch_dir("acceptance_pipeline");
  std::ostringstream log, err;
  std::string metrics[2];
  nlohmann::json selections[2];
  Checks c;
  for (int i = 0; i < 2; ++i) {
    experiment::RunRequest req;
    req.mode = "train_pipeline";
    req.seed = 11;
    req.workers = i == 0 ? 1 : 3;
    req.out_dir = dir / std::to_string(i);
    const int code = experiment::run(req, log, err);
    c.require(code == 0, fmt::format("run {} exited {}: {}", i, code, err.str()));
    if (code != 0) return c.outcome("pipeline failed");
    metrics[i] = test::slurp(req.out_dir / "metrics.jsonl");
    selections[i] = nlohmann::json::parse(test::slurp(req.out_dir / "result.json")).at("teacher_selections");
  }
  std::size_t lines = std::count(metrics[0].begin(), metrics[0].end(), '\n');
  c.require(!metrics[0].empty() && metrics[0] == metrics[1], "metrics files differ");
  c.require(selections[0] == selections[1] && !selections[0].empty(), "teacher selections differ");
  return c.outcome(fmt::format("7 stages, {} metric lines byte-identical at 1 and 3 workers, teacher selections {} ({:.1f} s)", lines,
                               selections[0].dump(), seconds_since(t0)));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"C1", gradient_fidelity},   {"C2", on_policy_exactness}, {"C3", advantage_normalization},
      {"C4", filter_oracles},      {"C5", mopd_convergence},    {"C6", mopd_vs_grpo},
      {"C7", truncated_weights},   {"C8", tts_engine},          {"C9", contest_loop},
      {"C10", elo_module},         {"C11", pipeline_determinism}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    fmt::print("{} {} {} [{:.1f} s]\n", name, o.pass ? "PASS" : "FAIL", o.detail, seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
