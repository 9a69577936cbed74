#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cascade/envs.hpp"
#include "cascade/errors.hpp"
#include "cascade/rewards.hpp"
#include "oracles.hpp"

using namespace cascade;
using namespace cascade::rewards;

namespace {

RolloutGroup group_of(std::vector<double> rewards, std::vector<bool> completed = {}) {
  RolloutGroup g;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    policy::Rollout r;
    r.response = {1, 2, 3};
    r.inf_logprobs = {-0.1, -0.2, -0.3};
    r.valid_mask = {1, 1, 1};
    r.completed = completed.empty() ? true : completed[i];
    g.rollouts.push_back(r);
  }
  g.rewards = std::move(rewards);
  return g;
}

}  // namespace

TEST_CASE("apply_overlong examples") {
  const auto g = group_of({1.0, 1.0}, {false, true});
  const auto z = apply_overlong(g, OverlongMode::zero_reward);
  CHECK(z.rewards == std::vector<double>{0.0, 1.0});
  CHECK(z.rollouts[0].valid_mask == g.rollouts[0].valid_mask);

  const auto f = apply_overlong(g, OverlongMode::filter);
  CHECK(f.rewards == g.rewards);
  CHECK(f.rollouts[0].valid_mask == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(f.rollouts[0].valid_count() == 0);
  CHECK(f.rollouts[1].valid_mask == g.rollouts[1].valid_mask);

  const auto o = apply_overlong(g, OverlongMode::off);
  CHECK(o.rewards == g.rewards);
  CHECK(o.rollouts[0].valid_mask == g.rollouts[0].valid_mask);
  CHECK(parse_overlong_mode(to_string(OverlongMode::filter)) == OverlongMode::filter);
}

TEST_CASE("dynamic_filter examples and strictness") {
  std::vector<RolloutGroup> gs{group_of({1, 1, 1, 1}), group_of({0, 0, 0, 0}), group_of({1, 0, 1, 0})};
  const auto kept = dynamic_filter(gs);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].rewards == std::vector<double>{1, 0, 1, 0});
  CHECK_THROWS_AS(dynamic_filter({group_of({0.5, 1})}), InvalidArgument);
  CHECK(dynamic_filter({group_of({0.5, 1})}, false).empty());
  CHECK(dynamic_filter({group_of({0, 0.5, 1})}, false).size() == 1);
}

TEST_CASE("threshold_mask examples") {
  const auto out = threshold_mask({group_of({0.4, 0.1}), group_of({1.0, 0.0}), group_of({0.5, 0.5})});
  CHECK(out[0].loss_masked);
  CHECK_FALSE(out[1].loss_masked);
  CHECK(out[2].loss_masked);
  CHECK(out[0].rewards == std::vector<double>{0.4, 0.1});
  CHECK(threshold_mask({group_of({0, 0})}, 0.0)[0].loss_masked);
}

TEST_CASE("filters match brute-force oracles on random groups") {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<RolloutGroup> gs;
    for (int i = 0; i < 6; ++i) gs.push_back(oracle::random_group(rng, true));
    const auto keep = oracle::dynamic_filter_indices(gs);
    const auto kept = dynamic_filter(gs);
    REQUIRE(kept.size() == keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) CHECK(kept[k].rewards == gs[keep[k]].rewards);

    std::vector<RolloutGroup> cont;
    for (int i = 0; i < 6; ++i) cont.push_back(oracle::random_group(rng, false));
    const auto masked = threshold_mask(cont, 0.5);
    for (std::size_t i = 0; i < cont.size(); ++i) CHECK(masked[i].loss_masked == oracle::threshold_masked(cont[i], 0.5));

    for (auto mode : {OverlongMode::off, OverlongMode::zero_reward, OverlongMode::filter}) {
      std::vector<double> r;
      std::vector<std::vector<std::uint8_t>> m;
      oracle::overlong_reference(cont[0], mode, r, m);
      const auto out = apply_overlong(cont[0], mode);
      CHECK(out.rewards == r);
      for (std::size_t i = 0; i < m.size(); ++i) CHECK(out.rollouts[i].valid_mask == m[i]);
    }
  }
}

TEST_CASE("preference rewards") {
  SUBCASE("a dominant rollout with full helpfulness scores 1 plus its bonus") {
    auto g = group_of({0, 0, 0});
    g.rollouts[0].response = {1, 0};
    const PairJudge judge = [](const RolloutGroup&, std::size_t i, std::size_t j) {
      JudgeVerdict v;
      const auto score = [](std::size_t k) { return k == 0 ? 10.0 : 4.0; };
      v.helpfulness_first = score(i);
      v.helpfulness_second = score(j);
      v.winner = i == 0 ? JudgeVerdict::Winner::first : j == 0 ? JudgeVerdict::Winner::second : JudgeVerdict::Winner::tie;
      return v;
    };
    const auto r = preference_rewards(g, judge, {0.1, 0.05, 8});
    CHECK(r[0] == doctest::Approx(1.0 + 0.1 * (1.0 - 2.0 / 8.0)));
    CHECK(r[1] == doctest::Approx(0.5 * 0.25 + 0.5 * 0.4));
    CHECK(r[1] == r[2]);
  }

  SUBCASE("identical rollouts tie") {
    const auto g = group_of({0, 0, 0, 0});
    const auto r = preference_rewards(g, make_mock_judge(), {0.1, 0.05, 8});
    for (double x : r) CHECK(x == r[0]);
  }

  SUBCASE("the longest top-quality rollout gets the smallest bonus") {
    auto g = group_of({0, 0, 0});
    g.rollouts[0].response = {1, 2, 3, 4, 5, 6};
    g.rollouts[1].response = {1, 2};
    g.rollouts[2].response = {1, 2, 3, 4};
    const auto r = preference_rewards(g, make_mock_judge(), {0.1, 0.05, 8});
    CHECK(r[0] < r[2]);
    CHECK(r[2] < r[1]);
  }

  SUBCASE("the bonus only goes to the quality-gated set") {
    envs::Task t{"m", envs::Domain::math, {2, 3, envs::tokens::marker(envs::Domain::math)}, {{4}, -1, -1}};
    auto g = group_of({0, 0});
    g.task = t;
    g.rollouts[0].response = {4, 0};
    g.rollouts[1].response = {5};
    const auto r = preference_rewards(g, make_mock_judge(), {0.1, 0.05, 4});
    CHECK(r[0] == doctest::Approx(0.5 * 1.0 + 0.5 * 0.9 + 0.1 * 0.5));
    CHECK(r[1] == doctest::Approx(0.5 * 0.0 + 0.5 * 0.3));
  }

  SUBCASE("permuting the group permutes the rewards") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      auto g = oracle::random_group(rng, false, 6);
      if (g.size() < 2) continue;
      const auto r = preference_rewards(g, make_mock_judge(), {0.1, 0.05, 6});
      std::vector<std::size_t> perm(g.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::reverse(perm.begin(), perm.end());
      std::swap(perm[0], perm[perm.size() / 2]);
      RolloutGroup h = g;
      for (std::size_t i = 0; i < perm.size(); ++i) h.rollouts[i] = g.rollouts[perm[i]];
      const auto rp = preference_rewards(h, make_mock_judge(), {0.1, 0.05, 6});
      for (std::size_t i = 0; i < perm.size(); ++i) CHECK(rp[i] == doctest::Approx(r[perm[i]]).epsilon(1e-14));
    }
  }

  CHECK_THROWS_AS(preference_rewards(group_of({1}), make_mock_judge(), {}), InvalidArgument);
}

TEST_CASE("difficulty filter") {
  const auto make = [](int pass, int total, std::size_t i) {
    DifficultyInstance d;
    d.task.task_id = "t" + std::to_string(i);
    d.pass_count = pass;
    d.total = total;
    return d;
  };
  const std::vector<DifficultyInstance> three{make(16, 16, 0), make(5, 16, 1), make(0, 16, 2)};
  const auto kept = difficulty_filter(three, 0.0, 1);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].task_id == "t1");
  CHECK(difficulty_filter(three, 1.0, 1).size() == 2);

  std::vector<DifficultyInstance> zeros;
  for (std::size_t i = 0; i < 10000; ++i) zeros.push_back(make(0, 16, i));
  const auto survivors = difficulty_filter(zeros, 0.1, 42);
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  CHECK(std::abs(static_cast<double>(survivors.size()) - 1000.0) <= 3.0 * sigma);
  CHECK(difficulty_filter(zeros, 0.1, 42) == survivors);

  Rng rng(8);
  std::vector<DifficultyInstance> mixed;
  for (std::size_t i = 0; i < 2000; ++i) {
    const int total = 1 + static_cast<int>(rng.below(16));
    mixed.push_back(make(static_cast<int>(rng.below(static_cast<std::uint64_t>(total) + 1)), total, i));
  }
  std::vector<std::string> ids;
  for (const auto& t : difficulty_filter(mixed, 0.1, 5)) ids.push_back(t.task_id);
  CHECK(ids == oracle::difficulty_reference(mixed, 0.1, 5));

  const std::vector<DifficultyInstance> bad{make(3, 2, 0)};
  CHECK_THROWS_AS(difficulty_filter(bad, 0.1, 1), InvalidArgument);
}

TEST_CASE("verification dispatch is order independent and isolates faults") {
  const envs::EnvRegistry reg(0);
  const auto tasks = envs::make_blend(reg, {{envs::Domain::code, 1.0}, {envs::Domain::math, 1.0}}, 128, 3);
  const auto p = envs::make_initial_policy(tasks, {.answer_bias = 2.0});
  std::vector<policy::Rollout> rollouts;
  std::vector<VerificationJob> jobs;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::uint64_t j = 0; j < 16; ++j) rollouts.push_back(policy::sample_response(p, tasks[i].prompt, 4, {}, derive_seed(2, {i, j})));
  for (std::size_t k = 0; k < rollouts.size(); ++k) jobs.push_back({&tasks[k / 16], rollouts[k].response, k % 16});
  REQUIRE(jobs.size() == kDefaultVerificationBatch);

  const auto serial = dispatch_verification(jobs, 1);
  REQUIRE(serial.size() == 2048);
  for (std::size_t k = 0; k < jobs.size(); ++k) CHECK(serial[k] == envs::verify(*jobs[k].task, jobs[k].response));
  CHECK(dispatch_verification(jobs, 2) == serial);
  CHECK(dispatch_verification(jobs, 8) == serial);
  const double solved = std::accumulate(serial.begin(), serial.end(), 0.0);
  CHECK(solved > 0.0);
  CHECK(solved < 2048.0);

  const Verifier faulty = [&](const envs::Task& t, std::span<const policy::TokenId> r) -> double {
    if (&t == jobs[100].task && r.data() == jobs[100].response.data()) throw std::runtime_error("sandbox crashed");
    if (&t == jobs[7].task && r.data() == jobs[7].response.data()) return std::nan("");
    return envs::verify(t, r);
  };
  std::ostringstream sink;
  FaultLog log(&sink);
  const auto faulted = dispatch_verification(jobs, 8, faulty, &log);
  for (std::size_t k = 0; k < jobs.size(); ++k) CHECK(faulted[k] == (k == 100 || k == 7 ? 0.0 : serial[k]));
  const auto records = log.records();
  REQUIRE(records.size() == 2);
  CHECK(records[0].task_id == jobs[7].task->task_id);
  CHECK(records[1].fault.find("sandbox crashed") != std::string::npos);
  CHECK(records[1].rollout_index == jobs[100].rollout_index);
  const std::string lines = sink.str();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);
}
