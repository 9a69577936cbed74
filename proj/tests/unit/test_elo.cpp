#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "cascade/elo.hpp"
#include "cascade/errors.hpp"
#include "cascade/rng.hpp"
#include "oracles.hpp"

using namespace cascade;
using namespace cascade::elo;

using oracle::enumerate_expected_score;
using oracle::insertion_rank;

TEST_CASE("expected problem score") {
  CHECK(expected_problem_score(100.0, 1.0) == 100.0);
  CHECK(expected_problem_score(100.0, 0.0) == 0.0);
  CHECK(solve_probability(0.5, 8) == 0.99609375);
  CHECK(solve_probability(0.0, 8) == 0.0);
  CHECK(expected_wrong_before_solve(1.0, 8) == 0.0);
  CHECK_THROWS_AS(expected_problem_score(1.0, 1.5), InvalidArgument);
  CHECK_THROWS_AS(expected_problem_score(1.0, 0.5, 0), InvalidArgument);

  const PenaltyModel mult{};
  const PenaltyModel add{PenaltyModel::Kind::additive, 0.1, 0.3, 7.0};
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double value = 1.0 + 99.0 * rng.uniform();
    const double p = rng.uniform();
    const int n = 1 + static_cast<int>(rng.below(8));
    for (const auto& model : {mult, add}) {
      const double e = enumerate_expected_score(value, p, n, model);
      CHECK(std::abs(expected_problem_score(value, p, n, model) - e) <= 1e-12 * std::max(1.0, e));
    }
  }

  for (const auto& model : {mult, add}) {
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      const double v = expected_problem_score(100.0, i / 100.0, 8, model);
      CHECK(v >= prev);
      prev = v;
    }
    prev = -1.0;
    for (int v = 0; v <= 500; v += 25) {
      const double s = expected_problem_score(v, 0.3, 8, model);
      CHECK(s >= prev);
      prev = s;
    }
  }
}

TEST_CASE("rank estimation against an insertion oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    ContestSpec c;
    c.id = "t";
    c.style = rng.below(2) ? Style::icpc : Style::points_with_penalty;
    std::vector<Standing> rows(1 + rng.below(40));
    for (auto& s : rows) {
      s.score = static_cast<double>(rng.below(8));
      s.penalty = static_cast<double>(rng.below(5) * 10);
    }
    std::stable_sort(rows.begin(), rows.end(), [&](const Standing& a, const Standing& b) {
      return ranks_ahead(c.style, a.score, a.penalty, b.score, b.penalty);
    });
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
    c.standings = rows;
    const double score = static_cast<double>(rng.below(9));
    const double pen = static_cast<double>(rng.below(5) * 10);
    CHECK(estimate_rank(c, score, pen) == insertion_rank(c, score, pen));
    CHECK(estimate_rank(c, 100.0, 0.0) == 1);
    for (double s = 0.0; s < 9.0; s += 1.0) CHECK(estimate_rank(c, s + 1.0, pen) <= estimate_rank(c, s, pen));
  }

  ContestSpec ioi;
  ioi.standings = {{1, 500.0, 0.0}, {2, 439.28, 0.0}, {3, 300.0, 0.0}};
  CHECK(estimate_rank(ioi, 439.28, 0.0) == 2);
  const MedalThresholds t{400.0, 330.0, 250.0};
  CHECK(classify_medal(439.28, t) == Medal::gold);
  CHECK(classify_medal(330.0, t) == Medal::silver);
  CHECK(classify_medal(260.0, t) == Medal::bronze);
  CHECK(classify_medal(10.0, t) == Medal::none);
}

TEST_CASE("performance rating") {
  const std::vector<double> flat(50, 1500.0);
  CHECK(performance_rating(1, 51, flat) > 1500.0);

  std::vector<double> symmetric;
  for (int i = 0; i < 100; ++i) symmetric.push_back(1000.0 + 10.0 * i + (i >= 50 ? 10.0 : 0.0));
  double mean = 0.0;
  for (double x : symmetric) mean += x / 100.0;
  CHECK(std::abs(performance_rating(51, 101, symmetric) - mean) <= 1.0);

  double prev = std::numeric_limits<double>::infinity();
  for (int r = 1; r <= 101; ++r) {
    const double e = performance_rating(r, 101, symmetric);
    CHECK(e < prev);
    prev = e;
  }

  std::vector<double> bad = flat;
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(performance_rating(1, 51, bad), NumericFault);
  const RatingInput nan_input{"x", 1, 51, bad, 0, 0};
  CHECK_THROWS_AS(rank_to_elo(std::span(&nan_input, 1)), NumericFault);
  CHECK_THROWS_AS(performance_rating(0, 51, flat), InvalidArgument);
  CHECK_THROWS_AS(performance_rating(1, 50, flat), InvalidArgument);
}

TEST_CASE("bisection agrees with a brute-force rating grid on synthetic contests") {
  const auto contests = synthetic_contests(50, 9);
  REQUIRE(contests.size() == 50);
  const auto est = evaluate_contests(contests, 2);
  REQUIRE(est.contests.size() == 50);
  double sum = 0.0;
  for (std::size_t i = 0; i < contests.size(); ++i) {
    const auto& c = contests[i];
    const auto& e = est.contests[i];
    const int field = static_cast<int>(c.ratings.size()) + 1;
    const double best = oracle::grid_rating(e.est_rank, c.ratings);
    CAPTURE(i);
    CHECK(std::abs(e.elo - best) <= 1.0);
    CHECK(e.est_rank >= 1);
    CHECK(e.est_rank <= field);
    sum += e.elo;
  }
  CHECK(est.rating == doctest::Approx(sum / 50.0).epsilon(1e-12));
  CHECK(evaluate_contests(contests, 1).rating == est.rating);
}

TEST_CASE("contest records round-trip through JSONL") {
  const auto contests = synthetic_contests(3, 1, 20);
  std::stringstream io;
  write_contests(io, contests);
  const auto back = read_contests(io);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(to_json(back[i]) == to_json(contests[i]));

  std::istringstream broken("\n" + to_json(contests[0]).dump() + "\n{\"id\": 3}\n");
  try {
    read_contests(broken);
    FAIL("expected ValidationError");
  } catch (const stage::ValidationError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(format_table(evaluate_contests(contests)).find("mean") != std::string::npos);
}
