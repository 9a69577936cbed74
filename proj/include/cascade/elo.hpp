#pragma once

// Simulated contest participation: expected scores under a per-problem attempt budget, rank
// against human standings, and a logistic performance rating.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/stage_config.hpp"

namespace cascade::elo {

struct PenaltyModel {
  enum class Kind { multiplicative, additive };
  Kind kind = Kind::multiplicative;
  /// multiplicative: value * max(floor, (1 - decrement)^(k-1)).
  double decrement = 0.1;
  /// Lowest fraction of the point value an eventual solve keeps, for both kinds.
  double floor = 0.3;
  /// additive: value - per_wrong * (k-1).
  double per_wrong = 50.0;

  /// Points awarded for a solve on attempt k (1-based).
  double operator()(double value, int k) const;
};

std::string_view to_string(PenaltyModel::Kind kind);

/// Sum over k of p (1-p)^(k-1) * penalty(value, k) for k = 1..n_attempts.
double expected_problem_score(double value, double p, int n_attempts = 8, const PenaltyModel& penalty = {});

/// Probability of solving within n attempts.
double solve_probability(double p, int n_attempts);

/// Expected number of wrong attempts that precede a solve (0 for unsolved outcomes).
double expected_wrong_before_solve(double p, int n_attempts);

enum class Style { points_with_penalty, icpc };
std::string_view to_string(Style style);

struct ProblemSpec {
  std::string label;
  /// Point value; icpc problems count 1 each and ignore it.
  double points = 1.0;
  /// Per-attempt solve probability of the simulated model.
  double solve_prob = 0.0;
};

struct Standing {
  int rank = 1;
  double score = 0.0;
  double penalty = 0.0;
};

struct MedalThresholds {
  double gold = 0.0;
  double silver = 0.0;
  double bronze = 0.0;
};

enum class Medal { gold, silver, bronze, none };
std::string_view to_string(Medal medal);
Medal classify_medal(double score, const MedalThresholds& thresholds);

struct ContestSpec {
  std::string id;
  Style style = Style::points_with_penalty;
  std::vector<ProblemSpec> problems;
  /// Sorted by the contest's comparison rule, best first.
  std::vector<Standing> standings;
  /// Ratings of the human field; empty when no rating is wanted.
  std::vector<double> ratings;
  int n_attempts = 8;
  PenaltyModel penalty;
  /// icpc: penalty points per wrong attempt before a solve.
  double icpc_wrong_penalty = 20.0;
  std::optional<MedalThresholds> medals;
};

std::vector<stage::FieldError> check_contest_spec(const ContestSpec& spec, const std::string& prefix = "contest");

/// True when `a` places strictly ahead of `b` under the style's rule.
bool ranks_ahead(Style style, double score_a, double penalty_a, double score_b, double penalty_b);

struct ExpectedResult {
  double score = 0.0;
  /// points style: expected points lost to wrong attempts; icpc: expected penalty.
  double penalty = 0.0;
};

ExpectedResult expected_contest_result(const ContestSpec& spec);

/// 1 + number of humans strictly ahead of the model; ties go to the model.
int estimate_rank(const ContestSpec& spec, double model_score, double model_penalty);

/// Expected number of opponents beaten at rating R under the logistic model.
double expected_wins(double rating, std::span<const double> opponents);

struct RatingInput {
  std::string contest_id;
  int est_rank = 1;
  /// Humans plus the model; est_rank lies in [1, field_size].
  int field_size = 1;
  std::vector<double> ratings;
  double score = 0.0;
  double penalty = 0.0;
};

/// The rating whose expected wins equal the smoothed beaten count
/// (field_size - est_rank + 0.5) * H / (H + 1) with H humans, by bisection to 1e-6.
double performance_rating(int est_rank, int field_size, std::span<const double> ratings);

struct ContestElo {
  std::string contest_id;
  double score = 0.0;
  double penalty = 0.0;
  int est_rank = 1;
  double elo = 0.0;
};

struct EloEstimate {
  std::vector<ContestElo> contests;
  /// Mean of the per-contest ratings.
  double rating = 0.0;
};

/// Throws NumericFault for non-finite ratings or when the expected-wins curve is not monotone on
/// the bracket; InvalidArgument for an out-of-range rank or inconsistent field size.
EloEstimate rank_to_elo(std::span<const RatingInput> contests);

/// Expected score, rank and performance rating for each contest, in input order.
EloEstimate evaluate_contests(std::span<const ContestSpec> contests, int workers = 0);

/// Deterministic points-style contests with a rated human field whose standings follow rating.
std::vector<ContestSpec> synthetic_contests(int count, std::uint64_t seed, int field = 200);

nlohmann::ordered_json to_json(const ContestSpec& spec);
ContestSpec contest_from_json(const nlohmann::json& j, const std::string& prefix,
                              std::vector<stage::FieldError>& errors);

/// One contest per non-blank line. Throws ValidationError naming the line of the first bad record.
std::vector<ContestSpec> read_contests(std::istream& in);
void write_contests(std::ostream& out, std::span<const ContestSpec> contests);

/// Plain-text table with columns contest, score, penalty, est_rank, elo and a closing mean row.
std::string format_table(const EloEstimate& estimate);

}  // namespace cascade::elo
