#include "cascade/elo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rng.hpp"
#include "json_reader.hpp"

namespace cascade::elo {

double PenaltyModel::operator()(double value, int k) const {
  const int wrong = k - 1;
  if (kind == Kind::additive) return std::max(floor * value, value - per_wrong * wrong);
  return value * std::max(floor, std::pow(1.0 - decrement, wrong));
}

std::string_view to_string(PenaltyModel::Kind kind) {
  return kind == PenaltyModel::Kind::additive ? "additive" : "multiplicative";
}

namespace {

void check_probability(double p, int n_attempts) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("solve probability must lie in [0, 1]");
  if (n_attempts < 1) throw InvalidArgument("n_attempts must be at least 1");
}

}  // namespace

double expected_problem_score(double value, double p, int n_attempts, const PenaltyModel& penalty) {
  check_probability(p, n_attempts);
  double sum = 0.0, miss = 1.0;
  for (int k = 1; k <= n_attempts; ++k) {
    sum += p * miss * penalty(value, k);
    miss *= 1.0 - p;
  }
  return sum;
}

double solve_probability(double p, int n_attempts) {
  check_probability(p, n_attempts);
  return 1.0 - std::pow(1.0 - p, n_attempts);
}

double expected_wrong_before_solve(double p, int n_attempts) {
  check_probability(p, n_attempts);
  double sum = 0.0, miss = 1.0;
  for (int k = 1; k <= n_attempts; ++k) {
    sum += p * miss * (k - 1);
    miss *= 1.0 - p;
  }
  return sum;
}

std::string_view to_string(Style style) { return style == Style::icpc ? "icpc" : "points_with_penalty"; }

std::string_view to_string(Medal medal) {
  switch (medal) {
    case Medal::gold: return "gold";
    case Medal::silver: return "silver";
    case Medal::bronze: return "bronze";
    case Medal::none: return "none";
  }
  return "none";
}

Medal classify_medal(double score, const MedalThresholds& t) {
  if (score >= t.gold) return Medal::gold;
  if (score >= t.silver) return Medal::silver;
  if (score >= t.bronze) return Medal::bronze;
  return Medal::none;
}

bool ranks_ahead(Style style, double score_a, double penalty_a, double score_b, double penalty_b) {
  if (score_a != score_b) return score_a > score_b;
  return style == Style::icpc && penalty_a < penalty_b;
}

std::vector<stage::FieldError> check_contest_spec(const ContestSpec& spec, const std::string& prefix) {
  std::vector<stage::FieldError> errors;
  const auto add = [&](const std::string& f, const std::string& msg) { errors.push_back({prefix + "." + f, msg}); };
  if (spec.id.empty()) add("id", "must not be empty");
  if (spec.n_attempts < 1) add("n_attempts", "must be at least 1");
  if (spec.problems.empty()) add("problems", "must not be empty");
  for (std::size_t i = 0; i < spec.problems.size(); ++i) {
    const auto& p = spec.problems[i];
    if (!(p.solve_prob >= 0.0 && p.solve_prob <= 1.0))
      add(fmt::format("problems[{}].p", i), "must lie in [0, 1]");
    if (!(std::isfinite(p.points) && p.points >= 0.0)) add(fmt::format("problems[{}].points", i), "must be non-negative");
  }
  if (spec.standings.empty()) add("standings", "must not be empty");
  for (std::size_t i = 1; i < spec.standings.size(); ++i) {
    const auto& a = spec.standings[i - 1];
    const auto& b = spec.standings[i];
    if (ranks_ahead(spec.style, b.score, b.penalty, a.score, a.penalty) || b.rank < a.rank) {
      add(fmt::format("standings[{}]", i), "standings are not sorted by the contest rule");
      break;
    }
  }
  for (std::size_t i = 0; i < spec.ratings.size(); ++i)
    if (!std::isfinite(spec.ratings[i])) add(fmt::format("ratings[{}]", i), "must be finite");
  if (!spec.ratings.empty() && spec.ratings.size() != spec.standings.size())
    add("ratings", "needs one rating per human standing");
  const auto& pm = spec.penalty;
  if (!(pm.decrement >= 0.0 && pm.decrement < 1.0)) add("penalty.decrement", "must lie in [0, 1)");
  if (!(pm.floor >= 0.0 && pm.floor <= 1.0)) add("penalty.floor", "must lie in [0, 1]");
  if (!(pm.per_wrong >= 0.0)) add("penalty.per_wrong", "must be non-negative");
  if (!(spec.icpc_wrong_penalty >= 0.0)) add("icpc_wrong_penalty", "must be non-negative");
  return errors;
}

ExpectedResult expected_contest_result(const ContestSpec& spec) {
  ExpectedResult r;
  for (const auto& p : spec.problems) {
    if (spec.style == Style::icpc) {
      r.score += solve_probability(p.solve_prob, spec.n_attempts);
      r.penalty += spec.icpc_wrong_penalty * expected_wrong_before_solve(p.solve_prob, spec.n_attempts);
    } else {
      const double got = expected_problem_score(p.points, p.solve_prob, spec.n_attempts, spec.penalty);
      r.score += got;
      r.penalty += p.points * solve_probability(p.solve_prob, spec.n_attempts) - got;
    }
  }
  return r;
}

int estimate_rank(const ContestSpec& spec, double model_score, double model_penalty) {
  if (spec.standings.empty()) throw InvalidArgument("estimate_rank needs human standings");
  // Standings are sorted, so the humans ahead form a prefix.
  const auto it = std::partition_point(spec.standings.begin(), spec.standings.end(), [&](const Standing& h) {
    return ranks_ahead(spec.style, h.score, h.penalty, model_score, model_penalty);
  });
  return static_cast<int>(it - spec.standings.begin()) + 1;
}

double expected_wins(double rating, std::span<const double> opponents) {
  double sum = 0.0;
  for (double r : opponents) sum += 1.0 / (1.0 + std::pow(10.0, (r - rating) / 400.0));
  return sum;
}

double performance_rating(int est_rank, int field_size, std::span<const double> ratings) {
  if (ratings.empty()) throw InvalidArgument("performance_rating needs at least one human rating");
  if (static_cast<std::size_t>(field_size) != ratings.size() + 1)
    throw InvalidArgument("field_size must equal the number of human ratings plus one");
  if (est_rank < 1 || est_rank > field_size) throw InvalidArgument("est_rank must lie in [1, field_size]");
  for (std::size_t i = 0; i < ratings.size(); ++i)
    if (!std::isfinite(ratings[i])) throw NumericFault("non-finite human rating", i);

  const double humans = static_cast<double>(ratings.size());
  const double target = (field_size - est_rank + 0.5) * humans / (humans + 1.0);
  const auto [mn, mx] = std::minmax_element(ratings.begin(), ratings.end());
  double lo = *mn - 4000.0, hi = *mx + 4000.0;
  double f_lo = expected_wins(lo, ratings) - target;
  double f_hi = expected_wins(hi, ratings) - target;
  if (!(f_lo < 0.0 && f_hi > 0.0)) throw NumericFault("expected wins do not bracket the beaten count", 0);
  std::size_t iter = 0;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    const double f = expected_wins(mid, ratings) - target;
    if (!std::isfinite(f)) throw NumericFault("non-finite expected wins", iter);
    if (f < 0.0) {
      if (f < f_lo) throw NumericFault("expected wins are not monotone in the rating", iter);
      lo = mid;
      f_lo = f;
    } else {
      if (f > f_hi) throw NumericFault("expected wins are not monotone in the rating", iter);
      hi = mid;
      f_hi = f;
    }
    ++iter;
  }
  return 0.5 * (lo + hi);
}

EloEstimate rank_to_elo(std::span<const RatingInput> contests) {
  EloEstimate out;
  double sum = 0.0;
  for (const auto& c : contests) {
    const double elo = performance_rating(c.est_rank, c.field_size, c.ratings);
    out.contests.push_back({c.contest_id, c.score, c.penalty, c.est_rank, elo});
    sum += elo;
  }
  if (!contests.empty()) out.rating = sum / static_cast<double>(contests.size());
  return out;
}

EloEstimate evaluate_contests(std::span<const ContestSpec> contests, int workers) {
  std::vector<RatingInput> inputs(contests.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(contests.size());
#pragma omp parallel for schedule(dynamic) num_threads(kernels::resolve_workers(workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& spec = contests[static_cast<std::size_t>(i)];
      if (auto errors = check_contest_spec(spec); !errors.empty()) throw stage::ValidationError(std::move(errors));
      if (spec.ratings.empty()) throw InvalidArgument("contest '" + spec.id + "' has no human ratings");
      const auto expected = expected_contest_result(spec);
      inputs[static_cast<std::size_t>(i)] = {spec.id,
                                             estimate_rank(spec, expected.score, expected.penalty),
                                             static_cast<int>(spec.standings.size()) + 1,
                                             spec.ratings,
                                             expected.score,
                                             expected.penalty};
    } catch (...) {
#pragma omp critical(cascade_elo_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return rank_to_elo(inputs);
}

std::vector<ContestSpec> synthetic_contests(int count, std::uint64_t seed, int field) {
  if (count < 0 || field < 1) throw InvalidArgument("synthetic_contests needs count >= 0 and field >= 1");
  std::vector<ContestSpec> out;
  for (int c = 0; c < count; ++c) {
    Rng rng(derive_seed(seed, {0xC0DE, static_cast<std::uint64_t>(c)}));
    ContestSpec spec;
    spec.id = fmt::format("synthetic-{}", c + 1);
    std::vector<double> difficulty;
    for (int i = 0; i < 6; ++i) {
      const double d = 1200.0 + 300.0 * i + 100.0 * rng.normal();
      difficulty.push_back(d);
      const double p = std::clamp(1.0 / (1.0 + std::pow(10.0, (d - 1900.0) / 400.0)), 0.02, 0.98);
      spec.problems.push_back({std::string(1, static_cast<char>('A' + i)), 500.0 * (i + 1), p});
    }
    // Each human solves a problem when a rating-driven draw beats its difficulty.
    struct Human {
      double rating;
      double score;
    };
    std::vector<Human> humans;
    for (int h = 0; h < field; ++h) {
      const double rating = 1600.0 + 350.0 * rng.normal();
      double score = 0.0;
      for (std::size_t i = 0; i < spec.problems.size(); ++i) {
        const double p = 1.0 / (1.0 + std::pow(10.0, (difficulty[i] - rating) / 400.0));
        if (rng.uniform() < p) score += spec.penalty(spec.problems[i].points, 1 + static_cast<int>(rng.below(3)));
      }
      humans.push_back({rating, score});
    }
    std::stable_sort(humans.begin(), humans.end(), [](const Human& a, const Human& b) { return a.score > b.score; });
    for (std::size_t h = 0; h < humans.size(); ++h) {
      const bool tied = h > 0 && humans[h].score == humans[h - 1].score;
      spec.standings.push_back({tied ? spec.standings.back().rank : static_cast<int>(h) + 1, humans[h].score, 0.0});
      spec.ratings.push_back(humans[h].rating);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

nlohmann::ordered_json to_json(const ContestSpec& spec) {
  nlohmann::ordered_json j;
  j["id"] = spec.id;
  j["style"] = to_string(spec.style);
  j["n_attempts"] = spec.n_attempts;
  j["penalty"] = {{"kind", to_string(spec.penalty.kind)},
                  {"decrement", spec.penalty.decrement},
                  {"floor", spec.penalty.floor},
                  {"per_wrong", spec.penalty.per_wrong}};
  j["icpc_wrong_penalty"] = spec.icpc_wrong_penalty;
  j["problems"] = nlohmann::ordered_json::array();
  for (const auto& p : spec.problems)
    j["problems"].push_back({{"label", p.label}, {"points", p.points}, {"p", p.solve_prob}});
  j["standings"] = nlohmann::ordered_json::array();
  for (const auto& s : spec.standings)
    j["standings"].push_back({{"rank", s.rank}, {"score", s.score}, {"penalty", s.penalty}});
  j["ratings"] = spec.ratings;
  if (spec.medals)
    j["medals"] = {{"gold", spec.medals->gold}, {"silver", spec.medals->silver}, {"bronze", spec.medals->bronze}};
  return j;
}

ContestSpec contest_from_json(const nlohmann::json& j, const std::string& prefix,
                              std::vector<stage::FieldError>& errors) {
  ContestSpec spec;
  detail::ObjectReader r(j, prefix, errors);
  r.read("id", spec.id);
  r.read_enum("style", spec.style, [](const std::string& s) {
    if (s == "icpc") return Style::icpc;
    if (s == "points_with_penalty") return Style::points_with_penalty;
    throw InvalidArgument("unknown contest style '" + s + "'");
  });
  r.read("n_attempts", spec.n_attempts);
  r.read("icpc_wrong_penalty", spec.icpc_wrong_penalty);
  if (const auto* pen = r.find("penalty")) {
    detail::ObjectReader pr(*pen, r.path("penalty"), errors);
    pr.read_enum("kind", spec.penalty.kind, [](const std::string& s) {
      if (s == "additive") return PenaltyModel::Kind::additive;
      if (s == "multiplicative") return PenaltyModel::Kind::multiplicative;
      throw InvalidArgument("unknown penalty kind '" + s + "'");
    });
    pr.read("decrement", spec.penalty.decrement);
    pr.read("floor", spec.penalty.floor);
    pr.read("per_wrong", spec.penalty.per_wrong);
    pr.reject_unknown();
  }
  const auto read_array = [&](const char* key, auto&& each) {
    const auto* v = r.find(key);
    if (!v) return;
    if (!v->is_array()) return r.fail(key, "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) each((*v)[i], fmt::format("{}[{}]", r.path(key), i));
  };
  read_array("problems", [&](const nlohmann::json& e, const std::string& path) {
    ProblemSpec p;
    detail::ObjectReader er(e, path, errors);
    er.read("label", p.label);
    er.read("points", p.points);
    er.read("p", p.solve_prob);
    er.reject_unknown();
    spec.problems.push_back(std::move(p));
  });
  read_array("standings", [&](const nlohmann::json& e, const std::string& path) {
    Standing s;
    detail::ObjectReader er(e, path, errors);
    er.read("rank", s.rank);
    er.read("score", s.score);
    er.read("penalty", s.penalty);
    er.reject_unknown();
    spec.standings.push_back(s);
  });
  read_array("ratings", [&](const nlohmann::json& e, const std::string& path) {
    if (e.is_number()) spec.ratings.push_back(e.get<double>());
    else errors.push_back({path, "expected a number"});
  });
  if (const auto* m = r.find("medals")) {
    MedalThresholds t;
    detail::ObjectReader mr(*m, r.path("medals"), errors);
    mr.read("gold", t.gold);
    mr.read("silver", t.silver);
    mr.read("bronze", t.bronze);
    mr.reject_unknown();
    spec.medals = t;
  }
  r.reject_unknown();
  return spec;
}

std::vector<ContestSpec> read_contests(std::istream& in) {
  std::vector<ContestSpec> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string prefix = fmt::format("line {}", lineno);
    std::vector<stage::FieldError> errors;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw stage::ValidationError(prefix, "malformed JSON");
    auto spec = contest_from_json(j, prefix, errors);
    auto more = check_contest_spec(spec, prefix);
    errors.insert(errors.end(), more.begin(), more.end());
    if (!errors.empty()) throw stage::ValidationError(std::move(errors));
    out.push_back(std::move(spec));
  }
  return out;
}

void write_contests(std::ostream& out, std::span<const ContestSpec> contests) {
  for (const auto& c : contests) out << to_json(c).dump() << '\n';
}

std::string format_table(const EloEstimate& e) {
  std::size_t width = 7;
  for (const auto& c : e.contests) width = std::max(width, c.contest_id.size());
  std::string out = fmt::format("{:<{}}  {:>10}  {:>10}  {:>8}  {:>8}\n", "contest", width, "score", "penalty",
                                "est_rank", "elo");
  for (const auto& c : e.contests)
    out += fmt::format("{:<{}}  {:>10.2f}  {:>10.2f}  {:>8}  {:>8.0f}\n", c.contest_id, width, c.score, c.penalty,
                       c.est_rank, c.elo);
  out += fmt::format("{:<{}}  {:>10}  {:>10}  {:>8}  {:>8.0f}\n", "mean", width, "", "", "", e.rating);
  return out;
}

}  // namespace cascade::elo
