#include "cascade/tts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rng.hpp"
#include "json_reader.hpp"

namespace cascade::tts {

double veto_mean(std::span<const double> scores) {
  if (scores.empty()) throw InvalidArgument("veto_mean needs at least one score");
  double sum = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0)) throw InvalidArgument("veto_mean scores must be non-negative");
    if (s == 0.0) return 0.0;
    sum += s;
  }
  return sum / static_cast<double>(scores.size());
}

std::vector<stage::FieldError> check_tts(const TtsConfig& c, const std::string& prefix) {
  std::vector<stage::FieldError> errors;
  const auto add = [&](const char* f, const char* msg) {
    errors.push_back({prefix.empty() ? std::string(f) : prefix + "." + f, msg});
  };
  if (c.n_generations < 1) add("n_generations", "must be at least 1");
  if (c.n_verifications < 1) add("n_verifications", "must be at least 1");
  if (c.top_k < 1) add("top_k", "must be at least 1");
  if (c.top_k > c.n_generations) add("top_k", "must not exceed n_generations");
  if (c.n_analyses < 1) add("n_analyses", "must be at least 1");
  if (c.n_refined < 1) add("n_refined", "must be at least 1");
  if (c.max_rounds < 1) add("max_rounds", "must be at least 1");
  if (!std::isfinite(c.stop_threshold)) add("stop_threshold", "must be finite");
  return errors;
}

nlohmann::ordered_json to_json(const TtsConfig& c) {
  return {{"n_generations", c.n_generations}, {"n_verifications", c.n_verifications},
          {"top_k", c.top_k},                 {"n_analyses", c.n_analyses},
          {"n_refined", c.n_refined},         {"max_rounds", c.max_rounds},
          {"stop_threshold", c.stop_threshold}};
}

TtsConfig tts_from_json(const nlohmann::json& j, const std::string& prefix,
                        std::vector<stage::FieldError>& errors) {
  TtsConfig c;
  detail::ObjectReader r(j, prefix, errors);
  r.read("n_generations", c.n_generations);
  r.read("n_verifications", c.n_verifications);
  r.read("top_k", c.top_k);
  r.read("n_analyses", c.n_analyses);
  r.read("n_refined", c.n_refined);
  r.read("max_rounds", c.max_rounds);
  r.read("stop_threshold", c.stop_threshold);
  r.reject_unknown();
  return c;
}

double ProofCandidate::mean_score() const {
  if (scores.empty()) return 0.0;
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

nlohmann::ordered_json to_json(const RoundLogEntry& e) {
  nlohmann::ordered_json j;
  j["round"] = e.round;
  j["candidate_id"] = e.candidate_id;
  j["parent_id"] = e.parent_id ? nlohmann::ordered_json(*e.parent_id) : nlohmann::ordered_json(nullptr);
  j["mean_score"] = e.mean_score;
  j["selected"] = e.selected;
  return j;
}

std::vector<std::size_t> select_top_k(std::span<const ProofCandidate> candidates, int k) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> means(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) means[i] = candidates[i].mean_score();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
  order.resize(std::min(order.size(), static_cast<std::size_t>(std::max(k, 0))));
  return order;
}

std::vector<VerificationAnalysis> lowest_rated(std::span<const VerificationAnalysis> analyses, int n) {
  std::vector<VerificationAnalysis> out(analyses.begin(), analyses.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const VerificationAnalysis& a, const VerificationAnalysis& b) { return a.rating < b.rating; });
  out.resize(std::min(out.size(), static_cast<std::size_t>(std::max(n, 0))));
  return out;
}

namespace {

// Runs fn(i) for i in [0, n) on a worker team and rethrows the first exception afterwards.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  std::exception_ptr error;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::resolve_workers(workers))
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(cascade_tts_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

GvrResult generate_verify_refine(const Problem& problem, const ProofGenerator& generator,
                                 const ProofVerifier& verifier, const ProofRefiner& refiner,
                                 const TtsConfig& config, std::uint64_t seed, int workers) {
  if (auto errors = check_tts(config); !errors.empty()) throw stage::ValidationError(std::move(errors));
  GvrResult result;
  std::uint64_t next_id = 0;

  std::vector<ProofCandidate> candidates;
  auto fresh = generator(problem, config.n_generations, derive_seed(seed, {0x6E4, 1}));
  if (fresh.size() > static_cast<std::size_t>(config.n_generations)) fresh.resize(static_cast<std::size_t>(config.n_generations));
  if (fresh.empty()) throw PipelineFault("proof generator produced no candidates for " + problem.id);
  for (auto& p : fresh) candidates.push_back({problem.id, next_id++, std::nullopt, std::move(p), 1, {}});
  result.generator_calls += candidates.size();

  bool have_best = false;
  for (int round = 1;; ++round) {
    const auto nv = static_cast<std::size_t>(config.n_verifications);
    std::vector<VerificationAnalysis> analyses(candidates.size() * nv);
    parallel_for(analyses.size(), workers, [&](std::size_t k) {
      const auto& c = candidates[k / nv];
      const int j = static_cast<int>(k % nv);
      VerificationAnalysis a = verifier(problem, c, j, derive_seed(seed, {0x7E1, static_cast<std::uint64_t>(round), c.id, static_cast<std::uint64_t>(j)}));
      if (!(a.score >= 0.0 && a.score <= 1.0) || !std::isfinite(a.rating))
        throw PipelineFault("verifier returned an out-of-range analysis for candidate " + std::to_string(c.id));
      a.candidate_id = c.id;
      a.index = j;
      analyses[k] = std::move(a);
    });
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::size_t j = 0; j < nv; ++j) candidates[i].scores.push_back(analyses[i * nv + j].score);

    bool reached = false;
    for (const auto& c : candidates) {
      const double m = c.mean_score();
      if (!have_best || m > result.best.mean_score()) {
        result.best = c;
        have_best = true;
      }
      reached = reached || m >= config.stop_threshold;
    }
    result.best_by_round.push_back(result.best.mean_score());
    result.rounds = round;

    const bool last = reached || round == config.max_rounds;
    std::vector<std::size_t> selected;
    if (!last) selected = select_top_k(candidates, config.top_k);
    result.selected_by_round.push_back(selected);
    std::vector<bool> is_selected(candidates.size(), false);
    for (std::size_t i : selected) is_selected[i] = true;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      result.log.push_back({round, candidates[i].id, candidates[i].parent, candidates[i].mean_score(), is_selected[i]});
    if (last) {
      result.reached_threshold = reached;
      break;
    }

    std::vector<std::vector<std::string>> refined(selected.size());
    parallel_for(selected.size(), workers, [&](std::size_t s) {
      const auto& c = candidates[selected[s]];
      const auto own = std::span(analyses).subspan(selected[s] * nv, nv);
      const auto chosen = lowest_rated(own, config.n_analyses);
      refined[s] = refiner(problem, c, chosen, config.n_refined,
                           derive_seed(seed, {0x4EF, static_cast<std::uint64_t>(round), c.id}));
      if (refined[s].size() > static_cast<std::size_t>(config.n_refined))
        refined[s].resize(static_cast<std::size_t>(config.n_refined));
    });
    std::vector<ProofCandidate> next;
    for (std::size_t s = 0; s < selected.size(); ++s)
      for (auto& p : refined[s])
        next.push_back({problem.id, next_id++, candidates[selected[s]].id, std::move(p), round + 1, {}});
    if (next.empty()) throw PipelineFault("refiner produced no candidates in round " + std::to_string(round));
    result.generator_calls += next.size();
    candidates = std::move(next);
  }
  return result;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::accepted: return "Accepted";
    case Verdict::partial: return "Partially Correct";
    case Verdict::wrong_answer: return "Wrong Answer";
    case Verdict::time_limit_exceeded: return "Time Limit Exceeded";
    case Verdict::runtime_error: return "Runtime Error";
    case Verdict::compile_error: return "Compilation Error";
    case Verdict::judge_fault: return "Judge Fault";
  }
  return "Judge Fault";
}

nlohmann::ordered_json to_json(const SubmissionRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["subtask_id"] = r.subtask_id;
  j["verdict"] = to_string(r.verdict);
  j["score"] = r.score;
  j["code"] = r.code;
  return j;
}

std::vector<stage::FieldError> check_contest(const ContestConfig& c, const std::string& prefix) {
  std::vector<stage::FieldError> errors;
  if (c.candidates_per_round < 1 || c.candidates_per_round > 40)
    errors.push_back({prefix + ".candidates_per_round", "must be in [1, 40]"});
  if (c.max_rounds < 1 || c.max_rounds > 50) errors.push_back({prefix + ".max_rounds", "must be in [1, 50]"});
  return errors;
}

std::string assemble_prompt(const ContestProblem& problem, const Subtask& subtask,
                            std::span<const SubmissionRecord> history,
                            const std::map<std::string, std::string>& accepted_code) {
  constexpr std::string_view kRule = "=======================\n";
  std::string out = "Solve the problem and answer with the solution code.\n\n";
  out += problem.statement + "\n\n## Constraints:\n" + subtask.constraints + "\n";

  bool any_sibling = false;
  for (const auto& sibling : problem.subtasks) {
    if (sibling.id == subtask.id) continue;
    auto it = accepted_code.find(sibling.id);
    if (it == accepted_code.end()) continue;
    if (!any_sibling) out += "\nAccepted solutions for other constraints, for reference:\n";
    any_sibling = true;
    out += kRule;
    out += "## Different Constraints (for reference only):\n" + sibling.constraints + "\n";
    out += "### Accepted Code:\n" + it->second + "\n";
  }
  if (any_sibling) out += kRule;

  bool any_incorrect = false;
  for (const auto& r : history) {
    if (r.subtask_id != subtask.id || r.verdict == Verdict::accepted) continue;
    if (!any_incorrect) out += "\nEarlier submissions for these constraints that were not accepted:\n";
    any_incorrect = true;
    out += kRule;
    out += "### Incorrect Code\n" + r.code + "\n";
    out += fmt::format("Judgement Verdict: {}, Score: {}\n", to_string(r.verdict), r.score);
  }
  if (any_incorrect) out += kRule;
  return out;
}

GssResult generate_select_submit(const ContestProblem& problem, const CodeGenerator& generator,
                                 const ContestJudge& judge, const ContestConfig& config, std::uint64_t seed) {
  if (auto errors = check_contest(config); !errors.empty()) throw stage::ValidationError(std::move(errors));
  if (problem.subtasks.empty()) throw InvalidArgument("contest problem has no subtasks");
  GssResult result;
  std::map<std::string, std::string> accepted_code;
  for (const auto& s : problem.subtasks) result.subtask_best[s.id] = 0.0;

  const auto solved = [&](const Subtask& s) { return result.subtask_best[s.id] >= s.max_score; };
  const auto all_solved = [&] {
    return std::all_of(problem.subtasks.begin(), problem.subtasks.end(), solved);
  };

  for (int round = 1; round <= config.max_rounds && !all_solved(); ++round) {
    result.rounds = round;
    for (std::size_t si = 0; si < problem.subtasks.size(); ++si) {
      const Subtask& subtask = problem.subtasks[si];
      if (solved(subtask)) continue;
      const std::string prompt = assemble_prompt(problem, subtask, result.history, accepted_code);
      auto candidates = generator(problem, subtask, prompt, config.candidates_per_round,
                                  derive_seed(seed, {static_cast<std::uint64_t>(round), si}));
      if (candidates.size() > static_cast<std::size_t>(config.candidates_per_round))
        candidates.resize(static_cast<std::size_t>(config.candidates_per_round));
      result.generated += candidates.size();
      if (candidates.empty()) continue;

      std::size_t pick = 0;
      for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].selection_score > candidates[pick].selection_score) pick = i;

      SubmissionRecord record{round, subtask.id, candidates[pick].code, Verdict::judge_fault, 0.0};
      try {
        const JudgeResult verdict = judge(problem, subtask, record.code);
        if (std::isfinite(verdict.score) && verdict.score >= 0.0 && verdict.score <= subtask.max_score) {
          record.verdict = verdict.verdict;
          record.score = verdict.score;
        }
      } catch (const std::exception&) {
        // Recorded as a judge_fault submission with score 0.
      }
      result.subtask_best[subtask.id] = std::max(result.subtask_best[subtask.id], record.score);
      if (record.verdict == Verdict::accepted && !accepted_code.count(subtask.id))
        accepted_code[subtask.id] = record.code;
      result.history.push_back(std::move(record));
    }
    double total = 0.0;
    for (const auto& s : problem.subtasks) total += result.subtask_best[s.id];
    result.best_by_round.push_back(total);
  }
  result.best_score = result.best_by_round.empty() ? 0.0 : result.best_by_round.back();
  return result;
}

namespace {

double payload_quality(const std::string& payload) {
  const auto pos = payload.rfind("q=");
  if (pos == std::string::npos) throw InvalidArgument("mock payload without a quality tag");
  return std::stod(payload.substr(pos + 2));
}

std::string quality_tag(double q) { return fmt::format("q={:.17g}", q); }

std::size_t count_occurrences(const std::string& text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace

MockProofStack make_mock_proof_stack(double base_quality, double refine_gain) {
  MockProofStack stack;
  stack.generator = [base_quality](const Problem& p, int count, std::uint64_t seed) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) {
      const double u = uniform_at(seed, {static_cast<std::uint64_t>(i)});
      const double q = std::clamp(base_quality + 0.4 * (u - 0.5), 0.0, 1.0);
      out.push_back(p.id + " proof " + std::to_string(i) + " " + quality_tag(q));
    }
    return out;
  };
  stack.verifier = [](const Problem&, const ProofCandidate& c, int index, std::uint64_t seed) {
    const double q = payload_quality(c.payload);
    const double u = uniform_at(seed, {0});
    VerificationAnalysis a;
    a.index = index;
    a.score = u < q ? 1.0 : (u < q + (1.0 - q) / 2.0 ? 0.5 : 0.0);
    a.rating = uniform_at(seed, {1});
    a.payload = "analysis " + std::to_string(index);
    return a;
  };
  stack.refiner = [refine_gain](const Problem&, const ProofCandidate& c, std::span<const VerificationAnalysis>,
                                int count, std::uint64_t seed) {
    const double q = payload_quality(c.payload);
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) {
      const double u = uniform_at(seed, {static_cast<std::uint64_t>(i)});
      const double refined = std::min(1.0, q + refine_gain * (1.0 - q) * u);
      out.push_back("refined " + std::to_string(c.id) + "." + std::to_string(i) + " " + quality_tag(refined));
    }
    return out;
  };
  return stack;
}

MockContestStack make_mock_contest_stack(double base_quality, double feedback_gain) {
  MockContestStack stack;
  stack.generator = [base_quality, feedback_gain](const ContestProblem&, const Subtask& s, const std::string& prompt,
                                                  int count, std::uint64_t seed) {
    const double feedback = static_cast<double>(count_occurrences(prompt, "### Incorrect Code") +
                                                count_occurrences(prompt, "### Accepted Code:"));
    std::vector<CodeCandidate> out;
    for (int i = 0; i < count; ++i) {
      const double u = uniform_at(seed, {static_cast<std::uint64_t>(i)});
      const double q = std::min(1.0, base_quality + feedback_gain * feedback + 0.3 * u);
      out.push_back({"solve(" + s.id + ") " + quality_tag(q), q});
    }
    return out;
  };
  stack.judge = [](const ContestProblem&, const Subtask& s, const std::string& code) {
    const double q = payload_quality(code);
    const double score = s.max_score * std::floor(std::min(q, 1.0) * 10.0 + 1e-9) / 10.0;
    if (q >= 1.0) return JudgeResult{Verdict::accepted, s.max_score};
    return JudgeResult{score > 0.0 ? Verdict::partial : Verdict::wrong_answer, score};
  };
  return stack;
}

std::vector<policy::TokenId> parse_proof_tokens(const std::string& payload) {
  std::vector<policy::TokenId> out;
  std::istringstream in(payload);
  long long v = 0;
  while (in >> v) {
    if (v < 0 || v > std::numeric_limits<policy::TokenId>::max()) throw InvalidArgument("proof token out of range");
    out.push_back(static_cast<policy::TokenId>(v));
  }
  if (!in.eof()) throw InvalidArgument("malformed proof payload");
  return out;
}

MockProofStack make_policy_proof_stack(std::shared_ptr<const policy::PolicyParams> policy, std::vector<envs::Task> tasks,
                                       PolicyProofOptions options) {
  if (!policy) throw InvalidArgument("policy proof stack needs a policy");
  if (options.max_len < 1) throw InvalidArgument("max_len must be at least 1");
  if (!(options.verifier_noise >= 0.0 && options.verifier_noise <= 1.0))
    throw InvalidArgument("verifier_noise must lie in [0, 1]");
  if (!(options.refine_temperature > 0.0)) throw InvalidArgument("refine_temperature must be positive");
  auto by_id = std::make_shared<std::map<std::string, envs::Task>>();
  for (auto& t : tasks) (*by_id)[t.task_id] = std::move(t);
  const auto task_of = [by_id](const Problem& p) -> const envs::Task& {
    const auto it = by_id->find(p.id);
    if (it == by_id->end()) throw InvalidArgument("no task for proof problem " + p.id);
    return it->second;
  };
  const auto encode = [](std::span<const policy::TokenId> tokens) {
    std::string s;
    for (auto t : tokens) s += (s.empty() ? "" : " ") + std::to_string(t);
    return s;
  };

  MockProofStack stack;
  stack.generator = [=](const Problem& p, int count, std::uint64_t seed) {
    const auto& task = task_of(p);
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i)
      out.push_back(encode(policy::sample_response(*policy, task.prompt, options.max_len, {},
                                                   derive_seed(seed, {static_cast<std::uint64_t>(i)}))
                               .response));
    return out;
  };
  stack.verifier = [=](const Problem& p, const ProofCandidate& c, int, std::uint64_t seed) {
    const auto tokens = parse_proof_tokens(c.payload);
    const double reward = envs::verify(task_of(p), tokens);
    const bool undecided = uniform_at(seed, {0}) < options.verifier_noise;
    return VerificationAnalysis{c.id, 0, undecided ? 0.5 : reward, uniform_at(seed, {1}),
                                undecided ? "undecided" : fmt::format("reward {}", reward)};
  };
  stack.refiner = [=](const Problem& p, const ProofCandidate& c, std::span<const VerificationAnalysis>, int count,
                      std::uint64_t seed) {
    const auto& task = task_of(p);
    const auto tokens = parse_proof_tokens(c.payload);
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
      const std::size_t keep = tokens.empty() ? 0 : rng.below(tokens.size());
      std::vector<policy::TokenId> context = task.prompt;
      context.insert(context.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
      const auto tail = policy::sample_response(*policy, context, options.max_len - static_cast<int>(keep),
                                                {options.refine_temperature, 1.0}, rng.next());
      std::vector<policy::TokenId> proof(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
      proof.insert(proof.end(), tail.response.begin(), tail.response.end());
      out.push_back(encode(proof));
    }
    return out;
  };
  return stack;
}

}  // namespace cascade::tts
