#pragma once

// Test-time scaling engines: generate-verify-refine for proofs and generate-select-submit for
// contest problems with subtasks. Generators, verifiers and judges are injected callables and
// may be invoked from several threads at once.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/stage_config.hpp"

namespace cascade::tts {

/// 0 if any score is exactly 0, otherwise the arithmetic mean. Throws InvalidArgument on empty
/// input or a negative score.
double veto_mean(std::span<const double> scores);

struct TtsConfig {
  int n_generations = 128;
  int n_verifications = 64;
  int top_k = 32;
  int n_analyses = 8;
  int n_refined = 4;
  int max_rounds = 8;
  double stop_threshold = 0.99999;
};

std::vector<stage::FieldError> check_tts(const TtsConfig& config, const std::string& prefix = "tts");
nlohmann::ordered_json to_json(const TtsConfig& config);
TtsConfig tts_from_json(const nlohmann::json& j, const std::string& prefix,
                        std::vector<stage::FieldError>& errors);

struct Problem {
  std::string id;
  std::string statement;
};

struct ProofCandidate {
  std::string problem_id;
  std::uint64_t id = 0;
  std::optional<std::uint64_t> parent;
  std::string payload;
  int round = 1;
  std::vector<double> scores;

  double mean_score() const;
};

struct VerificationAnalysis {
  std::uint64_t candidate_id = 0;
  int index = 0;
  double score = 0.0;   // in [0, 1]
  double rating = 0.0;  // quality of the analysis itself
  std::string payload;
};

/// Returns up to `count` fresh proofs.
using ProofGenerator = std::function<std::vector<std::string>(const Problem&, int count, std::uint64_t seed)>;
/// One verification analysis of a candidate.
using ProofVerifier = std::function<VerificationAnalysis(const Problem&, const ProofCandidate&, int index,
                                                         std::uint64_t seed)>;
/// Returns up to `count` refined proofs of a candidate given its selected analyses.
using ProofRefiner = std::function<std::vector<std::string>(
    const Problem&, const ProofCandidate&, std::span<const VerificationAnalysis>, int count, std::uint64_t seed)>;

struct RoundLogEntry {
  int round = 0;
  std::uint64_t candidate_id = 0;
  std::optional<std::uint64_t> parent_id;
  double mean_score = 0.0;
  bool selected = false;

  friend bool operator==(const RoundLogEntry&, const RoundLogEntry&) = default;
};

nlohmann::ordered_json to_json(const RoundLogEntry& entry);

struct GvrResult {
  ProofCandidate best;
  std::vector<RoundLogEntry> log;
  /// Best mean score seen up to and including each round.
  std::vector<double> best_by_round;
  /// Indices (into that round's candidates) picked for refinement, per round.
  std::vector<std::vector<std::size_t>> selected_by_round;
  int rounds = 0;
  std::size_t generator_calls = 0;
  bool reached_threshold = false;
};

/// Indices of the k candidates with the highest mean score; equal means keep index order.
std::vector<std::size_t> select_top_k(std::span<const ProofCandidate> candidates, int k);

/// The n analyses with the lowest rating, ascending; equal ratings keep index order.
std::vector<VerificationAnalysis> lowest_rated(std::span<const VerificationAnalysis> analyses, int n);

/// Round 1 generates n_generations candidates; every candidate gets n_verifications scores; the
/// loop stops once a candidate's mean reaches stop_threshold or after max_rounds. Otherwise the
/// top_k candidates, each with its n_analyses lowest-rated analyses, are refined into n_refined
/// candidates apiece for the next round. Scores do not carry over between rounds. Each produced
/// proof counts as one generator call. Throws PipelineFault when a round produces no candidates.
GvrResult generate_verify_refine(const Problem& problem, const ProofGenerator& generator,
                                 const ProofVerifier& verifier, const ProofRefiner& refiner,
                                 const TtsConfig& config, std::uint64_t seed, int workers = 0);

enum class Verdict { accepted, partial, wrong_answer, time_limit_exceeded, runtime_error, compile_error, judge_fault };

std::string_view to_string(Verdict v);

struct Subtask {
  std::string id;
  std::string constraints;
  double max_score = 0.0;
};

struct ContestProblem {
  std::string id;
  std::string statement;
  std::vector<Subtask> subtasks;
};

struct CodeCandidate {
  std::string code;
  /// The generator's own confidence, used to pick the one submission of a round.
  double selection_score = 0.0;
};

struct JudgeResult {
  Verdict verdict = Verdict::wrong_answer;
  double score = 0.0;
};

using CodeGenerator = std::function<std::vector<CodeCandidate>(
    const ContestProblem&, const Subtask&, const std::string& prompt, int count, std::uint64_t seed)>;
using ContestJudge = std::function<JudgeResult(const ContestProblem&, const Subtask&, const std::string& code)>;

struct SubmissionRecord {
  int round = 0;
  std::string subtask_id;
  std::string code;
  Verdict verdict = Verdict::wrong_answer;
  double score = 0.0;

  friend bool operator==(const SubmissionRecord&, const SubmissionRecord&) = default;
};

nlohmann::ordered_json to_json(const SubmissionRecord& record);

/// Both limits are caps: at most 40 candidates per round and at most 50 rounds.
struct ContestConfig {
  int candidates_per_round = 40;
  int max_rounds = 50;
};

std::vector<stage::FieldError> check_contest(const ContestConfig& config, const std::string& prefix = "contest");

/// Generation prompt for one subtask: the statement and constraints, then one block per sibling
/// subtask with accepted code, then one block per earlier non-accepted submission of this
/// subtask with its verdict and score.
std::string assemble_prompt(const ContestProblem& problem, const Subtask& subtask,
                            std::span<const SubmissionRecord> history,
                            const std::map<std::string, std::string>& accepted_code);

struct GssResult {
  std::vector<SubmissionRecord> history;
  /// Sum of per-subtask best scores after each round; non-decreasing.
  std::vector<double> best_by_round;
  std::map<std::string, double> subtask_best;
  double best_score = 0.0;
  int rounds = 0;
  std::size_t generated = 0;
};

/// Each round, every subtask below full score gets a fresh prompt, at most candidates_per_round
/// candidates (extras are dropped), and one submission: the candidate with the highest
/// selection score (lowest index on ties). A throwing judge or an out-of-range score becomes a
/// judge_fault submission with score 0. Stops when every subtask has full score or after
/// max_rounds.
GssResult generate_select_submit(const ContestProblem& problem, const CodeGenerator& generator,
                                 const ContestJudge& judge, const ContestConfig& config, std::uint64_t seed);

/// Deterministic proof stack: a proof's payload carries a hidden quality q; each verification
/// scores 1 with probability q, 0.5 with probability (1-q)/2, else 0; refinement closes part of
/// the gap to 1.
struct MockProofStack {
  ProofGenerator generator;
  ProofVerifier verifier;
  ProofRefiner refiner;
};
MockProofStack make_mock_proof_stack(double base_quality = 0.5, double refine_gain = 0.5);

struct PolicyProofOptions {
  int max_len = 6;
  /// Probability that one verification comes back undecided (score 0.5).
  double verifier_noise = 0.01;
  /// Sampling temperature used when a refinement resamples a proof's tail.
  double refine_temperature = 0.7;
};

/// Proof stack backed by a toy policy. Problems are looked up by task id; a proof is a sampled
/// response stored as space-separated token ids; a verification scores it with the task's own
/// verifier, undecided with probability verifier_noise; a refinement keeps a random prefix of
/// the proof and resamples the rest. Throws InvalidArgument for an unknown problem id.
MockProofStack make_policy_proof_stack(std::shared_ptr<const policy::PolicyParams> policy,
                                       std::vector<envs::Task> tasks, PolicyProofOptions options = {});

/// Space-separated token ids of a policy-backed proof payload.
std::vector<policy::TokenId> parse_proof_tokens(const std::string& payload);

/// Deterministic contest stack: candidate quality grows with the number of earlier incorrect
/// submissions and accepted sibling solutions visible in the prompt; the judge awards
/// max_score * quality rounded down to tenths, accepting at quality 1.
struct MockContestStack {
  CodeGenerator generator;
  ContestJudge judge;
};
MockContestStack make_mock_contest_stack(double base_quality = 0.3, double feedback_gain = 0.15);

}  // namespace cascade::tts
