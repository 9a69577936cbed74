#pragma once

// Sequential, domain-wise cascade of RL and distillation stages over one policy.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascade/envs.hpp"
#include "cascade/metrics.hpp"
#include "cascade/policy.hpp"
#include "cascade/stage_config.hpp"

namespace cascade::pipeline {

struct PipelineSpec {
  std::vector<stage::StageConfig> stages;
  /// Domains scored after every stage.
  std::vector<envs::Domain> eval_domains{std::begin(envs::kAllDomains), std::end(envs::kAllDomains)};
  stage::DeskScale scale;
  /// Stage configs hold full-scale values; when true they go through apply_desk_scale first.
  bool apply_scale = true;
  int eval_max_len = 6;
  /// Monte-Carlo samples per validation task for domains without a unique answer.
  int eval_samples = 8;
};

/// The seven-stage order IF-RL, Multi-domain RL, MOPD, RLHF, Long-context RL, Code RL, SWE RL
/// with full-scale defaults.
PipelineSpec default_pipeline();

/// Stage names unique, every distillation stage binds a teacher for each blended domain, and the
/// per-stage checks.
std::vector<stage::FieldError> check_pipeline(const PipelineSpec& spec, const std::string& prefix = "pipeline");

nlohmann::ordered_json to_json(const PipelineSpec& spec);
PipelineSpec pipeline_from_json(const nlohmann::json& j, const std::string& prefix,
                                std::vector<stage::FieldError>& errors);

struct CheckpointRef {
  std::string stage;
  int step = 0;

  /// "<stage>/step_<n>", also the checkpoint's subpath on disk.
  std::string label() const;
  friend bool operator==(const CheckpointRef&, const CheckpointRef&) = default;
};

/// Parses "<stage>/step_<n>"; nullopt for anything else.
std::optional<CheckpointRef> parse_checkpoint_label(std::string_view label);

struct CheckpointEntry {
  CheckpointRef ref;
  std::shared_ptr<const policy::PolicyParams> params;
  std::map<envs::Domain, double> scores;
  std::filesystem::path path;  // empty when not written to disk
};

/// Checkpoints in the order they were produced, with their validation scores.
class CheckpointRegistry {
 public:
  void record(CheckpointEntry entry);
  const std::vector<CheckpointEntry>& entries() const noexcept { return entries_; }
  /// Throws ConfigError for an unknown reference.
  const CheckpointEntry& find(const CheckpointRef& ref) const;

 private:
  std::vector<CheckpointEntry> entries_;
};

/// The checkpoint with the highest score on `domain`; ties go to the later checkpoint. Throws
/// ConfigError when no checkpoint has a score for the domain.
CheckpointRef best_teacher(const CheckpointRegistry& registry, envs::Domain domain);

struct RegressionRow {
  std::string stage;
  envs::Domain domain = envs::Domain::math;
  double score = 0.0;
  /// score minus the best earlier score of the domain (0 for its first evaluation).
  double delta_from_best = 0.0;
  bool flagged = false;
};

/// One row per (evaluation, domain) in timeline order; a row is flagged when the score is more
/// than `threshold` below the best earlier score. Fewer than two evaluations give no rows.
std::vector<RegressionRow> regression_report(std::span<const metrics::StageEvaluation> timeline,
                                             double threshold = 0.1);

/// Validation scores: exact success probability for unique-answer domains, Monte-Carlo mean
/// reward otherwise.
std::map<envs::Domain, double> evaluate_policy(const policy::PolicyParams& policy,
                                               const envs::EnvRegistry& envs,
                                               std::span<const envs::Domain> domains, int max_len,
                                               int samples, std::uint64_t seed, int workers = 0);

struct RunOptions {
  int workers = 0;
  std::ostream* metrics_out = nullptr;
  /// When set, every stage-end checkpoint is written to <dir>/<stage>/step_<n>.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  int max_consecutive_skips = 10;
  bool exact_kl = false;
};

struct PipelineResult {
  policy::PolicyParams final_policy;
  CheckpointRegistry registry;
  std::vector<metrics::StepMetrics> steps;
  std::vector<metrics::StageEvaluation> evaluations;
  /// Resolved teacher per distillation stage and domain.
  std::map<std::string, std::map<envs::Domain, std::string>> teacher_selections;
};

/// Runs the stages in order. The initial policy is scored and registered as "initial/step_0";
/// every stage starts from its predecessor's policy with fresh optimizer moments and ends with
/// an evaluation and a registered checkpoint. Throws PipelineFault when a stage skips
/// max_consecutive_skips steps in a row.
PipelineResult run_pipeline(const PipelineSpec& spec, const policy::PolicyParams& init_policy,
                            const envs::EnvRegistry& envs, std::uint64_t seed,
                            const RunOptions& options = {});

}  // namespace cascade::pipeline
