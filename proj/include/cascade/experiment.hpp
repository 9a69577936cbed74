#pragma once

// Experiment runner behind the command-line tool: config loading with overrides, mode dispatch
// and artifact output.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/envs.hpp"
#include "cascade/pipeline.hpp"
#include "cascade/stage_config.hpp"
#include "cascade/tts.hpp"

namespace cascade::experiment {

inline constexpr int kSchemaVersion = 1;

enum class Mode { train_pipeline, mopd_only, grpo_only, tts_proof, tts_contest, elo };

std::string_view to_string(Mode mode);
/// Throws InvalidArgument for an unknown name.
Mode parse_mode(std::string_view name);

struct ProofMock {
  /// "scripted": hidden-quality mock proofs; "policy": proofs sampled from the initial toy policy
  /// on math tasks.
  std::string kind = "scripted";
  int problems = 2;
  double base_quality = 0.5;
  double refine_gain = 0.5;
  tts::PolicyProofOptions policy;
};

struct ContestMock {
  int subtasks = 3;
  double base_quality = 0.3;
  double feedback_gain = 0.15;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Mode mode = Mode::train_pipeline;
  std::uint64_t seed = 0;
  /// Line-delimited task corpus replacing the built-in task families; empty for the built-ins.
  std::string corpus_path;
  /// Checkpoint directory; empty means <out>/checkpoints.
  std::string checkpoint_dir;
  /// Contest records for the elo mode; empty means synthetic contests.
  std::string contests_path;
  envs::InitialPolicyOptions init;
  /// Answer bias of the generated teachers used by mopd_only.
  double teacher_answer_bias = 6.0;
  bool exact_kl = false;

  pipeline::PipelineSpec pipeline;
  /// Single-stage modes (grpo_only, mopd_only).
  stage::StageConfig stage;
  stage::DeskScale scale;
  bool apply_scale = true;

  tts::TtsConfig tts;
  ProofMock proof_mock;
  tts::ContestConfig contest;
  ContestMock contest_mock;
  int synthetic_contests = 5;
};

/// Defaults for a mode: the default pipeline, a math GRPO stage, or the default distillation
/// stage with generated teachers.
ExperimentConfig default_config(Mode mode);

/// Sections that matter for the config's mode, plus the common fields.
nlohmann::ordered_json to_json(const ExperimentConfig& config);

/// Field-level problems, including mode-required sections.
std::vector<stage::FieldError> check_experiment(const ExperimentConfig& config);

/// Applies "a.b.c=value" to a JSON document. Dots separate object keys and array indices; the
/// value is parsed as JSON when possible and kept as a string otherwise. Throws InvalidArgument
/// on a malformed override.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct RunRequest {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::string> mode;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::filesystem::path out_dir = "out";
};

/// Builds the effective config: mode defaults, then the config file, then overrides, then the
/// --seed flag. Throws ValidationError listing every bad field.
ExperimentConfig resolve_config(const RunRequest& request);

/// Runs the experiment and writes its artifacts under out_dir. Returns the process exit status:
/// 0 on success, 2 for an invalid config, 1 for a runtime fault. Errors are written as one JSON
/// record to `err` and to <out_dir>/error.json.
int run(const RunRequest& request, std::ostream& log, std::ostream& err);

/// Reads <metrics_path> and writes the summary (and plot files) under out_dir; prints the text
/// summary to `log`. Returns the exit status.
int report(const std::filesystem::path& metrics_path, const std::filesystem::path& out_dir, std::ostream& log,
           std::ostream& err);

}  // namespace cascade::experiment
