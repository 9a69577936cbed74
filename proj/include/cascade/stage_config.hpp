#pragma once

// Per-stage training hyperparameters. Field defaults are the full-scale values; DeskScale maps
// token budgets, step counts and learning rates onto the toy environments.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/envs.hpp"
#include "cascade/errors.hpp"
#include "cascade/optimizer.hpp"
#include "cascade/rewards.hpp"

namespace cascade::stage {

enum class Algorithm { grpo, mopd };
enum class RewardKind { verifier, preference };

std::string_view to_string(Algorithm a);
std::string_view to_string(RewardKind r);

/// Teacher reference for a distillation stage: "initial" (the pipeline's starting checkpoint),
/// "best" (best_teacher over the registry), "<stage>/step_<n>" or a checkpoint file path.
using TeacherRef = std::string;

struct StageConfig {
  std::string stage_name = "stage";
  Algorithm algorithm = Algorithm::grpo;
  std::map<envs::Domain, double> blend;
  int max_response_len = 49152;
  int batch_prompts = 128;
  int rollout_size = 16;
  double lr = 3e-6;
  int steps = 1;
  std::string optimizer = "AdamW";
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double epsilon = 1e-8;
  double temperature = 1.0;
  double top_p = 1.0;
  rewards::OverlongMode overlong_mode = rewards::OverlongMode::off;
  double kl_coef = 0.0;
  bool dynamic_filtering = false;

  RewardKind reward = RewardKind::verifier;
  double conciseness_beta = 0.1;
  double quality_delta = 0.05;
  std::optional<double> loss_mask_tau;

  bool difficulty_filter = false;
  double keep_frac_zero = 0.1;
  int difficulty_rollouts = 16;

  double eps_low = 0.5;
  double eps_high = 2.0;
  double warmup_start_lr = 2e-7;
  int warmup_steps = 30;
  /// Std of Gaussian noise added to the inference policy's logits (0 = exact on-policy).
  double inference_noise = 0.0;
  std::map<envs::Domain, TeacherRef> teachers;
};

policy::AdamWConfig optimizer_config(const StageConfig& config);

/// Factors that shrink full-scale budgets to the toy world.
struct DeskScale {
  int length_divisor = 8192;
  double lr_multiplier = 2e4;
  int step_divisor = 4;
};

/// The config with max_response_len, steps and warmup_steps divided (rounding up) and every
/// learning rate multiplied.
StageConfig apply_desk_scale(StageConfig config, const DeskScale& scale);

struct FieldError {
  std::string field;
  std::string message;
};

/// Validation failure carrying one message per offending field.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<FieldError> errors);
  ValidationError(std::string field, std::string message);
  const std::vector<FieldError>& errors() const noexcept { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

/// Field-level problems with a stage config; `prefix` is prepended to field names.
std::vector<FieldError> check_stage(const StageConfig& config, const std::string& prefix = "");
/// Throws ValidationError when check_stage reports anything.
void validate_stage(const StageConfig& config);

void validate_scale(const DeskScale& scale, std::vector<FieldError>& errors,
                    const std::string& prefix = "");

nlohmann::ordered_json to_json(const StageConfig& config);
/// Missing keys keep their defaults; unknown keys and type mismatches are reported per field.
StageConfig stage_from_json(const nlohmann::json& j, const std::string& prefix,
                            std::vector<FieldError>& errors);

nlohmann::ordered_json to_json(const DeskScale& scale);
DeskScale scale_from_json(const nlohmann::json& j, const std::string& prefix,
                          std::vector<FieldError>& errors);

}  // namespace cascade::stage
