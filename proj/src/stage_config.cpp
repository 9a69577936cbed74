#include "cascade/stage_config.hpp"

#include <cmath>

#include "json_reader.hpp"

namespace cascade::stage {

using detail::ObjectReader;

namespace {

int ceil_div(int value, int divisor) { return (value + divisor - 1) / divisor; }

std::string join_errors(const std::vector<FieldError>& errors) {
  std::string out = "invalid configuration:";
  for (const auto& e : errors) out += " " + e.field + ": " + e.message + ";";
  return out;
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "grpo") return Algorithm::grpo;
  if (s == "mopd") return Algorithm::mopd;
  throw InvalidArgument("unknown algorithm '" + s + "'");
}

RewardKind parse_reward(const std::string& s) {
  if (s == "verifier") return RewardKind::verifier;
  if (s == "preference") return RewardKind::preference;
  throw InvalidArgument("unknown reward kind '" + s + "'");
}

}  // namespace

std::string_view to_string(Algorithm a) { return a == Algorithm::grpo ? "grpo" : "mopd"; }
std::string_view to_string(RewardKind r) {
  return r == RewardKind::verifier ? "verifier" : "preference";
}

policy::AdamWConfig optimizer_config(const StageConfig& c) {
  return {c.beta1, c.beta2, c.weight_decay, c.epsilon};
}

StageConfig apply_desk_scale(StageConfig config, const DeskScale& scale) {
  config.max_response_len = ceil_div(config.max_response_len, scale.length_divisor);
  config.steps = ceil_div(config.steps, scale.step_divisor);
  config.warmup_steps = ceil_div(config.warmup_steps, scale.step_divisor);
  config.lr *= scale.lr_multiplier;
  config.warmup_start_lr *= scale.lr_multiplier;
  return config;
}

ValidationError::ValidationError(std::vector<FieldError> errors)
    : ConfigError(join_errors(errors)), errors_(std::move(errors)) {}

ValidationError::ValidationError(std::string field, std::string message)
    : ValidationError(std::vector<FieldError>{{std::move(field), std::move(message)}}) {}

std::vector<FieldError> check_stage(const StageConfig& c, const std::string& prefix) {
  std::vector<FieldError> errors;
  const auto add = [&](const std::string& field, const std::string& message) {
    errors.push_back({prefix.empty() ? field : prefix + "." + field, message});
  };
  if (c.stage_name.empty()) add("stage_name", "must be non-empty");
  if (c.blend.empty()) add("blend", "must name at least one domain");
  double total = 0.0;
  for (const auto& [d, w] : c.blend) {
    if (!(w >= 0.0) || !std::isfinite(w))
      add("blend." + std::string(envs::to_string(d)), "weight must be finite and non-negative");
    else total += w;
  }
  if (!c.blend.empty() && !(total > 0.0)) add("blend", "weights must sum to a positive value");
  if (c.max_response_len < 1) add("max_response_len", "must be at least 1");
  if (c.batch_prompts < 1) add("batch_prompts", "must be at least 1");
  if (c.rollout_size < 1) add("rollout_size", "must be at least 1");
  if (c.algorithm == Algorithm::grpo && c.rollout_size < 2)
    add("rollout_size", "group advantages need at least 2 rollouts per prompt");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) add("lr", "must be finite and non-negative");
  if (c.steps < 1) add("steps", "must be at least 1");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) add("beta1", "must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) add("beta2", "must be in [0, 1)");
  if (!(c.weight_decay >= 0.0)) add("weight_decay", "must be non-negative");
  if (!(c.epsilon > 0.0)) add("epsilon", "must be positive");
  if (!(c.temperature > 0.0) || !std::isfinite(c.temperature)) add("temperature", "must be positive");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) add("top_p", "must be in (0, 1]");
  if (!(c.kl_coef >= 0.0)) add("kl_coef", "must be non-negative");
  if (c.reward == RewardKind::preference && c.dynamic_filtering)
    add("dynamic_filtering", "needs binary rewards; preference rewards are continuous");
  if (!(c.conciseness_beta >= 0.0)) add("conciseness_beta", "must be non-negative");
  if (!(c.quality_delta >= 0.0)) add("quality_delta", "must be non-negative");
  if (c.loss_mask_tau && !std::isfinite(*c.loss_mask_tau)) add("loss_mask_tau", "must be finite");
  if (!(c.keep_frac_zero >= 0.0 && c.keep_frac_zero <= 1.0)) add("keep_frac_zero", "must be in [0, 1]");
  if (c.difficulty_rollouts < 1) add("difficulty_rollouts", "must be at least 1");
  if (!(c.eps_low > 0.0)) add("eps_low", "must be positive");
  if (!(c.eps_high >= c.eps_low)) add("eps_high", "must be at least eps_low");
  if (!(c.warmup_start_lr >= 0.0)) add("warmup_start_lr", "must be non-negative");
  if (c.warmup_steps < 0) add("warmup_steps", "must be non-negative");
  if (!(c.inference_noise >= 0.0)) add("inference_noise", "must be non-negative");
  return errors;
}

void validate_stage(const StageConfig& config) {
  auto errors = check_stage(config);
  if (!errors.empty()) throw ValidationError(std::move(errors));
}

void validate_scale(const DeskScale& s, std::vector<FieldError>& errors, const std::string& prefix) {
  const auto field = [&](const char* f) { return prefix.empty() ? std::string(f) : prefix + "." + f; };
  if (s.length_divisor < 1) errors.push_back({field("length_divisor"), "must be at least 1"});
  if (s.step_divisor < 1) errors.push_back({field("step_divisor"), "must be at least 1"});
  if (!(s.lr_multiplier > 0.0)) errors.push_back({field("lr_multiplier"), "must be positive"});
}

nlohmann::ordered_json to_json(const StageConfig& c) {
  nlohmann::ordered_json j;
  j["stage_name"] = c.stage_name;
  j["algorithm"] = to_string(c.algorithm);
  nlohmann::ordered_json blend = nlohmann::ordered_json::object();
  for (const auto& [d, w] : c.blend) blend[std::string(envs::to_string(d))] = w;
  j["blend"] = blend;
  j["max_response_len"] = c.max_response_len;
  j["batch_prompts"] = c.batch_prompts;
  j["rollout_size"] = c.rollout_size;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["optimizer"] = c.optimizer;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["weight_decay"] = c.weight_decay;
  j["epsilon"] = c.epsilon;
  j["temperature"] = c.temperature;
  j["top_p"] = c.top_p;
  j["overlong_mode"] = rewards::to_string(c.overlong_mode);
  j["kl_coef"] = c.kl_coef;
  j["dynamic_filtering"] = c.dynamic_filtering;
  j["reward"] = to_string(c.reward);
  j["conciseness_beta"] = c.conciseness_beta;
  j["quality_delta"] = c.quality_delta;
  j["loss_mask_tau"] = c.loss_mask_tau ? nlohmann::ordered_json(*c.loss_mask_tau) : nlohmann::ordered_json(nullptr);
  j["difficulty_filter"] = c.difficulty_filter;
  j["keep_frac_zero"] = c.keep_frac_zero;
  j["difficulty_rollouts"] = c.difficulty_rollouts;
  j["eps_low"] = c.eps_low;
  j["eps_high"] = c.eps_high;
  j["warmup_start_lr"] = c.warmup_start_lr;
  j["warmup_steps"] = c.warmup_steps;
  j["inference_noise"] = c.inference_noise;
  nlohmann::ordered_json teachers = nlohmann::ordered_json::object();
  for (const auto& [d, ref] : c.teachers) teachers[std::string(envs::to_string(d))] = ref;
  j["teachers"] = teachers;
  return j;
}

StageConfig stage_from_json(const nlohmann::json& j, const std::string& prefix,
                            std::vector<FieldError>& errors) {
  StageConfig c;
  ObjectReader r(j, prefix, errors);
  r.read("stage_name", c.stage_name);
  r.read_enum("algorithm", c.algorithm, parse_algorithm);
  r.read_domain_map("blend", c.blend, [](const nlohmann::json& v) {
    if (!v.is_number()) throw InvalidArgument("expected a number");
    return v.get<double>();
  });
  r.read("max_response_len", c.max_response_len);
  r.read("batch_prompts", c.batch_prompts);
  r.read("rollout_size", c.rollout_size);
  r.read("lr", c.lr);
  r.read("steps", c.steps);
  r.read("optimizer", c.optimizer);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("weight_decay", c.weight_decay);
  r.read("epsilon", c.epsilon);
  r.read("temperature", c.temperature);
  r.read("top_p", c.top_p);
  r.read_enum("overlong_mode", c.overlong_mode,
              [](const std::string& s) { return rewards::parse_overlong_mode(s); });
  r.read("kl_coef", c.kl_coef);
  r.read("dynamic_filtering", c.dynamic_filtering);
  r.read_enum("reward", c.reward, parse_reward);
  r.read("conciseness_beta", c.conciseness_beta);
  r.read("quality_delta", c.quality_delta);
  r.read("loss_mask_tau", c.loss_mask_tau);
  r.read("difficulty_filter", c.difficulty_filter);
  r.read("keep_frac_zero", c.keep_frac_zero);
  r.read("difficulty_rollouts", c.difficulty_rollouts);
  r.read("eps_low", c.eps_low);
  r.read("eps_high", c.eps_high);
  r.read("warmup_start_lr", c.warmup_start_lr);
  r.read("warmup_steps", c.warmup_steps);
  r.read("inference_noise", c.inference_noise);
  r.read_domain_map("teachers", c.teachers, [](const nlohmann::json& v) {
    if (!v.is_string()) throw InvalidArgument("expected a checkpoint reference string");
    return v.get<std::string>();
  });
  r.reject_unknown();
  return c;
}

nlohmann::ordered_json to_json(const DeskScale& s) {
  return {{"length_divisor", s.length_divisor},
          {"lr_multiplier", s.lr_multiplier},
          {"step_divisor", s.step_divisor}};
}

DeskScale scale_from_json(const nlohmann::json& j, const std::string& prefix,
                          std::vector<FieldError>& errors) {
  DeskScale s;
  ObjectReader r(j, prefix, errors);
  r.read("length_divisor", s.length_divisor);
  r.read("lr_multiplier", s.lr_multiplier);
  r.read("step_divisor", s.step_divisor);
  r.reject_unknown();
  return s;
}

}  // namespace cascade::stage
