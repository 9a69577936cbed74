#include "cascade/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "cascade/checkpoint.hpp"
#include "cascade/errors.hpp"
#include "cascade/grpo.hpp"
#include "cascade/kernels.hpp"
#include "cascade/mopd.hpp"
#include "cascade/rewards.hpp"
#include "cascade/rng.hpp"
#include "json_reader.hpp"

namespace cascade::pipeline {

using envs::Domain;
using policy::PolicyParams;
using stage::StageConfig;

PipelineSpec default_pipeline() {
  PipelineSpec spec;

  StageConfig ifrl;
  ifrl.stage_name = "if_rl";
  ifrl.blend = {{Domain::instruction, 1.0}};
  ifrl.max_response_len = 49152;
  ifrl.steps = 180;
  ifrl.optimizer = "AdamW";
  ifrl.overlong_mode = rewards::OverlongMode::off;
  ifrl.dynamic_filtering = true;
  spec.stages.push_back(ifrl);

  StageConfig multi;
  multi.stage_name = "multi_domain_rl";
  multi.blend = {{Domain::mcqa, 0.55}, {Domain::tool, 0.30}, {Domain::instruction, 0.15}};
  multi.max_response_len = 49152;
  multi.steps = 70;
  multi.optimizer = "Adam";
  multi.overlong_mode = rewards::OverlongMode::filter;
  spec.stages.push_back(multi);

  StageConfig mopd;
  mopd.stage_name = "mopd";
  mopd.algorithm = stage::Algorithm::mopd;
  mopd.blend = {{Domain::math, 0.25},
                {Domain::rlhf, 0.25},
                {Domain::instruction, 0.25},
                {Domain::mcqa, 0.125},
                {Domain::tool, 0.125}};
  mopd.max_response_len = 98304;
  mopd.rollout_size = 4;
  mopd.lr = 2e-6;
  mopd.warmup_start_lr = 2e-7;
  mopd.warmup_steps = 30;
  mopd.steps = 52;
  mopd.overlong_mode = rewards::OverlongMode::off;
  mopd.teachers = {{Domain::math, "initial"},
                   {Domain::rlhf, "best"},
                   {Domain::instruction, "best"},
                   {Domain::mcqa, "best"},
                   {Domain::tool, "best"}};
  spec.stages.push_back(mopd);

  StageConfig rlhf;
  rlhf.stage_name = "rlhf";
  rlhf.blend = {{Domain::rlhf, 1.0}};
  rlhf.max_response_len = 16384;
  rlhf.steps = 25;
  rlhf.overlong_mode = rewards::OverlongMode::filter;
  rlhf.kl_coef = 0.03;
  rlhf.reward = stage::RewardKind::preference;
  spec.stages.push_back(rlhf);

  StageConfig longctx;
  longctx.stage_name = "long_context_rl";
  longctx.blend = {{Domain::longctx, 1.0}};
  longctx.max_response_len = 49152;
  longctx.steps = 30;
  longctx.optimizer = "Adam";
  longctx.overlong_mode = rewards::OverlongMode::filter;
  spec.stages.push_back(longctx);

  StageConfig code;
  code.stage_name = "code_rl";
  code.blend = {{Domain::code, 1.0}};
  code.max_response_len = 118 * 1024;
  code.steps = 22;
  code.top_p = 0.95;
  code.overlong_mode = rewards::OverlongMode::filter;
  spec.stages.push_back(code);

  StageConfig swe;
  swe.stage_name = "swe_rl";
  swe.blend = {{Domain::code, 1.0}};
  swe.max_response_len = 98304;
  swe.steps = 45;
  swe.overlong_mode = rewards::OverlongMode::off;
  swe.loss_mask_tau = 0.5;
  swe.difficulty_filter = true;
  swe.keep_frac_zero = 0.1;
  swe.difficulty_rollouts = 16;
  spec.stages.push_back(swe);

  return spec;
}

std::vector<stage::FieldError> check_pipeline(const PipelineSpec& spec, const std::string& prefix) {
  std::vector<stage::FieldError> errors;
  const auto field = [&](const std::string& f) { return prefix.empty() ? f : prefix + "." + f; };
  std::set<std::string> names;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& s = spec.stages[i];
    const std::string p = field("stages[" + std::to_string(i) + "]");
    auto stage_errors = stage::check_stage(s, p);
    errors.insert(errors.end(), stage_errors.begin(), stage_errors.end());
    if (!names.insert(s.stage_name).second)
      errors.push_back({p + ".stage_name", "duplicate stage name '" + s.stage_name + "'"});
    if (s.stage_name == "initial")
      errors.push_back({p + ".stage_name", "'initial' is reserved for the starting checkpoint"});
    if (s.algorithm == stage::Algorithm::mopd) {
      for (const auto& [d, w] : s.blend)
        if (w > 0.0 && !s.teachers.count(d))
          errors.push_back({p + ".teachers." + std::string(envs::to_string(d)),
                            "distillation stage needs a teacher for every blended domain"});
      for (const auto& [d, ref] : s.teachers)
        if (ref.empty())
          errors.push_back({p + ".teachers." + std::string(envs::to_string(d)), "empty teacher reference"});
    }
  }
  stage::validate_scale(spec.scale, errors, field("scale"));
  if (spec.eval_max_len < 1) errors.push_back({field("eval_max_len"), "must be at least 1"});
  if (spec.eval_samples < 1) errors.push_back({field("eval_samples"), "must be at least 1"});
  return errors;
}

nlohmann::ordered_json to_json(const PipelineSpec& spec) {
  nlohmann::ordered_json j;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : spec.stages) j["stages"].push_back(stage::to_json(s));
  j["eval_domains"] = nlohmann::ordered_json::array();
  for (Domain d : spec.eval_domains) j["eval_domains"].push_back(envs::to_string(d));
  j["scale"] = stage::to_json(spec.scale);
  j["apply_scale"] = spec.apply_scale;
  j["eval_max_len"] = spec.eval_max_len;
  j["eval_samples"] = spec.eval_samples;
  return j;
}

PipelineSpec pipeline_from_json(const nlohmann::json& j, const std::string& prefix,
                                std::vector<stage::FieldError>& errors) {
  PipelineSpec spec;
  detail::ObjectReader r(j, prefix, errors);
  if (const auto* stages = r.find("stages")) {
    if (!stages->is_array()) {
      r.fail("stages", "expected an array of stage objects");
    } else {
      spec.stages.clear();
      for (std::size_t i = 0; i < stages->size(); ++i)
        spec.stages.push_back(
            stage::stage_from_json((*stages)[i], r.path("stages[" + std::to_string(i) + "]"), errors));
    }
  }
  if (const auto* domains = r.find("eval_domains")) {
    if (!domains->is_array()) {
      r.fail("eval_domains", "expected an array of domain names");
    } else {
      spec.eval_domains.clear();
      for (const auto& d : *domains) {
        try {
          spec.eval_domains.push_back(envs::parse_domain(d.get<std::string>()));
        } catch (const std::exception& e) {
          r.fail("eval_domains", e.what());
        }
      }
    }
  }
  if (const auto* scale = r.find("scale")) spec.scale = stage::scale_from_json(*scale, r.path("scale"), errors);
  r.read("apply_scale", spec.apply_scale);
  r.read("eval_max_len", spec.eval_max_len);
  r.read("eval_samples", spec.eval_samples);
  r.reject_unknown();
  return spec;
}

std::string CheckpointRef::label() const { return stage + "/step_" + std::to_string(step); }

std::optional<CheckpointRef> parse_checkpoint_label(std::string_view label) {
  const auto slash = label.rfind("/step_");
  if (slash == std::string_view::npos || slash == 0) return std::nullopt;
  const auto digits = label.substr(slash + 6);
  int step = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), step);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty()) return std::nullopt;
  return CheckpointRef{std::string(label.substr(0, slash)), step};
}

void CheckpointRegistry::record(CheckpointEntry entry) {
  for (const auto& [d, s] : entry.scores)
    if (!std::isfinite(s))
      throw NumericFault("non-finite validation score for " + entry.ref.label(), entries_.size());
  entries_.push_back(std::move(entry));
}

const CheckpointEntry& CheckpointRegistry::find(const CheckpointRef& ref) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->ref == ref) return *it;
  throw ConfigError("unknown checkpoint '" + ref.label() + "'");
}

CheckpointRef best_teacher(const CheckpointRegistry& registry, Domain domain) {
  const CheckpointEntry* best = nullptr;
  double best_score = 0.0;
  for (const auto& e : registry.entries()) {
    auto it = e.scores.find(domain);
    if (it == e.scores.end()) continue;
    if (!best || it->second >= best_score) {
      best = &e;
      best_score = it->second;
    }
  }
  if (!best)
    throw ConfigError("no checkpoint has a validation score for domain '" +
                      std::string(envs::to_string(domain)) + "'");
  return best->ref;
}

std::vector<RegressionRow> regression_report(std::span<const metrics::StageEvaluation> timeline,
                                             double threshold) {
  std::vector<RegressionRow> rows;
  if (timeline.size() < 2) return rows;
  std::map<Domain, double> best;
  for (const auto& e : timeline) {
    for (const auto& [d, score] : e.scores) {
      RegressionRow row{e.stage, d, score, 0.0, false};
      auto it = best.find(d);
      if (it != best.end()) {
        row.delta_from_best = score - it->second;
        row.flagged = row.delta_from_best < -threshold;
        it->second = std::max(it->second, score);
      } else {
        best[d] = score;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::map<Domain, double> evaluate_policy(const PolicyParams& policy, const envs::EnvRegistry& envs,
                                         std::span<const Domain> domains, int max_len, int samples,
                                         std::uint64_t seed, int workers) {
  std::map<Domain, double> scores;
  for (Domain d : domains) {
    if (!envs.has_domain(d)) continue;
    const auto tasks = envs.validation_pool(d);
    if (tasks.empty()) continue;
    scores[d] = envs::has_unique_answer(d)
                    ? envs::exact_mean_reward(policy, tasks, max_len)
                    : envs::sampled_mean_reward(policy, tasks, max_len, samples,
                                                derive_seed(seed, {static_cast<std::uint64_t>(d)}), workers);
  }
  return scores;
}

namespace {

// Training pools for a stage: the registry itself, or a filtered copy when the stage drops
// already-solved and (most) never-solved tasks before training.
struct StageSource {
  std::unique_ptr<envs::EnvRegistry> filtered;
  const envs::EnvRegistry* registry = nullptr;
  bool empty = false;
};

StageSource stage_source(const StageConfig& cfg, const PolicyParams& policy, const envs::EnvRegistry& envs,
                         std::uint64_t seed, int workers) {
  StageSource src;
  src.registry = &envs;
  if (!cfg.difficulty_filter) return src;

  StageConfig probe = cfg;
  probe.rollout_size = cfg.difficulty_rollouts;
  std::map<Domain, std::vector<envs::Task>> pools;
  std::size_t kept_total = 0;
  for (const auto& [d, w] : cfg.blend) {
    if (w <= 0.0) continue;
    const auto pool = envs.train_pool(d);
    const auto groups = grpo::sample_groups(policy, pool, probe, derive_seed(seed, {static_cast<std::uint64_t>(d)}), workers);
    std::vector<rewards::DifficultyInstance> instances;
    for (const auto& g : groups) {
      int passes = 0;
      for (const auto& r : g.rollouts) passes += envs::verify(g.task, r.response) > 0.5 ? 1 : 0;
      instances.push_back({g.task, passes, static_cast<int>(g.rollouts.size())});
    }
    pools[d] = rewards::difficulty_filter(instances, cfg.keep_frac_zero,
                                          derive_seed(seed, {0xF1, static_cast<std::uint64_t>(d)}));
    kept_total += pools[d].size();
  }
  src.empty = kept_total == 0;
  src.filtered = std::make_unique<envs::EnvRegistry>(std::move(pools));
  src.registry = src.filtered.get();
  return src;
}

mopd::TeacherPool resolve_teachers(const StageConfig& cfg, const CheckpointRegistry& registry,
                                   std::map<Domain, std::string>& selections) {
  mopd::TeacherPool pool;
  for (const auto& [d, ref] : cfg.teachers) {
    if (ref == "initial") {
      const auto& e = registry.find({"initial", 0});
      pool.add(d, e.params, e.ref.label());
    } else if (ref == "best") {
      const auto& e = registry.find(best_teacher(registry, d));
      pool.add(d, e.params, e.ref.label());
    } else if (auto label = parse_checkpoint_label(ref)) {
      const auto& e = registry.find(*label);
      pool.add(d, e.params, e.ref.label());
    } else {
      pool.add(d, policy::load_checkpoint(ref), ref);
    }
    selections[d] = pool.ref(d);
  }
  return pool;
}

}  // namespace

PipelineResult run_pipeline(const PipelineSpec& spec, const PolicyParams& init_policy,
                            const envs::EnvRegistry& envs, std::uint64_t seed, const RunOptions& options) {
  if (auto errors = check_pipeline(spec); !errors.empty()) throw stage::ValidationError(std::move(errors));
  metrics::MetricsWriter writer(options.metrics_out);
  PipelineResult result;
  PolicyParams policy = init_policy;

  const auto score = [&](const PolicyParams& p, std::uint64_t eval_seed) {
    return evaluate_policy(p, envs, spec.eval_domains, spec.eval_max_len, spec.eval_samples, eval_seed,
                           options.workers);
  };
  const auto register_checkpoint = [&](const std::string& stage_name, int step, std::uint64_t eval_seed) {
    metrics::StageEvaluation eval{stage_name, step, score(policy, eval_seed)};
    CheckpointEntry entry{{stage_name, step}, std::make_shared<const PolicyParams>(policy), eval.scores, {}};
    if (options.checkpoint_dir) {
      entry.path = *options.checkpoint_dir / stage_name / ("step_" + std::to_string(step) + ".ckpt");
      policy::save_checkpoint(entry.path, policy);
    }
    result.registry.record(std::move(entry));
    writer.write(eval);
    result.evaluations.push_back(std::move(eval));
  };

  register_checkpoint("initial", 0, derive_seed(seed, {0xE7A1, 0}));

  for (std::size_t si = 0; si < spec.stages.size(); ++si) {
    const StageConfig cfg = spec.apply_scale ? stage::apply_desk_scale(spec.stages[si], spec.scale)
                                             : spec.stages[si];
    const std::uint64_t stage_seed = derive_seed(seed, {0x57A6E, si});
    envs.set_active_stage(cfg.stage_name);
    policy.set_version_tag(cfg.stage_name);

    policy::OptimizerState optimizer(policy, stage::optimizer_config(cfg));
    const PolicyParams reference = cfg.kl_coef > 0.0 ? policy : PolicyParams{};
    mopd::TeacherPool teachers;
    if (cfg.algorithm == stage::Algorithm::mopd) {
      teachers = resolve_teachers(cfg, result.registry, result.teacher_selections[cfg.stage_name]);
      teachers.check_compatible(policy);
    }
    const StageSource source = stage_source(cfg, policy, envs, derive_seed(stage_seed, {0xD1F}), options.workers);

    int consecutive_skips = 0;
    int steps_run = 0;
    for (int step = 0; step < cfg.steps && !source.empty; ++step) {
      const auto tasks = envs::make_blend(*source.registry, cfg.blend, cfg.batch_prompts,
                                          derive_seed(stage_seed, {static_cast<std::uint64_t>(step), 1}));
      const std::uint64_t step_seed = derive_seed(stage_seed, {static_cast<std::uint64_t>(step), 2});
      metrics::StepMetrics m;
      if (cfg.algorithm == stage::Algorithm::grpo) {
        grpo::GrpoOptions go;
        go.reference = cfg.kl_coef > 0.0 ? &reference : nullptr;
        go.workers = options.workers;
        m = grpo::grpo_step(policy, optimizer, tasks, cfg, step, step_seed, go);
      } else {
        mopd::MopdOptions mo;
        mo.workers = options.workers;
        mo.exact_kl = options.exact_kl;
        m = mopd::mopd_step(policy, optimizer, teachers, tasks, cfg, step, step_seed, mo);
      }
      writer.write(m);
      result.steps.push_back(m);
      ++steps_run;
      consecutive_skips = m.skipped ? consecutive_skips + 1 : 0;
      if (consecutive_skips >= options.max_consecutive_skips)
        throw PipelineFault("stage '" + cfg.stage_name + "' produced no unfiltered batch for " +
                            std::to_string(consecutive_skips) + " consecutive steps (last step " +
                            std::to_string(step) + ", filtered fraction " +
                            std::to_string(m.filtered_frac) + ", mean reward " +
                            std::to_string(m.mean_reward) + ")");
    }
    register_checkpoint(cfg.stage_name, steps_run, derive_seed(seed, {0xE7A1, si + 1}));
  }
  envs.set_active_stage("");
  result.final_policy = std::move(policy);
  return result;
}

}  // namespace cascade::pipeline
