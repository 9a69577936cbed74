#include "cascade/experiment.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "cascade/checkpoint.hpp"
#include "cascade/elo.hpp"
#include "cascade/errors.hpp"
#include "cascade/report.hpp"
#include "cascade/rng.hpp"
#include "json_reader.hpp"

namespace cascade::experiment {

namespace fs = std::filesystem;
using envs::Domain;
using nlohmann::json;
using nlohmann::ordered_json;
using stage::FieldError;
using stage::ValidationError;

namespace {

constexpr std::pair<Mode, std::string_view> kModes[] = {
    {Mode::train_pipeline, "train_pipeline"}, {Mode::mopd_only, "mopd_only"}, {Mode::grpo_only, "grpo_only"},
    {Mode::tts_proof, "tts_proof"},           {Mode::tts_contest, "tts_contest"}, {Mode::elo, "elo"}};

constexpr std::string_view kGeneratedTeacher = "teacher";

}  // namespace

std::string_view to_string(Mode mode) {
  for (const auto& [m, name] : kModes)
    if (m == mode) return name;
  return "train_pipeline";
}

Mode parse_mode(std::string_view name) {
  for (const auto& [m, n] : kModes)
    if (n == name) return m;
  throw InvalidArgument("unknown mode '" + std::string(name) + "'");
}

ExperimentConfig default_config(Mode mode) {
  ExperimentConfig c;
  c.mode = mode;
  c.pipeline = pipeline::default_pipeline();
  if (mode == Mode::mopd_only) {
    for (const auto& s : c.pipeline.stages)
      if (s.algorithm == stage::Algorithm::mopd) c.stage = s;
    for (auto& [d, ref] : c.stage.teachers) ref = kGeneratedTeacher;
  } else {
    c.stage.stage_name = "grpo";
    c.stage.blend = {{Domain::math, 1.0}};
    c.stage.max_response_len = 24576;
    c.stage.steps = 120;
    c.stage.dynamic_filtering = true;
  }
  return c;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["schema_version"] = c.schema_version;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["paths"] = {{"corpus", c.corpus_path}, {"checkpoints", c.checkpoint_dir}, {"contests", c.contests_path}};
  j["init"] = {{"answer_bias", c.init.answer_bias}, {"noise", c.init.noise}, {"seed", c.init.seed}};
  switch (c.mode) {
    case Mode::train_pipeline:
      j["pipeline"] = pipeline::to_json(c.pipeline);
      j["exact_kl"] = c.exact_kl;
      break;
    case Mode::mopd_only:
      j["teacher_answer_bias"] = c.teacher_answer_bias;
      j["exact_kl"] = c.exact_kl;
      [[fallthrough]];
    case Mode::grpo_only:
      j["stage"] = stage::to_json(c.stage);
      j["scale"] = stage::to_json(c.scale);
      j["apply_scale"] = c.apply_scale;
      break;
    case Mode::tts_proof:
      j["tts"] = tts::to_json(c.tts);
      j["proof_mock"] = {{"kind", c.proof_mock.kind},
                         {"problems", c.proof_mock.problems},
                         {"base_quality", c.proof_mock.base_quality},
                         {"refine_gain", c.proof_mock.refine_gain},
                         {"max_len", c.proof_mock.policy.max_len},
                         {"verifier_noise", c.proof_mock.policy.verifier_noise},
                         {"refine_temperature", c.proof_mock.policy.refine_temperature}};
      break;
    case Mode::tts_contest:
      j["contest"] = {{"candidates_per_round", c.contest.candidates_per_round}, {"max_rounds", c.contest.max_rounds}};
      j["contest_mock"] = {{"subtasks", c.contest_mock.subtasks},
                           {"base_quality", c.contest_mock.base_quality},
                           {"feedback_gain", c.contest_mock.feedback_gain}};
      break;
    case Mode::elo:
      j["synthetic_contests"] = c.synthetic_contests;
      break;
  }
  return j;
}

namespace {

ExperimentConfig config_from_json(const json& j, Mode mode, std::vector<FieldError>& errors) {
  ExperimentConfig c = default_config(mode);
  detail::ObjectReader r(j, "", errors);
  r.read("schema_version", c.schema_version);
  r.find("mode");
  r.read("seed", c.seed);
  r.read("teacher_answer_bias", c.teacher_answer_bias);
  r.read("exact_kl", c.exact_kl);
  r.read("apply_scale", c.apply_scale);
  r.read("synthetic_contests", c.synthetic_contests);
  if (const auto* p = r.find("paths")) {
    detail::ObjectReader pr(*p, "paths", errors);
    pr.read("corpus", c.corpus_path);
    pr.read("checkpoints", c.checkpoint_dir);
    pr.read("contests", c.contests_path);
    pr.reject_unknown();
  }
  if (const auto* p = r.find("init")) {
    detail::ObjectReader ir(*p, "init", errors);
    ir.read("answer_bias", c.init.answer_bias);
    ir.read("noise", c.init.noise);
    ir.read("seed", c.init.seed);
    ir.reject_unknown();
  }
  if (const auto* p = r.find("pipeline")) c.pipeline = pipeline::pipeline_from_json(*p, "pipeline", errors);
  if (const auto* p = r.find("stage")) c.stage = stage::stage_from_json(*p, "stage", errors);
  if (const auto* p = r.find("scale")) c.scale = stage::scale_from_json(*p, "scale", errors);
  if (const auto* p = r.find("tts")) c.tts = tts::tts_from_json(*p, "tts", errors);
  if (const auto* p = r.find("proof_mock")) {
    detail::ObjectReader mr(*p, "proof_mock", errors);
    mr.read("kind", c.proof_mock.kind);
    mr.read("problems", c.proof_mock.problems);
    mr.read("base_quality", c.proof_mock.base_quality);
    mr.read("refine_gain", c.proof_mock.refine_gain);
    mr.read("max_len", c.proof_mock.policy.max_len);
    mr.read("verifier_noise", c.proof_mock.policy.verifier_noise);
    mr.read("refine_temperature", c.proof_mock.policy.refine_temperature);
    mr.reject_unknown();
  }
  if (const auto* p = r.find("contest")) {
    detail::ObjectReader cr(*p, "contest", errors);
    cr.read("candidates_per_round", c.contest.candidates_per_round);
    cr.read("max_rounds", c.contest.max_rounds);
    cr.reject_unknown();
  }
  if (const auto* p = r.find("contest_mock")) {
    detail::ObjectReader mr(*p, "contest_mock", errors);
    mr.read("subtasks", c.contest_mock.subtasks);
    mr.read("base_quality", c.contest_mock.base_quality);
    mr.read("feedback_gain", c.contest_mock.feedback_gain);
    mr.reject_unknown();
  }
  r.reject_unknown();
  return c;
}

void append(std::vector<FieldError>& to, std::vector<FieldError> from) {
  to.insert(to.end(), std::make_move_iterator(from.begin()), std::make_move_iterator(from.end()));
}

}  // namespace

std::vector<FieldError> check_experiment(const ExperimentConfig& c) {
  std::vector<FieldError> errors;
  if (c.schema_version != kSchemaVersion)
    errors.push_back({"schema_version", fmt::format("unsupported version {}, expected {}", c.schema_version,
                                                    kSchemaVersion)});
  if (!(c.init.answer_bias >= 0.0)) errors.push_back({"init.answer_bias", "must be non-negative"});
  if (!(c.init.noise >= 0.0)) errors.push_back({"init.noise", "must be non-negative"});
  switch (c.mode) {
    case Mode::train_pipeline:
      if (c.pipeline.stages.empty()) errors.push_back({"pipeline.stages", "must not be empty"});
      append(errors, pipeline::check_pipeline(c.pipeline));
      break;
    case Mode::grpo_only:
    case Mode::mopd_only: {
      append(errors, stage::check_stage(c.stage, "stage"));
      stage::validate_scale(c.scale, errors, "scale");
      const auto wanted = c.mode == Mode::mopd_only ? stage::Algorithm::mopd : stage::Algorithm::grpo;
      if (c.stage.algorithm != wanted)
        errors.push_back({"stage.algorithm", fmt::format("mode {} needs algorithm {}", to_string(c.mode),
                                                         stage::to_string(wanted))});
      if (c.mode == Mode::mopd_only && !(c.teacher_answer_bias >= 0.0))
        errors.push_back({"teacher_answer_bias", "must be non-negative"});
      break;
    }
    case Mode::tts_proof:
      append(errors, tts::check_tts(c.tts));
      if (c.proof_mock.kind != "scripted" && c.proof_mock.kind != "policy")
        errors.push_back({"proof_mock.kind", "must be scripted or policy"});
      if (c.proof_mock.problems < 1) errors.push_back({"proof_mock.problems", "must be at least 1"});
      if (c.proof_mock.policy.max_len < 1) errors.push_back({"proof_mock.max_len", "must be at least 1"});
      if (!(c.proof_mock.policy.verifier_noise >= 0.0 && c.proof_mock.policy.verifier_noise <= 1.0))
        errors.push_back({"proof_mock.verifier_noise", "must lie in [0, 1]"});
      if (!(c.proof_mock.policy.refine_temperature > 0.0))
        errors.push_back({"proof_mock.refine_temperature", "must be positive"});
      if (!(c.proof_mock.base_quality >= 0.0 && c.proof_mock.base_quality <= 1.0))
        errors.push_back({"proof_mock.base_quality", "must lie in [0, 1]"});
      if (!(c.proof_mock.refine_gain >= 0.0 && c.proof_mock.refine_gain <= 1.0))
        errors.push_back({"proof_mock.refine_gain", "must lie in [0, 1]"});
      break;
    case Mode::tts_contest:
      append(errors, tts::check_contest(c.contest));
      if (c.contest_mock.subtasks < 1) errors.push_back({"contest_mock.subtasks", "must be at least 1"});
      if (!(c.contest_mock.base_quality >= 0.0)) errors.push_back({"contest_mock.base_quality", "must be non-negative"});
      if (!(c.contest_mock.feedback_gain >= 0.0))
        errors.push_back({"contest_mock.feedback_gain", "must be non-negative"});
      break;
    case Mode::elo:
      if (c.contests_path.empty() && c.synthetic_contests < 1)
        errors.push_back({"synthetic_contests", "must be at least 1 when no contest file is given"});
      break;
  }
  return errors;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw InvalidArgument("override key '" + key + "' has an empty segment");
    parts.push_back(part);
  }
  if (key.back() == '.') throw InvalidArgument("override key '" + key + "' has an empty segment");

  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& part = parts[i];
    json* next = nullptr;
    if (node->is_array()) {
      std::size_t index = 0;
      try {
        std::size_t used = 0;
        index = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw InvalidArgument("override key '" + key + "': '" + part + "' is not an array index");
      }
      if (index >= node->size()) throw InvalidArgument("override key '" + key + "': index " + part + " out of range");
      next = &(*node)[index];
    } else {
      if (!node->is_object() && !node->is_null())
        throw InvalidArgument("override key '" + key + "': '" + part + "' is below a scalar");
      next = &(*node)[part];
    }
    if (i + 1 == parts.size()) *next = value;
    node = next;
  }
}

ExperimentConfig resolve_config(const RunRequest& request) {
  json file = json::object();
  if (request.config_path) {
    std::ifstream in(*request.config_path);
    if (!in) throw ValidationError("config", "cannot open " + request.config_path->string());
    file = json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ValidationError("config", "malformed JSON in " + request.config_path->string());
    if (!file.is_object()) throw ValidationError("config", "expected a JSON object");
  }

  // The mode picks the defaults, so settle it before anything else.
  json probe = file;
  std::vector<FieldError> errors;
  for (const auto& o : request.overrides) {
    try {
      apply_override(probe, o);
    } catch (const std::exception& e) {
      errors.push_back({"--set", e.what()});
    }
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
  Mode mode = Mode::train_pipeline;
  try {
    if (request.mode) mode = parse_mode(*request.mode);
    else if (probe.contains("mode")) mode = parse_mode(probe["mode"].is_string() ? probe["mode"].get<std::string>() : "");
  } catch (const std::exception& e) {
    throw ValidationError("mode", e.what());
  }

  json doc = json(to_json(default_config(mode)));
  doc.merge_patch(file);
  for (const auto& o : request.overrides) apply_override(doc, o);
  doc["mode"] = std::string(to_string(mode));
  if (request.seed) doc["seed"] = *request.seed;

  ExperimentConfig config = config_from_json(doc, mode, errors);
  append(errors, check_experiment(config));
  if (!errors.empty()) throw ValidationError(std::move(errors));
  return config;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const PipelineFault*>(&e)) return "PipelineFault";
  if (dynamic_cast<const NumericFault*>(&e)) return "NumericFault";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "InvalidArgument";
  if (dynamic_cast<const InvalidState*>(&e)) return "InvalidState";
  return "RuntimeError";
}

int emit_error(const ordered_json& record, const fs::path& out_dir, std::ostream& err) {
  err << record.dump() << '\n';
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!ec) {
    std::ofstream f(out_dir / "error.json");
    if (f) f << record.dump(2) << '\n';
  }
  return record["exit_code"].get<int>();
}

int validation_failure(const ValidationError& e, const fs::path& out_dir, std::ostream& err) {
  ordered_json record;
  record["status"] = "invalid_config";
  record["exit_code"] = 2;
  record["errors"] = ordered_json::array();
  for (const auto& f : e.errors()) record["errors"].push_back({{"field", f.field}, {"message", f.message}});
  return emit_error(record, out_dir, err);
}

int runtime_failure(const std::exception& e, const fs::path& out_dir, std::ostream& err) {
  ordered_json record;
  record["status"] = "runtime_fault";
  record["exit_code"] = 1;
  record["error_type"] = error_type(e);
  record["message"] = e.what();
  if (const auto* nf = dynamic_cast<const NumericFault*>(&e)) record["index"] = nf->index();
  return emit_error(record, out_dir, err);
}

envs::EnvRegistry load_envs(const ExperimentConfig& c) {
  if (c.corpus_path.empty()) return envs::EnvRegistry(c.seed);
  std::ifstream in(c.corpus_path);
  if (!in) throw ConfigError("cannot open task corpus " + c.corpus_path);
  std::map<Domain, std::vector<envs::Task>> pools;
  for (auto& t : envs::read_task_corpus(in)) pools[t.domain].push_back(std::move(t));
  return envs::EnvRegistry(std::move(pools));
}

std::vector<envs::Task> all_tasks(const envs::EnvRegistry& registry) {
  std::vector<envs::Task> out;
  for (Domain d : envs::kAllDomains)
    if (registry.has_domain(d)) {
      const auto pool = registry.validation_pool(d);
      out.insert(out.end(), pool.begin(), pool.end());
    }
  return out;
}

ordered_json scores_json(const std::map<Domain, double>& scores) {
  ordered_json j = ordered_json::object();
  for (const auto& [d, s] : scores) j[std::string(envs::to_string(d))] = s;
  return j;
}

// Runs a pipeline and writes metrics, checkpoints, the final checkpoint and a result summary.
void run_training(const ExperimentConfig& c, pipeline::PipelineSpec spec, const envs::EnvRegistry& registry,
                  const policy::PolicyParams& init, const fs::path& out, const fs::path& ckpt_dir, int workers,
                  std::ostream& log) {
  std::ofstream metrics_out(out / "metrics.jsonl", std::ios::binary);
  if (!metrics_out) throw std::runtime_error("cannot write " + (out / "metrics.jsonl").string());
  pipeline::RunOptions opts;
  opts.workers = workers;
  opts.metrics_out = &metrics_out;
  opts.checkpoint_dir = ckpt_dir;
  opts.exact_kl = c.exact_kl;
  const auto result = pipeline::run_pipeline(spec, init, registry, c.seed, opts);
  metrics_out.close();
  policy::save_checkpoint(ckpt_dir / "final.ckpt", result.final_policy);

  ordered_json summary;
  summary["mode"] = to_string(c.mode);
  summary["seed"] = c.seed;
  summary["evaluations"] = ordered_json::array();
  for (const auto& e : result.evaluations)
    summary["evaluations"].push_back({{"stage", e.stage}, {"step", e.step}, {"scores", scores_json(e.scores)}});
  summary["teacher_selections"] = ordered_json::object();
  for (const auto& [stage_name, sel] : result.teacher_selections) {
    ordered_json s = ordered_json::object();
    for (const auto& [d, ref] : sel) s[std::string(envs::to_string(d))] = ref;
    summary["teacher_selections"][stage_name] = s;
  }
  write_text(out / "result.json", summary.dump(2) + "\n");

  std::ifstream in(out / "metrics.jsonl");
  const auto files = report::write_report(metrics::read_metrics(in), out / "report");
  log << report::summarize(result.steps.empty() && result.evaluations.empty()
                               ? metrics::MetricsFile{}
                               : metrics::MetricsFile{result.steps, result.evaluations, 0});
  log << fmt::format("wrote {} and {} plot file(s)\n", files.summary.string(), files.plots.size());
}

void run_single_stage(const ExperimentConfig& c, const envs::EnvRegistry& registry, const policy::PolicyParams& init,
                      const fs::path& out, const fs::path& ckpt_dir, int workers, std::ostream& log) {
  pipeline::PipelineSpec spec;
  spec.stages = {c.stage};
  spec.scale = c.scale;
  spec.apply_scale = c.apply_scale;
  spec.eval_domains.clear();
  for (const auto& [d, w] : c.stage.blend)
    if (w > 0.0) spec.eval_domains.push_back(d);

  if (c.mode == Mode::mopd_only) {
    // Generated teachers are written as checkpoints and bound by path.
    for (auto& [d, ref] : spec.stages[0].teachers) {
      if (ref != kGeneratedTeacher) continue;
      if (!registry.has_domain(d))
        throw ConfigError("no task pool for teacher domain '" + std::string(envs::to_string(d)) + "'");
      envs::InitialPolicyOptions opts = c.init;
      opts.answer_bias = c.teacher_answer_bias;
      opts.seed = derive_seed(c.seed, {0x7EAC, static_cast<std::uint64_t>(d)});
      opts.version_tag = "teacher";
      const auto path = ckpt_dir / "teachers" / (std::string(envs::to_string(d)) + ".ckpt");
      policy::save_checkpoint(path, envs::make_initial_policy(registry.validation_pool(d), opts));
      ref = path.string();
    }
  }
  run_training(c, std::move(spec), registry, init, out, ckpt_dir, workers, log);
}

void run_proof(const ExperimentConfig& c, const fs::path& out, int workers, std::ostream& log) {
  std::vector<std::string> ids;
  tts::MockProofStack stack;
  if (c.proof_mock.kind == "policy") {
    const auto registry = load_envs(c);
    const auto pool = registry.validation_pool(Domain::math);
    std::vector<envs::Task> tasks(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(
                                                    std::min(pool.size(), static_cast<std::size_t>(c.proof_mock.problems))));
    for (const auto& t : tasks) ids.push_back(t.task_id);
    auto policy = std::make_shared<const policy::PolicyParams>(envs::make_initial_policy(pool, c.init));
    stack = tts::make_policy_proof_stack(std::move(policy), std::move(tasks), c.proof_mock.policy);
  } else {
    for (int i = 0; i < c.proof_mock.problems; ++i) ids.push_back(fmt::format("P{}", i + 1));
    stack = tts::make_mock_proof_stack(c.proof_mock.base_quality, c.proof_mock.refine_gain);
  }
  std::ofstream rounds(out / "tts_rounds.jsonl", std::ios::binary);
  ordered_json summary;
  summary["mode"] = to_string(c.mode);
  summary["problems"] = ordered_json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const tts::Problem problem{ids[i], "toy proof problem"};
    const auto r = tts::generate_verify_refine(problem, stack.generator, stack.verifier, stack.refiner, c.tts,
                                               derive_seed(c.seed, {0x7750, static_cast<std::uint64_t>(i)}), workers);
    for (const auto& e : r.log) {
      ordered_json line;
      line["problem"] = problem.id;
      line.update(tts::to_json(e));
      rounds << line.dump() << '\n';
    }
    summary["problems"].push_back({{"problem", problem.id},
                                   {"best_candidate", r.best.id},
                                   {"best_mean_score", r.best.mean_score()},
                                   {"best_by_round", r.best_by_round},
                                   {"rounds", r.rounds},
                                   {"generator_calls", r.generator_calls},
                                   {"reached_threshold", r.reached_threshold}});
    log << fmt::format("{}: best mean {:.5f} after {} round(s), {} generator calls{}\n", problem.id,
                       r.best.mean_score(), r.rounds, r.generator_calls,
                       r.reached_threshold ? ", threshold reached" : "");
  }
  write_text(out / "result.json", summary.dump(2) + "\n");
}

void run_contest(const ExperimentConfig& c, const fs::path& out, std::ostream& log) {
  const auto stack = tts::make_mock_contest_stack(c.contest_mock.base_quality, c.contest_mock.feedback_gain);
  tts::ContestProblem problem{"toy-contest", "toy contest problem", {}};
  const double share = 100.0 / c.contest_mock.subtasks;
  for (int i = 0; i < c.contest_mock.subtasks; ++i)
    problem.subtasks.push_back({fmt::format("S{}", i + 1), fmt::format("n <= {}", 10 * (i + 1)), share});
  const auto r = tts::generate_select_submit(problem, stack.generator, stack.judge, c.contest, c.seed);

  std::ofstream subs(out / "submissions.jsonl", std::ios::binary);
  for (const auto& s : r.history) subs << tts::to_json(s).dump() << '\n';
  ordered_json summary;
  summary["mode"] = to_string(c.mode);
  summary["best_score"] = r.best_score;
  summary["rounds"] = r.rounds;
  summary["generated"] = r.generated;
  summary["best_by_round"] = r.best_by_round;
  summary["subtask_best"] = r.subtask_best;
  write_text(out / "result.json", summary.dump(2) + "\n");
  log << fmt::format("best score {:.2f} after {} round(s), {} submission(s)\n", r.best_score, r.rounds,
                     r.history.size());
}

void run_elo(const ExperimentConfig& c, const fs::path& out, int workers, std::ostream& log) {
  std::vector<elo::ContestSpec> contests;
  if (c.contests_path.empty()) {
    contests = elo::synthetic_contests(c.synthetic_contests, c.seed);
  } else {
    std::ifstream in(c.contests_path);
    if (!in) throw ConfigError("cannot open contest file " + c.contests_path);
    contests = elo::read_contests(in);
    if (contests.empty()) throw ValidationError("paths.contests", "contest file has no records");
  }
  const auto estimate = elo::evaluate_contests(contests, workers);
  const std::string table = elo::format_table(estimate);
  write_text(out / "elo_table.txt", table);

  ordered_json summary;
  summary["mode"] = to_string(c.mode);
  summary["rating"] = estimate.rating;
  summary["contests"] = ordered_json::array();
  for (std::size_t i = 0; i < estimate.contests.size(); ++i) {
    const auto& e = estimate.contests[i];
    ordered_json row{{"contest", e.contest_id}, {"score", e.score}, {"penalty", e.penalty},
                     {"est_rank", e.est_rank},  {"elo", e.elo}};
    if (contests[i].medals) row["medal"] = elo::to_string(elo::classify_medal(e.score, *contests[i].medals));
    summary["contests"].push_back(row);
  }
  write_text(out / "result.json", summary.dump(2) + "\n");
  log << table;
}

}  // namespace

int run(const RunRequest& request, std::ostream& log, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = resolve_config(request);
  } catch (const ValidationError& e) {
    return validation_failure(e, request.out_dir, err);
  } catch (const std::exception& e) {
    return validation_failure(ValidationError("config", e.what()), request.out_dir, err);
  }

  const fs::path out = request.out_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    return validation_failure(ValidationError("out", "cannot create output directory " + out.string()), out, err);
  fs::remove(out / "error.json", ec);

  try {
    write_text(out / "config.json", to_json(config).dump(2) + "\n");
    const fs::path ckpt_dir = config.checkpoint_dir.empty() ? out / "checkpoints" : fs::path(config.checkpoint_dir);
    switch (config.mode) {
      case Mode::train_pipeline:
      case Mode::grpo_only:
      case Mode::mopd_only: {
        const auto registry = load_envs(config);
        const auto tasks = all_tasks(registry);
        const auto init = envs::make_initial_policy(tasks, config.init);
        fs::create_directories(ckpt_dir);
        if (config.mode == Mode::train_pipeline)
          run_training(config, config.pipeline, registry, init, out, ckpt_dir, request.workers, log);
        else
          run_single_stage(config, registry, init, out, ckpt_dir, request.workers, log);
        break;
      }
      case Mode::tts_proof: run_proof(config, out, request.workers, log); break;
      case Mode::tts_contest: run_contest(config, out, log); break;
      case Mode::elo: run_elo(config, out, request.workers, log); break;
    }
  } catch (const ValidationError& e) {
    return validation_failure(e, out, err);
  } catch (const std::exception& e) {
    return runtime_failure(e, out, err);
  }
  return 0;
}

int report(const fs::path& metrics_path, const fs::path& out_dir, std::ostream& log, std::ostream& err) {
  try {
    std::ifstream in(metrics_path);
    if (!in) throw ConfigError("cannot open metrics file " + metrics_path.string());
    const auto m = metrics::read_metrics(in);
    const auto files = report::write_report(m, out_dir);
    log << report::summarize(m);
    for (const auto& p : files.plots) log << "plot: " << p.string() << '\n';
  } catch (const std::exception& e) {
    return runtime_failure(e, out_dir, err);
  }
  return 0;
}

}  // namespace cascade::experiment
