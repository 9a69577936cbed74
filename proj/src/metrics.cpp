#include "cascade/metrics.hpp"

#include <istream>
#include <ostream>

namespace cascade::metrics {

nlohmann::ordered_json to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["kind"] = "step";
  j["stage"] = m.stage;
  j["algorithm"] = m.algorithm;
  j["step"] = m.step;
  j["skipped"] = m.skipped;
  j["mean_reward"] = m.mean_reward;
  j["entropy"] = m.entropy;
  j["mean_len"] = m.mean_len;
  j["filtered_frac"] = m.filtered_frac;
  j["ratio_dev"] = m.ratio_dev;
  j["grad_norm"] = m.grad_norm;
  j["lr"] = m.lr;
  j["num_rollouts"] = m.num_rollouts;
  j["num_tokens"] = m.num_tokens;
  if (m.reverse_kl) j["reverse_kl"] = *m.reverse_kl;
  if (m.masked_frac) j["masked_frac"] = *m.masked_frac;
  if (m.exact_reverse_kl) j["exact_reverse_kl"] = *m.exact_reverse_kl;
  return j;
}

nlohmann::ordered_json to_json(const StageEvaluation& e) {
  nlohmann::ordered_json j;
  j["kind"] = "eval";
  j["stage"] = e.stage;
  j["step"] = e.step;
  nlohmann::ordered_json scores = nlohmann::ordered_json::object();
  for (const auto& [d, s] : e.scores) scores[std::string(envs::to_string(d))] = s;
  j["scores"] = scores;
  return j;
}

void MetricsWriter::write(const StepMetrics& m) {
  if (out_) *out_ << to_json(m).dump() << '\n' << std::flush;
}

void MetricsWriter::write(const StageEvaluation& e) {
  if (out_) *out_ << to_json(e).dump() << '\n' << std::flush;
}

namespace {

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return std::nullopt;
  return it->get<double>();
}

StepMetrics step_from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.stage = j.at("stage").get<std::string>();
  m.algorithm = j.value("algorithm", std::string{});
  m.step = j.at("step").get<int>();
  m.skipped = j.value("skipped", false);
  m.mean_reward = j.value("mean_reward", 0.0);
  m.entropy = j.value("entropy", 0.0);
  m.mean_len = j.value("mean_len", 0.0);
  m.filtered_frac = j.value("filtered_frac", 0.0);
  m.ratio_dev = j.value("ratio_dev", 0.0);
  m.grad_norm = j.value("grad_norm", 0.0);
  m.lr = j.value("lr", 0.0);
  m.num_rollouts = j.value("num_rollouts", std::size_t{0});
  m.num_tokens = j.value("num_tokens", std::size_t{0});
  m.reverse_kl = optional_number(j, "reverse_kl");
  m.masked_frac = optional_number(j, "masked_frac");
  m.exact_reverse_kl = optional_number(j, "exact_reverse_kl");
  return m;
}

StageEvaluation eval_from_json(const nlohmann::json& j) {
  StageEvaluation e;
  e.stage = j.at("stage").get<std::string>();
  e.step = j.at("step").get<int>();
  for (const auto& [k, v] : j.at("scores").items()) e.scores[envs::parse_domain(k)] = v.get<double>();
  return e;
}

}  // namespace

MetricsFile read_metrics(std::istream& in) {
  MetricsFile file;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "step") file.steps.push_back(step_from_json(j));
      else if (kind == "eval") file.evaluations.push_back(eval_from_json(j));
      else ++file.corrupt_lines;
    } catch (const std::exception&) {
      ++file.corrupt_lines;
    }
  }
  return file;
}

}  // namespace cascade::metrics
