#pragma once

// Line-delimited metrics records shared by the trainers, the pipeline and the report tool.
// Every record is one JSON object with a "kind" field: "step" or "eval".

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/envs.hpp"

namespace cascade::metrics {

struct StepMetrics {
  std::string stage;
  std::string algorithm;
  int step = 0;
  bool skipped = false;
  double mean_reward = 0.0;
  double entropy = 0.0;
  double mean_len = 0.0;
  double filtered_frac = 0.0;
  /// max |pi_train / pi_inf - 1| over sampled tokens.
  double ratio_dev = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  std::size_t num_rollouts = 0;
  std::size_t num_tokens = 0;
  // Distillation only.
  std::optional<double> reverse_kl;        // mean (train_lp - teacher_lp) over valid sampled tokens
  std::optional<double> masked_frac;       // share of valid tokens whose truncated weight is 0
  std::optional<double> exact_reverse_kl;  // sequence-level KL(student || teacher), when computed
};

/// Per-domain validation scores recorded at the end of a stage.
struct StageEvaluation {
  std::string stage;
  int step = 0;
  std::map<envs::Domain, double> scores;
};

nlohmann::ordered_json to_json(const StepMetrics& m);
nlohmann::ordered_json to_json(const StageEvaluation& e);

/// Writes records as they happen; flushes after every line.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream* out) : out_(out) {}
  void write(const StepMetrics& m);
  void write(const StageEvaluation& e);

 private:
  std::ostream* out_;
};

/// Parsed metrics file: records that failed to parse are counted, not kept.
struct MetricsFile {
  std::vector<StepMetrics> steps;
  std::vector<StageEvaluation> evaluations;
  std::size_t corrupt_lines = 0;
};

MetricsFile read_metrics(std::istream& in);

}  // namespace cascade::metrics
