#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cascade/experiment.hpp"

namespace {

struct RunFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::string out = "out";
};

void add_run_flags(CLI::App& cmd, RunFlags& f) {
  cmd.add_option("--config", f.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd.add_option("--set", f.sets, "Override a config field, e.g. --set stage.steps=40 (repeatable)")
      ->allow_extra_args(false);
  cmd.add_option("--seed", f.seed, "Seed; overrides the config");
  cmd.add_option("--workers", f.workers, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  cmd.add_option("--out", f.out, "Output directory")->capture_default_str();
}

int dispatch(const RunFlags& f, std::optional<std::string> mode) {
  cascade::experiment::RunRequest req;
  if (!f.config.empty()) req.config_path = f.config;
  req.mode = std::move(mode);
  req.overrides = f.sets;
  req.seed = f.seed;
  req.workers = f.workers;
  req.out_dir = f.out;
  return cascade::experiment::run(req, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cascade post-training lab"};
  app.require_subcommand(1);

  RunFlags flags;
  auto* run = app.add_subcommand("run", "Run the mode named in the config (default train_pipeline)");
  add_run_flags(*run, flags);

  std::vector<std::pair<CLI::App*, std::string>> modes;
  for (const char* name : {"train_pipeline", "mopd_only", "grpo_only", "tts_proof", "tts_contest", "elo"}) {
    auto* cmd = app.add_subcommand(name, std::string("Run mode ") + name);
    add_run_flags(*cmd, flags);
    modes.emplace_back(cmd, name);
  }

  std::string metrics_path, report_out = "report";
  auto* rep = app.add_subcommand("report", "Summarize a metrics file");
  rep->add_option("metrics", metrics_path, "metrics.jsonl to summarize")->required();
  rep->add_option("--out", report_out, "Directory for summary.txt and plots")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*rep) return cascade::experiment::report(metrics_path, report_out, std::cout, std::cerr);
  if (*run) return dispatch(flags, std::nullopt);
  for (const auto& [cmd, name] : modes)
    if (*cmd) return dispatch(flags, name);
  return 2;
}
