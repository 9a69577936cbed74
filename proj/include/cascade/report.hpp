#pragma once

// Human-readable summaries of a metrics file: per-stage tables and SVG curves.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cascade/metrics.hpp"

namespace cascade::report {

/// One table per stage in first-appearance order, then the evaluation timeline with regression
/// flags and the corrupt-line count when non-zero. Empty input gives an empty string.
std::string summarize(const metrics::MetricsFile& metrics);

/// Names of the stages in first-appearance order.
std::vector<std::string> stage_order(std::span<const metrics::StepMetrics> steps);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart; series with no points are skipped.
std::string render_svg(std::span<const Series> series, const std::string& title, const std::string& y_label);

struct ReportFiles {
  std::filesystem::path summary;
  std::vector<std::filesystem::path> plots;
};

/// Writes summary.txt, plus reverse_kl.svg when any step carries a reverse-KL value and
/// grad_norm.svg when any step is present.
ReportFiles write_report(const metrics::MetricsFile& metrics, const std::filesystem::path& out_dir);

}  // namespace cascade::report
