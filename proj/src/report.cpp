#include "cascade/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

#include "cascade/errors.hpp"
#include "cascade/pipeline.hpp"

namespace cascade::report {

using metrics::StepMetrics;

std::vector<std::string> stage_order(std::span<const StepMetrics> steps) {
  std::vector<std::string> order;
  for (const auto& s : steps)
    if (std::find(order.begin(), order.end(), s.stage) == order.end()) order.push_back(s.stage);
  return order;
}

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "-"; }

std::string stage_table(const std::string& stage, std::span<const StepMetrics> steps) {
  std::string out = fmt::format("== stage {} ==\n", stage);
  out += fmt::format("{:>5} {:>5} {:>8} {:>8} {:>6} {:>8} {:>10} {:>10} {:>9} {:>8}\n", "step", "skip", "reward",
                     "entropy", "len", "filtered", "grad_norm", "lr", "rev_kl", "masked");
  double reward_sum = 0.0;
  std::size_t n = 0, skipped = 0;
  for (const auto& s : steps) {
    if (s.stage != stage) continue;
    out += fmt::format("{:>5} {:>5} {:>8.4f} {:>8.4f} {:>6.2f} {:>8.3f} {:>10.4g} {:>10.3g} {:>9} {:>8}\n", s.step,
                       s.skipped ? "yes" : "no", s.mean_reward, s.entropy, s.mean_len, s.filtered_frac, s.grad_norm,
                       s.lr, optional_cell(s.reverse_kl), optional_cell(s.masked_frac));
    reward_sum += s.mean_reward;
    ++n;
    skipped += s.skipped ? 1 : 0;
  }
  out += fmt::format("steps {}, skipped {}, mean reward {:.4f}\n\n", n, skipped,
                     n ? reward_sum / static_cast<double>(n) : 0.0);
  return out;
}

std::string evaluation_table(std::span<const metrics::StageEvaluation> evals) {
  std::vector<envs::Domain> domains;
  for (const auto& e : evals)
    for (const auto& [d, s] : e.scores)
      if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
  std::sort(domains.begin(), domains.end());

  std::string out = "== evaluations ==\n";
  out += fmt::format("{:<18} {:>5}", "checkpoint", "step");
  for (auto d : domains) out += fmt::format(" {:>11}", envs::to_string(d));
  out += '\n';
  for (const auto& e : evals) {
    out += fmt::format("{:<18} {:>5}", e.stage, e.step);
    for (auto d : domains) {
      auto it = e.scores.find(d);
      out += it == e.scores.end() ? fmt::format(" {:>11}", "-") : fmt::format(" {:>11.4f}", it->second);
    }
    out += '\n';
  }
  const auto rows = pipeline::regression_report(evals);
  bool any = false;
  for (const auto& r : rows) {
    if (!r.flagged) continue;
    if (!any) out += "regressions (more than 0.1 below the best earlier score):\n";
    any = true;
    out += fmt::format("  {} {} {:.4f} ({:+.4f})\n", r.stage, envs::to_string(r.domain), r.score, r.delta_from_best);
  }
  out += '\n';
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

std::string summarize(const metrics::MetricsFile& m) {
  std::string out;
  for (const auto& stage : stage_order(m.steps)) out += stage_table(stage, m.steps);
  if (!m.evaluations.empty()) out += evaluation_table(m.evaluations);
  if (m.corrupt_lines > 0) out += fmt::format("skipped {} corrupt line(s)\n", m.corrupt_lines);
  return out;
}

std::string render_svg(std::span<const Series> series, const std::string& title, const std::string& y_label) {
  constexpr double W = 720, H = 400, L = 70, R = 160, T = 40, B = 50;
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      W, H);
  out += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"15\">{}</text>\n", L, escape_xml(title));
  out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", L, H - B, W - R);
  out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", L, T, H - B);
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0;
    const double x = x0 + (x1 - x0) * i / 4.0;
    out += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 6, py(y) + 4, y);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px(x), H - B + 18, x);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n", (L + W - R) / 2, H - 12);
  out += fmt::format("<text x=\"16\" y=\"{0}\" transform=\"rotate(-90 16 {0})\" text-anchor=\"middle\">{1}</text>\n",
                     (T + H - B) / 2, escape_xml(y_label));
  std::size_t k = 0;
  for (const auto& s : series) {
    std::string points;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
        points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    if (points.empty()) continue;
    const char* color = kColors[k % std::size(kColors)];
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, points);
    out += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", W - R + 10, T + 16 * k, color,
                       escape_xml(s.label));
    ++k;
  }
  out += "</svg>\n";
  return out;
}

ReportFiles write_report(const metrics::MetricsFile& m, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  files.summary = out_dir / "summary.txt";
  write_file(files.summary, summarize(m));
  if (m.steps.empty()) return files;

  // Steps are plotted on a run-wide axis so stages follow each other.
  std::map<std::string, Series> kl, grad;
  bool any_kl = false;
  for (std::size_t i = 0; i < m.steps.size(); ++i) {
    const auto& s = m.steps[i];
    const double x = static_cast<double>(i);
    auto& g = grad[s.stage];
    g.label = s.stage;
    g.x.push_back(x);
    g.y.push_back(s.grad_norm);
    const auto& value = s.exact_reverse_kl ? s.exact_reverse_kl : s.reverse_kl;
    if (value) {
      auto& c = kl[s.stage];
      c.label = s.stage;
      c.x.push_back(x);
      c.y.push_back(*value);
      any_kl = true;
    }
  }
  const auto ordered = [&](std::map<std::string, Series>& by_stage) {
    std::vector<Series> out;
    for (const auto& name : stage_order(m.steps))
      if (auto it = by_stage.find(name); it != by_stage.end()) out.push_back(std::move(it->second));
    return out;
  };
  if (any_kl) {
    files.plots.push_back(out_dir / "reverse_kl.svg");
    write_file(files.plots.back(), render_svg(ordered(kl), "Reverse KL to teacher", "reverse KL (nats/token)"));
  }
  files.plots.push_back(out_dir / "grad_norm.svg");
  write_file(files.plots.back(), render_svg(ordered(grad), "Gradient norm", "grad norm"));
  return files;
}

}  // namespace cascade::report
