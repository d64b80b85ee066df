#include "pcarmor/harness/report.hpp"

#include <algorithm>
#include <cmath>

#include "pcarmor/errors.hpp"
#include "pcarmor/harness/csv.hpp"

namespace pcarmor::harness {

void EvalReport::validate() const {
  if (cells.size() != defenses.size()) throw ValidationError("EvalReport: row count mismatch");
  for (const auto& row : cells) {
    if (row.size() != inputs.size()) throw ValidationError("EvalReport: column count mismatch");
    for (const auto& c : row) {
      if (c.total < 0 || c.correct < 0 || c.correct > c.total) {
        throw ValidationError("EvalReport: inconsistent cell " + std::to_string(c.correct) + "/" +
                              std::to_string(c.total));
      }
    }
  }
}

std::string format_percent(double p) { return format_fixed(p, 2); }

namespace {

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string settings_block(const std::vector<std::pair<std::string, std::string>>& env) {
  std::string out;
  for (const auto& [k, v] : env) out += "# " + k + " = " + v + "\n";
  return out;
}

}  // namespace

std::string format_eval_text(const EvalReport& report) {
  report.validate();
  std::size_t name_w = 7;
  for (const auto& d : report.defenses) name_w = std::max(name_w, d.size());

  std::vector<std::size_t> col_w;
  std::vector<double> top;  // column maxima; compared on the printed value
  for (std::size_t j = 0; j < report.inputs.size(); ++j) {
    col_w.push_back(std::max<std::size_t>(report.inputs[j].size(), 8));
    double t = -1.0;
    for (std::size_t i = 0; i < report.defenses.size(); ++i) {
      t = std::max(t, std::stod(format_percent(report.at(i, j).percent())));
    }
    top.push_back(t);
  }

  std::string out = settings_block(report.environment);
  out += pad_right("defense", name_w);
  for (std::size_t j = 0; j < report.inputs.size(); ++j) out += "  " + pad_left(report.inputs[j], col_w[j]) + " ";
  out += "\n";
  out += pad_right("", name_w);
  for (std::size_t j = 0; j < report.inputs.size(); ++j) {
    const int n = report.defenses.empty() ? 0 : report.at(0, j).total;
    out += "  " + pad_left("n=" + std::to_string(n), col_w[j]) + " ";
  }
  out += "\n";
  for (std::size_t i = 0; i < report.defenses.size(); ++i) {
    out += pad_right(report.defenses[i], name_w);
    for (std::size_t j = 0; j < report.inputs.size(); ++j) {
      const std::string p = format_percent(report.at(i, j).percent());
      out += "  " + pad_left(p, col_w[j]) + (std::stod(p) == top[j] ? "*" : " ");
    }
    out += "\n";
  }
  return out;
}

std::string eval_csv(const EvalReport& report) {
  report.validate();
  CsvWriter w({"defense", "input", "correct", "total", "accuracy"});
  for (std::size_t i = 0; i < report.defenses.size(); ++i) {
    for (std::size_t j = 0; j < report.inputs.size(); ++j) {
      const auto& c = report.at(i, j);
      w.row({report.defenses[i], report.inputs[j], std::to_string(c.correct),
             std::to_string(c.total), format_percent(c.percent())});
    }
  }
  return w.str();
}

LatencyStats summarize_latency(std::string name, std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw ValidationError("summarize_latency: no samples for " + name);
  LatencyStats s;
  s.name = std::move(name);
  s.queries = static_cast<int>(samples_ms.size());
  double sum = 0.0;
  for (double v : samples_ms) sum += v;
  s.mean_ms = sum / static_cast<double>(samples_ms.size());
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  s.median_ms = n % 2 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  s.min_ms = samples_ms.front();
  s.max_ms = samples_ms.back();
  return s;
}

std::string format_latency_text(const std::vector<LatencyStats>& rows,
                                const std::vector<std::pair<std::string, std::string>>& environment) {
  std::size_t name_w = 7;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out = settings_block(environment);
  out += pad_right("method", name_w);
  for (const char* h : {"queries", "mean_ms", "median_ms", "p95_ms"}) out += "  " + pad_left(h, 10);
  out += "\n";
  for (const auto& r : rows) {
    out += pad_right(r.name, name_w) + "  " + pad_left(std::to_string(r.queries), 10);
    for (double v : {r.mean_ms, r.median_ms, r.p95_ms}) out += "  " + pad_left(format_fixed(v, 3), 10);
    out += "\n";
  }
  return out;
}

std::string latency_csv(const std::vector<LatencyStats>& rows) {
  CsvWriter w({"method", "queries", "mean_ms", "median_ms", "p95_ms", "min_ms", "max_ms"});
  for (const auto& r : rows) {
    w.row({r.name, std::to_string(r.queries), format_fixed(r.mean_ms, 3), format_fixed(r.median_ms, 3),
           format_fixed(r.p95_ms, 3), format_fixed(r.min_ms, 3), format_fixed(r.max_ms, 3)});
  }
  return w.str();
}

}  // namespace pcarmor::harness
