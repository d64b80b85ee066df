#pragma once

#include <string>
#include <utility>
#include <vector>

namespace pcarmor::harness {

struct EvalCell {
  int correct = 0;
  int total = 0;

  /// Accuracy in percent; 0 for an empty cell.
  double percent() const { return total > 0 ? 100.0 * correct / total : 0.0; }
};

/// Accuracy matrix: one row per defense, one column per input set (clean
/// first), plus the settings needed to reproduce it.
struct EvalReport {
  std::vector<std::string> defenses;
  std::vector<std::string> inputs;
  std::vector<std::vector<EvalCell>> cells;  // [defense][input]
  std::vector<std::pair<std::string, std::string>> environment;

  const EvalCell& at(std::size_t defense, std::size_t input) const {
    return cells.at(defense).at(input);
  }
  void validate() const;
};

/// Percentages as printed in both the table and the CSV.
std::string format_percent(double p);

/// Settings block, then a fixed-width table. '*' marks the best cell of
/// each column (every tied cell is marked).
std::string format_eval_text(const EvalReport& report);

/// defense,input,correct,total,accuracy; one row per cell in table order.
std::string eval_csv(const EvalReport& report);

struct LatencyStats {
  std::string name;
  int queries = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;  // nearest rank
  double min_ms = 0.0;
  double max_ms = 0.0;
};

LatencyStats summarize_latency(std::string name, std::vector<double> samples_ms);

std::string format_latency_text(const std::vector<LatencyStats>& rows,
                                const std::vector<std::pair<std::string, std::string>>& environment);
std::string latency_csv(const std::vector<LatencyStats>& rows);

}  // namespace pcarmor::harness
