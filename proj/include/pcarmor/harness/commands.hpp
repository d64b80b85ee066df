#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <string>
#include <vector>

#include "pcarmor/attacks.hpp"
#include "pcarmor/defense.hpp"
#include "pcarmor/harness/report.hpp"
#include "pcarmor/model.hpp"

namespace pcarmor::harness {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

struct GenDataOptions {
  fs::path out;
  std::uint64_t seed = 0;
  int per_class = 100;
  int points = 256;
  double train_fraction = 0.8;
  double jitter = 0.01;
  double max_rotation = std::numbers::pi;  // radians, every axis
};

void cmd_gen_data(const GenDataOptions& opt, std::ostream& log);

struct TrainCmdOptions {
  fs::path data;
  fs::path out;      // weights file
  fs::path metrics;  // empty: <out>.metrics.csv
  std::uint64_t seed = 0;
  int epochs = 30;
  int batch_size = 32;
  double lr = 2e-3;
  double lr_decay = 1.0;
  bool force = false;
};

/// Returns the final test accuracy in percent.
double cmd_train(const TrainCmdOptions& opt, std::ostream& log);

struct BuildDbOptions {
  fs::path weights;
  fs::path data;
  fs::path out;
};

void cmd_build_db(const BuildDbOptions& opt, std::ostream& log);

struct AttackCmdOptions {
  fs::path weights;
  fs::path data;
  fs::path out;  // adversarial set directory
  std::uint64_t seed = 0;
  /// Kind, targeted flag and budgets; target and seed are filled per example.
  AttackConfig attack;
  /// Test clouds per class. Targeted: each is attacked toward every other
  /// class. Untargeted: 0 attacks the whole test set.
  int per_class = 0;
  int threads = 1;
};

std::vector<AdvExample> cmd_attack(const AttackCmdOptions& opt, std::ostream& log);

struct DefendCmdOptions {
  fs::path weights;
  fs::path db;
  fs::path input;  // .xyz
  fs::path out;    // optional neighbor CSV
  DefenseConfig defense;
};

DefenseVerdict cmd_defend(const DefendCmdOptions& opt, std::ostream& log);

struct EvalCmdOptions {
  fs::path weights;
  fs::path db;
  fs::path data;
  std::vector<fs::path> adv_sets;
  fs::path out;  // CSV; the text table goes next to it with a .txt extension
  std::uint64_t seed = 0;
  DefenseConfig defense;  // weighting is ignored, all three are evaluated
  double srs_fraction = 0.25;
  int sor_k = 2;
  double sor_alpha = 1.1;
  int threads = 1;
};

EvalReport cmd_eval(const EvalCmdOptions& opt, std::ostream& log);

struct SweepKOptions {
  fs::path weights;
  fs::path db;
  fs::path data;
  std::vector<fs::path> adv_sets;
  fs::path out;
  std::vector<int> ks{1, 2, 5, 10, 15, 20, 30};
  DefenseConfig defense{.weighting = Weighting::entropy};  // k is swept
  int threads = 1;
};

/// One EvalCell per (k, input); inputs are Clean followed by the adversarial sets.
EvalReport cmd_sweep_k(const SweepKOptions& opt, std::ostream& log);

struct BenchOptions {
  fs::path weights;
  fs::path db;
  fs::path data;
  fs::path out;
  std::uint64_t seed = 0;
  int warmup = 50;
  int queries = 500;
  DefenseConfig defense;
  double srs_fraction = 0.25;
  int sor_k = 2;
  double sor_alpha = 1.1;
};

std::vector<LatencyStats> cmd_bench(const BenchOptions& opt, std::ostream& log);

/// Names used for the columns of an evaluation: directory name, made unique.
std::vector<std::string> input_set_names(const std::vector<fs::path>& dirs);

/// Full command-line entry point. Returns 0 on success, 2 on validation
/// errors, 3 on I/O errors and 1 for anything else.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pcarmor::harness
