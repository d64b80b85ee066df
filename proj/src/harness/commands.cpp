#include "pcarmor/harness/commands.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "pcarmor/harness/csv.hpp"
#include "pcarmor/harness/dataset_dir.hpp"
#include "pcarmor/rng.hpp"
#include "pcarmor/xyz_io.hpp"

namespace pcarmor::harness {

namespace {

using Env = std::vector<std::pair<std::string, std::string>>;

// Runs body(i) for i in [0, n). Work is handed out by index, results are
// written by index, so output order never depends on scheduling.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ValidationError(std::string("missing --") + what);
  if (!fs::exists(p)) throw IoError(std::string(what) + " '" + p.string() + "' does not exist");
}

void require_out(const fs::path& p) {
  if (p.empty()) throw ValidationError("missing --out");
}

std::string eigen_version() {
  return std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
         std::to_string(EIGEN_MINOR_VERSION);
}

Env base_env(const char* command, std::uint64_t seed) {
  return {{"command", command},
          {"pc-armor", kVersion},
          {"eigen", eigen_version()},
          {"seed", std::to_string(seed)}};
}

std::string join_paths(const std::vector<fs::path>& paths) {
  std::string s;
  for (const auto& p : paths) s += (s.empty() ? "" : ",") + p.string();
  return s;
}

void add_defense_env(Env& env, const DefenseConfig& d) {
  env.emplace_back("k", std::to_string(d.k));
  env.emplace_back("metric", std::string(to_string(d.metric)));
  env.emplace_back("dw_exponent", format_double(d.dw_exponent));
  env.emplace_back("dw_top", std::to_string(d.dw_top));
  env.emplace_back("uniform_fallback", d.uniform_fallback ? "true" : "false");
}

Index srs_count(const PointCloud& pc, double fraction) {
  return static_cast<Index>(std::lround(fraction * static_cast<double>(pc.size())));
}

void check_fraction(double f, const char* what) {
  if (!(f >= 0.0 && f < 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1)");
}

struct Inputs {
  std::vector<std::string> names;
  std::vector<std::vector<PointCloud>> clouds;
};

Inputs load_inputs(const DatasetDir& data, const std::vector<fs::path>& adv_sets) {
  Inputs in;
  in.names.push_back("Clean");
  in.clouds.push_back(data.test.clouds);
  const auto names = input_set_names(adv_sets);
  for (std::size_t i = 0; i < adv_sets.size(); ++i) {
    in.names.push_back(names[i]);
    in.clouds.push_back(read_adv_set(adv_sets[i]).clouds);
  }
  return in;
}

void write_report(const fs::path& out, const std::string& csv, const std::string& text) {
  write_text_file(out, csv);
  fs::path txt = out;
  txt.replace_extension(".txt");
  if (txt == out) txt += ".txt";
  write_text_file(txt, text);
}

}  // namespace

std::vector<std::string> input_set_names(const std::vector<fs::path>& dirs) {
  std::vector<std::string> names;
  for (const auto& d : dirs) {
    fs::path p = d;
    if (!p.has_filename()) p = p.parent_path();
    std::string base = p.filename().string();
    if (base.empty()) base = "adv";
    std::string name = base;
    for (int n = 2; name == "Clean" || std::find(names.begin(), names.end(), name) != names.end(); ++n) {
      name = base + "#" + std::to_string(n);
    }
    names.push_back(name);
  }
  return names;
}

// --- gen-data ----------------------------------------------------------------

void cmd_gen_data(const GenDataOptions& opt, std::ostream& log) {
  require_out(opt.out);
  if (!(opt.max_rotation >= 0.0)) throw ValidationError("--max-rotation must be >= 0");
  if (!(opt.jitter >= 0.0)) throw ValidationError("--jitter must be >= 0");
  DatasetOptions ds_opt;
  ds_opt.n_per_class = opt.per_class;
  ds_opt.n_points = opt.points;
  ds_opt.train_fraction = opt.train_fraction;
  ds_opt.test_fraction = 1.0 - opt.train_fraction;
  ds_opt.jitter_sigma = opt.jitter;
  ds_opt.max_rotation = {opt.max_rotation, opt.max_rotation, opt.max_rotation};
  ds_opt.seed = derive_seed(opt.seed, "gen-data");
  if (opt.points < 8) throw ValidationError("--points must be >= 8");
  const Dataset ds = build_dataset(ds_opt);
  write_dataset_dir(opt.out, ds);
  log << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clouds to "
      << opt.out.string() << "\n";
}

// --- train -------------------------------------------------------------------

double cmd_train(const TrainCmdOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.data, "data");
  if (fs::exists(opt.out) && !opt.force) {
    throw ValidationError("weights file '" + opt.out.string() + "' exists; pass --force to overwrite");
  }
  const DatasetDir data = read_dataset_dir(opt.data);
  if (data.train.clouds.empty()) throw ValidationError("dataset has no training clouds");

  ModelConfig config;
  config.seed = derive_seed(opt.seed, "model");
  TrainOptions topt;
  topt.epochs = opt.epochs;
  topt.batch_size = opt.batch_size;
  topt.lr = opt.lr;
  topt.lr_decay = opt.lr_decay;
  topt.seed = derive_seed(opt.seed, "train");
  const TrainResult result = train(config, data.train.clouds, topt, data.test.clouds);
  save_weights(opt.out, result.weights);

  CsvWriter metrics({"epoch", "train_loss", "train_accuracy", "test_accuracy"});
  for (const auto& m : result.history) {
    metrics.row({std::to_string(m.epoch), format_double(m.train_loss),
                 format_double(100.0 * m.train_accuracy),
                 m.test_accuracy ? format_double(100.0 * *m.test_accuracy) : std::string()});
    log << "epoch " << m.epoch << "  loss " << format_fixed(m.train_loss, 4) << "  train "
        << format_percent(100.0 * m.train_accuracy) << "%";
    if (m.test_accuracy) log << "  test " << format_percent(100.0 * *m.test_accuracy) << "%";
    log << "\n";
  }
  fs::path metrics_path = opt.metrics;
  if (metrics_path.empty()) {
    metrics_path = opt.out;
    metrics_path.replace_extension(".metrics.csv");
  }
  write_text_file(metrics_path, metrics.str());

  EvalCell cell;
  for (const auto& pc : data.test.clouds) {
    cell.correct += predict(result.weights, pc).label == *pc.label() ? 1 : 0;
    ++cell.total;
  }
  log << "weights " << to_hex(weights_fingerprint(result.weights)) << "\n";
  log << "final test accuracy: " << format_percent(cell.percent()) << "% (" << cell.correct << "/"
      << cell.total << ")\n";
  return cell.percent();
}

// --- build-db ----------------------------------------------------------------

void cmd_build_db(const BuildDbOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.weights, "weights");
  require_file(opt.data, "data");
  const ModelWeights weights = load_weights(opt.weights);
  const DatasetDir data = read_dataset_dir(opt.data);
  if (data.train.clouds.empty()) throw ValidationError("dataset has no training clouds");
  const FeatureDatabase db = build_feature_db(weights, data.train.clouds);
  save_feature_db(opt.out, db);
  log << "feature database: " << db.size() << " entries, d=" << db.feature_dim()
      << ", fingerprint " << to_hex(db.fingerprint()) << "\n";
}

// --- attack ------------------------------------------------------------------

std::vector<AdvExample> cmd_attack(const AttackCmdOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.weights, "weights");
  require_file(opt.data, "data");
  if (opt.per_class < 0) throw ValidationError("--per-class must be >= 0");
  if (opt.attack.targeted && opt.per_class == 0) {
    throw ValidationError("targeted attacks need --per-class >= 1");
  }
  const ModelWeights weights = load_weights(opt.weights);
  const DatasetDir data = read_dataset_dir(opt.data);
  const auto& test = data.test.clouds;
  const int n_classes = weights.config.n_classes;

  // per-class sample selection, kept in test-set order
  std::vector<std::size_t> selected;
  if (opt.per_class == 0) {
    for (std::size_t i = 0; i < test.size(); ++i) selected.push_back(i);
  } else {
    for (int c = 0; c < n_classes; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (*test[i].label() == c) members.push_back(i);
      }
      Rng rng(derive_seed(opt.seed, "attack/select", static_cast<std::uint64_t>(c)));
      const std::size_t take = std::min(members.size(), static_cast<std::size_t>(opt.per_class));
      for (std::size_t j = 0; j < take; ++j) {
        std::swap(members[j], members[j + rng.below(members.size() - j)]);
      }
      selected.insert(selected.end(), members.begin(), members.begin() + static_cast<long>(take));
    }
    std::sort(selected.begin(), selected.end());
  }

  struct Job {
    std::size_t cloud;
    std::optional<int> target;
  };
  std::vector<Job> jobs;
  for (std::size_t i : selected) {
    if (opt.attack.targeted) {
      for (int t = 0; t < n_classes; ++t) {
        if (t != *test[i].label()) jobs.push_back({i, t});
      }
    } else {
      jobs.push_back({i, std::nullopt});
    }
  }
  for (const auto& job : jobs) {
    AttackConfig cfg = opt.attack;
    cfg.target = job.target;
    cfg.validate(test[job.cloud].size(), *test[job.cloud].label(), n_classes);
  }

  std::vector<std::optional<AdvExample>> results(jobs.size());
  parallel_for(jobs.size(), opt.threads, [&](std::size_t j) {
    AttackConfig cfg = opt.attack;
    cfg.target = jobs[j].target;
    cfg.seed = derive_seed(opt.seed, "attack/run", j);
    results[j] = run_attack(weights, test[jobs[j].cloud], cfg);
  });

  std::vector<AdvExample> examples;
  std::vector<std::string> clean_paths;
  int successes = 0;
  double distortion = 0.0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    examples.push_back(std::move(*results[j]));
    clean_paths.push_back(data.test.paths[jobs[j].cloud].generic_string());
    successes += examples.back().success ? 1 : 0;
    distortion += examples.back().distortion;
  }
  write_adv_set(opt.out, examples, clean_paths);
  log << to_string(opt.attack.kind) << (opt.attack.targeted ? " targeted" : " untargeted") << ": "
      << successes << "/" << examples.size() << " succeeded";
  if (!examples.empty()) {
    log << ", mean distortion " << format_double(distortion / static_cast<double>(examples.size()));
  }
  log << "\n";
  return examples;
}

// --- defend ------------------------------------------------------------------

DefenseVerdict cmd_defend(const DefendCmdOptions& opt, std::ostream& log) {
  require_file(opt.weights, "weights");
  require_file(opt.db, "db");
  require_file(opt.input, "input");
  const ModelWeights weights = load_weights(opt.weights);
  const FeatureDatabase db = load_feature_db(opt.db, weights_fingerprint(weights));
  const PointCloud pc = read_xyz(opt.input);
  const DefenseVerdict v = defend_classify(db, weights, pc, opt.defense);
  const int raw = predict(weights, pc).label;

  log << "model prediction: " << raw << " (" << to_string(kAllShapeKinds[static_cast<std::size_t>(raw)])
      << ")\n";
  log << "defended prediction: " << v.predicted << " ("
      << to_string(kAllShapeKinds[static_cast<std::size_t>(v.predicted)]) << "), "
      << to_string(opt.defense.weighting) << " k=" << opt.defense.k
      << (v.used_fallback ? ", uniform fallback" : "") << "\n";
  CsvWriter csv({"rank", "index", "distance", "weight", "label"});
  for (std::size_t r = 0; r < v.neighbors.size(); ++r) {
    const auto& n = v.neighbors[r];
    csv.row({std::to_string(r + 1), std::to_string(n.index), format_double(n.distance),
             format_double(n.weight), std::to_string(n.label)});
    log << "  #" << r + 1 << " index " << n.index << " label " << n.label << " distance "
        << format_fixed(n.distance, 6) << " weight " << format_fixed(n.weight, 6) << "\n";
  }
  if (!opt.out.empty()) write_text_file(opt.out, csv.str());
  return v;
}

// --- eval --------------------------------------------------------------------

EvalReport cmd_eval(const EvalCmdOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.weights, "weights");
  require_file(opt.db, "db");
  require_file(opt.data, "data");
  if (opt.adv_sets.empty()) throw ValidationError("eval needs at least one --adv set");
  for (const auto& a : opt.adv_sets) require_file(a, "adv");
  check_fraction(opt.srs_fraction, "--srs-fraction");
  if (opt.sor_k < 1) throw ValidationError("--sor-k must be >= 1");

  const ModelWeights weights = load_weights(opt.weights);
  const FeatureDatabase db = load_feature_db(opt.db, weights_fingerprint(weights));
  opt.defense.validate(db.size());
  const DatasetDir data = read_dataset_dir(opt.data);
  const Inputs inputs = load_inputs(data, opt.adv_sets);

  const std::vector<std::string> defenses{"none", "SRS", "SOR", "KNN-UW", "KNN-EW", "KNN-DW"};
  constexpr Weighting kWeightings[] = {Weighting::uniform, Weighting::entropy, Weighting::diversity};

  EvalReport report;
  report.defenses = defenses;
  report.inputs = inputs.names;
  report.cells.assign(defenses.size(), std::vector<EvalCell>(inputs.names.size()));

  for (std::size_t j = 0; j < inputs.clouds.size(); ++j) {
    const auto& clouds = inputs.clouds[j];
    std::vector<std::array<bool, 6>> hits(clouds.size());
    parallel_for(clouds.size(), opt.threads, [&](std::size_t i) {
      const PointCloud& pc = clouds[i];
      const int y = *pc.label();
      auto& h = hits[i];
      const ForwardTrace trace = forward(weights, pc);
      h[0] = trace.predicted_class() == y;
      const auto seed = derive_seed(opt.seed, "eval/srs/" + inputs.names[j], i);
      h[1] = predict(weights, srs(pc, srs_count(pc, opt.srs_fraction), seed)).label == y;
      h[2] = predict(weights, sor(pc, opt.sor_k, opt.sor_alpha)).label == y;
      for (std::size_t w = 0; w < 3; ++w) {
        DefenseConfig cfg = opt.defense;
        cfg.weighting = kWeightings[w];
        h[3 + w] = classify_feature(db, trace.feature, cfg).predicted == y;
      }
    });
    for (const auto& h : hits) {
      for (std::size_t d = 0; d < defenses.size(); ++d) {
        report.cells[d][j].correct += h[d] ? 1 : 0;
        ++report.cells[d][j].total;
      }
    }
  }

  Env env = base_env("eval", opt.seed);
  env.emplace_back("weights", to_hex(weights_fingerprint(weights)));
  env.emplace_back("db_entries", std::to_string(db.size()));
  env.emplace_back("data", opt.data.string());
  env.emplace_back("adv", join_paths(opt.adv_sets));
  add_defense_env(env, opt.defense);
  env.emplace_back("srs_fraction", format_double(opt.srs_fraction));
  env.emplace_back("sor_k", std::to_string(opt.sor_k));
  env.emplace_back("sor_alpha", format_double(opt.sor_alpha));
  env.emplace_back("threads", std::to_string(opt.threads));
  report.environment = std::move(env);

  const std::string text = format_eval_text(report);
  write_report(opt.out, eval_csv(report), text);
  log << text;
  return report;
}

// --- sweep-k -----------------------------------------------------------------

EvalReport cmd_sweep_k(const SweepKOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.weights, "weights");
  require_file(opt.db, "db");
  require_file(opt.data, "data");
  for (const auto& a : opt.adv_sets) require_file(a, "adv");
  if (opt.ks.empty()) throw ValidationError("--ks must list at least one k");

  const ModelWeights weights = load_weights(opt.weights);
  const FeatureDatabase db = load_feature_db(opt.db, weights_fingerprint(weights));
  for (int k : opt.ks) {
    DefenseConfig cfg = opt.defense;
    cfg.k = k;
    cfg.validate(db.size());
  }
  const DatasetDir data = read_dataset_dir(opt.data);
  const Inputs inputs = load_inputs(data, opt.adv_sets);

  EvalReport report;
  for (int k : opt.ks) report.defenses.push_back("k=" + std::to_string(k));
  report.inputs = inputs.names;
  report.cells.assign(opt.ks.size(), std::vector<EvalCell>(inputs.names.size()));

  // every k sees exactly the same clouds and features
  for (std::size_t j = 0; j < inputs.clouds.size(); ++j) {
    const auto& clouds = inputs.clouds[j];
    std::vector<std::vector<char>> hits(clouds.size());
    parallel_for(clouds.size(), opt.threads, [&](std::size_t i) {
      const RowVector feature = extract_feature(weights, clouds[i]);
      for (int k : opt.ks) {
        DefenseConfig cfg = opt.defense;
        cfg.k = k;
        hits[i].push_back(classify_feature(db, feature, cfg).predicted == *clouds[i].label());
      }
    });
    for (const auto& h : hits) {
      for (std::size_t r = 0; r < opt.ks.size(); ++r) {
        report.cells[r][j].correct += h[r] ? 1 : 0;
        ++report.cells[r][j].total;
      }
    }
  }

  Env env = base_env("sweep-k", 0);
  env.pop_back();  // no randomness here
  env.emplace_back("weights", to_hex(weights_fingerprint(weights)));
  env.emplace_back("weighting", std::string(to_string(opt.defense.weighting)));
  std::string ks;
  for (int k : opt.ks) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  env.emplace_back("ks", ks);
  env.emplace_back("metric", std::string(to_string(opt.defense.metric)));
  env.emplace_back("dw_exponent", format_double(opt.defense.dw_exponent));
  env.emplace_back("dw_top", std::to_string(opt.defense.dw_top));
  env.emplace_back("data", opt.data.string());
  env.emplace_back("adv", join_paths(opt.adv_sets));
  report.environment = std::move(env);

  CsvWriter csv({"weighting", "k", "input", "correct", "total", "accuracy"});
  for (std::size_t r = 0; r < opt.ks.size(); ++r) {
    for (std::size_t j = 0; j < report.inputs.size(); ++j) {
      const auto& c = report.at(r, j);
      csv.row({std::string(to_string(opt.defense.weighting)), std::to_string(opt.ks[r]),
               report.inputs[j], std::to_string(c.correct), std::to_string(c.total),
               format_percent(c.percent())});
    }
  }
  const std::string text = format_eval_text(report);
  write_report(opt.out, csv.str(), text);
  log << text;
  return report;
}

// --- bench -------------------------------------------------------------------

std::vector<LatencyStats> cmd_bench(const BenchOptions& opt, std::ostream& log) {
  require_out(opt.out);
  require_file(opt.weights, "weights");
  require_file(opt.db, "db");
  require_file(opt.data, "data");
  if (opt.queries < 1 || opt.warmup < 0) {
    throw ValidationError("--queries must be >= 1 and --warmup >= 0");
  }
  check_fraction(opt.srs_fraction, "--srs-fraction");

  const ModelWeights weights = load_weights(opt.weights);
  const FeatureDatabase db = load_feature_db(opt.db, weights_fingerprint(weights));
  opt.defense.validate(db.size());
  const DatasetDir data = read_dataset_dir(opt.data);
  const auto& pool = data.test.clouds.empty() ? data.train.clouds : data.test.clouds;
  if (pool.empty()) throw ValidationError("dataset has no clouds to query");

  std::vector<RowVector> features;
  for (const auto& pc : pool) features.push_back(extract_feature(weights, pc));

  using Clock = std::chrono::steady_clock;
  volatile int sink = 0;
  auto measure = [&](std::string name, auto&& query) {
    for (int q = 0; q < opt.warmup; ++q) sink = sink + query(static_cast<std::size_t>(q) % pool.size(), q);
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(opt.queries));
    for (int q = 0; q < opt.queries; ++q) {
      const auto t0 = Clock::now();
      sink = sink + query(static_cast<std::size_t>(q) % pool.size(), q);
      const auto t1 = Clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return summarize_latency(std::move(name), std::move(samples));
  };

  auto with_weighting = [&](Weighting w) {
    DefenseConfig cfg = opt.defense;
    cfg.weighting = w;
    return cfg;
  };
  const KnnDefense uw(db, weights, with_weighting(Weighting::uniform));
  const KnnDefense ew(db, weights, with_weighting(Weighting::entropy));
  const KnnDefense dw(db, weights, with_weighting(Weighting::diversity));
  const DefenseConfig uw_cfg = with_weighting(Weighting::uniform);

  std::vector<LatencyStats> rows;
  rows.push_back(measure("none", [&](std::size_t i, int) { return predict(weights, pool[i]).label; }));
  rows.push_back(measure("SRS", [&](std::size_t i, int q) {
    const auto seed = derive_seed(opt.seed, "bench/srs", static_cast<std::uint64_t>(q));
    return predict(weights, srs(pool[i], srs_count(pool[i], opt.srs_fraction), seed)).label;
  }));
  rows.push_back(measure("SOR", [&](std::size_t i, int) {
    return predict(weights, sor(pool[i], opt.sor_k, opt.sor_alpha)).label;
  }));
  rows.push_back(measure("KNN-UW", [&](std::size_t i, int) { return uw.classify(pool[i]).predicted; }));
  rows.push_back(measure("KNN-EW", [&](std::size_t i, int) { return ew.classify(pool[i]).predicted; }));
  rows.push_back(measure("KNN-DW", [&](std::size_t i, int) { return dw.classify(pool[i]).predicted; }));
  rows.push_back(measure("KNN-UW-step", [&](std::size_t i, int) {
    return classify_feature(db, features[i], uw_cfg).predicted;
  }));

  Env env = base_env("bench", opt.seed);
  env.emplace_back("threads", "1");
  env.emplace_back("db_entries", std::to_string(db.size()));
  env.emplace_back("feature_dim", std::to_string(db.feature_dim()));
  env.emplace_back("warmup", std::to_string(opt.warmup));
  env.emplace_back("queries", std::to_string(opt.queries));
  add_defense_env(env, opt.defense);
  env.emplace_back("srs_fraction", format_double(opt.srs_fraction));
  env.emplace_back("sor_k", std::to_string(opt.sor_k));
  env.emplace_back("sor_alpha", format_double(opt.sor_alpha));
  const std::string text = format_latency_text(rows, env);
  write_report(opt.out, latency_csv(rows), text);
  log << text;
  return rows;
}

}  // namespace pcarmor::harness
