#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

#include "pcarmor/harness/commands.hpp"
#include "pcarmor/harness/csv.hpp"

namespace pcarmor::harness {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// key=value lines; `[name]` starts a section that only applies to subcommand
// `name`. Returns pairs in file order.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path,
                                                             const std::string& command) {
  std::istringstream in(read_text_file(path));
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad section");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.starts_with("--")) key = key.substr(2);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    if (section.empty() || section == command) out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.starts_with(flag + "=");
  });
}

// Splices config-file values in after the subcommand name as --key=value,
// unless the command line already sets that key. Keys the subcommand does
// not know are skipped, so one file can serve several commands.
void expand_config(std::vector<std::string>& args, CLI::App& app) {
  std::size_t sub_pos = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (auto* s = app.get_subcommand_no_throw(args[i])) {
      sub_pos = i;
      sub = s;
      break;
    }
  }
  if (!sub) return;
  fs::path config;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].starts_with("--config=")) config = args[i].substr(9);
  }
  if (config.empty()) return;
  std::vector<std::string> extra;
  for (auto& [key, value] : read_config(config, sub->get_name())) {
    if (key == "config" || given_on_command_line(args, key)) continue;
    if (sub->get_option_no_throw("--" + key) == nullptr) continue;
    extra.push_back("--" + key + "=" + value);
  }
  args.insert(args.begin() + static_cast<long>(sub_pos) + 1, extra.begin(), extra.end());
}

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--seed", c.seed, "root seed")->capture_default_str();
  auto* o = sub->add_option("--out", c.out, "output path");
  if (out_required) o->required();
  sub->add_option("--config", c.config, "key=value file; command-line flags win");
}

void add_defense_options(CLI::App* sub, DefenseConfig& d, std::string& metric) {
  sub->add_option("--k", d.k, "neighbors")->capture_default_str();
  sub->add_option("--metric", metric, "euclidean|cosine")->capture_default_str();
  sub->add_option("--dw-exponent", d.dw_exponent, "diversity weight exponent")->capture_default_str();
  sub->add_option("--dw-top", d.dw_top, "diversity weight runner-up count")->capture_default_str();
  sub->add_flag("--uniform-fallback,!--no-uniform-fallback", d.uniform_fallback,
                "fall back to uniform weights when all weights vanish");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pc-armor: adversarial attacks and a nearest-neighbor defense for point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("pc-armor ") + kVersion);

  Common common;
  std::string metric = "euclidean";
  std::string weighting = "UW";

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
  add_common(gen_cmd, common, true);
  gen_cmd->add_option("--per-class", gen.per_class, "clouds per class")->capture_default_str();
  gen_cmd->add_option("--points", gen.points, "points per cloud")->capture_default_str();
  gen_cmd->add_option("--train-fraction", gen.train_fraction)->capture_default_str();
  gen_cmd->add_option("--jitter", gen.jitter, "gaussian jitter sigma")->capture_default_str();
  gen_cmd->add_option("--max-rotation", gen.max_rotation, "max |angle| per axis, radians")
      ->capture_default_str();

  TrainCmdOptions tr;
  std::string data_dir, metrics_path;
  auto* train_cmd = app.add_subcommand("train", "train the classifier");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--metrics", metrics_path, "per-epoch CSV (default <out>.metrics.csv)");
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr)->capture_default_str();
  train_cmd->add_option("--lr-decay", tr.lr_decay, "per-epoch multiplier")->capture_default_str();
  train_cmd->add_flag("--force", tr.force, "overwrite existing weights");

  std::string weights_path, db_path;
  auto* db_cmd = app.add_subcommand("build-db", "extract the training-set feature database");
  add_common(db_cmd, common, true);
  db_cmd->add_option("--weights", weights_path)->required();
  db_cmd->add_option("--data", data_dir)->required();

  AttackCmdOptions at;
  std::string attack_kind = "shift_l2";
  int threads = 1;
  struct {
    int iterations = 0, binary_steps = 0, n_add = 0, n_drop = 0, rounds = 0;
    double step = 0, lambda = 0, kappa = 0, epsilon = 0, alpha = 0, init_sigma = 0;
  } ov;
  auto* attack_cmd = app.add_subcommand("attack", "craft an adversarial set from the test split");
  add_common(attack_cmd, common, true);
  attack_cmd->add_option("--weights", weights_path)->required();
  attack_cmd->add_option("--data", data_dir)->required();
  attack_cmd->add_option("--kind", attack_kind,
                         "shift_l2|shift_pgd|add_chamfer|add_hausdorff|drop_saliency")
      ->capture_default_str();
  attack_cmd->add_flag("--targeted", at.attack.targeted, "attack every other class");
  attack_cmd->add_option("--per-class", at.per_class,
                         "test clouds per class (targeted default 10, untargeted 0 = all)");
  attack_cmd->add_option("--threads", threads)->capture_default_str();
  CLI::Option* o_iter = attack_cmd->add_option("--iterations", ov.iterations);
  CLI::Option* o_bin = attack_cmd->add_option("--binary-steps", ov.binary_steps);
  CLI::Option* o_add = attack_cmd->add_option("--n-add", ov.n_add);
  CLI::Option* o_drop = attack_cmd->add_option("--n-drop", ov.n_drop);
  CLI::Option* o_rounds = attack_cmd->add_option("--rounds", ov.rounds);
  CLI::Option* o_step = attack_cmd->add_option("--step", ov.step);
  CLI::Option* o_lambda = attack_cmd->add_option("--lambda", ov.lambda);
  CLI::Option* o_kappa = attack_cmd->add_option("--kappa", ov.kappa);
  CLI::Option* o_eps = attack_cmd->add_option("--epsilon", ov.epsilon);
  CLI::Option* o_alpha = attack_cmd->add_option("--saliency-alpha", ov.alpha);
  CLI::Option* o_sigma = attack_cmd->add_option("--add-init-sigma", ov.init_sigma);

  DefendCmdOptions df;
  std::string input_path;
  auto* defend_cmd = app.add_subcommand("defend", "classify one .xyz cloud through the defense");
  add_common(defend_cmd, common, false);
  defend_cmd->add_option("--weights", weights_path)->required();
  defend_cmd->add_option("--db", db_path)->required();
  defend_cmd->add_option("--input", input_path)->required();
  defend_cmd->add_option("--weighting", weighting, "UW|EW|DW")->capture_default_str();
  add_defense_options(defend_cmd, df.defense, metric);

  EvalCmdOptions ev;
  std::vector<std::string> adv_dirs;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of every defense on clean and adversarial sets");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--weights", weights_path)->required();
  eval_cmd->add_option("--db", db_path)->required();
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--adv", adv_dirs, "adversarial set directories")->required()->delimiter(',');
  eval_cmd->add_option("--srs-fraction", ev.srs_fraction)->capture_default_str();
  eval_cmd->add_option("--sor-k", ev.sor_k)->capture_default_str();
  eval_cmd->add_option("--sor-alpha", ev.sor_alpha)->capture_default_str();
  eval_cmd->add_option("--threads", threads)->capture_default_str();
  add_defense_options(eval_cmd, ev.defense, metric);

  SweepKOptions sw;
  std::string sweep_weighting = "EW";
  auto* sweep_cmd = app.add_subcommand("sweep-k", "defended accuracy as a function of k");
  add_common(sweep_cmd, common, true);
  sweep_cmd->add_option("--weights", weights_path)->required();
  sweep_cmd->add_option("--db", db_path)->required();
  sweep_cmd->add_option("--data", data_dir)->required();
  sweep_cmd->add_option("--adv", adv_dirs, "adversarial set directories")->delimiter(',');
  sweep_cmd->add_option("--ks", sw.ks, "k values")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--weighting", sweep_weighting, "UW|EW|DW")->capture_default_str();
  sweep_cmd->add_option("--threads", threads)->capture_default_str();
  sweep_cmd->add_option("--metric", metric, "euclidean|cosine")->capture_default_str();
  sweep_cmd->add_option("--dw-exponent", sw.defense.dw_exponent)->capture_default_str();
  sweep_cmd->add_option("--dw-top", sw.defense.dw_top)->capture_default_str();

  BenchOptions bn;
  auto* bench_cmd = app.add_subcommand("bench", "per-cloud latency of every defense, single-threaded");
  add_common(bench_cmd, common, true);
  bench_cmd->add_option("--weights", weights_path)->required();
  bench_cmd->add_option("--db", db_path)->required();
  bench_cmd->add_option("--data", data_dir)->required();
  bench_cmd->add_option("--warmup", bn.warmup)->capture_default_str();
  bench_cmd->add_option("--queries", bn.queries)->capture_default_str();
  bench_cmd->add_option("--srs-fraction", bn.srs_fraction)->capture_default_str();
  bench_cmd->add_option("--sor-k", bn.sor_k)->capture_default_str();
  bench_cmd->add_option("--sor-alpha", bn.sor_alpha)->capture_default_str();
  add_defense_options(bench_cmd, bn.defense, metric);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    expand_config(args, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    const fs::path out_path = common.out;
    if (*gen_cmd) {
      gen.out = out_path;
      gen.seed = common.seed;
      cmd_gen_data(gen, out);
    } else if (*train_cmd) {
      tr.data = data_dir;
      tr.out = out_path;
      tr.metrics = metrics_path;
      tr.seed = common.seed;
      cmd_train(tr, out);
    } else if (*db_cmd) {
      cmd_build_db({weights_path, data_dir, out_path}, out);
    } else if (*attack_cmd) {
      const AttackKind kind = parse_attack_kind(attack_kind);
      const bool targeted = at.attack.targeted;
      at.attack = AttackConfig::defaults(kind);
      at.attack.targeted = targeted;
      if (*o_iter) at.attack.iterations = ov.iterations;
      if (*o_bin) at.attack.binary_steps = ov.binary_steps;
      if (*o_add) at.attack.n_add = ov.n_add;
      if (*o_drop) at.attack.n_drop = ov.n_drop;
      if (*o_rounds) at.attack.rounds = ov.rounds;
      if (*o_eps) {
        at.attack.epsilon = ov.epsilon;
        if (kind == AttackKind::shift_pgd) at.attack.step = ov.epsilon / 10.0;
      }
      if (*o_step) at.attack.step = ov.step;
      if (*o_lambda) at.attack.lambda = ov.lambda;
      if (*o_kappa) at.attack.kappa = ov.kappa;
      if (*o_alpha) at.attack.saliency_alpha = ov.alpha;
      if (*o_sigma) at.attack.add_init_sigma = ov.init_sigma;
      if (targeted && attack_cmd->count("--per-class") == 0) at.per_class = 10;
      at.weights = weights_path;
      at.data = data_dir;
      at.out = out_path;
      at.seed = common.seed;
      at.threads = threads;
      cmd_attack(at, out);
    } else if (*defend_cmd) {
      df.weights = weights_path;
      df.db = db_path;
      df.input = input_path;
      df.out = out_path;
      df.defense.weighting = parse_weighting(weighting);
      df.defense.metric = parse_metric(metric);
      cmd_defend(df, out);
    } else if (*eval_cmd) {
      ev.weights = weights_path;
      ev.db = db_path;
      ev.data = data_dir;
      ev.adv_sets.assign(adv_dirs.begin(), adv_dirs.end());
      ev.out = out_path;
      ev.seed = common.seed;
      ev.threads = threads;
      ev.defense.metric = parse_metric(metric);
      cmd_eval(ev, out);
    } else if (*sweep_cmd) {
      sw.weights = weights_path;
      sw.db = db_path;
      sw.data = data_dir;
      sw.adv_sets.assign(adv_dirs.begin(), adv_dirs.end());
      sw.out = out_path;
      sw.threads = threads;
      sw.defense.weighting = parse_weighting(sweep_weighting);
      sw.defense.metric = parse_metric(metric);
      cmd_sweep_k(sw, out);
    } else if (*bench_cmd) {
      bn.weights = weights_path;
      bn.db = db_path;
      bn.data = data_dir;
      bn.out = out_path;
      bn.seed = common.seed;
      bn.defense.metric = parse_metric(metric);
      cmd_bench(bn, out);
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DegenerateInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace pcarmor::harness
