#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

namespace testsupport {

// Glorot init leaves most points inert; larger biases wake up more paths.
inline ModelWeights busy_weights(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.seed = seed;
  ModelWeights w = init_weights(cfg);
  Rng rng(derive_seed(seed, "test/bias"));
  for (auto* layers : {&w.point_layers, &w.head_layers}) {
    for (auto& l : *layers) {
      for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.normal(0.0, 0.1);
    }
  }
  return w;
}

struct GradCheck {
  int checked = 0;
  int skipped = 0;  // perturbation crossed a kink
  int failed = 0;
  std::string first_failure;

  void record(bool ok, const std::string& where) {
    ++checked;
    if (!ok) {
      if (failed++ == 0) first_failure = where;
    }
  }
  GradCheck& operator+=(const GradCheck& o) {
    if (failed == 0 && o.failed > 0) first_failure = o.first_failure;
    checked += o.checked;
    skipped += o.skipped;
    failed += o.failed;
    return *this;
  }
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRel = 1e-4;

/// Central differences on every input coordinate of an off-sphere cloud (so
/// the normalization guard is exercised), for four objectives. Coordinates
/// whose perturbation changes the ReLU/pool pattern, or the CW runner-up
/// class, are skipped.
inline GradCheck check_input_gradient(std::uint64_t seed) {
  const double h = kFdStep;
  GradCheck out;
  const ModelWeights w = busy_weights(100 + seed);
  Rng rng(seed);
  const Points raw = random_points(rng, 24, 0.8) + Points::Constant(24, 3, 0.2);
  const PointCloud pc(raw);
  const ForwardTrace base = forward(w, pc);
  const int pred = base.predicted_class();
  const Objective objectives[] = {Objective::nll(static_cast<int>(seed % 8)),
                                  Objective::cw_targeted((pred + 1) % 8, 0.0),
                                  Objective::cw_untargeted(pred, 0.0), Objective::logit(3)};
  auto runner = [](const ForwardTrace& t, int cls) {
    Index best = -1;
    for (Index j = 0; j < t.logits.size(); ++j) {
      if (j != cls && (best < 0 || t.logits(j) > t.logits(best))) best = j;
    }
    return best;
  };
  for (const auto& obj : objectives) {
    const Points g = input_gradient(w, pc, obj);
    const bool margin = obj.kind != Objective::Kind::true_class_nll && obj.kind != Objective::Kind::logit;
    for (Index i = 0; i < raw.rows(); ++i) {
      for (Index c = 0; c < 3; ++c) {
        Points xp = raw, xm = raw;
        xp(i, c) += h;
        xm(i, c) -= h;
        const ForwardTrace tp = forward(w, PointCloud(xp));
        const ForwardTrace tm = forward(w, PointCloud(xm));
        if (!same_pattern(base, tp) || !same_pattern(base, tm) ||
            (margin && (runner(tp, obj.cls) != runner(base, obj.cls) ||
                        runner(tm, obj.cls) != runner(base, obj.cls)))) {
          ++out.skipped;
          continue;
        }
        const double fd =
            (evaluate_objective(obj, tp).value - evaluate_objective(obj, tm).value) / (2 * h);
        std::ostringstream where;
        where << "input seed " << seed << " point " << i << " coord " << c << ": fd " << fd
              << " analytic " << g(i, c);
        out.record(close(fd, g(i, c), kFdRel, 1e-8), where.str());
      }
    }
  }
  return out;
}

/// Central differences on sampled entries of every weight and bias tensor,
/// batch cross-entropy over three clouds.
inline GradCheck check_weight_gradients(std::uint64_t seed, int samples_per_tensor = 6) {
  const double h = kFdStep;
  GradCheck out;
  ModelWeights w = busy_weights(200 + seed);
  Rng rng(seed + 300);
  std::vector<PointCloud> clouds;
  for (int b = 0; b < 3; ++b) {
    clouds.emplace_back(normalize_unit_sphere(random_points(rng, 20)), static_cast<int>(rng.below(8)));
  }
  std::vector<const PointCloud*> batch;
  for (const auto& c : clouds) batch.push_back(&c);
  const auto base = loss_and_gradients(w, batch);
  std::vector<ForwardTrace> base_traces;
  for (const auto& c : clouds) base_traces.push_back(forward(w, c));

  auto stable = [&] {
    for (std::size_t b = 0; b < clouds.size(); ++b) {
      if (!same_pattern(base_traces[b], forward(w, clouds[b]))) return false;
    }
    return true;
  };
  auto check_tensor = [&](const std::string& name, double* param, Index size, const double* grad) {
    for (int s = 0; s < samples_per_tensor; ++s) {
      const Index k = static_cast<Index>(rng.below(static_cast<std::uint64_t>(size)));
      const double orig = param[k];
      param[k] = orig + h;
      const double lp = loss_and_gradients(w, batch).loss;
      bool ok = stable();
      param[k] = orig - h;
      const double lm = loss_and_gradients(w, batch).loss;
      ok = ok && stable();
      param[k] = orig;
      if (!ok) {
        ++out.skipped;
        continue;
      }
      const double fd = (lp - lm) / (2 * h);
      std::ostringstream where;
      where << "weights seed " << seed << " " << name << "[" << k << "]: fd " << fd << " analytic "
            << grad[k];
      out.record(close(fd, grad[k], kFdRel, 1e-9), where.str());
    }
  };
  auto check_layers = [&](const char* tag, std::vector<DenseLayer>& layers,
                          const std::vector<DenseLayer>& grads) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string name = std::string(tag) + std::to_string(l);
      check_tensor(name + ".weight", layers[l].weight.data(), layers[l].weight.size(),
                   grads[l].weight.data());
      check_tensor(name + ".bias", layers[l].bias.data(), layers[l].bias.size(), grads[l].bias.data());
    }
  };
  check_layers("point", w.point_layers, base.gradients.point_layers);
  check_layers("head", w.head_layers, base.gradients.head_layers);
  return out;
}

}  // namespace testsupport
