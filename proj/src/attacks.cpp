#include "pcarmor/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pcarmor/rng.hpp"

namespace pcarmor {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::shift_l2: return "shift_l2";
    case AttackKind::shift_pgd: return "shift_pgd";
    case AttackKind::add_chamfer: return "add_chamfer";
    case AttackKind::add_hausdorff: return "add_hausdorff";
    case AttackKind::drop_saliency: return "drop_saliency";
  }
  throw ValidationError("unknown attack kind");
}

AttackKind parse_attack_kind(std::string_view name) {
  for (auto k : {AttackKind::shift_l2, AttackKind::shift_pgd, AttackKind::add_chamfer,
                 AttackKind::add_hausdorff, AttackKind::drop_saliency}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown attack kind '" + std::string(name) + "'");
}

AttackConfig AttackConfig::defaults(AttackKind kind) {
  AttackConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case AttackKind::shift_l2:
      break;
    case AttackKind::shift_pgd:
      cfg.iterations = 40;
      cfg.step = cfg.epsilon / 10.0;
      break;
    case AttackKind::add_chamfer:
    case AttackKind::add_hausdorff:
      cfg.iterations = 200;
      cfg.lambda = 1.0;
      break;
    case AttackKind::drop_saliency:
      break;
  }
  return cfg;
}

void AttackConfig::validate(Index n_points, int true_label, int n_classes) const {
  if (true_label < 0 || true_label >= n_classes) {
    throw ValidationError("attack: true label " + std::to_string(true_label) + " outside [0, " +
                          std::to_string(n_classes) + ")");
  }
  if (targeted) {
    if (!target) throw ValidationError("attack: targeted attack without a target class");
    if (*target < 0 || *target >= n_classes) {
      throw ValidationError("attack: target " + std::to_string(*target) + " outside [0, " +
                            std::to_string(n_classes) + ")");
    }
    if (*target == true_label) throw ValidationError("attack: target equals the true class");
  }
  if (iterations < 0 || binary_steps < 1 || !(step >= 0.0) || !(lambda > 0.0) || kappa < 0.0) {
    throw ValidationError("attack: iterations >= 0, binary_steps >= 1, step >= 0, lambda > 0, "
                          "kappa >= 0 required");
  }
  switch (kind) {
    case AttackKind::shift_pgd:
      if (!(epsilon >= 0.0)) throw ValidationError("attack: epsilon must be >= 0");
      break;
    case AttackKind::add_chamfer:
    case AttackKind::add_hausdorff:
      if (n_add < 1) throw ValidationError("attack: n_add must be >= 1");
      break;
    case AttackKind::drop_saliency:
      if (targeted) throw ValidationError("attack: saliency drop is untargeted only");
      if (n_drop < 0 || n_drop >= n_points) {
        throw ValidationError("attack: n_drop " + std::to_string(n_drop) + " must lie in [0, " +
                              std::to_string(n_points) + ")");
      }
      if (rounds < 1) throw ValidationError("attack: rounds must be >= 1");
      break;
    case AttackKind::shift_l2:
      break;
  }
}

bool attack_succeeded(int predicted, int true_label, const std::optional<int>& target) {
  return target ? predicted == *target : predicted != true_label;
}

double attack_distortion(AttackKind kind, const PointCloud& clean, const PointCloud& adversarial) {
  switch (kind) {
    case AttackKind::shift_l2:
    case AttackKind::shift_pgd:
      return l2_shift_norm(adversarial, clean);
    case AttackKind::add_chamfer:
      return chamfer_symmetric(adversarial, clean);
    case AttackKind::add_hausdorff:
      return hausdorff_directed(adversarial, clean);
    case AttackKind::drop_saliency:
      return static_cast<double>(clean.size() - adversarial.size());
  }
  throw ValidationError("unknown attack kind");
}

namespace {

int require_label(const PointCloud& pc) {
  if (!pc.label()) throw ValidationError("attack: input cloud has no label");
  return *pc.label();
}

std::optional<int> effective_target(const AttackConfig& cfg) {
  return cfg.targeted ? cfg.target : std::nullopt;
}

Objective margin_objective(const AttackConfig& cfg, int label) {
  return cfg.targeted ? Objective::cw_targeted(*cfg.target, cfg.kappa)
                      : Objective::cw_untargeted(label, cfg.kappa);
}

AdvExample make_result(const ModelWeights& weights, const PointCloud& clean, Points adv,
                       const AttackConfig& cfg, int label) {
  AdvExample ex{.clean = clean,
                .adversarial = PointCloud(std::move(adv), label),
                .true_label = label,
                .target = effective_target(cfg),
                .kind = cfg.kind,
                .search_trace = {}};
  ex.predicted = predict(weights, ex.adversarial).label;
  ex.success = attack_succeeded(ex.predicted, label, ex.target);
  ex.distortion = attack_distortion(cfg.kind, ex.clean, ex.adversarial);
  return ex;
}

// Adam on a free n x 3 variable.
class AdamPoints {
 public:
  AdamPoints(Index rows, double lr) : state_(rows, 3), lr_(lr) {}
  void step(Matrix& variable, const Matrix& grad, double scale = 1.0) {
    adam_update(variable, grad, state_, lr_ * scale);
  }

 private:
  AdamState state_;
  double lr_;
};

}  // namespace

AdvExample attack_shift_l2(const ModelWeights& weights, const PointCloud& pc,
                           const AttackConfig& cfg) {
  const int label = require_label(pc);
  cfg.validate(pc.size(), label, weights.config.n_classes);
  const auto target = effective_target(cfg);
  const Objective objective = margin_objective(cfg, label);
  const Matrix clean = pc.points();

  if (attack_succeeded(predict(weights, pc).label, label, target)) {
    return make_result(weights, pc, pc.points(), cfg, label);
  }

  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double lambda = cfg.lambda;
  double best_norm = std::numeric_limits<double>::infinity();
  Points best_adv = pc.points();
  // fallback when nothing succeeds: the iterate with the smallest objective margin
  double fallback_margin = std::numeric_limits<double>::infinity();
  Points fallback_adv = pc.points();
  std::vector<double> trace;

  for (int outer = 0; outer < cfg.binary_steps; ++outer) {
    Matrix delta = Matrix::Zero(clean.rows(), 3);
    AdamPoints opt(clean.rows(), cfg.step);
    bool found = false;
    for (int it = 0; it <= cfg.iterations; ++it) {
      const PointCloud current(Points(clean + delta), label);
      const auto g = objective_and_gradient(weights, current, objective);
      const bool ok = attack_succeeded(g.trace.predicted_class(), label, target);
      const double norm = delta.norm();
      if (ok) {
        found = true;
        if (norm < best_norm) {
          best_norm = norm;
          best_adv = current.points();
        }
      } else if (best_norm == std::numeric_limits<double>::infinity() &&
                 g.objective < fallback_margin) {
        fallback_margin = g.objective;
        fallback_adv = current.points();
      }
      if (it == cfg.iterations) break;
      const Matrix grad = 2.0 * delta + lambda * Matrix(g.gradient);
      opt.step(delta, grad);
    }
    if (found) {
      trace.push_back(best_norm);
      hi = std::min(hi, lambda);
      lambda = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, lambda);
      lambda = std::isinf(hi) ? lambda * 10.0 : 0.5 * (lo + hi);
    }
  }

  const bool any = best_norm < std::numeric_limits<double>::infinity();
  auto ex = make_result(weights, pc, any ? best_adv : fallback_adv, cfg, label);
  ex.search_trace = std::move(trace);
  return ex;
}

AdvExample attack_shift_pgd(const ModelWeights& weights, const PointCloud& pc,
                            const AttackConfig& cfg) {
  const int label = require_label(pc);
  cfg.validate(pc.size(), label, weights.config.n_classes);
  // untargeted: ascend the true-class NLL; targeted: descend the target NLL
  const Objective objective = cfg.targeted ? Objective::nll(*cfg.target) : Objective::nll(label);
  const double direction = cfg.targeted ? -1.0 : 1.0;
  const Points& clean = pc.points();
  const double eps = cfg.epsilon;

  const auto target = effective_target(cfg);

  // clean + delta can round to a point just outside the box; pull such
  // coordinates back one ulp at a time
  auto boxed = [&](const Matrix& delta) {
    Points adv = clean + delta;
    for (Index i = 0; i < adv.size(); ++i) {
      double& a = adv.data()[i];
      const double c = clean.data()[i];
      while (std::abs(a - c) > eps) a = std::nextafter(a, c);
    }
    return adv;
  };

  // keep the strongest iterate: successful ones first, then by objective
  Points best = clean;
  bool best_ok = false;
  double best_score = -std::numeric_limits<double>::infinity();
  Matrix delta = Matrix::Zero(clean.rows(), 3);
  for (int it = 0; it <= cfg.iterations; ++it) {
    const PointCloud current(boxed(delta), label);
    const auto g = objective_and_gradient(weights, current, objective);
    const bool ok = attack_succeeded(g.trace.predicted_class(), label, target);
    const double score = direction * g.objective;
    if ((ok && !best_ok) || (ok == best_ok && score > best_score)) {
      best = current.points();
      best_ok = ok;
      best_score = score;
    }
    if (it == cfg.iterations || eps == 0.0) break;
    delta += direction * cfg.step * Matrix(g.gradient).array().sign().matrix();
    delta = delta.cwiseMax(-eps).cwiseMin(eps);
  }
  return make_result(weights, pc, std::move(best), cfg, label);
}

AdvExample attack_add(const ModelWeights& weights, const PointCloud& pc, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::add_chamfer && cfg.kind != AttackKind::add_hausdorff) {
    throw ValidationError("attack_add: kind must be add_chamfer or add_hausdorff");
  }
  const int label = require_label(pc);
  cfg.validate(pc.size(), label, weights.config.n_classes);
  const auto target = effective_target(cfg);
  const Objective objective = margin_objective(cfg, label);
  const Points& clean = pc.points();
  const Index n = clean.rows();
  const Index m = cfg.n_add;

  Rng rng(derive_seed(cfg.seed, "attack/add-init"));
  Matrix added(m, 3);
  for (Index i = 0; i < m; ++i) {
    const auto src = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    for (Index c = 0; c < 3; ++c) added(i, c) = clean(src, c) + rng.normal(0.0, cfg.add_init_sigma);
  }

  Points full(n + m, 3);
  full.topRows(n) = clean;
  AdamPoints opt(m, cfg.step);

  // nearest clean point for each added point
  auto nearest = [&](const Matrix& a, Eigen::VectorXd& sq) {
    std::vector<Index> idx(static_cast<std::size_t>(a.rows()));
    sq.resize(a.rows());
    for (Index i = 0; i < a.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        const double d = (a.row(i) - clean.row(j)).squaredNorm();
        if (d < best) {
          best = d;
          idx[static_cast<std::size_t>(i)] = j;
        }
      }
      sq(i) = best;
    }
    return idx;
  };

  double best_success = std::numeric_limits<double>::infinity();
  Points best_adv = full;
  double best_objective = std::numeric_limits<double>::infinity();
  Points fallback = full;

  for (int it = 0; it <= cfg.iterations; ++it) {
    full.bottomRows(m) = added;
    const PointCloud current(full, label);
    const auto g = objective_and_gradient(weights, current, objective);
    const bool ok = attack_succeeded(g.trace.predicted_class(), label, target);

    Eigen::VectorXd sq;
    const auto nn = nearest(added, sq);
    Matrix dist_grad = Matrix::Zero(m, 3);
    double dist = 0.0;
    if (cfg.kind == AttackKind::add_chamfer) {
      // clean->adversarial direction is identically zero (every clean point is kept)
      dist = sq.sum() / static_cast<double>(n + m);
      for (Index i = 0; i < m; ++i) {
        dist_grad.row(i) = 2.0 * (added.row(i) - clean.row(nn[static_cast<std::size_t>(i)])) /
                           static_cast<double>(n + m);
      }
    } else {
      Index worst = 0;
      for (Index i = 1; i < m; ++i) {
        if (sq(i) > sq(worst)) worst = i;
      }
      dist = std::sqrt(sq(worst));
      if (dist > 0.0) {
        dist_grad.row(worst) = (added.row(worst) - clean.row(nn[static_cast<std::size_t>(worst)])) / dist;
      }
    }

    if (ok && dist < best_success) {
      best_success = dist;
      best_adv = full;
    }
    const double total = g.objective + cfg.lambda * dist;
    if (total < best_objective) {
      best_objective = total;
      fallback = full;
    }
    if (it == cfg.iterations) break;
    const Matrix grad = Matrix(g.gradient.bottomRows(m)) + cfg.lambda * dist_grad;
    // linear decay: Adam steps stay near lr in size, so without it the added
    // points keep hopping around the surface instead of settling on it
    opt.step(added, grad, 1.0 - static_cast<double>(it) / cfg.iterations);
  }

  const bool any = best_success < std::numeric_limits<double>::infinity();
  return make_result(weights, pc, any ? best_adv : fallback, cfg, label);
}

Eigen::VectorXd drop_saliency(const ModelWeights& weights, const PointCloud& pc, int true_label,
                              double alpha) {
  const Points grad = input_gradient(weights, pc, Objective::logit(true_label));
  const Points& p = pc.points();
  const Index n = p.rows();

  Point3 center;
  std::vector<double> column(static_cast<std::size_t>(n));
  for (Index c = 0; c < 3; ++c) {
    for (Index i = 0; i < n; ++i) column[static_cast<std::size_t>(i)] = p(i, c);
    std::sort(column.begin(), column.end());
    const auto mid = static_cast<std::size_t>(n / 2);
    center(c) = (n % 2 == 1) ? column[mid] : 0.5 * (column[mid - 1] + column[mid]);
  }

  Eigen::VectorXd saliency(n);
  for (Index i = 0; i < n; ++i) {
    const Point3 offset = p.row(i) - center;
    const double r = offset.norm();
    // rate of change of the true-class logit as the point moves outward, scaled by r^alpha;
    // large values mark points whose removal (collapse toward the center) hurts the class most
    const double radial = grad.row(i).dot(offset) / std::max(r, 1e-9);
    saliency(i) = radial * std::pow(r, alpha);
  }
  return saliency;
}

AdvExample attack_drop_saliency(const ModelWeights& weights, const PointCloud& pc,
                                const AttackConfig& cfg) {
  const int label = require_label(pc);
  cfg.validate(pc.size(), label, weights.config.n_classes);

  Points current = pc.points();
  const int per_round = cfg.n_drop / cfg.rounds;
  for (int round = 0; round < cfg.rounds; ++round) {
    const int count =
        (round + 1 == cfg.rounds) ? cfg.n_drop - per_round * (cfg.rounds - 1) : per_round;
    if (count == 0) continue;
    const auto saliency =
        drop_saliency(weights, PointCloud(current, label), label, cfg.saliency_alpha);

    std::vector<Index> order(static_cast<std::size_t>(current.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return saliency(a) > saliency(b); });
    std::vector<bool> drop(order.size(), false);
    for (int i = 0; i < count; ++i) drop[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

    Points kept(current.rows() - count, 3);
    Index row = 0;
    for (Index i = 0; i < current.rows(); ++i) {
      if (!drop[static_cast<std::size_t>(i)]) kept.row(row++) = current.row(i);
    }
    current = std::move(kept);
  }
  return make_result(weights, pc, std::move(current), cfg, label);
}

AdvExample run_attack(const ModelWeights& weights, const PointCloud& pc, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::shift_l2: return attack_shift_l2(weights, pc, cfg);
    case AttackKind::shift_pgd: return attack_shift_pgd(weights, pc, cfg);
    case AttackKind::add_chamfer:
    case AttackKind::add_hausdorff: return attack_add(weights, pc, cfg);
    case AttackKind::drop_saliency: return attack_drop_saliency(weights, pc, cfg);
  }
  throw ValidationError("unknown attack kind");
}

}  // namespace pcarmor
