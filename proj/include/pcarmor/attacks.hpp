#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcarmor/geometry.hpp"
#include "pcarmor/model.hpp"

namespace pcarmor {

enum class AttackKind { shift_l2, shift_pgd, add_chamfer, add_hausdorff, drop_saliency };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackConfig {
  AttackKind kind = AttackKind::shift_l2;
  bool targeted = false;
  std::optional<int> target;

  int iterations = 100;     // inner optimization steps
  double step = 0.01;       // Adam learning rate (shift/add) or sign step (PGD)
  int binary_steps = 5;     // outer lambda search (shift_l2)
  double lambda = 10.0;     // initial lambda
  double kappa = 0.0;       // CW confidence margin
  int n_add = 32;
  double add_init_sigma = 0.01;
  int n_drop = 51;
  int rounds = 5;           // saliency recomputations for drop
  double saliency_alpha = 1.0;
  double epsilon = 0.05;    // PGD box radius
  std::uint64_t seed = 0;

  /// Defaults for each attack family.
  static AttackConfig defaults(AttackKind kind);

  /// Checks the budgets and the target against a concrete cloud.
  void validate(Index n_points, int true_label, int n_classes) const;
};

struct AdvExample {
  PointCloud clean;
  PointCloud adversarial;
  int true_label = 0;
  std::optional<int> target;
  AttackKind kind = AttackKind::shift_l2;
  bool success = false;
  int predicted = 0;  // model prediction on `adversarial`
  /// l2 shift norm (shift), symmetric Chamfer (add_chamfer), directed
  /// Hausdorff adversarial->clean (add_hausdorff) or points dropped (drop).
  double distortion = 0.0;
  /// Best distortion after each outer search step that found a success (shift_l2).
  std::vector<double> search_trace;
};

/// Distortion of `adversarial` relative to `clean` as defined for `kind`.
double attack_distortion(AttackKind kind, const PointCloud& clean, const PointCloud& adversarial);

/// Whether `predicted` counts as a successful attack.
bool attack_succeeded(int predicted, int true_label, const std::optional<int>& target);

AdvExample attack_shift_l2(const ModelWeights& weights, const PointCloud& pc,
                           const AttackConfig& cfg);
AdvExample attack_shift_pgd(const ModelWeights& weights, const PointCloud& pc,
                            const AttackConfig& cfg);
AdvExample attack_add(const ModelWeights& weights, const PointCloud& pc, const AttackConfig& cfg);
AdvExample attack_drop_saliency(const ModelWeights& weights, const PointCloud& pc,
                                const AttackConfig& cfg);

/// Per-point drop saliency for the current cloud (higher = dropped first).
Eigen::VectorXd drop_saliency(const ModelWeights& weights, const PointCloud& pc, int true_label,
                              double alpha);

/// Dispatches on cfg.kind.
AdvExample run_attack(const ModelWeights& weights, const PointCloud& pc, const AttackConfig& cfg);

}  // namespace pcarmor
