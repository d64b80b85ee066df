#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcarmor/geometry.hpp"
#include "pcarmor/numerics.hpp"

namespace pcarmor {

/// Layer widths of the shared per-point MLP and the classification head.
/// The last per-point width is the global feature dimension; the last head
/// width is the class count.
struct ModelConfig {
  std::vector<int> per_point_widths{64, 128, 256};
  std::vector<int> head_widths{128, kShapeKindCount};
  int n_classes = kShapeKindCount;
  std::uint64_t seed = 0;

  int feature_dim() const { return per_point_widths.empty() ? 0 : per_point_widths.back(); }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// x * weight + bias, weight stored fan_in x fan_out.
struct DenseLayer {
  Matrix weight;
  RowVector bias;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<DenseLayer> point_layers;
  std::vector<DenseLayer> head_layers;

  /// Throws if any tensor disagrees with `config` or holds a non-finite value.
  void validate() const;
  Index parameter_count() const;
};

/// Glorot-uniform weights (bounds +-sqrt(6 / (fan_in + fan_out))), zero biases.
ModelWeights init_weights(const ModelConfig& config);

/// Gradient tensors with the same layout as ModelWeights.
struct ModelGradients {
  std::vector<DenseLayer> point_layers;
  std::vector<DenseLayer> head_layers;
};

/// Input re-normalization applied by forward() when the cloud's max point norm
/// is off by more than kNormTolerance.
struct NormalizationGuard {
  static constexpr double kNormTolerance = 1e-6;

  bool applied = false;
  Point3 centroid = Point3::Zero();
  double radius = 1.0;
  Index farthest = 0;  // row that sets the radius
};

/// Everything forward() computed for a single cloud.
struct ForwardTrace {
  NormalizationGuard guard;
  Points points;                // what the network consumed (post-guard)
  std::vector<Matrix> point_pre;
  std::vector<Matrix> point_post;
  std::vector<Index> pool_argmax;  // winning point per feature column
  RowVector feature;               // max-pooled global feature vector
  std::vector<RowVector> head_pre;
  std::vector<RowVector> head_post;
  RowVector logits;
  RowVector softmax;

  int predicted_class() const { return static_cast<int>(argmax(softmax)); }
};

ForwardTrace forward(const ModelWeights& weights, const PointCloud& pc);

struct Prediction {
  int label = 0;
  RowVector softmax;
};

Prediction predict(const ModelWeights& weights, const PointCloud& pc);
RowVector extract_feature(const ModelWeights& weights, const PointCloud& pc);

/// Scalar objectives whose gradient with respect to the input points drives
/// the attacks.
struct Objective {
  enum class Kind {
    true_class_nll,        // -log softmax[cls]
    cw_margin,             // max(max_{j != cls} z_j - z_cls, -kappa), cls = target
    cw_margin_untargeted,  // max(z_cls - max_{j != cls} z_j, -kappa), cls = true label
    logit,                 // z_cls
  };

  Kind kind = Kind::true_class_nll;
  int cls = 0;
  double kappa = 0.0;

  static Objective nll(int label) { return {Kind::true_class_nll, label, 0.0}; }
  static Objective cw_targeted(int target, double kappa) { return {Kind::cw_margin, target, kappa}; }
  static Objective cw_untargeted(int label, double kappa) {
    return {Kind::cw_margin_untargeted, label, kappa};
  }
  static Objective logit(int cls) { return {Kind::logit, cls, 0.0}; }
};

struct ObjectiveValue {
  double value = 0.0;
  RowVector grad_logits;
};

ObjectiveValue evaluate_objective(const Objective& objective, const ForwardTrace& trace);

/// Back-propagates d(objective)/d(logits) to the raw input coordinates,
/// including the normalization guard when it was applied.
Points backprop_to_input(const ModelWeights& weights, const ForwardTrace& trace,
                         const RowVector& grad_logits);

struct InputGradient {
  double objective = 0.0;
  Points gradient;
  ForwardTrace trace;
};

InputGradient objective_and_gradient(const ModelWeights& weights, const PointCloud& pc,
                                     const Objective& objective);

/// n x 3 gradient of `objective` with respect to every input coordinate.
Points input_gradient(const ModelWeights& weights, const PointCloud& pc,
                      const Objective& objective);

/// Mean cross-entropy over a batch and its exact gradient for every parameter.
struct LossAndGradients {
  double loss = 0.0;
  int correct = 0;
  ModelGradients gradients;
};

LossAndGradients loss_and_gradients(const ModelWeights& weights,
                                    std::span<const PointCloud* const> batch);

struct TrainOptions {
  int epochs = 30;
  int batch_size = 32;
  double lr = 2e-3;
  double lr_decay = 1.0;   // multiplies lr after every epoch
  std::uint64_t seed = 0;  // batch order
};

struct EpochMetrics {
  int epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<EpochMetrics> history;
};

/// Adam on cross-entropy. Epoch 0 records the untrained model over the full
/// training set; later epochs record running loss/accuracy over the epoch's
/// batches plus test accuracy when a test set is given.
TrainResult train(const ModelConfig& config, std::span<const PointCloud> train_set,
                  const TrainOptions& options, std::span<const PointCloud> test_set = {});

/// Fraction (0..1) of labeled clouds whose prediction equals their label.
double accuracy(const ModelWeights& weights, std::span<const PointCloud> clouds);

// --- persistence -------------------------------------------------------------

using Fingerprint = std::array<std::uint8_t, 32>;

std::string to_hex(const Fingerprint& fp);

/// Serialized weights file: magic "PNMW", u32 version, config block, then
/// every tensor as little-endian f64 in declaration order.
std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_weights(const std::filesystem::path& path);

/// SHA-256 of the serialized weights, i.e. of the weights file.
Fingerprint weights_fingerprint(const ModelWeights& weights);
Fingerprint sha256(std::span<const std::uint8_t> bytes);
Fingerprint file_sha256(const std::filesystem::path& path);

}  // namespace pcarmor
