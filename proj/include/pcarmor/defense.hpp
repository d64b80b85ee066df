#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "pcarmor/geometry.hpp"
#include "pcarmor/model.hpp"

namespace pcarmor {

// --- feature database --------------------------------------------------------

/// Per training cloud: global feature, model softmax and ground-truth label,
/// tied to the weights that produced them by a SHA-256 fingerprint.
class FeatureDatabase {
 public:
  FeatureDatabase(Matrix features, Matrix softmaxes, std::vector<int> labels,
                  Fingerprint fingerprint);

  Index size() const noexcept { return features_.rows(); }
  Index feature_dim() const noexcept { return features_.cols(); }
  Index n_classes() const noexcept { return softmaxes_.cols(); }

  const Matrix& features() const noexcept { return features_; }
  const Matrix& softmaxes() const noexcept { return softmaxes_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const Fingerprint& fingerprint() const noexcept { return fingerprint_; }

 private:
  Matrix features_;
  Matrix softmaxes_;
  std::vector<int> labels_;
  Fingerprint fingerprint_;
};

FeatureDatabase build_feature_db(const ModelWeights& weights, std::span<const PointCloud> train_set);

/// File: magic "FDB1", u32 version, u32 N, u32 d, u32 C, 32-byte fingerprint,
/// then features (N x d, f64), softmaxes (N x C, f64), labels (N x u32).
std::vector<std::uint8_t> serialize_feature_db(const FeatureDatabase& db);
FeatureDatabase deserialize_feature_db(std::span<const std::uint8_t> bytes);
void save_feature_db(const std::filesystem::path& path, const FeatureDatabase& db);
FeatureDatabase load_feature_db(const std::filesystem::path& path);
/// Also rejects a database whose fingerprint differs from `expected`.
FeatureDatabase load_feature_db(const std::filesystem::path& path, const Fingerprint& expected);

// --- configuration -----------------------------------------------------------

enum class Weighting { uniform, entropy, diversity };
enum class DistanceMetric { euclidean, cosine };

std::string_view to_string(Weighting w);
std::string_view to_string(DistanceMetric m);
Weighting parse_weighting(std::string_view name);  // UW / EW / DW
DistanceMetric parse_metric(std::string_view name);

struct DefenseConfig {
  int k = 5;
  Weighting weighting = Weighting::uniform;
  DistanceMetric metric = DistanceMetric::euclidean;
  double dw_exponent = 3.0;
  int dw_top = 20;
  bool uniform_fallback = true;

  void validate(Index db_size) const;
};

// --- neighbor search ---------------------------------------------------------

struct Neighbor {
  Index index = 0;
  double distance = 0.0;
};

/// Distance between two feature vectors. Euclidean sums squared differences
/// in index order; cosine is 1 - cos(angle) (1 when either vector is zero).
double feature_distance(std::span<const double> a, std::span<const double> b,
                        DistanceMetric metric);

/// Exact k nearest rows of the database, ascending by distance, ties to the
/// smaller index.
std::vector<Neighbor> knn_query(const FeatureDatabase& db, const RowVector& feature, int k,
                                DistanceMetric metric = DistanceMetric::euclidean);

// --- weighting functions -----------------------------------------------------

double weight_uniform(const RowVector& softmax);

/// |ln C + sum_c s_c ln s_c|, zero-probability terms contribute nothing.
double weight_entropy(const RowVector& softmax);

/// sum over the M_eff = min(M, C - 1) runners-up of (s_max - s_m)^P.
double weight_diversity(const RowVector& softmax, double exponent, int top);

double neighbor_weight(const RowVector& softmax, const DefenseConfig& cfg);

// --- classification ----------------------------------------------------------

struct NeighborRecord {
  Index index = 0;
  double distance = 0.0;
  double weight = 0.0;
  int label = 0;
};

struct DefenseVerdict {
  int predicted = 0;
  RowVector aggregated;  // unnormalized weighted sum of neighbor softmaxes
  std::vector<NeighborRecord> neighbors;
  bool used_fallback = false;
};

/// Aggregates the neighbors' softmaxes for an already extracted feature.
DefenseVerdict classify_feature(const FeatureDatabase& db, const RowVector& feature,
                                const DefenseConfig& cfg);

/// Checks the weights fingerprint against the database, then extracts the
/// feature of `pc` and classifies it by its neighbors.
DefenseVerdict defend_classify(const FeatureDatabase& db, const ModelWeights& weights,
                               const PointCloud& pc, const DefenseConfig& cfg);

/// Binds weights to a database once so repeated queries skip the fingerprint check.
class KnnDefense {
 public:
  KnnDefense(const FeatureDatabase& db, const ModelWeights& weights, DefenseConfig cfg);

  DefenseVerdict classify(const PointCloud& pc) const;
  const DefenseConfig& config() const noexcept { return cfg_; }

 private:
  const FeatureDatabase* db_;
  const ModelWeights* weights_;
  DefenseConfig cfg_;
};

// --- preprocessing baselines -------------------------------------------------

/// Removes `n_remove` points chosen uniformly without replacement; survivors keep their order.
PointCloud srs(const PointCloud& pc, Index n_remove, std::uint64_t seed);

/// Statistical outlier removal: drops points whose mean distance to their
/// k nearest neighbors exceeds mean + alpha * stddev over the cloud.
PointCloud sor(const PointCloud& pc, int k = 2, double alpha = 1.1);

}  // namespace pcarmor
