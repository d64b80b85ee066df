#include "pcarmor/defense.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "pcarmor/rng.hpp"

namespace pcarmor {

FeatureDatabase::FeatureDatabase(Matrix features, Matrix softmaxes, std::vector<int> labels,
                                 Fingerprint fingerprint)
    : features_(std::move(features)),
      softmaxes_(std::move(softmaxes)),
      labels_(std::move(labels)),
      fingerprint_(fingerprint) {
  const Index n = features_.rows();
  if (n < 1) throw ValidationError("FeatureDatabase: needs at least one entry");
  if (softmaxes_.rows() != n || static_cast<Index>(labels_.size()) != n) {
    throw DimensionError("FeatureDatabase: " + std::to_string(n) + " features but " +
                         std::to_string(softmaxes_.rows()) + " softmaxes and " +
                         std::to_string(labels_.size()) + " labels");
  }
  if (!features_.allFinite() || !softmaxes_.allFinite()) {
    throw ValidationError("FeatureDatabase: non-finite entries");
  }
  for (Index i = 0; i < n; ++i) {
    if (std::abs(softmaxes_.row(i).sum() - 1.0) > 1e-9 || softmaxes_.row(i).minCoeff() < 0.0) {
      throw ValidationError("FeatureDatabase: softmax row " + std::to_string(i) +
                            " is not a probability vector");
    }
    const int label = labels_[static_cast<std::size_t>(i)];
    if (label < 0 || label >= softmaxes_.cols()) {
      throw ValidationError("FeatureDatabase: label " + std::to_string(label) + " out of range");
    }
  }
}

FeatureDatabase build_feature_db(const ModelWeights& weights, std::span<const PointCloud> train_set) {
  if (train_set.empty()) throw ValidationError("build_feature_db: empty training set");
  const auto n = static_cast<Index>(train_set.size());
  Matrix features(n, weights.config.feature_dim());
  Matrix softmaxes(n, weights.config.n_classes);
  std::vector<int> labels;
  labels.reserve(train_set.size());
  for (Index i = 0; i < n; ++i) {
    const auto& pc = train_set[static_cast<std::size_t>(i)];
    if (!pc.label()) throw ValidationError("build_feature_db: unlabeled training cloud");
    const auto trace = forward(weights, pc);
    features.row(i) = trace.feature;
    softmaxes.row(i) = trace.softmax;
    labels.push_back(*pc.label());
  }
  return FeatureDatabase(std::move(features), std::move(softmaxes), std::move(labels),
                         weights_fingerprint(weights));
}

std::string_view to_string(Weighting w) {
  switch (w) {
    case Weighting::uniform: return "UW";
    case Weighting::entropy: return "EW";
    case Weighting::diversity: return "DW";
  }
  throw ValidationError("unknown weighting");
}

std::string_view to_string(DistanceMetric m) {
  return m == DistanceMetric::euclidean ? "euclidean" : "cosine";
}

Weighting parse_weighting(std::string_view name) {
  if (name == "UW" || name == "uw" || name == "uniform") return Weighting::uniform;
  if (name == "EW" || name == "ew" || name == "entropy") return Weighting::entropy;
  if (name == "DW" || name == "dw" || name == "diversity") return Weighting::diversity;
  throw ValidationError("unknown weighting '" + std::string(name) + "' (expected UW, EW or DW)");
}

DistanceMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "cosine") return DistanceMetric::cosine;
  throw ValidationError("unknown metric '" + std::string(name) + "'");
}

void DefenseConfig::validate(Index db_size) const {
  if (k < 1 || k > db_size) {
    throw ValidationError("defense: k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(db_size) + "]");
  }
  if (!(dw_exponent >= 1.0)) throw ValidationError("defense: dw_exponent must be >= 1");
  if (dw_top < 1) throw ValidationError("defense: dw_top must be >= 1");
}

double feature_distance(std::span<const double> a, std::span<const double> b,
                        DistanceMetric metric) {
  if (a.size() != b.size()) {
    throw DimensionError("feature_distance: sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  if (metric == DistanceMetric::euclidean) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      sum += d * d;
    }
    return std::sqrt(sum);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Neighbor> knn_query(const FeatureDatabase& db, const RowVector& feature, int k,
                                DistanceMetric metric) {
  if (k < 1 || k > db.size()) {
    throw ValidationError("knn_query: k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(db.size()) + "]");
  }
  if (feature.size() != db.feature_dim()) {
    throw DimensionError("knn_query: query has " + std::to_string(feature.size()) +
                         " dims, database has " + std::to_string(db.feature_dim()));
  }
  const auto d = static_cast<std::size_t>(db.feature_dim());
  const std::span<const double> query(feature.data(), d);
  std::vector<Neighbor> all(static_cast<std::size_t>(db.size()));
  for (Index i = 0; i < db.size(); ++i) {
    const std::span<const double> row(db.features().data() + i * db.feature_dim(), d);
    all[static_cast<std::size_t>(i)] = {i, feature_distance(query, row, metric)};
  }
  auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), closer);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

double weight_uniform(const RowVector&) { return 1.0; }

double weight_entropy(const RowVector& softmax) {
  // ln C - H written as sum_c s_c ln(C s_c): same value when the entries sum
  // to 1, without the cancellation near the uniform softmax (exact 0 there)
  const auto classes = static_cast<double>(softmax.size());
  double w = 0.0;
  for (Index c = 0; c < softmax.size(); ++c) {
    const double s = softmax(c);
    if (s > 0.0) w += s * std::log(classes * s);
  }
  return std::abs(w);
}

double weight_diversity(const RowVector& softmax, double exponent, int top) {
  std::vector<double> sorted(softmax.data(), softmax.data() + softmax.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto m_eff = std::min<std::size_t>(static_cast<std::size_t>(top), sorted.size() - 1);
  double w = 0.0;
  for (std::size_t m = 1; m <= m_eff; ++m) w += std::pow(sorted[0] - sorted[m], exponent);
  return w;
}

double neighbor_weight(const RowVector& softmax, const DefenseConfig& cfg) {
  switch (cfg.weighting) {
    case Weighting::uniform: return weight_uniform(softmax);
    case Weighting::entropy: return weight_entropy(softmax);
    case Weighting::diversity: return weight_diversity(softmax, cfg.dw_exponent, cfg.dw_top);
  }
  throw ValidationError("unknown weighting");
}

DefenseVerdict classify_feature(const FeatureDatabase& db, const RowVector& feature,
                                const DefenseConfig& cfg) {
  cfg.validate(db.size());
  DefenseVerdict v;
  const auto neighbors = knn_query(db, feature, cfg.k, cfg.metric);

  auto aggregate = [&](const DefenseConfig& c) {
    v.aggregated = RowVector::Zero(db.n_classes());
    v.neighbors.clear();
    double total = 0.0;
    for (const auto& nb : neighbors) {
      const RowVector s = db.softmaxes().row(nb.index);
      const double w = neighbor_weight(s, c);
      v.aggregated += w * s;
      total += w;
      v.neighbors.push_back({nb.index, nb.distance, w, db.labels()[static_cast<std::size_t>(nb.index)]});
    }
    return total;
  };

  const double total = aggregate(cfg);
  if (total < 1e-12 && cfg.uniform_fallback && cfg.weighting != Weighting::uniform) {
    DefenseConfig uw = cfg;
    uw.weighting = Weighting::uniform;
    aggregate(uw);
    v.used_fallback = true;
  }
  v.predicted = static_cast<int>(argmax(v.aggregated));
  return v;
}

namespace {
void check_fingerprint(const FeatureDatabase& db, const ModelWeights& weights) {
  const auto fp = weights_fingerprint(weights);
  if (fp != db.fingerprint()) {
    throw StaleDatabaseError("feature database was built from weights " + to_hex(db.fingerprint()) +
                             " but the model fingerprint is " + to_hex(fp));
  }
}
}  // namespace

DefenseVerdict defend_classify(const FeatureDatabase& db, const ModelWeights& weights,
                               const PointCloud& pc, const DefenseConfig& cfg) {
  check_fingerprint(db, weights);
  return classify_feature(db, extract_feature(weights, pc), cfg);
}

KnnDefense::KnnDefense(const FeatureDatabase& db, const ModelWeights& weights, DefenseConfig cfg)
    : db_(&db), weights_(&weights), cfg_(cfg) {
  check_fingerprint(db, weights);
  cfg_.validate(db.size());
}

DefenseVerdict KnnDefense::classify(const PointCloud& pc) const {
  return classify_feature(*db_, extract_feature(*weights_, pc), cfg_);
}

PointCloud srs(const PointCloud& pc, Index n_remove, std::uint64_t seed) {
  const Index n = pc.size();
  if (n_remove < 0 || n_remove >= n) {
    throw ValidationError("srs: n_remove " + std::to_string(n_remove) + " must lie in [0, " +
                          std::to_string(n) + ")");
  }
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed);
  // partial Fisher-Yates: the first n_remove slots become the removed set
  for (Index i = 0; i < n_remove; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<bool> removed(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n_remove; ++i) removed[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;

  Points kept(n - n_remove, 3);
  Index row = 0;
  for (Index i = 0; i < n; ++i) {
    if (!removed[static_cast<std::size_t>(i)]) kept.row(row++) = pc.points().row(i);
  }
  return PointCloud(std::move(kept), pc.label());
}

PointCloud sor(const PointCloud& pc, int k, double alpha) {
  const Index n = pc.size();
  if (k < 1 || n <= k) {
    throw ValidationError("sor: need k >= 1 and more than k points (k = " + std::to_string(k) +
                          ", n = " + std::to_string(n) + ")");
  }
  if (!(alpha > 0.0)) throw ValidationError("sor: alpha must be > 0");
  const Points& p = pc.points();

  Eigen::VectorXd mean_dist(n);
  std::vector<double> dists(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Index j = 0; j < n; ++j) {
      if (j != i) dists[m++] = (p.row(i) - p.row(j)).norm();
    }
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    double s = 0.0;
    for (int t = 0; t < k; ++t) s += dists[static_cast<std::size_t>(t)];
    mean_dist(i) = s / k;
  }
  const double mu = mean_dist.mean();
  const double sigma = std::sqrt((mean_dist.array() - mu).square().mean());
  // absolute slack so configurations with equal spacing are not split by rounding
  const double threshold = mu + alpha * sigma + 1e-12 * std::max(1.0, mu);

  std::vector<Index> keep;
  for (Index i = 0; i < n; ++i) {
    if (mean_dist(i) <= threshold) keep.push_back(i);
  }
  if (keep.empty()) {
    Index best = 0;
    for (Index i = 1; i < n; ++i) {
      if (mean_dist(i) < mean_dist(best)) best = i;
    }
    keep.push_back(best);
  }
  Points out(static_cast<Index>(keep.size()), 3);
  for (std::size_t r = 0; r < keep.size(); ++r) out.row(static_cast<Index>(r)) = p.row(keep[r]);
  return PointCloud(std::move(out), pc.label());
}

}  // namespace pcarmor
