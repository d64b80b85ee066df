#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcarmor/errors.hpp"
#include "pcarmor/numerics.hpp"

namespace pcarmor {

template <typename Scalar>
using PointsX = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = PointsX<double>;
using Point3 = Eigen::Matrix<double, 1, 3>;

/// n x 3 coordinates with an optional class label. Always nonempty and finite.
class PointCloud {
 public:
  explicit PointCloud(Points points, std::optional<int> label = std::nullopt);

  const Points& points() const noexcept { return points_; }
  Index size() const noexcept { return points_.rows(); }
  const std::optional<int>& label() const noexcept { return label_; }

  PointCloud with_label(std::optional<int> label) const { return PointCloud(points_, label); }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.label_ == b.label_ && a.points_.rows() == b.points_.rows() &&
           a.points_ == b.points_;
  }

 private:
  Points points_;
  std::optional<int> label_;
};

// --- normalization -----------------------------------------------------------

/// Centers on the centroid and scales so the farthest point has norm 1.
/// Throws DegenerateInputError when every point coincides.
Points normalize_unit_sphere(const Points& points);
PointCloud normalize_unit_sphere(const PointCloud& pc);

/// Largest Euclidean norm of any row.
double max_point_norm(const Points& points);

// --- set distances (brute force, O(n*m)) -------------------------------------

namespace detail {
template <typename A, typename B>
void require_nonempty(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                      const char* what) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw ValidationError(std::string(what) + ": empty point cloud");
  }
}

/// Squared distance from `p` to its nearest row of `set`.
template <typename P, typename S>
typename S::Scalar nearest_squared(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<S>& set) {
  using Scalar = typename S::Scalar;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Index j = 0; j < set.rows(); ++j) {
    const Scalar dx = p(0) - set(j, 0);
    const Scalar dy = p(1) - set(j, 1);
    const Scalar dz = p(2) - set(j, 2);
    const Scalar d = dx * dx + dy * dy + dz * dz;
    if (d < best) best = d;
  }
  return best;
}
}  // namespace detail

/// max over a of min over b of Euclidean distance.
template <typename A, typename B>
typename A::Scalar hausdorff_directed(const Eigen::MatrixBase<A>& a,
                                      const Eigen::MatrixBase<B>& b) {
  detail::require_nonempty(a, b, "hausdorff_directed");
  typename A::Scalar worst = 0;
  for (Index i = 0; i < a.rows(); ++i) {
    const auto d = detail::nearest_squared(a.row(i), b);
    if (d > worst) worst = d;
  }
  return std::sqrt(worst);
}

template <typename A, typename B>
typename A::Scalar hausdorff_symmetric(const Eigen::MatrixBase<A>& a,
                                       const Eigen::MatrixBase<B>& b) {
  return std::max(hausdorff_directed(a, b), hausdorff_directed(b, a));
}

/// Mean over a of the squared distance to the nearest point of b.
template <typename A, typename B>
typename A::Scalar chamfer_directed(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  detail::require_nonempty(a, b, "chamfer_directed");
  typename A::Scalar sum = 0;
  for (Index i = 0; i < a.rows(); ++i) sum += detail::nearest_squared(a.row(i), b);
  return sum / static_cast<typename A::Scalar>(a.rows());
}

template <typename A, typename B>
typename A::Scalar chamfer_symmetric(const Eigen::MatrixBase<A>& a,
                                     const Eigen::MatrixBase<B>& b) {
  return chamfer_directed(a, b) + chamfer_directed(b, a);
}

/// Norm of the stacked 3n displacement between index-aligned clouds.
template <typename A, typename B>
typename A::Scalar l2_shift_norm(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("l2_shift_norm: clouds have " + std::to_string(a.rows()) + " and " +
                         std::to_string(b.rows()) + " points");
  }
  return (a - b).norm();
}

inline double hausdorff_directed(const PointCloud& a, const PointCloud& b) {
  return hausdorff_directed(a.points(), b.points());
}
inline double hausdorff_symmetric(const PointCloud& a, const PointCloud& b) {
  return hausdorff_symmetric(a.points(), b.points());
}
inline double chamfer_directed(const PointCloud& a, const PointCloud& b) {
  return chamfer_directed(a.points(), b.points());
}
inline double chamfer_symmetric(const PointCloud& a, const PointCloud& b) {
  return chamfer_symmetric(a.points(), b.points());
}
inline double l2_shift_norm(const PointCloud& a, const PointCloud& b) {
  return l2_shift_norm(a.points(), b.points());
}

// --- synthetic shapes --------------------------------------------------------

enum class ShapeKind { sphere, cube, cylinder, cone, torus, pyramid, disk, helix };

inline constexpr int kShapeKindCount = 8;
inline constexpr std::array<ShapeKind, kShapeKindCount> kAllShapeKinds = {
    ShapeKind::sphere, ShapeKind::cube,    ShapeKind::cylinder, ShapeKind::cone,
    ShapeKind::torus,  ShapeKind::pyramid, ShapeKind::disk,     ShapeKind::helix};

std::string_view to_string(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  int n_points = 256;
  std::uint64_t seed = 0;
  double jitter_sigma = 0.01;
  std::array<double, 3> rotation{0.0, 0.0, 0.0};  // x, y, z Euler angles (radians)

  void validate() const;
};

/// Raw samples on the parametric surface before jitter, rotation and
/// normalization. Shape proportions vary with the seed, except sphere (unit
/// radius) and cube (half-extent 1).
Points sample_shape_surface(const ShapeSpec& spec);

/// Rotation R = Rz * Ry * Rx for the given Euler angles.
Eigen::Matrix3d euler_rotation(const std::array<double, 3>& angles);

/// Samples, jitters, rotates, then normalizes to the unit sphere.
PointCloud generate_shape(const ShapeSpec& spec);

struct DatasetOptions {
  int n_per_class = 100;
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  int n_points = 256;
  double jitter_sigma = 0.01;
  std::array<double, 3> max_rotation{std::numbers::pi, std::numbers::pi, std::numbers::pi};  // per axis, radians
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
  std::vector<ShapeSpec> train_specs;
  std::vector<ShapeSpec> test_specs;
};

/// Balanced labeled clouds over all shape kinds; label == index in kAllShapeKinds.
/// Train and test specs come from disjoint seed streams.
Dataset build_dataset(const DatasetOptions& options);

}  // namespace pcarmor
