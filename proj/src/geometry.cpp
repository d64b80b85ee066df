#include "pcarmor/geometry.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "pcarmor/rng.hpp"

namespace pcarmor {

PointCloud::PointCloud(Points points, std::optional<int> label)
    : points_(std::move(points)), label_(label) {
  if (points_.rows() < 1) throw ValidationError("PointCloud: at least one point is required");
  if (!points_.allFinite()) throw ValidationError("PointCloud: non-finite coordinate");
}

double max_point_norm(const Points& points) {
  return points.rowwise().norm().maxCoeff();
}

Points normalize_unit_sphere(const Points& points) {
  if (points.rows() < 1) throw ValidationError("normalize_unit_sphere: empty point cloud");
  const Point3 centroid = points.colwise().mean();
  Points centered = points.rowwise() - centroid;
  const double radius = max_point_norm(centered);
  if (!(radius > 0.0)) {
    throw DegenerateInputError("normalize_unit_sphere: all " + std::to_string(points.rows()) +
                               " points coincide");
  }
  centered /= radius;
  return centered;
}

PointCloud normalize_unit_sphere(const PointCloud& pc) {
  return PointCloud(normalize_unit_sphere(pc.points()), pc.label());
}

// --- shapes ------------------------------------------------------------------

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::cone: return "cone";
    case ShapeKind::torus: return "torus";
    case ShapeKind::pyramid: return "pyramid";
    case ShapeKind::disk: return "disk";
    case ShapeKind::helix: return "helix";
  }
  throw ValidationError("unknown shape kind");
}

ShapeKind parse_shape_kind(std::string_view name) {
  for (ShapeKind k : kAllShapeKinds) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown shape kind '" + std::string(name) + "'");
}

void ShapeSpec::validate() const {
  if (static_cast<int>(kind) < 0 || static_cast<int>(kind) >= kShapeKindCount) {
    throw ValidationError("ShapeSpec: invalid kind " + std::to_string(static_cast<int>(kind)));
  }
  if (n_points < 8) {
    throw ValidationError("ShapeSpec: n_points must be >= 8, got " + std::to_string(n_points));
  }
  if (!(jitter_sigma >= 0.0)) throw ValidationError("ShapeSpec: jitter_sigma must be >= 0");
  for (double a : rotation) {
    if (!std::isfinite(a)) throw ValidationError("ShapeSpec: non-finite rotation angle");
  }
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Point3 sample_triangle(Rng& rng, const Point3& a, const Point3& b, const Point3& c) {
  double u = rng.uniform();
  double v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  return a + u * (b - a) + v * (c - a);
}

// Picks an index with probability proportional to `weights`.
std::size_t pick_weighted(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double x = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (x < weights[i]) return i;
    x -= weights[i];
  }
  return weights.size() - 1;
}

Point3 disk_point(Rng& rng, double radius, double z) {
  const double r = radius * std::sqrt(rng.uniform());
  const double t = kTwoPi * rng.uniform();
  return {r * std::cos(t), r * std::sin(t), z};
}

}  // namespace

Points sample_shape_surface(const ShapeSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  // proportions are drawn first so they depend on the seed only
  const double height = rng.uniform(1.2, 2.2);
  const double tube = rng.uniform(0.25, 0.4);
  const double helix_height = rng.uniform(1.5, 2.5);

  Points pts(spec.n_points, 3);
  for (Index i = 0; i < pts.rows(); ++i) {
    Point3 p;
    switch (spec.kind) {
      case ShapeKind::sphere: {
        Point3 g(rng.normal(), rng.normal(), rng.normal());
        while (g.norm() < 1e-12) g = Point3(rng.normal(), rng.normal(), rng.normal());
        p = g / g.norm();
        break;
      }
      case ShapeKind::cube: {
        const auto face = rng.below(6);
        const double u = rng.uniform(-1.0, 1.0);
        const double v = rng.uniform(-1.0, 1.0);
        const double s = (face % 2 == 0) ? 1.0 : -1.0;
        switch (face / 2) {
          case 0: p = {s, u, v}; break;
          case 1: p = {u, s, v}; break;
          default: p = {u, v, s}; break;
        }
        break;
      }
      case ShapeKind::cylinder: {
        const double areas[] = {kTwoPi * height, std::numbers::pi, std::numbers::pi};
        const auto part = pick_weighted(rng, areas);
        if (part == 0) {
          const double t = kTwoPi * rng.uniform();
          p = {std::cos(t), std::sin(t), rng.uniform(-0.5, 0.5) * height};
        } else {
          p = disk_point(rng, 1.0, part == 1 ? 0.5 * height : -0.5 * height);
        }
        break;
      }
      case ShapeKind::cone: {
        const double slant = std::sqrt(1.0 + height * height);
        const double areas[] = {std::numbers::pi * slant, std::numbers::pi};
        if (pick_weighted(rng, areas) == 0) {
          const double f = std::sqrt(rng.uniform());  // fraction of the way from apex to rim
          const double t = kTwoPi * rng.uniform();
          p = {f * std::cos(t), f * std::sin(t), 0.5 * height - f * height};
        } else {
          p = disk_point(rng, 1.0, -0.5 * height);
        }
        break;
      }
      case ShapeKind::torus: {
        // rejection on the tube angle gives uniform area density
        double v;
        do {
          v = kTwoPi * rng.uniform();
        } while (rng.uniform() * (1.0 + tube) > 1.0 + tube * std::cos(v));
        const double u = kTwoPi * rng.uniform();
        const double ring = 1.0 + tube * std::cos(v);
        p = {ring * std::cos(u), ring * std::sin(u), tube * std::sin(v)};
        break;
      }
      case ShapeKind::pyramid: {
        const double zb = -0.5 * height;
        const Point3 apex(0.0, 0.0, 0.5 * height);
        const Point3 corners[] = {{1, 1, zb}, {-1, 1, zb}, {-1, -1, zb}, {1, -1, zb}};
        const double side = std::sqrt(height * height + 1.0);  // slant height; base edge 2
        const double areas[] = {4.0, side, side, side, side};
        const auto face = pick_weighted(rng, areas);
        if (face == 0) {
          p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), zb};
        } else {
          p = sample_triangle(rng, apex, corners[face - 1], corners[face % 4]);
        }
        break;
      }
      case ShapeKind::disk: {
        p = disk_point(rng, 1.0, 0.0);
        break;
      }
      case ShapeKind::helix: {
        constexpr double kTurns = 3.0;
        const double f = rng.uniform();
        const double t = kTwoPi * kTurns * f;
        p = {std::cos(t), std::sin(t), (f - 0.5) * helix_height};
        break;
      }
    }
    pts.row(i) = p;
  }
  return pts;
}

Eigen::Matrix3d euler_rotation(const std::array<double, 3>& angles) {
  return (Eigen::AngleAxisd(angles[2], Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(angles[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(angles[0], Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

PointCloud generate_shape(const ShapeSpec& spec) {
  Points pts = sample_shape_surface(spec);
  if (spec.jitter_sigma > 0.0) {
    Rng jitter(derive_seed(spec.seed, "jitter"));
    for (Index i = 0; i < pts.rows(); ++i) {
      for (Index c = 0; c < 3; ++c) pts(i, c) += jitter.normal(0.0, spec.jitter_sigma);
    }
  }
  const Eigen::Matrix3d rot = euler_rotation(spec.rotation);
  pts = (pts * rot.transpose()).eval();
  return PointCloud(normalize_unit_sphere(pts));
}

Dataset build_dataset(const DatasetOptions& options) {
  if (options.n_per_class < 1) throw ValidationError("build_dataset: n_per_class must be >= 1");
  if (options.train_fraction < 0.0 || options.test_fraction < 0.0 ||
      std::abs(options.train_fraction + options.test_fraction - 1.0) > 1e-9) {
    throw ValidationError("build_dataset: split fractions must be non-negative and sum to 1");
  }
  const int n_train =
      static_cast<int>(std::lround(options.n_per_class * options.train_fraction));
  const int n_test = options.n_per_class - n_train;

  auto make_split = [&](std::string_view stream, int count, std::vector<PointCloud>& clouds,
                        std::vector<ShapeSpec>& specs) {
    for (int i = 0; i < count; ++i) {
      for (int c = 0; c < kShapeKindCount; ++c) {
        const auto counter = (static_cast<std::uint64_t>(c) << 32) | static_cast<std::uint32_t>(i);
        Rng rng(derive_seed(options.seed, stream, counter));
        ShapeSpec spec;
        spec.kind = kAllShapeKinds[static_cast<std::size_t>(c)];
        spec.n_points = options.n_points;
        spec.seed = rng.next_u64();
        spec.jitter_sigma = options.jitter_sigma;
        for (std::size_t a = 0; a < 3; ++a) {
          spec.rotation[a] = rng.uniform(-options.max_rotation[a], options.max_rotation[a]);
        }
        clouds.push_back(generate_shape(spec).with_label(c));
        specs.push_back(spec);
      }
    }
  };

  Dataset ds;
  make_split("dataset/train", n_train, ds.train, ds.train_specs);
  make_split("dataset/test", n_test, ds.test, ds.test_specs);
  return ds;
}

}  // namespace pcarmor
