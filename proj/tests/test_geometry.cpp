#include <doctest.h>

#include <cmath>
#include <set>
#include <string>

#include "pcarmor/geometry.hpp"
#include "pcarmor/rng.hpp"
#include "pcarmor/xyz_io.hpp"

using namespace pcarmor;

namespace {

Points pts(std::initializer_list<Point3> rows) {
  Points p(static_cast<Index>(rows.size()), 3);
  Index i = 0;
  for (const auto& r : rows) p.row(i++) = r;
  return p;
}

Points random_points(Rng& rng, Index n, double scale = 1.0) {
  Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal(0.0, scale);
  return p;
}

}  // namespace

TEST_CASE("point cloud validation") {
  CHECK_THROWS_AS(PointCloud(Points(0, 3)), ValidationError);
  Points bad = Points::Zero(2, 3);
  bad(1, 2) = std::nan("");
  CHECK_THROWS_AS(PointCloud{bad}, ValidationError);
}

TEST_CASE("normalize unit sphere") {
  const Points p = normalize_unit_sphere(pts({{2, 0, 0}, {-2, 0, 0}}));
  CHECK(p(0, 0) == 1.0);
  CHECK(p(1, 0) == -1.0);
  CHECK(p.col(1).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(normalize_unit_sphere(pts({{1, 2, 3}, {1, 2, 3}})), DegenerateInputError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Points raw = random_points(rng, 40, 3.0);
    const Points n = normalize_unit_sphere(raw);
    CHECK(std::abs(max_point_norm(n) - 1.0) < 1e-9);
    CHECK(n.colwise().mean().norm() < 1e-9);
    CHECK((normalize_unit_sphere(n) - n).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((normalize_unit_sphere((raw * 7.5).eval()) - n).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("hausdorff hand example") {
  const Points a = pts({{0, 0, 0}});
  const Points b = pts({{1, 0, 0}, {0, 0, 0}});
  CHECK(hausdorff_directed(a, b) == 0.0);
  CHECK(hausdorff_directed(b, a) == 1.0);
  CHECK(hausdorff_symmetric(a, b) == 1.0);
  CHECK(hausdorff_symmetric(b, b) == 0.0);
}

TEST_CASE("chamfer hand example") {
  const Points a = pts({{0, 0, 0}, {2, 0, 0}});
  const Points b = pts({{1, 0, 0}});
  CHECK(chamfer_directed(a, b) == 1.0);
  CHECK(chamfer_directed(b, a) == 1.0);
  CHECK(chamfer_symmetric(a, b) == 2.0);
  CHECK(chamfer_symmetric(a, a) == 0.0);
}

TEST_CASE("l2 shift norm") {
  const Points a = pts({{1, 1, 1}});
  const Points b = pts({{4, 5, 1}});
  CHECK(l2_shift_norm(a, b) == 5.0);
  CHECK(l2_shift_norm(a, a) == 0.0);
  CHECK_THROWS_AS(l2_shift_norm(a, pts({{0, 0, 0}, {1, 1, 1}})), DimensionError);

  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Points x = random_points(rng, 20);
    const Points y = random_points(rng, 20);
    double s = 0.0;
    for (Index i = 0; i < 20; ++i) s += (x.row(i) - y.row(i)).squaredNorm();
    CHECK(l2_shift_norm(x, y) == doctest::Approx(std::sqrt(s)).epsilon(1e-12));
  }
}

TEST_CASE("metric properties on random clouds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 50);
    const Points a = random_points(rng, 15);
    const Points b = random_points(rng, 22);
    CHECK(hausdorff_symmetric(a, b) == hausdorff_symmetric(b, a));
    CHECK(hausdorff_directed(a, b) <= hausdorff_symmetric(a, b));
    CHECK(chamfer_symmetric(a, b) > 0.0);
    CHECK(chamfer_directed(a, b) >= 0.0);

    // same set in a different order
    Points shuffled = a;
    for (Index i = shuffled.rows() - 1; i > 0; --i) {
      shuffled.row(i).swap(shuffled.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(i) + 1))));
    }
    CHECK(chamfer_symmetric(a, shuffled) == 0.0);

    const Eigen::Matrix3d rot = euler_rotation({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
    const Points ra = a * rot.transpose();
    const Points rb = b * rot.transpose();
    CHECK(std::abs(hausdorff_directed(ra, rb) - hausdorff_directed(a, b)) < 1e-9);
    CHECK(std::abs(chamfer_symmetric(ra, rb) - chamfer_symmetric(a, b)) < 1e-9);
    const Points a2 = random_points(rng, 15);
    CHECK(std::abs(l2_shift_norm(Points(a2 * rot.transpose()), ra) - l2_shift_norm(a2, a)) < 1e-9);
  }
}

TEST_CASE("shape generation is deterministic") {
  for (ShapeKind kind : kAllShapeKinds) {
    ShapeSpec spec;
    spec.kind = kind;
    spec.seed = 42;
    spec.rotation = {0.3, -0.2, 1.1};
    const PointCloud a = generate_shape(spec);
    const PointCloud b = generate_shape(spec);
    CHECK(a == b);
    CHECK(a.size() == 256);
    CHECK(std::abs(max_point_norm(a.points()) - 1.0) < 1e-9);
    CHECK(a.points().colwise().mean().norm() < 1e-9);
  }
}

TEST_CASE("jitter-free sphere has equal norms") {
  ShapeSpec spec;
  spec.kind = ShapeKind::sphere;
  spec.jitter_sigma = 0.0;
  spec.seed = 3;
  const Points raw = sample_shape_surface(spec);
  for (Index i = 0; i < raw.rows(); ++i) CHECK(std::abs(raw.row(i).norm() - 1.0) < 1e-9);
  // after normalization the points still share one distance to the sphere's center
  const Points n = generate_shape(spec).points();
  const Point3 m = raw.colwise().mean();
  const double r = (raw.rowwise() - m).rowwise().norm().maxCoeff();
  const Point3 center = -m / r;
  for (Index i = 0; i < n.rows(); ++i) CHECK(std::abs((n.row(i) - center).norm() - 1.0 / r) < 1e-9);
}

TEST_CASE("jitter-free cube points lie on a face") {
  ShapeSpec spec;
  spec.kind = ShapeKind::cube;
  spec.jitter_sigma = 0.0;
  spec.seed = 17;
  const Points raw = sample_shape_surface(spec);
  for (Index i = 0; i < raw.rows(); ++i) {
    CHECK(std::abs(raw.row(i).cwiseAbs().maxCoeff() - 1.0) < 1e-9);
  }
}

TEST_CASE("invalid specs") {
  ShapeSpec spec;
  spec.n_points = 7;
  CHECK_THROWS_AS(generate_shape(spec), ValidationError);
  spec.n_points = 16;
  spec.kind = static_cast<ShapeKind>(99);
  CHECK_THROWS_AS(generate_shape(spec), ValidationError);
  CHECK_THROWS_AS(parse_shape_kind("dodecahedron"), ValidationError);
  CHECK(parse_shape_kind("torus") == ShapeKind::torus);
}

TEST_CASE("dataset sizes, balance and disjointness") {
  DatasetOptions opt;
  opt.n_per_class = 100;
  opt.n_points = 16;  // the counts do not depend on cloud size
  opt.seed = 5;
  const Dataset ds = build_dataset(opt);
  CHECK(ds.train.size() == 640);
  CHECK(ds.test.size() == 160);
  int hist_train[kShapeKindCount] = {};
  int hist_test[kShapeKindCount] = {};
  for (const auto& pc : ds.train) ++hist_train[*pc.label()];
  for (const auto& pc : ds.test) ++hist_test[*pc.label()];
  for (int c = 0; c < kShapeKindCount; ++c) {
    CHECK(hist_train[c] == 80);
    CHECK(hist_test[c] == 20);
  }
  std::set<std::string> seen;
  for (const auto& pc : ds.train) seen.insert(format_xyz(pc));
  CHECK(seen.size() == ds.train.size());
  for (const auto& pc : ds.test) CHECK(seen.count(format_xyz(pc)) == 0);

  const Dataset again = build_dataset(opt);
  for (std::size_t i = 0; i < ds.test.size(); ++i) CHECK(again.test[i] == ds.test[i]);

  opt.train_fraction = 0.7;
  CHECK_THROWS_AS(build_dataset(opt), ValidationError);
}

TEST_CASE("xyz round trip") {
  Rng rng(21);
  const PointCloud pc(random_points(rng, 33), 4);
  const PointCloud back = parse_xyz(format_xyz(pc));
  CHECK(back == pc);
  const PointCloud unlabeled(random_points(rng, 3));
  const std::string text = format_xyz(unlabeled);
  CHECK(text.rfind("n 3 label -\n", 0) == 0);
  CHECK(parse_xyz(text) == unlabeled);

  CHECK_THROWS_AS(parse_xyz("n 2 label 1\n0 0 0\n"), FormatError);
  CHECK_THROWS_AS(parse_xyz("n 1 label 1\n0 0 x\n"), FormatError);
  CHECK_THROWS_AS(parse_xyz("m 1 label 1\n0 0 0\n"), FormatError);
  CHECK_THROWS_AS(read_xyz("/nonexistent/cloud.xyz"), IoError);
}
