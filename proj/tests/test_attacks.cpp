#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "pcarmor/attacks.hpp"
#include "pcarmor/geometry.hpp"
#include "pcarmor/model.hpp"
#include "pcarmor/rng.hpp"
#include "desk.hpp"
#include "support.hpp"

using namespace pcarmor;
using testsupport::random_points;

namespace {

ModelWeights untrained(std::uint64_t seed) {
  ModelConfig mc;
  mc.seed = seed;
  return init_weights(mc);
}

PointCloud random_cloud(std::uint64_t seed, int label, Index n = 64) {
  Rng rng(seed);
  return PointCloud(normalize_unit_sphere(random_points(rng, n)), label);
}

bool contains_row(const Points& set, const Point3& p) {
  for (Index i = 0; i < set.rows(); ++i) {
    if ((set.row(i) - p).cwiseAbs().maxCoeff() <= 1e-12) return true;
  }
  return false;
}

void check_consistent(const ModelWeights& w, const AdvExample& ex) {
  CHECK(ex.predicted == predict(w, ex.adversarial).label);
  CHECK(ex.success == attack_succeeded(ex.predicted, ex.true_label, ex.target));
  if (ex.target) {
    CHECK(ex.success == (ex.predicted == *ex.target));
  } else {
    CHECK(ex.success == (ex.predicted != ex.true_label));
  }
  double expected = 0.0;
  switch (ex.kind) {
    case AttackKind::shift_l2:
    case AttackKind::shift_pgd: expected = l2_shift_norm(ex.clean, ex.adversarial); break;
    case AttackKind::add_chamfer: expected = chamfer_symmetric(ex.adversarial, ex.clean); break;
    case AttackKind::add_hausdorff: expected = hausdorff_directed(ex.adversarial, ex.clean); break;
    case AttackKind::drop_saliency:
      expected = static_cast<double>(ex.clean.size() - ex.adversarial.size());
      break;
  }
  CHECK(std::abs(ex.distortion - expected) <= 1e-9);
}

}  // namespace

TEST_CASE("attack names") {
  for (auto k : {AttackKind::shift_l2, AttackKind::shift_pgd, AttackKind::add_chamfer,
                 AttackKind::add_hausdorff, AttackKind::drop_saliency}) {
    CHECK(parse_attack_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_attack_kind("shift"), ValidationError);
}

TEST_CASE("config validation") {
  auto cfg = AttackConfig::defaults(AttackKind::shift_l2);
  CHECK_NOTHROW(cfg.validate(256, 3, 8));
  CHECK_THROWS_AS(cfg.validate(256, 8, 8), ValidationError);
  cfg.targeted = true;
  CHECK_THROWS_AS(cfg.validate(256, 3, 8), ValidationError);
  cfg.target = 3;
  CHECK_THROWS_AS(cfg.validate(256, 3, 8), ValidationError);
  cfg.target = 9;
  CHECK_THROWS_AS(cfg.validate(256, 3, 8), ValidationError);
  cfg.target = 4;
  CHECK_NOTHROW(cfg.validate(256, 3, 8));

  auto drop = AttackConfig::defaults(AttackKind::drop_saliency);
  drop.n_drop = 256;
  CHECK_THROWS_AS(drop.validate(256, 0, 8), ValidationError);
  drop.n_drop = 10;
  drop.rounds = 0;
  CHECK_THROWS_AS(drop.validate(256, 0, 8), ValidationError);

  auto add = AttackConfig::defaults(AttackKind::add_chamfer);
  add.n_add = 0;
  CHECK_THROWS_AS(add.validate(256, 0, 8), ValidationError);

  auto pgd = AttackConfig::defaults(AttackKind::shift_pgd);
  CHECK(pgd.iterations == 40);
  CHECK(pgd.step == doctest::Approx(0.005));
  CHECK(AttackConfig::defaults(AttackKind::shift_l2).binary_steps == 5);
  CHECK(AttackConfig::defaults(AttackKind::drop_saliency).n_drop == 51);

  const PointCloud unlabeled(Points::Identity(3, 3));
  CHECK_THROWS_AS(attack_shift_l2(untrained(1), unlabeled, AttackConfig{}), ValidationError);
}

TEST_CASE("success rule") {
  CHECK(attack_succeeded(2, 1, std::nullopt));
  CHECK_FALSE(attack_succeeded(1, 1, std::nullopt));
  CHECK(attack_succeeded(4, 1, 4));
  CHECK_FALSE(attack_succeeded(2, 1, 4));
}

TEST_CASE("shift_l2 on an input that is already adversarial returns it unchanged") {
  const ModelWeights w = untrained(3);
  const PointCloud pc = random_cloud(4, 0);
  const int pred = predict(w, pc).label;

  AttackConfig cfg = AttackConfig::defaults(AttackKind::shift_l2);
  cfg.targeted = true;
  cfg.target = pred;
  const PointCloud labeled = pc.with_label((pred + 1) % 8);
  const auto ex = attack_shift_l2(w, labeled, cfg);
  CHECK(ex.success);
  CHECK(ex.distortion == 0.0);
  CHECK(ex.adversarial.points() == labeled.points());

  // untargeted: any label other than the prediction is already beaten
  const auto un = attack_shift_l2(w, pc.with_label((pred + 3) % 8), AttackConfig{});
  CHECK(un.success);
  CHECK(un.distortion == 0.0);
  CHECK(un.search_trace.empty());
}

TEST_CASE("pgd box and zero budget") {
  const ModelWeights w = untrained(5);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PointCloud pc = random_cloud(100 + s, static_cast<int>(s));
    auto cfg = AttackConfig::defaults(AttackKind::shift_pgd);
    cfg.epsilon = 0.0;
    cfg.step = 0.01;
    const auto zero = attack_shift_pgd(w, pc, cfg);
    CHECK(zero.adversarial.points() == pc.points());
    CHECK(zero.distortion == 0.0);

    cfg = AttackConfig::defaults(AttackKind::shift_pgd);
    cfg.step = 0.02;  // larger than the box so the clip is active
    const auto ex = attack_shift_pgd(w, pc, cfg);
    const Matrix delta = ex.adversarial.points() - pc.points();
    CHECK(delta.cwiseAbs().maxCoeff() <= cfg.epsilon);
    CHECK(ex.adversarial.size() == pc.size());
    check_consistent(w, ex);
  }
}

TEST_CASE("add attack keeps the clean prefix") {
  const ModelWeights w = untrained(6);
  const PointCloud pc = random_cloud(7, 2);
  for (auto kind : {AttackKind::add_chamfer, AttackKind::add_hausdorff}) {
    auto cfg = AttackConfig::defaults(kind);
    cfg.iterations = 30;
    cfg.n_add = 8;
    cfg.seed = 11;
    const auto ex = attack_add(w, pc, cfg);
    REQUIRE(ex.adversarial.size() == pc.size() + 8);
    CHECK(ex.adversarial.points().topRows(pc.size()) == pc.points());
    check_consistent(w, ex);
    CHECK(attack_add(w, pc, cfg).adversarial == ex.adversarial);
  }
  CHECK_THROWS_AS(attack_add(w, pc, AttackConfig::defaults(AttackKind::shift_l2)), ValidationError);
}

TEST_CASE("add attack with a huge penalty stays on the surface") {
  const ModelWeights w = untrained(8);
  const PointCloud pc = random_cloud(9, 1);
  for (auto kind : {AttackKind::add_chamfer, AttackKind::add_hausdorff}) {
    auto cfg = AttackConfig::defaults(kind);
    cfg.lambda = 1e6;
    cfg.n_add = 8;
    const auto ex = attack_add(w, pc, cfg);
    CHECK(ex.distortion < 1e-3);
  }
}

TEST_CASE("drop attack output is a subset of the clean points") {
  const ModelWeights w = untrained(10);
  const PointCloud pc = random_cloud(11, 5, 100);
  auto cfg = AttackConfig::defaults(AttackKind::drop_saliency);
  cfg.n_drop = 0;
  const auto none = attack_drop_saliency(w, pc, cfg);
  CHECK(none.adversarial.points() == pc.points());
  CHECK(none.distortion == 0.0);

  for (int n_drop : {1, 7, 23, 98}) {
    for (int rounds : {1, 3, 5}) {
      cfg.n_drop = n_drop;
      cfg.rounds = rounds;
      const auto ex = attack_drop_saliency(w, pc, cfg);
      CHECK(ex.adversarial.size() == 100 - n_drop);
      for (Index i = 0; i < ex.adversarial.size(); ++i) {
        CHECK(contains_row(pc.points(), ex.adversarial.points().row(i)));
      }
      check_consistent(w, ex);
    }
  }
}

TEST_CASE("single-round drop removes the top saliency points") {
  const ModelWeights w = untrained(12);
  const PointCloud pc = random_cloud(13, 4, 40);
  const auto sal = drop_saliency(w, pc, 4, 1.0);
  std::vector<Index> order(40);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return sal(a) > sal(b); });
  auto cfg = AttackConfig::defaults(AttackKind::drop_saliency);
  cfg.n_drop = 6;
  cfg.rounds = 1;
  const auto ex = attack_drop_saliency(w, pc, cfg);
  for (int i = 0; i < 40; ++i) {
    const bool dropped = std::find(order.begin(), order.begin() + 6, i) != order.begin() + 6;
    CHECK(contains_row(ex.adversarial.points(), pc.points().row(i)) == !dropped);
  }
}

TEST_CASE("saliency matches a hand evaluation") {
  const ModelWeights w = untrained(14);
  Points p(3, 3);
  p << 1, 0, 0, 0, 2, 0, 0, 0, 0;
  const PointCloud pc(p, 0);
  const Points g = input_gradient(w, pc, Objective::logit(0));
  // median per axis is (0, 0, 0)
  const auto s = drop_saliency(w, pc, 0, 1.0);
  CHECK(s(0) == doctest::Approx(g(0, 0)));
  CHECK(s(1) == doctest::Approx(2.0 * g(1, 1)));
  CHECK(s(2) == 0.0);
  const auto s2 = drop_saliency(w, pc, 0, 2.0);
  CHECK(s2(1) == doctest::Approx(4.0 * g(1, 1)));
}

TEST_CASE("attacks are deterministic") {
  const ModelWeights w = untrained(15);
  const PointCloud pc = random_cloud(16, 6);
  for (auto kind : {AttackKind::shift_l2, AttackKind::shift_pgd, AttackKind::add_chamfer,
                    AttackKind::add_hausdorff, AttackKind::drop_saliency}) {
    auto cfg = AttackConfig::defaults(kind);
    cfg.iterations = 10;
    cfg.binary_steps = 2;
    cfg.n_drop = 10;
    cfg.n_add = 4;
    cfg.seed = 3;
    const auto a = run_attack(w, pc, cfg);
    const auto b = run_attack(w, pc, cfg);
    CHECK(a.adversarial == b.adversarial);
    CHECK(a.distortion == b.distortion);
    CHECK(a.kind == kind);
  }
}

// every 3rd test cloud, 100 in all: spreads over the classes
std::vector<PointCloud> desk_sample() {
  const auto& test = testsupport::desk_model().data.test.clouds;
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < test.size() && out.size() < 100; i += 3) out.push_back(test[i]);
  return out;
}

TEST_CASE("desk model: shift_l2 success rate") {
  const auto& w = testsupport::desk_model().weights;
  int succeeded = 0;
  const auto sample = desk_sample();
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto cfg = AttackConfig::defaults(AttackKind::shift_l2);
    cfg.seed = i;
    const auto ex = attack_shift_l2(w, sample[i], cfg);
    succeeded += ex.success ? 1 : 0;
    check_consistent(w, ex);
    CHECK(ex.adversarial.size() == sample[i].size());
    for (std::size_t s = 1; s < ex.search_trace.size(); ++s) {
      CHECK(ex.search_trace[s] <= ex.search_trace[s - 1]);
    }
    if (ex.success && !ex.search_trace.empty()) {
      CHECK(ex.distortion == doctest::Approx(ex.search_trace.back()).epsilon(1e-12));
    }
  }
  MESSAGE("shift_l2 success " << succeeded << "/" << sample.size());
  CHECK(succeeded >= 80);
}

TEST_CASE("desk model: pgd") {
  const auto& desk = testsupport::desk_model();
  const auto& test = desk.data.test.clouds;
  int correct = 0;
  for (const auto& pc : test) {
    const auto ex = attack_shift_pgd(desk.weights, pc, AttackConfig::defaults(AttackKind::shift_pgd));
    correct += ex.predicted == ex.true_label ? 1 : 0;
    CHECK((ex.adversarial.points() - pc.points()).cwiseAbs().maxCoeff() <= 0.05);
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
  MESSAGE("accuracy under pgd " << acc);
  CHECK(acc < 0.10);
}

TEST_CASE("desk model: saliency drop beats random drop") {
  const auto& w = testsupport::desk_model().weights;
  const int n_drop = 64;  // 25% of 256
  int sal_correct = 0, rnd_correct = 0;
  Rng rng(99);
  const auto sample = desk_sample();
  for (const auto& pc : sample) {
    auto cfg = AttackConfig::defaults(AttackKind::drop_saliency);
    cfg.n_drop = n_drop;
    const auto ex = attack_drop_saliency(w, pc, cfg);
    sal_correct += ex.predicted == ex.true_label ? 1 : 0;

    std::vector<Index> idx(static_cast<std::size_t>(pc.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    idx.resize(idx.size() - n_drop);
    std::sort(idx.begin(), idx.end());
    Points kept(static_cast<Index>(idx.size()), 3);
    for (std::size_t r = 0; r < idx.size(); ++r) kept.row(static_cast<Index>(r)) = pc.points().row(idx[r]);
    rnd_correct += predict(w, PointCloud(kept)).label == *pc.label() ? 1 : 0;
  }
  MESSAGE("correct after saliency drop " << sal_correct << ", after random drop " << rnd_correct
                                         << " of " << sample.size());
  CHECK(sal_correct < rnd_correct);
}
