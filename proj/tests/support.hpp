#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pcarmor/geometry.hpp"
#include "pcarmor/model.hpp"
#include "pcarmor/rng.hpp"

namespace testsupport {

using namespace pcarmor;

inline Points random_points(Rng& rng, Index n, double scale = 1.0) {
  Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal(0.0, scale);
  return p;
}

/// |a - b| within `rel` of the larger magnitude, or below an absolute floor.
inline bool close(double a, double b, double rel, double abs_floor = 1e-9) {
  const double diff = std::abs(a - b);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(a), std::abs(b));
}

/// Signs of every pre-activation plus pool winners; two traces with the same
/// pattern lie on the same linear piece of the network.
inline bool same_pattern(const ForwardTrace& a, const ForwardTrace& b) {
  if (a.guard.applied != b.guard.applied || a.guard.farthest != b.guard.farthest) return false;
  if (a.pool_argmax != b.pool_argmax) return false;
  for (std::size_t l = 0; l < a.point_pre.size(); ++l) {
    if (((a.point_pre[l].array() > 0) != (b.point_pre[l].array() > 0)).any()) return false;
  }
  for (std::size_t l = 0; l + 1 < a.head_pre.size(); ++l) {
    if (((a.head_pre[l].array() > 0) != (b.head_pre[l].array() > 0)).any()) return false;
  }
  return true;
}

/// Smallest |pre-activation| anywhere in the trace.
inline double min_abs_preactivation(const ForwardTrace& t) {
  double m = INFINITY;
  for (const auto& p : t.point_pre) m = std::min(m, p.cwiseAbs().minCoeff());
  for (std::size_t l = 0; l + 1 < t.head_pre.size(); ++l) m = std::min(m, t.head_pre[l].cwiseAbs().minCoeff());
  return m;
}

}  // namespace testsupport
