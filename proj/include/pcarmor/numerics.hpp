#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcarmor/errors.hpp"

namespace pcarmor {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Index = Eigen::Index;

std::string shape_string(Index rows, Index cols);

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename A, typename B>
void require_same_shape(const Eigen::EigenBase<A>& a, const Eigen::EigenBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

/// Checked matrix product.
template <typename A, typename B>
Matrix matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a) + " by " +
                         shape_string(b));
  }
  return a * b;
}

template <typename Derived>
auto relu_forward(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// Routes `upstream` through the active units of `x`. The subgradient at
/// exactly zero is zero.
template <typename X, typename U>
MatrixX<typename X::Scalar> relu_backward(const Eigen::MatrixBase<X>& x,
                                          const Eigen::MatrixBase<U>& upstream) {
  require_same_shape(x, upstream, "relu_backward");
  using Scalar = typename X::Scalar;
  return (x.array() > Scalar(0)).select(upstream, Scalar(0));
}

/// Row-wise softmax with the row max subtracted before exponentiation.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    const Scalar top = z.row(r).maxCoeff();
    out.row(r) = (z.row(r).array() - top).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

struct PoolResult {
  RowVector pooled;
  std::vector<Index> argmax;  // winning row per column
};

/// Column-wise maximum over rows; ties go to the smallest row index.
PoolResult max_pool_cols(const Eigen::Ref<const Matrix>& x);

/// Index of the largest entry; ties go to the smallest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean negative log-likelihood of the true class over a batch of logit rows,
/// with gradient (softmax - onehot) / batch.
CrossEntropyResult cross_entropy_with_grad(const Eigen::Ref<const Matrix>& logits,
                                           std::span<const int> labels);

struct AdamHyper {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;
};

/// First/second moment accumulators for one parameter tensor.
struct AdamState {
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(Index rows, Index cols)
      : first_moment(Matrix::Zero(rows, cols)), second_moment(Matrix::Zero(rows, cols)) {}
};

/// One bias-corrected Adam step applied in place.
void adam_update(Eigen::Ref<Matrix> params, const Eigen::Ref<const Matrix>& grads,
                 AdamState& state, double lr);

}  // namespace pcarmor
