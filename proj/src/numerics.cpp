#include "pcarmor/numerics.hpp"

#include <cmath>

namespace pcarmor {

std::string shape_string(Index rows, Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

PoolResult max_pool_cols(const Eigen::Ref<const Matrix>& x) {
  if (x.rows() < 1 || x.cols() < 1) {
    throw DimensionError("max_pool_cols: empty matrix " + shape_string(x));
  }
  PoolResult out;
  out.pooled = x.row(0);
  out.argmax.assign(static_cast<std::size_t>(x.cols()), 0);
  for (Index r = 1; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      if (x(r, c) > out.pooled(c)) {
        out.pooled(c) = x(r, c);
        out.argmax[static_cast<std::size_t>(c)] = r;
      }
    }
  }
  return out;
}

CrossEntropyResult cross_entropy_with_grad(const Eigen::Ref<const Matrix>& logits,
                                           std::span<const int> labels) {
  const Index batch = logits.rows();
  const Index classes = logits.cols();
  if (static_cast<Index>(labels.size()) != batch) {
    throw DimensionError("cross_entropy_with_grad: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits));
  }
  if (batch == 0) throw DimensionError("cross_entropy_with_grad: empty batch");
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw ValidationError("cross_entropy_with_grad: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
  }

  CrossEntropyResult out;
  out.grad_logits = softmax_rows(logits);
  double total = 0.0;
  for (Index r = 0; r < batch; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    // log-sum-exp form keeps the loss finite when the true-class probability underflows
    const double top = logits.row(r).maxCoeff();
    const double lse = top + std::log((logits.row(r).array() - top).exp().sum());
    total += lse - logits(r, y);
    out.grad_logits(r, y) -= 1.0;
  }
  out.loss = total / static_cast<double>(batch);
  out.grad_logits /= static_cast<double>(batch);
  return out;
}

void adam_update(Eigen::Ref<Matrix> params, const Eigen::Ref<const Matrix>& grads,
                 AdamState& state, double lr) {
  require_same_shape(params, grads, "adam_update");
  if (state.step == 0 && state.first_moment.size() == 0 && params.size() != 0) {
    state = AdamState(params.rows(), params.cols());
  }
  require_same_shape(params, state.first_moment, "adam_update (first moment)");
  require_same_shape(params, state.second_moment, "adam_update (second moment)");

  ++state.step;
  const double b1 = AdamHyper::beta1;
  const double b2 = AdamHyper::beta2;
  state.first_moment = b1 * state.first_moment + (1.0 - b1) * grads;
  state.second_moment = b2 * state.second_moment + (1.0 - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  params.array() -= lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + AdamHyper::epsilon);
}

}  // namespace pcarmor
