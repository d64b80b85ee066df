#include "pcarmor/model.hpp"

#include <cmath>
#include <numeric>

#include "pcarmor/rng.hpp"

namespace pcarmor {

void ModelConfig::validate() const {
  if (per_point_widths.empty()) throw ValidationError("ModelConfig: no per-point layers");
  if (head_widths.empty()) throw ValidationError("ModelConfig: no head layers");
  for (int w : per_point_widths) {
    if (w < 1) throw ValidationError("ModelConfig: per-point width must be >= 1");
  }
  for (int w : head_widths) {
    if (w < 1) throw ValidationError("ModelConfig: head width must be >= 1");
  }
  if (n_classes < 2) throw ValidationError("ModelConfig: need at least 2 classes");
  if (head_widths.back() != n_classes) {
    throw ValidationError("ModelConfig: last head width " + std::to_string(head_widths.back()) +
                          " != class count " + std::to_string(n_classes));
  }
}

namespace {

void check_layer(const DenseLayer& layer, Index fan_in, Index fan_out, const std::string& name) {
  if (layer.weight.rows() != fan_in || layer.weight.cols() != fan_out ||
      layer.bias.size() != fan_out) {
    throw DimensionError("ModelWeights: " + name + " has weight " + shape_string(layer.weight) +
                         " and bias of size " + std::to_string(layer.bias.size()) +
                         ", expected " + shape_string(fan_in, fan_out));
  }
  if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
    throw ValidationError("ModelWeights: " + name + " holds non-finite values");
  }
}

DenseLayer glorot_layer(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseLayer layer{Matrix(fan_in, fan_out), RowVector::Zero(fan_out)};
  for (Index r = 0; r < layer.weight.rows(); ++r) {
    for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
  }
  return layer;
}

DenseLayer zeros_like(const DenseLayer& layer) {
  return {Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
          RowVector::Zero(layer.bias.size())};
}

// Applies the normalization guard; returns the points the network consumes.
Points guarded_points(const Points& raw, NormalizationGuard& guard) {
  guard = NormalizationGuard{};
  if (std::abs(max_point_norm(raw) - 1.0) <= NormalizationGuard::kNormTolerance) return raw;
  guard.applied = true;
  guard.centroid = raw.colwise().mean();
  Points centered = raw.rowwise() - guard.centroid;
  const Eigen::VectorXd norms = centered.rowwise().norm();
  guard.farthest = argmax(norms);
  guard.radius = norms(guard.farthest);
  if (!(guard.radius > 0.0)) {
    throw DegenerateInputError("forward: all " + std::to_string(raw.rows()) +
                               " points coincide");
  }
  centered /= guard.radius;
  return centered;
}

// Per-point MLP over a stack of clouds: rows of `x` belong to consecutive clouds.
void point_mlp(const ModelWeights& w, const Matrix& x, std::vector<Matrix>& pre,
               std::vector<Matrix>& post) {
  pre.resize(w.point_layers.size());
  post.resize(w.point_layers.size());
  const Matrix* in = &x;
  for (std::size_t l = 0; l < w.point_layers.size(); ++l) {
    const auto& layer = w.point_layers[l];
    pre[l].resize(in->rows(), layer.weight.cols());
    pre[l].noalias() = *in * layer.weight;
    pre[l].rowwise() += layer.bias;
    post[l] = relu_forward(pre[l]);
    in = &post[l];
  }
}

// Head MLP on a stack of feature rows; ReLU between layers, none before logits.
void head_mlp(const ModelWeights& w, const Matrix& features, std::vector<Matrix>& pre,
              std::vector<Matrix>& post) {
  const std::size_t n = w.head_layers.size();
  pre.resize(n);
  post.resize(n - 1);
  const Matrix* in = &features;
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = w.head_layers[l];
    pre[l].resize(in->rows(), layer.weight.cols());
    pre[l].noalias() = *in * layer.weight;
    pre[l].rowwise() += layer.bias;
    if (l + 1 < n) {
      post[l] = relu_forward(pre[l]);
      in = &post[l];
    }
  }
}

// Back-propagates through the head; returns d/d(features).
Matrix head_backward(const ModelWeights& w, const Matrix& features, const std::vector<Matrix>& pre,
                     const std::vector<Matrix>& post, const Matrix& grad_logits,
                     std::vector<DenseLayer>* grads) {
  Matrix upstream = grad_logits;
  for (std::size_t l = w.head_layers.size(); l-- > 0;) {
    Matrix dpre = (l + 1 == w.head_layers.size()) ? upstream : relu_backward(pre[l], upstream);
    const Matrix& in = (l == 0) ? features : post[l - 1];
    if (grads) {
      (*grads)[l].weight.noalias() = in.transpose() * dpre;
      (*grads)[l].bias = dpre.colwise().sum();
    }
    upstream.resize(dpre.rows(), w.head_layers[l].weight.rows());
    upstream.noalias() = dpre * w.head_layers[l].weight.transpose();
  }
  return upstream;
}

// Back-propagates through the per-point MLP starting from d/d(last activation).
// Returns d/d(input points) when `want_input` is set.
Matrix point_backward(const ModelWeights& w, const Matrix& x, const std::vector<Matrix>& pre,
                      const std::vector<Matrix>& post, Matrix upstream,
                      std::vector<DenseLayer>* grads, bool want_input) {
  for (std::size_t l = w.point_layers.size(); l-- > 0;) {
    Matrix dpre = relu_backward(pre[l], upstream);
    const Matrix& in = (l == 0) ? x : post[l - 1];
    if (grads) {
      (*grads)[l].weight.noalias() = in.transpose() * dpre;
      (*grads)[l].bias = dpre.colwise().sum();
    }
    if (l == 0 && !want_input) break;
    upstream.resize(dpre.rows(), w.point_layers[l].weight.rows());
    upstream.noalias() = dpre * w.point_layers[l].weight.transpose();
  }
  return upstream;
}

}  // namespace

void ModelWeights::validate() const {
  config.validate();
  if (point_layers.size() != config.per_point_widths.size() ||
      head_layers.size() != config.head_widths.size()) {
    throw DimensionError("ModelWeights: layer count does not match config");
  }
  Index fan_in = 3;
  for (std::size_t l = 0; l < point_layers.size(); ++l) {
    check_layer(point_layers[l], fan_in, config.per_point_widths[l],
                "point layer " + std::to_string(l));
    fan_in = config.per_point_widths[l];
  }
  for (std::size_t l = 0; l < head_layers.size(); ++l) {
    check_layer(head_layers[l], fan_in, config.head_widths[l], "head layer " + std::to_string(l));
    fan_in = config.head_widths[l];
  }
}

Index ModelWeights::parameter_count() const {
  Index total = 0;
  for (const auto& l : point_layers) total += l.weight.size() + l.bias.size();
  for (const auto& l : head_layers) total += l.weight.size() + l.bias.size();
  return total;
}

ModelWeights init_weights(const ModelConfig& config) {
  config.validate();
  ModelWeights w;
  w.config = config;
  Rng rng(derive_seed(config.seed, "model/init"));
  int fan_in = 3;
  for (int width : config.per_point_widths) {
    w.point_layers.push_back(glorot_layer(rng, fan_in, width));
    fan_in = width;
  }
  for (int width : config.head_widths) {
    w.head_layers.push_back(glorot_layer(rng, fan_in, width));
    fan_in = width;
  }
  return w;
}

ForwardTrace forward(const ModelWeights& weights, const PointCloud& pc) {
  ForwardTrace t;
  t.points = guarded_points(pc.points(), t.guard);
  const Matrix x = t.points;
  point_mlp(weights, x, t.point_pre, t.point_post);

  auto pool = max_pool_cols(t.point_post.back());
  t.feature = std::move(pool.pooled);
  t.pool_argmax = std::move(pool.argmax);

  std::vector<Matrix> pre, post;
  head_mlp(weights, t.feature, pre, post);
  for (auto& m : pre) t.head_pre.emplace_back(m);
  for (auto& m : post) t.head_post.emplace_back(m);
  t.logits = t.head_pre.back();
  t.softmax = softmax_rows(t.logits);
  return t;
}

Prediction predict(const ModelWeights& weights, const PointCloud& pc) {
  auto t = forward(weights, pc);
  return {t.predicted_class(), std::move(t.softmax)};
}

RowVector extract_feature(const ModelWeights& weights, const PointCloud& pc) {
  return forward(weights, pc).feature;
}

ObjectiveValue evaluate_objective(const Objective& objective, const ForwardTrace& trace) {
  const Index classes = trace.logits.size();
  if (objective.cls < 0 || objective.cls >= classes) {
    throw ValidationError("objective: class " + std::to_string(objective.cls) + " outside [0, " +
                          std::to_string(classes) + ")");
  }
  const auto& z = trace.logits;
  const Index c = objective.cls;
  ObjectiveValue out{0.0, RowVector::Zero(classes)};

  // strongest class other than c
  auto best_other = [&] {
    Index best = (c == 0) ? 1 : 0;
    for (Index j = 0; j < classes; ++j) {
      if (j != c && z(j) > z(best)) best = j;
    }
    return best;
  };

  switch (objective.kind) {
    case Objective::Kind::true_class_nll: {
      const double top = z.maxCoeff();
      const double lse = top + std::log((z.array() - top).exp().sum());
      out.value = lse - z(c);
      out.grad_logits = trace.softmax;
      out.grad_logits(c) -= 1.0;
      break;
    }
    case Objective::Kind::cw_margin: {
      const Index j = best_other();
      const double margin = z(j) - z(c);
      if (margin > -objective.kappa) {
        out.value = margin;
        out.grad_logits(j) = 1.0;
        out.grad_logits(c) = -1.0;
      } else {
        out.value = -objective.kappa;
      }
      break;
    }
    case Objective::Kind::cw_margin_untargeted: {
      const Index j = best_other();
      const double margin = z(c) - z(j);
      if (margin > -objective.kappa) {
        out.value = margin;
        out.grad_logits(c) = 1.0;
        out.grad_logits(j) = -1.0;
      } else {
        out.value = -objective.kappa;
      }
      break;
    }
    case Objective::Kind::logit: {
      out.value = z(c);
      out.grad_logits(c) = 1.0;
      break;
    }
  }
  return out;
}

Points backprop_to_input(const ModelWeights& weights, const ForwardTrace& trace,
                         const RowVector& grad_logits) {
  const Index n = trace.points.rows();
  const Matrix features = trace.feature;
  std::vector<Matrix> head_pre(trace.head_pre.begin(), trace.head_pre.end());
  std::vector<Matrix> head_post(trace.head_post.begin(), trace.head_post.end());
  const Matrix dfeature =
      head_backward(weights, features, head_pre, head_post, grad_logits, nullptr);

  Matrix dlast = Matrix::Zero(n, dfeature.cols());
  for (std::size_t col = 0; col < trace.pool_argmax.size(); ++col) {
    dlast(trace.pool_argmax[col], static_cast<Index>(col)) += dfeature(0, static_cast<Index>(col));
  }
  const Matrix x = trace.points;
  const Matrix dx =
      point_backward(weights, x, trace.point_pre, trace.point_post, std::move(dlast), nullptr, true);

  Points grad = dx;
  if (trace.guard.applied) {
    // y_i = (x_i - mu) / r with r = |x_f - mu|
    const auto& g = trace.guard;
    const Point3 mean_grad = grad.colwise().mean();
    const double dr = -(grad.array() * trace.points.array()).sum() / g.radius;
    const Point3 u = trace.points.row(g.farthest);
    grad = ((grad.rowwise() - mean_grad) / g.radius).eval();
    grad.rowwise() -= dr * u / static_cast<double>(n);
    grad.row(g.farthest) += dr * u;
  }
  return grad;
}

InputGradient objective_and_gradient(const ModelWeights& weights, const PointCloud& pc,
                                     const Objective& objective) {
  InputGradient out;
  out.trace = forward(weights, pc);
  const auto value = evaluate_objective(objective, out.trace);
  out.objective = value.value;
  if (value.grad_logits.isZero(0.0)) {
    out.gradient = Points::Zero(pc.size(), 3);
  } else {
    out.gradient = backprop_to_input(weights, out.trace, value.grad_logits);
  }
  return out;
}

Points input_gradient(const ModelWeights& weights, const PointCloud& pc,
                      const Objective& objective) {
  return objective_and_gradient(weights, pc, objective).gradient;
}

LossAndGradients loss_and_gradients(const ModelWeights& weights,
                                    std::span<const PointCloud* const> batch) {
  if (batch.empty()) throw ValidationError("loss_and_gradients: empty batch");
  const Index d = weights.config.feature_dim();
  const auto b = static_cast<Index>(batch.size());

  std::vector<Index> offsets(batch.size() + 1, 0);
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i]->label()) throw ValidationError("loss_and_gradients: unlabeled cloud");
    labels.push_back(*batch[i]->label());
    offsets[i + 1] = offsets[i] + batch[i]->size();
  }

  Matrix x(offsets.back(), 3);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    NormalizationGuard guard;
    x.middleRows(offsets[i], batch[i]->size()) = guarded_points(batch[i]->points(), guard);
  }

  std::vector<Matrix> pre, post;
  point_mlp(weights, x, pre, post);

  Matrix features(b, d);
  std::vector<Index> winners(static_cast<std::size_t>(b * d));
  for (Index i = 0; i < b; ++i) {
    const auto rows = offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)];
    auto pool = max_pool_cols(post.back().middleRows(offsets[static_cast<std::size_t>(i)], rows));
    features.row(i) = pool.pooled;
    for (Index c = 0; c < d; ++c) {
      winners[static_cast<std::size_t>(i * d + c)] =
          offsets[static_cast<std::size_t>(i)] + pool.argmax[static_cast<std::size_t>(c)];
    }
  }

  std::vector<Matrix> hpre, hpost;
  head_mlp(weights, features, hpre, hpost);
  auto ce = cross_entropy_with_grad(hpre.back(), labels);

  LossAndGradients out;
  out.loss = ce.loss;
  for (Index i = 0; i < b; ++i) {
    if (argmax(hpre.back().row(i)) == labels[static_cast<std::size_t>(i)]) ++out.correct;
  }
  for (const auto& l : weights.point_layers) out.gradients.point_layers.push_back(zeros_like(l));
  for (const auto& l : weights.head_layers) out.gradients.head_layers.push_back(zeros_like(l));

  const Matrix dfeatures =
      head_backward(weights, features, hpre, hpost, ce.grad_logits, &out.gradients.head_layers);
  Matrix dlast = Matrix::Zero(x.rows(), d);
  for (Index i = 0; i < b; ++i) {
    for (Index c = 0; c < d; ++c) {
      dlast(winners[static_cast<std::size_t>(i * d + c)], c) += dfeatures(i, c);
    }
  }
  point_backward(weights, x, pre, post, std::move(dlast), &out.gradients.point_layers, false);
  return out;
}

double accuracy(const ModelWeights& weights, std::span<const PointCloud> clouds) {
  if (clouds.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& pc : clouds) {
    if (!pc.label()) throw ValidationError("accuracy: unlabeled cloud");
    if (predict(weights, pc).label == *pc.label()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

TrainResult train(const ModelConfig& config, std::span<const PointCloud> train_set,
                  const TrainOptions& options, std::span<const PointCloud> test_set) {
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.lr > 0.0) ||
      !(options.lr_decay > 0.0 && options.lr_decay <= 1.0)) {
    throw ValidationError("train: epochs >= 0, batch_size >= 1, lr > 0 and lr_decay in (0, 1] "
                          "are required");
  }
  for (const auto& pc : train_set) {
    if (!pc.label() || *pc.label() < 0 || *pc.label() >= config.n_classes) {
      throw ValidationError("train: every training cloud needs a label in [0, " +
                            std::to_string(config.n_classes) + ")");
    }
  }

  TrainResult result;
  result.weights = init_weights(config);
  auto& w = result.weights;

  std::vector<AdamState> point_state, head_state;
  for (const auto& l : w.point_layers) {
    point_state.emplace_back(l.weight.rows(), l.weight.cols());
    point_state.emplace_back(1, l.bias.size());
  }
  for (const auto& l : w.head_layers) {
    head_state.emplace_back(l.weight.rows(), l.weight.cols());
    head_state.emplace_back(1, l.bias.size());
  }

  auto eval_full = [&](int epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    constexpr std::size_t kChunk = 64;
    double loss_sum = 0.0;
    int correct = 0;
    std::vector<const PointCloud*> chunk;
    for (std::size_t i = 0; i < train_set.size(); i += kChunk) {
      chunk.clear();
      for (std::size_t j = i; j < std::min(train_set.size(), i + kChunk); ++j) {
        chunk.push_back(&train_set[j]);
      }
      auto lg = loss_and_gradients(w, chunk);
      loss_sum += lg.loss * static_cast<double>(chunk.size());
      correct += lg.correct;
    }
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!test_set.empty()) m.test_accuracy = accuracy(w, test_set);
    return m;
  };

  result.history.push_back(eval_full(0));

  std::vector<std::size_t> order(train_set.size());
  std::vector<const PointCloud*> batch;
  double lr = options.lr;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "train/batch-order", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }

    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      batch.clear();
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_set[order[i]]);

      auto lg = loss_and_gradients(w, batch);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      correct += lg.correct;
      for (std::size_t l = 0; l < w.point_layers.size(); ++l) {
        adam_update(w.point_layers[l].weight, lg.gradients.point_layers[l].weight,
                    point_state[2 * l], lr);
        adam_update(w.point_layers[l].bias, lg.gradients.point_layers[l].bias,
                    point_state[2 * l + 1], lr);
      }
      for (std::size_t l = 0; l < w.head_layers.size(); ++l) {
        adam_update(w.head_layers[l].weight, lg.gradients.head_layers[l].weight,
                    head_state[2 * l], lr);
        adam_update(w.head_layers[l].bias, lg.gradients.head_layers[l].bias,
                    head_state[2 * l + 1], lr);
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!test_set.empty()) m.test_accuracy = accuracy(w, test_set);
    result.history.push_back(m);
    lr *= options.lr_decay;
  }
  return result;
}

}  // namespace pcarmor
