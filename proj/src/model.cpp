#include "milpool/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace milpool {

namespace {

DenseLayer zero_layer(int out, int in) {
  return DenseLayer{Matrix::Zero(out, in), Vector::Zero(out)};
}

void check_shape(const ModelParams& params) {
  if (params.input_dim < 1 || params.num_classes < 1 || params.context_radius < 0) {
    throw ModelError("model needs input_dim >= 1, num_classes >= 1, context_radius >= 0");
  }
  for (int h : params.hidden_sizes) {
    if (h < 1) throw ModelError("hidden sizes must be positive");
  }
}

Matrix windowed(const Matrix& features, int radius) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  Matrix out = Matrix::Zero(n, (2 * radius + 1) * d);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int k = -radius; k <= radius; ++k) {
      const Eigen::Index src = t + k;
      if (src < 0 || src >= n) continue;
      out.block(t, (k + radius) * d, 1, d) = features.row(src);
    }
  }
  return out;
}

Matrix affine(const Matrix& in, const DenseLayer& layer) {
  return (in * layer.weight.transpose()).rowwise() + layer.bias.transpose();
}

template <typename Visit>
void for_each_layer(ModelParams& params, Visit visit) {
  for (DenseLayer& layer : params.hidden) visit(layer);
  visit(params.output);
  visit(params.attention);
}

template <typename Visit>
void for_each_layer(const ModelParams& params, Visit visit) {
  for (const DenseLayer& layer : params.hidden) visit(layer);
  visit(params.output);
  visit(params.attention);
}

}  // namespace

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index count = 0;
  for_each_layer(*this, [&](const DenseLayer& layer) {
    count += layer.weight.size() + layer.bias.size();
  });
  return count;
}

ModelParams zero_params(int input_dim, int num_classes, int context_radius,
                        std::vector<int> hidden_sizes) {
  ModelParams params;
  params.input_dim = input_dim;
  params.num_classes = num_classes;
  params.context_radius = context_radius;
  params.hidden_sizes = std::move(hidden_sizes);
  check_shape(params);
  int fan_in = params.window_dim();
  for (int h : params.hidden_sizes) {
    params.hidden.push_back(zero_layer(h, fan_in));
    fan_in = h;
  }
  params.output = zero_layer(num_classes, fan_in);
  params.attention = zero_layer(num_classes, fan_in);
  return params;
}

ModelParams zeros_like(const ModelParams& params) {
  return zero_params(params.input_dim, params.num_classes, params.context_radius,
                     params.hidden_sizes);
}

ModelParams init_params(int input_dim, int num_classes, int context_radius,
                        std::vector<int> hidden_sizes, std::uint64_t seed) {
  ModelParams params =
      zero_params(input_dim, num_classes, context_radius, std::move(hidden_sizes));
  std::mt19937_64 engine(seed);
  for_each_layer(params, [&](DenseLayer& layer) {
    const double s = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-s, s);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = dist(engine);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = dist(engine);
  });
  return params;
}

Vector flatten(const ModelParams& params) {
  Vector flat(params.parameter_count());
  Eigen::Index at = 0;
  for_each_layer(params, [&](const DenseLayer& layer) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        flat(at++) = layer.weight(r, c);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) flat(at++) = layer.bias(r);
  });
  return flat;
}

void unflatten(const Vector& flat, ModelParams& params) {
  if (flat.size() != params.parameter_count()) {
    throw ModelError("parameter vector length mismatch");
  }
  Eigen::Index at = 0;
  for_each_layer(params, [&](DenseLayer& layer) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = flat(at++);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = flat(at++);
  });
}

ForwardCache forward_with_cache(const ModelParams& params, const Matrix& features) {
  if (features.cols() != params.input_dim) {
    throw ModelError("feature dimension " + std::to_string(features.cols()) +
                     " does not match model input dimension " +
                     std::to_string(params.input_dim));
  }
  if (features.rows() < 1) throw ModelError("bag has no frames");

  ForwardCache cache;
  cache.layers.push_back(windowed(features, params.context_radius));
  for (const DenseLayer& layer : params.hidden) {
    cache.layers.push_back(affine(cache.layers.back(), layer).array().tanh().matrix());
  }
  const Matrix& trunk = cache.layers.back();
  const Matrix logits = affine(trunk, params.output);
  cache.out.probs = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
  cache.weight_logits = affine(trunk, params.attention);
  cache.out.weights = cache.weight_logits.array()
                          .max(-kAttentionLogitClamp)
                          .min(kAttentionLogitClamp)
                          .exp()
                          .matrix();
  return cache;
}

FrameOutput frame_forward(const ModelParams& params, const Bag& bag) {
  return forward_with_cache(params, bag.features).out;
}

namespace {

BagActivation class_activation(const FrameOutput& frames, Eigen::Index c,
                               const PoolingSpec& pooling) {
  const auto n = static_cast<std::size_t>(frames.probs.rows());
  BagActivation act{std::span<const double>(frames.probs.col(c).data(), n), {}};
  if (pooling.needs_weights()) {
    act.weights = std::span<const double>(frames.weights.col(c).data(), n);
  }
  return act;
}

void check_labels(const FrameOutput& frames, std::span<const int> bag_labels) {
  if (static_cast<Eigen::Index>(bag_labels.size()) != frames.probs.cols()) {
    throw ModelError("label count does not match model classes");
  }
}

double clamp_prob(double y) {
  return std::clamp(y, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

}  // namespace

BagLoss bag_loss(const FrameOutput& frames, std::span<const int> bag_labels,
                 const PoolingSpec& pooling) {
  check_labels(frames, bag_labels);
  BagLoss result;
  for (Eigen::Index c = 0; c < frames.probs.cols(); ++c) {
    const double y = pool_forward(class_activation(frames, c, pooling), pooling);
    result.recording_probs.push_back(y);
    const double yc = clamp_prob(y);
    result.loss += bag_labels[c] == 1 ? -std::log(yc) : -std::log1p(-yc);
  }
  return result;
}

double loss_gradient(int label, double recording_prob) {
  const double y = clamp_prob(recording_prob);
  return label == 1 ? -1.0 / y : 1.0 / (1.0 - y);
}

FrameGradients frame_gradients(const FrameOutput& frames,
                               std::span<const int> bag_labels,
                               const PoolingSpec& pooling) {
  check_labels(frames, bag_labels);
  const Eigen::Index n = frames.probs.rows();
  FrameGradients grads{Matrix::Zero(n, frames.probs.cols()),
                       Matrix::Zero(n, frames.probs.cols())};
  for (Eigen::Index c = 0; c < frames.probs.cols(); ++c) {
    const BagActivation act = class_activation(frames, c, pooling);
    const double y = pool_forward(act, pooling);
    const double upstream = loss_gradient(bag_labels[c], y);
    const PoolGradient g = pool_backward(act, pooling, y);
    for (Eigen::Index i = 0; i < n; ++i) {
      grads.d_probs(i, c) = upstream * g.d_probs[static_cast<std::size_t>(i)];
      if (!g.d_weights.empty()) {
        grads.d_weights(i, c) = upstream * g.d_weights[static_cast<std::size_t>(i)];
      }
    }
  }
  return grads;
}

double bag_backward(const ModelParams& params, const ForwardCache& cache,
                    std::span<const int> bag_labels, const PoolingSpec& pooling,
                    ModelParams& grads, double scale) {
  const FrameOutput& out = cache.out;
  const double loss = bag_loss(out, bag_labels, pooling).loss;
  const FrameGradients upstream = frame_gradients(out, bag_labels, pooling);

  const Matrix d_logits = (upstream.d_probs.array() * out.probs.array() *
                           (1.0 - out.probs.array()))
                              .matrix();
  const auto inside = (cache.weight_logits.array().abs() < kAttentionLogitClamp)
                          .cast<double>();
  const Matrix d_weight_logits =
      (upstream.d_weights.array() * out.weights.array() * inside).matrix();

  const Matrix& trunk = cache.layers.back();
  grads.output.weight.noalias() += scale * d_logits.transpose() * trunk;
  grads.output.bias += scale * d_logits.colwise().sum().transpose();
  grads.attention.weight.noalias() += scale * d_weight_logits.transpose() * trunk;
  grads.attention.bias += scale * d_weight_logits.colwise().sum().transpose();

  Matrix d_act = d_logits * params.output.weight + d_weight_logits * params.attention.weight;
  for (std::size_t l = params.hidden.size(); l-- > 0;) {
    const Matrix& act = cache.layers[l + 1];
    const Matrix d_pre = (d_act.array() * (1.0 - act.array().square())).matrix();
    grads.hidden[l].weight.noalias() += scale * d_pre.transpose() * cache.layers[l];
    grads.hidden[l].bias += scale * d_pre.colwise().sum().transpose();
    if (l > 0) d_act = d_pre * params.hidden[l].weight;
  }
  return loss;
}

double model_gradient_check(const ModelParams& params, const Bag& bag,
                            const PoolingSpec& pooling, double step) {
  ModelParams grads = zeros_like(params);
  bag_backward(params, forward_with_cache(params, bag.features), bag.bag_labels,
               pooling, grads);
  const Vector analytic = flatten(grads);

  ModelParams probe = params;
  Vector theta = flatten(params);
  const auto loss_at = [&] {
    unflatten(theta, probe);
    return bag_loss(frame_forward(probe, bag), bag.bag_labels, pooling).loss;
  };
  double worst = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double saved = theta(k);
    theta(k) = saved + step;
    const double up = loss_at();
    theta(k) = saved - step;
    const double down = loss_at();
    theta(k) = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic(k) - numeric) /
                                std::max(1.0, std::abs(analytic(k))));
  }
  return worst;
}

}  // namespace milpool
