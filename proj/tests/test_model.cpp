#include <doctest.h>

#include <cmath>
#include <random>

#include "milpool/gradcheck.hpp"
#include "milpool/model.hpp"

using namespace milpool;

namespace {

Bag random_features_bag(std::mt19937_64& engine, int frames, int dims, int classes) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Bag bag;
  bag.id = "b";
  bag.features.resize(frames, dims);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < dims; ++k) bag.features(t, k) = normal(engine);
  }
  bag.bag_labels.assign(classes, 1);
  return bag;
}

FrameOutput single_class_frames(const std::vector<double>& probs) {
  FrameOutput out;
  out.probs.resize(static_cast<Eigen::Index>(probs.size()), 1);
  out.weights = Matrix::Ones(static_cast<Eigen::Index>(probs.size()), 1);
  for (std::size_t i = 0; i < probs.size(); ++i) out.probs(static_cast<Eigen::Index>(i), 0) = probs[i];
  return out;
}

}  // namespace

TEST_CASE("zero parameters give probability 0.5 and weight 1") {
  std::mt19937_64 engine(1);
  const ModelParams params = zero_params(5, 3, 2, {6, 4});
  const Bag bag = random_features_bag(engine, 7, 5, 3);
  const FrameOutput out = frame_forward(params, bag);
  REQUIRE(out.probs.rows() == 7);
  REQUIRE(out.probs.cols() == 3);
  CHECK((out.probs.array() == 0.5).all());
  CHECK((out.weights.array() == 1.0).all());
}

TEST_CASE("frame outputs depend only on the context window") {
  std::mt19937_64 engine(2);
  for (int radius : {0, 1, 3}) {
    const ModelParams params = init_params(4, 2, radius, {8}, 3);
    Bag bag = random_features_bag(engine, 12, 4, 2);
    const FrameOutput before = frame_forward(params, bag);
    const int changed = 6;
    bag.features.row(changed).setConstant(5.0);
    const FrameOutput after = frame_forward(params, bag);
    for (int t = 0; t < 12; ++t) {
      const bool inside = std::abs(t - changed) <= radius;
      const bool same = before.probs.row(t) == after.probs.row(t) &&
                        before.weights.row(t) == after.weights.row(t);
      CHECK(same != inside);
    }
  }
}

TEST_CASE("single frame with no context sees only itself") {
  const ModelParams params = init_params(3, 2, 0, {5}, 9);
  Bag a;
  a.features = Matrix::Constant(1, 3, 0.3);
  a.bag_labels = {0, 1};
  Bag b = a;
  b.features.conservativeResize(4, 3);
  b.features.bottomRows(3).setConstant(-2.0);
  const FrameOutput oa = frame_forward(params, a);
  const FrameOutput ob = frame_forward(params, b);
  CHECK(oa.probs.row(0) == ob.probs.row(0));
}

TEST_CASE("feature dimension mismatch is rejected") {
  const ModelParams params = init_params(3, 2, 1, {4}, 1);
  Bag bag;
  bag.features = Matrix::Zero(5, 4);
  bag.bag_labels = {0, 0};
  CHECK_THROWS_AS(frame_forward(params, bag), ModelError);
}

TEST_CASE("attention weights are clamped exponentials of the logits") {
  ModelParams params = zero_params(2, 1, 0, {});
  params.attention.bias(0) = 25.0;
  Bag bag;
  bag.features = Matrix::Zero(3, 2);
  bag.bag_labels = {1};
  const FrameOutput out = frame_forward(params, bag);
  CHECK(out.weights(0, 0) == doctest::Approx(std::exp(kAttentionLogitClamp)));
}

TEST_CASE("loss examples") {
  const std::vector<int> positive = {1};
  const std::vector<int> negative = {0};
  const FrameOutput half = single_class_frames({0.5, 0.5});
  CHECK(bag_loss(half, positive, PoolingSpec::Average()).loss ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const FrameOutput example = single_class_frames({0.2, 0.8});
  const BagLoss lin = bag_loss(example, positive, PoolingSpec::LinearSoftmax());
  CHECK(lin.recording_probs[0] == doctest::Approx(0.68).epsilon(1e-14));
  CHECK(lin.loss == doctest::Approx(-std::log(0.68)).epsilon(1e-12));
  CHECK(lin.loss == doctest::Approx(0.3857).epsilon(1e-4));

  const FrameOutput near_zero = single_class_frames({1e-12, 1e-12});
  CHECK(bag_loss(near_zero, negative, PoolingSpec::Max()).loss < 1e-6);
  // Clamping keeps the loss finite for a confident mistake.
  const double capped = bag_loss(near_zero, positive, PoolingSpec::Max()).loss;
  CHECK(capped == doctest::Approx(-std::log(kProbabilityClamp)));

  const std::vector<int> two = {1, 0};
  FrameOutput pair;
  pair.probs = Matrix::Constant(3, 2, 0.5);
  pair.weights = Matrix::Ones(3, 2);
  CHECK(bag_loss(pair, two, PoolingSpec::ExpSoftmax()).loss ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss gradient signs") {
  std::mt19937_64 engine(4);
  std::uniform_real_distribution<double> unit(0.001, 0.999);
  for (int t = 0; t < 200; ++t) {
    const double y = unit(engine);
    CHECK(loss_gradient(1, y) == doctest::Approx(-1.0 / y));
    CHECK(loss_gradient(0, y) == doctest::Approx(1.0 / (1.0 - y)));
    CHECK(loss_gradient(1, y) < 0.0);
    CHECK(loss_gradient(0, y) > 0.0);
  }
  CHECK(std::isfinite(loss_gradient(1, 0.0)));
  CHECK(std::isfinite(loss_gradient(0, 1.0)));
}

TEST_CASE("max pooling with a positive label routes gradient to one frame per class") {
  std::mt19937_64 engine(5);
  for (int t = 0; t < 50; ++t) {
    const ModelParams params = init_params(3, 3, 1, {5}, 100 + t);
    Bag bag = random_features_bag(engine, 9, 3, 3);
    const FrameOutput out = frame_forward(params, bag);
    const FrameGradients g = frame_gradients(out, bag.bag_labels, PoolingSpec::Max());
    for (int c = 0; c < 3; ++c) {
      CHECK((g.d_probs.col(c).array() != 0.0).count() == 1);
      CHECK((g.d_probs.col(c).array() < 0.0).count() == 1);
    }
    CHECK((g.d_weights.array() == 0.0).all());
  }
}

TEST_CASE("whole-model gradient check on toy bags for every pooling") {
  std::mt19937_64 engine(6);
  for (const PoolingSpec& spec : default_gradcheck_poolings()) {
    for (int t = 0; t < 5; ++t) {
      const Bag bag = toy_bag(engine);
      const ModelParams params = init_params(3, 2, 1, {4}, 50 + t);
      CAPTURE(describe(spec));
      CHECK(model_gradient_check(params, bag, spec, 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("gradient check covers deeper and context-free models") {
  std::mt19937_64 engine(7);
  const Bag bag = toy_bag(engine, 4, 3, 2);
  CHECK(model_gradient_check(init_params(2, 3, 0, {}, 1), bag, PoolingSpec::Attention(), 1e-5) <=
        1e-4);
  CHECK(model_gradient_check(init_params(2, 3, 2, {5, 3}, 2), bag,
                             PoolingSpec::LinearSoftmax(), 1e-5) <= 1e-4);
}

TEST_CASE("bag_backward scales and accumulates") {
  std::mt19937_64 engine(8);
  const Bag bag = toy_bag(engine);
  const ModelParams params = init_params(3, 2, 1, {4}, 3);
  const ForwardCache cache = forward_with_cache(params, bag.features);
  ModelParams once = zeros_like(params);
  ModelParams twice = zeros_like(params);
  bag_backward(params, cache, bag.bag_labels, PoolingSpec::ExpSoftmax(), once, 1.0);
  bag_backward(params, cache, bag.bag_labels, PoolingSpec::ExpSoftmax(), twice, 0.5);
  bag_backward(params, cache, bag.bag_labels, PoolingSpec::ExpSoftmax(), twice, 0.5);
  CHECK(flatten(once).isApprox(flatten(twice), 1e-14));
}

TEST_CASE("flatten and unflatten are inverse") {
  const ModelParams params = init_params(4, 3, 2, {7, 5}, 11);
  const Vector flat = flatten(params);
  CHECK(flat.size() == params.parameter_count());
  ModelParams copy = zeros_like(params);
  unflatten(flat, copy);
  CHECK(copy == params);
  CHECK_THROWS(unflatten(Vector::Zero(3), copy));
}

TEST_CASE("initialization is seeded and bounded by the fan-in") {
  const ModelParams a = init_params(4, 3, 1, {6}, 21);
  const ModelParams b = init_params(4, 3, 1, {6}, 21);
  const ModelParams c = init_params(4, 3, 1, {6}, 22);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.window_dim()));
  CHECK(a.hidden[0].weight.cwiseAbs().maxCoeff() <= bound);
  CHECK(a.output.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(6.0));
}
