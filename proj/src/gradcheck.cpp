#include "milpool/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "milpool/model.hpp"

namespace milpool {

RandomBag random_bag(std::mt19937_64& engine, int min_frames, int max_frames) {
  std::uniform_int_distribution<int> length(min_frames, max_frames);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> log_weight(-2.0, 2.0);
  RandomBag bag;
  const int n = length(engine);
  for (int i = 0; i < n; ++i) {
    bag.probs.push_back(unit(engine));
    bag.weights.push_back(std::exp(log_weight(engine)));
  }
  return bag;
}

Bag toy_bag(std::mt19937_64& engine, int frames, int classes, int dims) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Bag bag;
  bag.id = "toy";
  bag.features.resize(frames, dims);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < dims; ++k) bag.features(t, k) = normal(engine);
  }
  for (int c = 0; c < classes; ++c) bag.bag_labels.push_back(coin(engine) ? 1 : 0);
  return bag;
}

std::vector<PoolingSpec> default_gradcheck_poolings() {
  return {PoolingSpec::Max(),
          PoolingSpec::Average(),
          PoolingSpec::LinearSoftmax(),
          PoolingSpec::ExpSoftmax(),
          PoolingSpec::Attention(),
          PoolingSpec::Generalized(0.0, 1.0),
          PoolingSpec::Generalized(1.0, 0.0),
          PoolingSpec::Generalized(2.5, 0.5)};
}

std::string describe(const PoolingSpec& spec) {
  std::string name(to_string(spec.kind));
  if (spec.kind == PoolingKind::kGeneralized) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "(alpha=%g,beta=%g)", spec.alpha, spec.beta);
    name += buf;
  }
  return name;
}

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckRow> rows;
  if (options.trials <= 0) return rows;

  GradientFn analytic = pool_backward;
  if (options.corrupt_gradient) {
    analytic = [](const BagActivation& act, const PoolingSpec& spec, double y) {
      PoolGradient g = pool_backward(act, spec, y);
      for (double& d : g.d_probs) d = 1.5 * d + 0.1;
      return g;
    };
  }

  for (const PoolingSpec& spec : options.poolings) {
    std::mt19937_64 engine(options.seed);
    GradcheckRow row{"pool " + describe(spec), 0, 0.0, options.tolerance};
    for (int t = 0; t < options.trials; ++t) {
      const RandomBag bag = random_bag(engine);
      row.max_deviation = std::max(
          row.max_deviation, finite_diff_check(bag.view(), spec, options.step, analytic));
      ++row.checked;
    }
    rows.push_back(row);
  }

  const int model_bags = std::min(options.trials, options.model_bags);
  for (const PoolingSpec& spec : options.poolings) {
    std::mt19937_64 engine(options.seed + 1);
    GradcheckRow row{"model " + describe(spec), 0, 0.0, options.model_tolerance};
    for (int t = 0; t < model_bags; ++t) {
      const Bag bag = toy_bag(engine);
      const ModelParams params =
          init_params(3, 2, 1, {4}, options.seed + static_cast<std::uint64_t>(t));
      row.max_deviation =
          std::max(row.max_deviation, model_gradient_check(params, bag, spec, options.step));
      ++row.checked;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace milpool
