#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "milpool/trainer.hpp"

using namespace milpool;

namespace {

Bag labeled_bag(const std::string& id, std::vector<int> labels, int frames = 4, int dims = 2) {
  Bag bag;
  bag.id = id;
  bag.features = Matrix::Zero(frames, dims);
  bag.bag_labels = std::move(labels);
  return bag;
}

// One class; positives carry a strong cue on a frame span, negatives are noise.
Dataset separable_dataset(std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset data;
  for (int r = 0; r < 40; ++r) {
    Bag bag;
    bag.id = "r" + std::to_string(r);
    bag.features.resize(20, 2);
    for (int t = 0; t < 20; ++t) {
      bag.features(t, 0) = noise(engine);
      bag.features(t, 1) = noise(engine);
    }
    const bool positive = r % 2 == 0;
    LabelMatrix frames = LabelMatrix::Zero(20, 1);
    if (positive) {
      const int start = r % 10;
      for (int t = start; t < start + 6; ++t) {
        bag.features(t, 0) += 3.0;
        frames(t, 0) = 1;
      }
    }
    bag.bag_labels = {positive ? 1 : 0};
    bag.frame_labels = frames;
    data.bags.push_back(std::move(bag));
  }
  return data;
}

TrainConfig small_config() {
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  config.learning_rate = 0.05;
  config.context_radius = 1;
  config.hidden_sizes = {6};
  return config;
}

}  // namespace

TEST_CASE("balanced batches split slots evenly between a common and a rare class") {
  Dataset data;
  for (int i = 0; i < 100; ++i) data.bags.push_back(labeled_bag("a" + std::to_string(i), {1, 0}));
  for (int i = 0; i < 10; ++i) data.bags.push_back(labeled_bag("b" + std::to_string(i), {0, 1}));
  const auto batches = balanced_batches(data, 20, 7);
  CHECK(batches.size() == 6);
  std::map<std::size_t, int> rare_draws;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 20);
    int rare = 0;
    for (std::size_t i : batch) {
      if (i >= 100) {
        ++rare;
        ++rare_draws[i];
      }
    }
    CHECK(rare == 10);
  }
  // 60 rare slots over 10 rare recordings: every one repeats, each exactly 6 times.
  CHECK(rare_draws.size() == 10);
  for (const auto& [index, count] : rare_draws) CHECK(count == 6);
}

TEST_CASE("all-negative recordings form their own queue") {
  Dataset data;
  for (int i = 0; i < 6; ++i) data.bags.push_back(labeled_bag("p" + std::to_string(i), {1}));
  for (int i = 0; i < 6; ++i) data.bags.push_back(labeled_bag("n" + std::to_string(i), {0}));
  for (const auto& batch : balanced_batches(data, 4, 3)) {
    const auto negatives = std::count_if(batch.begin(), batch.end(), [](std::size_t i) { return i >= 6; });
    CHECK(negatives == 2);
  }
}

TEST_CASE("balancing needs a positive for every class") {
  Dataset data;
  data.bags.push_back(labeled_bag("x", {1, 0, 0}));
  data.bags.push_back(labeled_bag("y", {1, 0, 0}));
  CHECK_THROWS_WITH_AS(balanced_batches(data, 2, 1),
                       "class 1 has no positive recordings; cannot balance", TrainingError);
  CHECK_NOTHROW(BatchSampler(data, 2, 1, false));
}

TEST_CASE("unbalanced epochs are permutations of all recordings") {
  Dataset data;
  for (int i = 0; i < 23; ++i) data.bags.push_back(labeled_bag(std::to_string(i), {i % 3 == 0}));
  BatchSampler sampler(data, 5, 9, false);
  for (int e = 0; e < 3; ++e) {
    const auto epoch = sampler.next_epoch();
    CHECK(epoch.size() == 5);
    std::multiset<std::size_t> seen;
    for (const auto& batch : epoch) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 23);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 23);
  }
}

TEST_CASE("samplers with the same seed produce the same stream") {
  Dataset data;
  for (int i = 0; i < 30; ++i) data.bags.push_back(labeled_bag(std::to_string(i), {i % 2, i % 5 == 0}));
  for (bool balancing : {true, false}) {
    BatchSampler a(data, 4, 17, balancing);
    BatchSampler b(data, 4, 17, balancing);
    for (int e = 0; e < 4; ++e) CHECK(a.next_epoch() == b.next_epoch());
  }
}

TEST_CASE("zero learning rate leaves parameters at their initialization") {
  const Dataset data = separable_dataset(1);
  TrainConfig config = small_config();
  config.epochs = 1;
  config.learning_rate = 0.0;
  const TrainResult result = train(data, config);
  CHECK(result.params == initial_params(data, config));
  CHECK(result.epoch_loss.size() == 1);
}

TEST_CASE("linear softmax fits a separable single-class set") {
  const Dataset data = separable_dataset(2);
  TrainConfig config = small_config();
  config.epochs = 50;
  config.context_radius = 0;
  config.hidden_sizes = {8};
  const TrainResult result = train(data, config);
  REQUIRE(result.epoch_loss.size() == 50);
  CHECK(result.epoch_loss.back() < 0.1);
}

TEST_CASE("training is bit-for-bit deterministic") {
  const Dataset data = separable_dataset(3);
  for (const PoolingSpec& spec : {PoolingSpec::Attention(), PoolingSpec::Max()}) {
    TrainConfig config = small_config();
    config.pooling = spec;
    const TrainResult a = train(data, config);
    const TrainResult b = train(data, config);
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.params == b.params);
  }
}

TEST_CASE("checkpoints round-trip byte for byte") {
  const Dataset data = separable_dataset(4);
  TrainConfig config = small_config();
  config.pooling = PoolingSpec::Generalized(1.5, 0.25);
  config.hidden_sizes = {5, 3};
  const Checkpoint original{config, train(data, config).params};
  const std::string text = checkpoint_to_string(original);
  const Checkpoint loaded = checkpoint_from_string(text);
  CHECK(loaded == original);
  CHECK(checkpoint_to_string(loaded) == text);

  const auto dir = std::filesystem::path(MILPOOL_TEST_TMP) / "checkpoint";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.json", original);
  save_checkpoint(dir / "b.json", load_checkpoint(dir / "a.json"));
  std::ifstream a(dir / "a.json");
  std::ifstream b(dir / "b.json");
  std::stringstream sa;
  std::stringstream sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());

  CHECK_THROWS(checkpoint_from_string("{\"format\":\"other\"}"));
  CHECK_THROWS(checkpoint_from_string("not json"));
}

TEST_CASE("config JSON overrides only present keys") {
  TrainConfig config;
  apply_json(nlohmann::json{{"epochs", 7}, {"pooling", {{"kind", "attention"}}}}, config);
  CHECK(config.epochs == 7);
  CHECK(config.pooling == PoolingSpec::Attention());
  CHECK(config.batch_size == TrainConfig{}.batch_size);
  TrainConfig round;
  apply_json(to_json(config), round);
  CHECK(round == config);
  CHECK_THROWS(pooling_from_json(nlohmann::json{{"kind", "max"}, {"alpha", 1.0}}));
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("one positive step never lowers a frame under average, exp softmax or attention") {
  std::mt19937_64 engine(5);
  std::normal_distribution<double> logit(0.0, 2.0);
  for (const PoolingSpec& spec :
       {PoolingSpec::Average(), PoolingSpec::ExpSoftmax(), PoolingSpec::Attention()}) {
    for (int t = 0; t < 200; ++t) {
      FreeFrameModel model;
      for (int i = 0; i < 1 + t % 15; ++i) {
        model.logits.push_back(logit(engine));
        model.weight_logits.push_back(logit(engine));
      }
      const auto before = model.probs();
      free_frame_step(model, 1, spec, 0.1);
      const auto after = model.probs();
      for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] >= before[i]);
    }
  }
}

TEST_CASE("one positive step under linear softmax splits frames at y/2") {
  std::mt19937_64 engine(6);
  std::normal_distribution<double> logit(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    FreeFrameModel model;
    for (int i = 0; i < 2 + t % 15; ++i) model.logits.push_back(logit(engine));
    const auto before = model.probs();
    const double y = free_frame_step(model, 1, PoolingSpec::LinearSoftmax(), 0.01).recording_prob;
    const auto after = model.probs();
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (before[i] < y / 2) CHECK(after[i] < before[i]);
      if (before[i] > y / 2) CHECK(after[i] > before[i]);
    }
  }
}

TEST_CASE("linear softmax drives every frame of a negative bag towards zero") {
  FreeFrameModel model{{2.0, 1.0, 0.0, -1.0, -3.0}, {}};
  int steps = 0;
  auto peak = [&] {
    const auto p = model.probs();
    return *std::max_element(p.begin(), p.end());
  };
  while (peak() >= 0.01 && steps < 5000) {
    free_frame_step(model, 0, PoolingSpec::LinearSoftmax(), 1.0);
    ++steps;
  }
  CHECK(peak() < 0.01);
}

TEST_CASE("attention can satisfy a negative label while keeping a confident frame") {
  FreeFrameModel model{{2.0, 2.0, -1.0, -1.0}, {0.0, 0.0, 0.0, 0.0}};
  double y = 1.0;
  for (int step = 0; step < 1000 && y >= 0.2; ++step) {
    free_frame_step(model, 0, PoolingSpec::Attention(), 0.5);
    const auto p = model.probs();
    const auto w = model.weights();
    y = pool_forward({p, w}, PoolingSpec::Attention());
  }
  const auto p = model.probs();
  CHECK(y < 0.2);
  CHECK(*std::max_element(p.begin(), p.end()) > 0.8);
}
