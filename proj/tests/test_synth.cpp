#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "milpool/synth.hpp"

using namespace milpool;

namespace {

SynthConfig small_config() {
  SynthConfig config;
  config.train_recordings = 60;
  config.validation_recordings = 20;
  config.test_recordings = 20;
  config.frames = 40;
  config.min_duration = 3;
  config.max_duration = 8;
  return config;
}

std::string dump(const Dataset& data) {
  std::ostringstream out;
  write_dataset(out, data);
  return out.str();
}

}  // namespace

TEST_CASE("no events yields all-negative labels everywhere") {
  SynthConfig config = small_config();
  config.min_events = 0;
  config.max_events = 0;
  const SynthCorpus corpus = generate(config);
  for (const Dataset* split : {&corpus.train, &corpus.validation, &corpus.test}) {
    for (const Bag& bag : split->bags) {
      for (int label : bag.bag_labels) CHECK(label == 0);
      REQUIRE(bag.frame_labels.has_value());
      CHECK((bag.frame_labels->array() == 0).all());
    }
  }
}

TEST_CASE("bag labels are the union of frame labels in every generated bag") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig config = small_config();
    config.seed = seed;
    const SynthCorpus corpus = generate(config);
    for (const Dataset* split : {&corpus.train, &corpus.validation, &corpus.test}) {
      for (const Bag& bag : split->bags) {
        REQUIRE(bag.frame_labels.has_value());
        CHECK(bag.num_frames() == config.frames);
        CHECK(bag.features.cols() == config.feature_dim);
        for (int c = 0; c < config.num_classes; ++c) {
          const bool any = (bag.frame_labels->col(c).array() != 0).any();
          CHECK(bag.bag_labels[static_cast<std::size_t>(c)] == (any ? 1 : 0));
        }
        CHECK_NOTHROW(validate(bag));
      }
    }
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const SynthCorpus a = generate(small_config());
  const SynthCorpus b = generate(small_config());
  CHECK(dump(a.train) == dump(b.train));
  CHECK(dump(a.test) == dump(b.test));
  CHECK(a.templates == b.templates);
  SynthConfig other = small_config();
  other.seed = 2;
  CHECK(dump(generate(other).train) != dump(a.train));
}

TEST_CASE("templates lie on the unit sphere") {
  const SynthCorpus corpus = generate(small_config());
  for (Eigen::Index c = 0; c < corpus.templates.rows(); ++c) {
    CHECK(corpus.templates.row(c).norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("event spans lift features along the class template") {
  SynthConfig config = small_config();
  config.noise_scale = 0.0;
  config.num_classes = 1;
  const SynthCorpus corpus = generate(config);
  for (const Bag& bag : corpus.train.bags) {
    for (int t = 0; t < bag.num_frames(); ++t) {
      const double projection = bag.features.row(t).dot(corpus.templates.row(0));
      if ((*bag.frame_labels)(t, 0) == 1) {
        CHECK(projection >= config.min_amplitude - 1e-12);
      } else {
        CHECK(bag.features.row(t).norm() == 0.0);
      }
    }
  }
}

TEST_CASE("default config keeps every class at least ten percent positive in training") {
  const SynthConfig config;
  const SynthCorpus corpus = generate(config);
  CHECK(corpus.train.size() == 400);
  CHECK(corpus.validation.size() == 100);
  CHECK(corpus.test.size() == 100);
  for (int c = 0; c < config.num_classes; ++c) {
    int positives = 0;
    for (const Bag& bag : corpus.train.bags) positives += bag.bag_labels[static_cast<std::size_t>(c)];
    CHECK(positives >= 40);
  }
}

TEST_CASE("infeasible configurations are rejected") {
  SynthConfig config = small_config();
  config.min_duration = config.frames + 1;
  config.max_duration = config.frames + 2;
  CHECK_THROWS_AS(generate(config), SynthError);
  SynthConfig inverted = small_config();
  inverted.min_events = 3;
  inverted.max_events = 1;
  CHECK_THROWS_AS(inverted.validate(), SynthError);
  SynthConfig no_classes = small_config();
  no_classes.num_classes = 0;
  CHECK_THROWS_AS(no_classes.validate(), SynthError);
}

TEST_CASE("config JSON round-trips") {
  SynthConfig config = small_config();
  config.noise_scale = 0.75;
  SynthConfig copy;
  apply_json(to_json(config), copy);
  CHECK(copy == config);
}

TEST_CASE("write_corpus emits three splits and a manifest") {
  const auto dir = std::filesystem::path(MILPOOL_TEST_TMP) / "corpus";
  std::filesystem::remove_all(dir);
  const SynthConfig config = small_config();
  const SynthCorpus corpus = generate(config);
  write_corpus(dir, config, corpus);
  for (const char* name : {"train.jsonl", "validation.jsonl", "test.jsonl", "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
  CHECK(dump(load_dataset(dir / "train.jsonl")) == dump(corpus.train));
  std::ifstream manifest(dir / "manifest.json");
  const auto j = nlohmann::json::parse(manifest);
  SynthConfig echoed;
  apply_json(j.at("config"), echoed);
  CHECK(echoed == config);
}
