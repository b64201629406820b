#include "milpool/synth.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <string>

namespace milpool {

using nlohmann::json;

void SynthConfig::validate() const {
  if (num_classes < 1 || feature_dim < 1 || frames < 1) {
    throw SynthError("classes, feature dim and frames must be >= 1");
  }
  if (train_recordings < 1 || validation_recordings < 1 || test_recordings < 1) {
    throw SynthError("every split needs at least one recording");
  }
  if (min_duration < 1) throw SynthError("min duration must be >= 1");
  if (min_duration > frames) {
    throw SynthError("min duration " + std::to_string(min_duration) +
                     " exceeds frames per recording " + std::to_string(frames));
  }
  if (max_duration < min_duration || max_duration > frames) {
    throw SynthError("max duration must lie in [min duration, frames]");
  }
  if (min_events < 0 || max_events < min_events) {
    throw SynthError("events per recording must satisfy 0 <= min <= max");
  }
  if (!(noise_scale >= 0.0)) throw SynthError("noise scale must be >= 0");
  if (!(min_amplitude > 0.0) || max_amplitude < min_amplitude) {
    throw SynthError("amplitude range must satisfy 0 < min <= max");
  }
}

json to_json(const SynthConfig& c) {
  return {{"num_classes", c.num_classes},
          {"feature_dim", c.feature_dim},
          {"frames", c.frames},
          {"train_recordings", c.train_recordings},
          {"validation_recordings", c.validation_recordings},
          {"test_recordings", c.test_recordings},
          {"min_duration", c.min_duration},
          {"max_duration", c.max_duration},
          {"min_events", c.min_events},
          {"max_events", c.max_events},
          {"noise_scale", c.noise_scale},
          {"min_amplitude", c.min_amplitude},
          {"max_amplitude", c.max_amplitude},
          {"seed", c.seed}};
}

void apply_json(const json& j, SynthConfig& c) {
  if (!j.is_object()) throw SynthError("synthetic config must be an object");
  try {
    const auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("num_classes", c.num_classes);
    take("feature_dim", c.feature_dim);
    take("frames", c.frames);
    take("train_recordings", c.train_recordings);
    take("validation_recordings", c.validation_recordings);
    take("test_recordings", c.test_recordings);
    take("min_duration", c.min_duration);
    take("max_duration", c.max_duration);
    take("min_events", c.min_events);
    take("max_events", c.max_events);
    take("noise_scale", c.noise_scale);
    take("min_amplitude", c.min_amplitude);
    take("max_amplitude", c.max_amplitude);
    take("seed", c.seed);
  } catch (const json::exception& e) {
    throw SynthError(std::string("bad synthetic config: ") + e.what());
  }
}

namespace {

enum class Split : std::uint32_t { kTrain = 1, kValidation = 2, kTest = 3 };

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

// Independent stream per (corpus seed, split, recording).
std::mt19937_64 derived_engine(std::uint64_t seed, std::uint32_t stream,
                               std::uint32_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), stream, index};
  return std::mt19937_64(seq);
}

Matrix draw_templates(const SynthConfig& config) {
  auto engine = derived_engine(config.seed, 0, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix templates(config.num_classes, config.feature_dim);
  for (int c = 0; c < config.num_classes; ++c) {
    double norm = 0.0;
    while (norm < 1e-8) {
      for (int k = 0; k < config.feature_dim; ++k) templates(c, k) = normal(engine);
      norm = templates.row(c).norm();
    }
    templates.row(c) /= norm;
  }
  return templates;
}

Bag draw_recording(const SynthConfig& config, const Matrix& templates, Split split,
                   int index) {
  auto engine = derived_engine(config.seed, static_cast<std::uint32_t>(split),
                               static_cast<std::uint32_t>(index));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> event_count(config.min_events, config.max_events);
  std::uniform_int_distribution<int> event_class(0, config.num_classes - 1);
  std::uniform_int_distribution<int> duration(config.min_duration, config.max_duration);
  std::uniform_real_distribution<double> amplitude(config.min_amplitude,
                                                   config.max_amplitude);

  Bag bag;
  char id[64];
  std::snprintf(id, sizeof(id), "%s-%04d", split_name(split), index);
  bag.id = id;
  bag.features.resize(config.frames, config.feature_dim);
  for (int t = 0; t < config.frames; ++t) {
    for (int k = 0; k < config.feature_dim; ++k) {
      bag.features(t, k) = config.noise_scale * noise(engine);
    }
  }
  LabelMatrix frame_labels = LabelMatrix::Zero(config.frames, config.num_classes);
  const int events = event_count(engine);
  for (int e = 0; e < events; ++e) {
    const int c = event_class(engine);
    const int length = duration(engine);
    std::uniform_int_distribution<int> onset_dist(0, config.frames - length);
    const int onset = onset_dist(engine);
    const double amp = amplitude(engine);
    for (int t = onset; t < onset + length; ++t) {
      bag.features.row(t) += amp * templates.row(c);
      frame_labels(t, c) = 1;
    }
  }
  bag.bag_labels.resize(static_cast<std::size_t>(config.num_classes));
  for (int c = 0; c < config.num_classes; ++c) {
    bag.bag_labels[static_cast<std::size_t>(c)] = frame_labels.col(c).maxCoeff();
  }
  bag.frame_labels = std::move(frame_labels);
  return bag;
}

Dataset draw_split(const SynthConfig& config, const Matrix& templates, Split split,
                   int count) {
  Dataset dataset;
  dataset.bags.reserve(static_cast<std::size_t>(count));
  for (int r = 0; r < count; ++r) {
    dataset.bags.push_back(draw_recording(config, templates, split, r));
  }
  if (config.max_events > 0) {
    for (int c = 0; c < config.num_classes; ++c) {
      bool seen = false;
      for (const Bag& bag : dataset.bags) seen = seen || bag.bag_labels[static_cast<std::size_t>(c)] == 1;
      if (!seen) {
        throw SynthError("class " + std::to_string(c) + " has no positive recording in the " +
                         split_name(split) + " split; use more recordings or events");
      }
    }
  }
  return dataset;
}

}  // namespace

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SynthCorpus corpus;
  corpus.templates = draw_templates(config);
  corpus.train = draw_split(config, corpus.templates, Split::kTrain, config.train_recordings);
  corpus.validation = draw_split(config, corpus.templates, Split::kValidation,
                                 config.validation_recordings);
  corpus.test = draw_split(config, corpus.templates, Split::kTest, config.test_recordings);
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const SynthConfig& config,
                  const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  save_dataset(dir / "train.jsonl", corpus.train);
  save_dataset(dir / "validation.jsonl", corpus.validation);
  save_dataset(dir / "test.jsonl", corpus.test);

  json positives = json::object();
  for (const auto& [name, split] : {std::pair{"train", &corpus.train},
                                    std::pair{"validation", &corpus.validation},
                                    std::pair{"test", &corpus.test}}) {
    std::vector<int> counts(static_cast<std::size_t>(config.num_classes), 0);
    for (const Bag& bag : split->bags) {
      for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += bag.bag_labels[c];
    }
    positives[name] = counts;
  }
  const json manifest = {{"format", "milpool-synthetic-corpus"},
                         {"config", to_json(config)},
                         {"splits", {{"train", "train.jsonl"},
                                     {"validation", "validation.jsonl"},
                                     {"test", "test.jsonl"}}},
                         {"positive_recordings", positives}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace milpool
