#ifndef MILPOOL_SYNTH_HPP_
#define MILPOOL_SYNTH_HPP_

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "milpool/dataset.hpp"

namespace milpool {

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Each class owns a fixed unit-norm template in feature space. An event adds
// amplitude * template to a contiguous frame span on top of isotropic
// Gaussian noise; frame labels mark exactly the covered spans.
struct SynthConfig {
  int num_classes = 4;
  int feature_dim = 8;
  int frames = 100;
  int train_recordings = 400;
  int validation_recordings = 100;
  int test_recordings = 100;
  int min_duration = 10;
  int max_duration = 30;
  int min_events = 0;  // events per recording, uniform in [min, max]
  int max_events = 3;
  double noise_scale = 0.5;
  double min_amplitude = 0.8;
  double max_amplitude = 1.2;
  std::uint64_t seed = 1;

  void validate() const;  // throws SynthError
  bool operator==(const SynthConfig&) const = default;
};

nlohmann::json to_json(const SynthConfig& config);
void apply_json(const nlohmann::json& j, SynthConfig& config);

struct SynthCorpus {
  Dataset train;
  Dataset validation;
  Dataset test;
  Matrix templates;  // C x D
};

// Deterministic given the config. Throws SynthError if the config is
// infeasible or, when events occur at all, some class never appears as a
// positive in some split.
SynthCorpus generate(const SynthConfig& config);

// Writes train.jsonl, validation.jsonl, test.jsonl and manifest.json.
void write_corpus(const std::filesystem::path& dir, const SynthConfig& config,
                  const SynthCorpus& corpus);

}  // namespace milpool

#endif  // MILPOOL_SYNTH_HPP_
