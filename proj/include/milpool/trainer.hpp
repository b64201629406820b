#ifndef MILPOOL_TRAINER_HPP_
#define MILPOOL_TRAINER_HPP_

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

#include "milpool/dataset.hpp"
#include "milpool/model.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  PoolingSpec pooling = PoolingSpec::LinearSoftmax();
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.003;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  bool balancing = true;
  int context_radius = 6;
  std::vector<int> hidden_sizes = {32};

  // Throws std::invalid_argument.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const PoolingSpec& spec);
PoolingSpec pooling_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
// Overrides only the keys present in `j`.
void apply_json(const nlohmann::json& j, TrainConfig& config);

// Minibatch index streams over a dataset. With balancing on, slots of each
// batch are assigned round-robin over the classes, each class drawing from
// its own shuffled queue of positive recordings that is reshuffled and
// reused when exhausted. Recordings positive for no class form one more
// queue in the rotation. With balancing off, each epoch is a uniform shuffle
// of all recordings. Either way an epoch has ceil(N / batch_size) batches.
class BatchSampler {
 public:
  // Throws TrainingError naming the first class without positives when
  // balancing is on.
  BatchSampler(const Dataset& dataset, int batch_size, std::uint64_t seed,
               bool balancing);

  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  struct Queue {
    std::vector<std::size_t> members;
    std::size_t cursor = 0;
  };

  std::size_t draw(Queue& queue);

  std::size_t dataset_size_;
  std::size_t batch_size_;
  bool balancing_;
  std::mt19937_64 engine_;
  std::vector<Queue> queues_;
  std::size_t rotation_ = 0;
};

// One epoch of `balanced_batches` as a free function (first epoch of a fresh
// sampler).
std::vector<std::vector<std::size_t>> balanced_batches(const Dataset& dataset,
                                                       int batch_size,
                                                       std::uint64_t seed);

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean bag loss per epoch
};

// Momentum SGD on the mean bag loss of each minibatch. Deterministic given
// dataset and config. Throws TrainingError on a non-finite loss.
TrainResult train(const Dataset& dataset, const TrainConfig& config);
ModelParams initial_params(const Dataset& dataset, const TrainConfig& config);

// Self-describing JSON checkpoint with the training config echoed.
struct Checkpoint {
  TrainConfig config;
  ModelParams params;
  bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_to_string(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// A single-class model whose frame probabilities and attention weights are
// free parameters: y_i = sigmoid(logits[i]), w_i = exp(clamp(weight_logits[i])).
struct FreeFrameModel {
  std::vector<double> logits;
  std::vector<double> weight_logits;

  std::vector<double> probs() const;
  std::vector<double> weights() const;
};

struct FreeFrameStep {
  double loss = 0.0;
  double recording_prob = 0.0;  // before the step
};

// One plain gradient-descent step on the cross entropy of a bag with label
// `label`. Weight logits only move under Attention pooling.
FreeFrameStep free_frame_step(FreeFrameModel& model, int label,
                              const PoolingSpec& pooling, double learning_rate);

}  // namespace milpool

#endif  // MILPOOL_TRAINER_HPP_
