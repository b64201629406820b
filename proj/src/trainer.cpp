#include "milpool/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace milpool {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (context_radius < 0) throw std::invalid_argument("context radius must be >= 0");
  for (int h : hidden_sizes) {
    if (h < 1) throw std::invalid_argument("hidden sizes must be positive");
  }
  if (pooling.kind == PoolingKind::kGeneralized &&
      (!(pooling.beta >= 0.0) || !std::isfinite(pooling.alpha))) {
    throw std::invalid_argument("generalized pooling needs finite alpha and beta >= 0");
  }
}

json to_json(const PoolingSpec& spec) {
  json j = {{"kind", std::string(to_string(spec.kind))}};
  if (spec.kind == PoolingKind::kGeneralized) {
    j["alpha"] = spec.alpha;
    j["beta"] = spec.beta;
  }
  return j;
}

PoolingSpec pooling_from_json(const json& j) {
  PoolingSpec spec;
  const auto name = j.at("kind").get<std::string>();
  const auto kind = parse_pooling_kind(name);
  if (!kind) throw std::invalid_argument("unknown pooling kind '" + name + "'");
  spec.kind = *kind;
  if (spec.kind == PoolingKind::kGeneralized) {
    spec.alpha = j.value("alpha", 0.0);
    spec.beta = j.value("beta", 0.0);
  } else if (j.contains("alpha") || j.contains("beta")) {
    throw std::invalid_argument("alpha/beta are only valid with generalized pooling");
  }
  return spec;
}

json to_json(const TrainConfig& config) {
  return {{"pooling", to_json(config.pooling)},
          {"epochs", config.epochs},
          {"batch_size", config.batch_size},
          {"learning_rate", config.learning_rate},
          {"momentum", config.momentum},
          {"seed", config.seed},
          {"balancing", config.balancing},
          {"context_radius", config.context_radius},
          {"hidden_sizes", config.hidden_sizes}};
}

void apply_json(const json& j, TrainConfig& config) {
  if (!j.is_object()) throw std::invalid_argument("training config must be an object");
  try {
    if (j.contains("pooling")) config.pooling = pooling_from_json(j.at("pooling"));
    if (j.contains("epochs")) config.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) config.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) {
      config.learning_rate = j.at("learning_rate").get<double>();
    }
    if (j.contains("momentum")) config.momentum = j.at("momentum").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("balancing")) config.balancing = j.at("balancing").get<bool>();
    if (j.contains("context_radius")) {
      config.context_radius = j.at("context_radius").get<int>();
    }
    if (j.contains("hidden_sizes")) {
      config.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad training config: ") + e.what());
  }
}

BatchSampler::BatchSampler(const Dataset& dataset, int batch_size,
                           std::uint64_t seed, bool balancing)
    : dataset_size_(dataset.size()),
      batch_size_(static_cast<std::size_t>(batch_size)),
      balancing_(balancing),
      engine_(seed) {
  if (dataset.empty()) throw TrainingError("cannot sample from an empty dataset");
  if (batch_size < 1) throw TrainingError("batch size must be >= 1");

  if (!balancing_) {
    Queue all;
    all.members.resize(dataset_size_);
    for (std::size_t i = 0; i < dataset_size_; ++i) all.members[i] = i;
    queues_.push_back(std::move(all));
    return;
  }

  const int classes = dataset.num_classes();
  queues_.resize(static_cast<std::size_t>(classes));
  Queue background;
  for (std::size_t i = 0; i < dataset_size_; ++i) {
    const auto& labels = dataset.bags[i].bag_labels;
    bool any = false;
    for (int c = 0; c < classes; ++c) {
      if (labels[static_cast<std::size_t>(c)] == 1) {
        queues_[static_cast<std::size_t>(c)].members.push_back(i);
        any = true;
      }
    }
    if (!any) background.members.push_back(i);
  }
  for (int c = 0; c < classes; ++c) {
    if (queues_[static_cast<std::size_t>(c)].members.empty()) {
      throw TrainingError("class " + std::to_string(c) +
                          " has no positive recordings; cannot balance");
    }
  }
  if (!background.members.empty()) queues_.push_back(std::move(background));
  for (Queue& q : queues_) std::shuffle(q.members.begin(), q.members.end(), engine_);
}

std::size_t BatchSampler::draw(Queue& queue) {
  if (queue.cursor == queue.members.size()) {
    std::shuffle(queue.members.begin(), queue.members.end(), engine_);
    queue.cursor = 0;
  }
  return queue.members[queue.cursor++];
}

std::vector<std::vector<std::size_t>> BatchSampler::next_epoch() {
  const std::size_t batches = (dataset_size_ + batch_size_ - 1) / batch_size_;
  std::vector<std::vector<std::size_t>> epoch;
  epoch.reserve(batches);
  if (!balancing_) {
    auto& order = queues_.front().members;
    std::shuffle(order.begin(), order.end(), engine_);
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
      const std::size_t stop = std::min(order.size(), start + batch_size_);
      epoch.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return epoch;
  }
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (std::size_t slot = 0; slot < batch_size_; ++slot) {
      batch.push_back(draw(queues_[rotation_]));
      rotation_ = (rotation_ + 1) % queues_.size();
    }
    epoch.push_back(std::move(batch));
  }
  return epoch;
}

std::vector<std::vector<std::size_t>> balanced_batches(const Dataset& dataset,
                                                       int batch_size,
                                                       std::uint64_t seed) {
  return BatchSampler(dataset, batch_size, seed, true).next_epoch();
}

ModelParams initial_params(const Dataset& dataset, const TrainConfig& config) {
  return init_params(dataset.feature_dim(), dataset.num_classes(),
                     config.context_radius, config.hidden_sizes, config.seed);
}

namespace {

[[noreturn]] void report_non_finite(const ModelParams& params, const Bag& bag,
                                    const PoolingSpec& pooling, int epoch,
                                    std::size_t batch) {
  const BagLoss detail = bag_loss(frame_forward(params, bag), bag.bag_labels, pooling);
  int culprit = 0;
  for (std::size_t c = 0; c < detail.recording_probs.size(); ++c) {
    if (!std::isfinite(detail.recording_probs[c])) {
      culprit = static_cast<int>(c);
      break;
    }
  }
  throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                      ", batch " + std::to_string(batch) + ", class " +
                      std::to_string(culprit) + " (recording '" + bag.id + "')");
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  validate(dataset);

  TrainResult result;
  result.params = initial_params(dataset, config);
  // Separate stream from the initializer so that architecture changes do not
  // shift the batch order.
  BatchSampler sampler(dataset, config.batch_size, config.seed ^ 0x9e3779b97f4a7c15ULL,
                       config.balancing);

  Vector theta = flatten(result.params);
  Vector velocity = Vector::Zero(theta.size());
  ModelParams grads = zeros_like(result.params);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = sampler.next_epoch();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      unflatten(Vector::Zero(theta.size()), grads);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (std::size_t index : batch) {
        const Bag& bag = dataset.bags[index];
        const ForwardCache cache = forward_with_cache(result.params, bag.features);
        const double loss = bag_backward(result.params, cache, bag.bag_labels,
                                         config.pooling, grads, scale);
        if (!std::isfinite(loss)) {
          report_non_finite(result.params, bag, config.pooling, epoch, b);
        }
        loss_sum += loss;
        ++seen;
      }
      const Vector g = flatten(grads);
      if (!g.allFinite()) {
        throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b));
      }
      velocity = config.momentum * velocity + g;
      theta -= config.learning_rate * velocity;
      unflatten(theta, result.params);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  return result;
}

namespace {

json layer_to_json(const std::string& name, const DenseLayer& layer) {
  std::vector<double> weight;
  weight.reserve(static_cast<std::size_t>(layer.weight.size()));
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      weight.push_back(layer.weight(r, c));
    }
  }
  std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
  return {{"name", name},
          {"rows", layer.weight.rows()},
          {"cols", layer.weight.cols()},
          {"weight", weight},
          {"bias", bias}};
}

void layer_from_json(const json& j, DenseLayer& layer) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (rows != layer.weight.rows() || cols != layer.weight.cols()) {
    throw std::invalid_argument("checkpoint layer '" + j.at("name").get<std::string>() +
                                "' has the wrong shape");
  }
  const auto weight = j.at("weight").get<std::vector<double>>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(weight.size()) != rows * cols ||
      static_cast<Eigen::Index>(bias.size()) != rows) {
    throw std::invalid_argument("checkpoint layer has the wrong number of values");
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      layer.weight(r, c) = weight[static_cast<std::size_t>(r * cols + c)];
    }
    layer.bias(r) = bias[static_cast<std::size_t>(r)];
  }
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& checkpoint) {
  const ModelParams& p = checkpoint.params;
  json layers = json::array();
  for (std::size_t l = 0; l < p.hidden.size(); ++l) {
    layers.push_back(layer_to_json("hidden" + std::to_string(l), p.hidden[l]));
  }
  layers.push_back(layer_to_json("output", p.output));
  layers.push_back(layer_to_json("attention", p.attention));
  const json j = {{"format", "milpool-checkpoint"},
                  {"version", 1},
                  {"config", to_json(checkpoint.config)},
                  {"seed", checkpoint.config.seed},
                  {"model",
                   {{"input_dim", p.input_dim},
                    {"num_classes", p.num_classes},
                    {"context_radius", p.context_radius},
                    {"hidden_sizes", p.hidden_sizes},
                    {"layers", layers}}}};
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "milpool-checkpoint" ||
        j.at("version").get<int>() != 1) {
      throw std::invalid_argument("not a milpool checkpoint (version 1)");
    }
    Checkpoint checkpoint;
    apply_json(j.at("config"), checkpoint.config);
    checkpoint.config.seed = j.at("seed").get<std::uint64_t>();
    const json& m = j.at("model");
    checkpoint.params = zero_params(m.at("input_dim").get<int>(),
                                    m.at("num_classes").get<int>(),
                                    m.at("context_radius").get<int>(),
                                    m.at("hidden_sizes").get<std::vector<int>>());
    ModelParams& p = checkpoint.params;
    const json& layers = m.at("layers");
    if (layers.size() != p.hidden.size() + 2) {
      throw std::invalid_argument("checkpoint has the wrong number of layers");
    }
    for (std::size_t l = 0; l < p.hidden.size(); ++l) layer_from_json(layers[l], p.hidden[l]);
    layer_from_json(layers[p.hidden.size()], p.output);
    layer_from_json(layers[p.hidden.size() + 1], p.attention);
    return checkpoint;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_string(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_string(buffer.str());
}

std::vector<double> FreeFrameModel::probs() const {
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return out;
}

std::vector<double> FreeFrameModel::weights() const {
  std::vector<double> out(weight_logits.size());
  for (std::size_t i = 0; i < weight_logits.size(); ++i) {
    out[i] = std::exp(std::clamp(weight_logits[i], -kAttentionLogitClamp,
                                 kAttentionLogitClamp));
  }
  return out;
}

FreeFrameStep free_frame_step(FreeFrameModel& model, int label,
                              const PoolingSpec& pooling, double learning_rate) {
  if (pooling.needs_weights() && model.weight_logits.size() != model.logits.size()) {
    throw std::invalid_argument("free-frame model needs one weight logit per frame");
  }
  const std::vector<double> probs = model.probs();
  const std::vector<double> weights =
      pooling.needs_weights() ? model.weights() : std::vector<double>{};
  const BagActivation act{probs, weights};
  const double y = pool_forward(act, pooling);
  const PoolGradient grad = pool_backward(act, pooling, y);
  const double upstream = loss_gradient(label, y);

  FreeFrameStep step;
  step.recording_prob = y;
  const double yc = std::clamp(y, kProbabilityClamp, 1.0 - kProbabilityClamp);
  step.loss = label == 1 ? -std::log(yc) : -std::log1p(-yc);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d_logit = upstream * grad.d_probs[i] * probs[i] * (1.0 - probs[i]);
    model.logits[i] -= learning_rate * d_logit;
  }
  if (pooling.needs_weights()) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const bool inside = std::abs(model.weight_logits[i]) < kAttentionLogitClamp;
      const double d_z = inside ? upstream * grad.d_weights[i] * weights[i] : 0.0;
      model.weight_logits[i] -= learning_rate * d_z;
    }
  }
  return step;
}

}  // namespace milpool
