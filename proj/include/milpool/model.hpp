#ifndef MILPOOL_MODEL_HPP_
#define MILPOOL_MODEL_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "milpool/dataset.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

using Vector = Eigen::VectorXd;

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  bool operator==(const DenseLayer& other) const {
    return weight == other.weight && bias == other.bias;
  }
};

// Per-frame multilayer perceptron over a window of 2*context_radius+1 frames
// (zero-padded at the edges). Hidden layers use tanh. Two heads read the last
// hidden layer: `output` gives one sigmoid probability per class, `attention`
// one weight logit per class.
struct ModelParams {
  int input_dim = 0;
  int num_classes = 0;
  int context_radius = 0;
  std::vector<int> hidden_sizes;
  std::vector<DenseLayer> hidden;
  DenseLayer output;
  DenseLayer attention;

  int window_dim() const { return (2 * context_radius + 1) * input_dim; }
  int trunk_dim() const {
    return hidden_sizes.empty() ? window_dim() : hidden_sizes.back();
  }
  Eigen::Index parameter_count() const;
  bool operator==(const ModelParams&) const = default;
};

// All tensors zero; the shape used for gradient accumulators.
ModelParams zero_params(int input_dim, int num_classes, int context_radius,
                        std::vector<int> hidden_sizes);
ModelParams zeros_like(const ModelParams& params);
// Uniform in [-s, s] with s = 1/sqrt(fan_in), drawn from a seeded engine.
ModelParams init_params(int input_dim, int num_classes, int context_radius,
                        std::vector<int> hidden_sizes, std::uint64_t seed);

// Parameters in a fixed order: hidden layers, output head, attention head;
// weight (row-major) before bias within each layer.
Vector flatten(const ModelParams& params);
void unflatten(const Vector& flat, ModelParams& params);

inline constexpr double kAttentionLogitClamp = 10.0;

struct FrameOutput {
  Matrix probs;    // n x C, y_i in (0, 1)
  Matrix weights;  // n x C, w_i = exp(clamp(z_i, -10, 10))
};

// Intermediate values kept for backpropagation.
struct ForwardCache {
  std::vector<Matrix> layers;  // windowed input, then each hidden activation
  Matrix weight_logits;        // unclamped z
  FrameOutput out;
};

ForwardCache forward_with_cache(const ModelParams& params, const Matrix& features);
FrameOutput frame_forward(const ModelParams& params, const Bag& bag);

inline constexpr double kProbabilityClamp = 1e-7;

struct BagLoss {
  double loss = 0.0;                   // summed over classes
  std::vector<double> recording_probs; // y per class, before clamping
};

// Cross entropy of the pooled probabilities against the bag labels, each y_c
// clamped to [1e-7, 1 - 1e-7].
BagLoss bag_loss(const FrameOutput& frames, std::span<const int> bag_labels,
                 const PoolingSpec& pooling);

// dL/dy from the cross entropy, evaluated at the clamped y.
double loss_gradient(int label, double recording_prob);

// Upstream gradients dL/dy_i and dL/dw_i (zero unless Attention), n x C.
struct FrameGradients {
  Matrix d_probs;
  Matrix d_weights;
};

FrameGradients frame_gradients(const FrameOutput& frames,
                               std::span<const int> bag_labels,
                               const PoolingSpec& pooling);

// Adds scale * dL/dtheta for one bag into `grads` (shaped like `params`).
// Returns the bag loss.
double bag_backward(const ModelParams& params, const ForwardCache& cache,
                    std::span<const int> bag_labels, const PoolingSpec& pooling,
                    ModelParams& grads, double scale = 1.0);

// Max relative deviation, |analytic - numeric| / max(1, |analytic|), between
// bag_backward and central differences of bag_loss over every parameter.
double model_gradient_check(const ModelParams& params, const Bag& bag,
                            const PoolingSpec& pooling, double step);

}  // namespace milpool

#endif  // MILPOOL_MODEL_HPP_
