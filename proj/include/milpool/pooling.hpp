#ifndef MILPOOL_POOLING_HPP_
#define MILPOOL_POOLING_HPP_

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace milpool {

// Aggregators from frame-level probabilities to one recording-level
// probability. All of them except Max are weighted means of the frame
// probabilities.
enum class PoolingKind {
  kMax,
  kAverage,
  kLinearSoftmax,
  kExpSoftmax,
  kAttention,
  // Weights y_i^beta * exp(alpha * y_i). Subsumes Average (0, 0),
  // LinearSoftmax (0, 1) and ExpSoftmax (1, 0).
  kGeneralized,
};

struct PoolingSpec {
  PoolingKind kind = PoolingKind::kLinearSoftmax;
  double alpha = 0.0;  // Generalized only
  double beta = 0.0;   // Generalized only, >= 0

  static PoolingSpec Max() { return {PoolingKind::kMax}; }
  static PoolingSpec Average() { return {PoolingKind::kAverage}; }
  static PoolingSpec LinearSoftmax() { return {PoolingKind::kLinearSoftmax}; }
  static PoolingSpec ExpSoftmax() { return {PoolingKind::kExpSoftmax}; }
  static PoolingSpec Attention() { return {PoolingKind::kAttention}; }
  static PoolingSpec Generalized(double alpha, double beta) {
    return {PoolingKind::kGeneralized, alpha, beta};
  }

  bool needs_weights() const { return kind == PoolingKind::kAttention; }
  bool operator==(const PoolingSpec&) const = default;
};

// The five pooling functions compared side by side, in table order.
inline constexpr PoolingKind kComparedKinds[] = {
    PoolingKind::kMax, PoolingKind::kAverage, PoolingKind::kLinearSoftmax,
    PoolingKind::kExpSoftmax, PoolingKind::kAttention};

// CLI / file names: max, average, linear-softmax, exp-softmax, attention,
// generalized.
std::string_view to_string(PoolingKind kind);
std::optional<PoolingKind> parse_pooling_kind(std::string_view name);
// Column heads used in comparison tables.
std::string_view display_name(PoolingKind kind);

class PoolingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-owning view of one class over one recording. `weights` is empty when
// absent; it is only consulted by Attention pooling.
struct BagActivation {
  std::span<const double> probs;
  std::span<const double> weights;
};

struct PoolGradient {
  std::vector<double> d_probs;    // dy/dy_i
  std::vector<double> d_weights;  // dy/dw_i, Attention only (else empty)
};

// Throws PoolingError("empty bag"), PoolingError("missing weights") or a
// PoolingError describing the violated invariant.
void validate(const BagActivation& act, const PoolingSpec& spec);

double pool_forward(const BagActivation& act, const PoolingSpec& spec);

// `y` must be the value returned by pool_forward for the same inputs. Max
// routes the whole gradient to the lowest index attaining the maximum.
PoolGradient pool_backward(const BagActivation& act, const PoolingSpec& spec,
                           double y);

using GradientFn = std::function<PoolGradient(
    const BagActivation&, const PoolingSpec&, double)>;

// Max over checked coordinates of |analytic - numeric| / max(1, |analytic|),
// numeric being a central difference with the given step (second-order
// one-sided next to the [0, 1] boundary of a probability). For Max,
// coordinates within 2*step of the maximum are skipped when the maximum is
// not isolated.
double finite_diff_check(const BagActivation& act, const PoolingSpec& spec,
                         double step);
// Same, against an arbitrary analytic gradient.
double finite_diff_check(const BagActivation& act, const PoolingSpec& spec,
                         double step, const GradientFn& analytic);

}  // namespace milpool

#endif  // MILPOOL_POOLING_HPP_
