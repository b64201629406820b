#include "milpool/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace milpool {

namespace {

constexpr double kLinearSoftmaxFloor = 1e-12;
// Lower clamp on y_i inside the y_i^beta term when beta < 1.
constexpr double kGeneralizedClamp = 1e-7;

bool generalized_clamps(const PoolingSpec& spec) { return spec.beta < 1.0; }

// Weighted-mean weights of the softmax family, normalised to sum to one.
// `ratio` receives v_i / (c_i * sum_j v_j), the extra factor needed by the
// derivative of y_i^beta. Returns false on the all-zero bag of a family
// member whose weights vanish there (beta >= 1).
bool generalized_weights(std::span<const double> probs, double alpha,
                         double beta, std::vector<double>& unit,
                         std::vector<double>* ratio) {
  const std::size_t n = probs.size();
  const bool clamp = beta < 1.0;
  if (!clamp) {
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (total < kLinearSoftmaxFloor) return false;
  }

  std::vector<double> log_base(n);
  std::vector<double> log_v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = clamp ? std::max(probs[i], kGeneralizedClamp) : probs[i];
    log_base[i] = std::log(c);
    const double power = beta == 0.0 ? 0.0 : beta * log_base[i];
    log_v[i] = power + alpha * probs[i];
  }
  const double shift = *std::max_element(log_v.begin(), log_v.end());

  unit.assign(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    unit[i] = std::exp(log_v[i] - shift);
    sum += unit[i];
  }
  for (double& u : unit) u /= sum;

  if (ratio != nullptr) {
    ratio->assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (clamp && probs[i] <= kGeneralizedClamp) continue;  // flat region
      const double reduced = beta == 1.0 ? 0.0 : (beta - 1.0) * log_base[i];
      (*ratio)[i] = std::exp(reduced + alpha * probs[i] - shift) / sum;
    }
  }
  return true;
}

double clamp_to_range(std::span<const double> probs, double y) {
  const auto [lo, hi] = std::minmax_element(probs.begin(), probs.end());
  return std::clamp(y, *lo, *hi);
}

std::size_t argmax_lowest(std::span<const double> values) {
  return static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace

std::string_view to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kMax: return "max";
    case PoolingKind::kAverage: return "average";
    case PoolingKind::kLinearSoftmax: return "linear-softmax";
    case PoolingKind::kExpSoftmax: return "exp-softmax";
    case PoolingKind::kAttention: return "attention";
    case PoolingKind::kGeneralized: return "generalized";
  }
  return "unknown";
}

std::optional<PoolingKind> parse_pooling_kind(std::string_view name) {
  for (auto kind : {PoolingKind::kMax, PoolingKind::kAverage,
                    PoolingKind::kLinearSoftmax, PoolingKind::kExpSoftmax,
                    PoolingKind::kAttention, PoolingKind::kGeneralized}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

std::string_view display_name(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kMax: return "Max Pool.";
    case PoolingKind::kAverage: return "Ave. Pool.";
    case PoolingKind::kLinearSoftmax: return "Lin. Soft.";
    case PoolingKind::kExpSoftmax: return "Exp. Soft.";
    case PoolingKind::kAttention: return "Attention";
    case PoolingKind::kGeneralized: return "Generalized";
  }
  return "unknown";
}

void validate(const BagActivation& act, const PoolingSpec& spec) {
  if (act.probs.empty()) throw PoolingError("empty bag");
  for (double p : act.probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw PoolingError("frame probability outside [0, 1]");
    }
  }
  if (spec.kind == PoolingKind::kAttention) {
    if (act.weights.empty()) throw PoolingError("missing weights");
    if (act.weights.size() != act.probs.size()) {
      throw PoolingError("weights and probabilities differ in length");
    }
    for (double w : act.weights) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw PoolingError("attention weights must be positive and finite");
      }
    }
  }
  if (spec.kind == PoolingKind::kGeneralized &&
      (!(spec.beta >= 0.0) || !std::isfinite(spec.beta) ||
       !std::isfinite(spec.alpha))) {
    throw PoolingError("generalized pooling needs finite alpha and beta >= 0");
  }
}

double pool_forward(const BagActivation& act, const PoolingSpec& spec) {
  validate(act, spec);
  const auto probs = act.probs;
  const double n = static_cast<double>(probs.size());

  double y = 0.0;
  switch (spec.kind) {
    case PoolingKind::kMax:
      return probs[argmax_lowest(probs)];
    case PoolingKind::kAverage:
      y = std::accumulate(probs.begin(), probs.end(), 0.0) / n;
      break;
    case PoolingKind::kLinearSoftmax: {
      double sum = 0.0;
      double sum_sq = 0.0;
      for (double p : probs) {
        sum += p;
        sum_sq += p * p;
      }
      if (sum < kLinearSoftmaxFloor) return 0.0;
      y = sum_sq / sum;
      break;
    }
    case PoolingKind::kExpSoftmax:
    case PoolingKind::kGeneralized: {
      const double alpha = spec.kind == PoolingKind::kExpSoftmax ? 1.0 : spec.alpha;
      const double beta = spec.kind == PoolingKind::kExpSoftmax ? 0.0 : spec.beta;
      std::vector<double> unit;
      if (!generalized_weights(probs, alpha, beta, unit, nullptr)) return 0.0;
      for (std::size_t i = 0; i < probs.size(); ++i) y += unit[i] * probs[i];
      break;
    }
    case PoolingKind::kAttention: {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        num += probs[i] * act.weights[i];
        den += act.weights[i];
      }
      y = num / den;
      break;
    }
  }
  return clamp_to_range(probs, y);
}

PoolGradient pool_backward(const BagActivation& act, const PoolingSpec& spec,
                           double y) {
  validate(act, spec);
  const auto probs = act.probs;
  const std::size_t n = probs.size();

  PoolGradient grad;
  grad.d_probs.assign(n, 0.0);
  switch (spec.kind) {
    case PoolingKind::kMax:
      grad.d_probs[argmax_lowest(probs)] = 1.0;
      break;
    case PoolingKind::kAverage:
      std::fill(grad.d_probs.begin(), grad.d_probs.end(),
                1.0 / static_cast<double>(n));
      break;
    case PoolingKind::kLinearSoftmax: {
      const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
      if (sum < kLinearSoftmaxFloor) break;
      for (std::size_t i = 0; i < n; ++i) {
        grad.d_probs[i] = (2.0 * probs[i] - y) / sum;
      }
      break;
    }
    case PoolingKind::kExpSoftmax: {
      std::vector<double> unit;
      generalized_weights(probs, 1.0, 0.0, unit, nullptr);
      for (std::size_t i = 0; i < n; ++i) {
        grad.d_probs[i] = (1.0 - y + probs[i]) * unit[i];
      }
      break;
    }
    case PoolingKind::kGeneralized: {
      // y = sum y_i v_i / sum v_i  =>  dy/dy_i = u_i + (y_i - y) v_i' / sum v,
      // with v_i' = v_i (alpha + beta / c_i) on the unclamped region.
      std::vector<double> unit;
      std::vector<double> ratio;
      if (!generalized_weights(probs, spec.alpha, spec.beta, unit, &ratio)) {
        break;
      }
      for (std::size_t i = 0; i < n; ++i) {
        grad.d_probs[i] =
            unit[i] + (probs[i] - y) * (spec.alpha * unit[i] + spec.beta * ratio[i]);
      }
      break;
    }
    case PoolingKind::kAttention: {
      const double den =
          std::accumulate(act.weights.begin(), act.weights.end(), 0.0);
      grad.d_weights.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        grad.d_probs[i] = act.weights[i] / den;
        grad.d_weights[i] = (probs[i] - y) / den;
      }
      break;
    }
  }
  return grad;
}

double finite_diff_check(const BagActivation& act, const PoolingSpec& spec,
                         double step) {
  return finite_diff_check(act, spec, step, pool_backward);
}

double finite_diff_check(const BagActivation& act, const PoolingSpec& spec,
                         double step, const GradientFn& analytic) {
  if (!(step > 0.0) || step > 0.25) {
    throw PoolingError("finite difference step must be in (0, 0.25]");
  }
  const double y = pool_forward(act, spec);
  const PoolGradient grad = analytic(act, spec, y);

  std::vector<double> probs(act.probs.begin(), act.probs.end());
  std::vector<double> weights(act.weights.begin(), act.weights.end());
  const auto eval = [&] {
    return pool_forward(BagActivation{probs, weights}, spec);
  };
  // Central difference where [x - h, x + h] stays inside [lo, hi], otherwise
  // the second-order one-sided stencil pointing inwards.
  const auto derivative = [&](double& x, double lo, double hi) {
    const double x0 = x;
    double d = 0.0;
    if (x0 - step >= lo && x0 + step <= hi) {
      x = x0 + step;
      const double up = eval();
      x = x0 - step;
      const double down = eval();
      d = (up - down) / (2.0 * step);
    } else if (x0 - step < lo) {
      const double f0 = eval();
      x = x0 + step;
      const double f1 = eval();
      x = x0 + 2.0 * step;
      const double f2 = eval();
      d = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step);
    } else {
      const double f0 = eval();
      x = x0 - step;
      const double f1 = eval();
      x = x0 - 2.0 * step;
      const double f2 = eval();
      d = (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * step);
    }
    x = x0;
    return d;
  };
  const auto deviation = [](double a, double numeric) {
    return std::abs(a - numeric) / std::max(1.0, std::abs(a));
  };

  std::vector<bool> skip(probs.size(), false);
  if (spec.kind == PoolingKind::kMax) {
    const std::size_t top = argmax_lowest(probs);
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (i != top) runner_up = std::max(runner_up, probs[i]);
    }
    const bool isolated = runner_up < probs[top] - 2.0 * step;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (i == top) {
        skip[i] = !isolated;
      } else {
        skip[i] = probs[i] >= probs[top] - 2.0 * step;
      }
    }
  } else if (spec.kind == PoolingKind::kGeneralized && generalized_clamps(spec)) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      skip[i] = std::abs(probs[i] - kGeneralizedClamp) < 2.0 * step;
    }
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (skip[i]) continue;
    const double numeric = derivative(probs[i], 0.0, 1.0);
    worst = std::max(worst, deviation(grad.d_probs.at(i), numeric));
  }
  if (spec.needs_weights()) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const double numeric = derivative(
          weights[i], 0.5 * weights[i], std::numeric_limits<double>::infinity());
      worst = std::max(worst, deviation(grad.d_weights.at(i), numeric));
    }
  }
  return worst;
}

}  // namespace milpool
