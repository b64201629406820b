// Test-only reference implementations. Deliberately naive: direct formulas,
// no shifting or clamping, so they share no code path with the library.
#ifndef MILPOOL_TESTS_ORACLES_HPP_
#define MILPOOL_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

namespace oracle {

inline double weighted_mean(const std::vector<double>& y, const std::vector<double>& v) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += y[i] * v[i];
    den += v[i];
  }
  return num / den;
}

inline double linear_softmax(const std::vector<double>& y) { return weighted_mean(y, y); }

inline double exp_softmax(const std::vector<double>& y) {
  std::vector<double> v;
  for (double p : y) v.push_back(std::exp(p));
  return weighted_mean(y, v);
}

inline double generalized(const std::vector<double>& y, double alpha, double beta) {
  std::vector<double> v;
  for (double p : y) v.push_back(std::pow(p, beta) * std::exp(alpha * p));
  return weighted_mean(y, v);
}

// Central difference of f at x along coordinate i.
inline double partial(const std::function<double(const std::vector<double>&)>& f,
                      std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

// Standard normal CDF via erfc.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Segment counts by explicit set comparison per segment.
struct SetCounts {
  long n = 0, s = 0, d = 0, i = 0, tp = 0, fp = 0, fn = 0;
};

inline SetCounts compare_sets(const std::set<int>& reference, const std::set<int>& system) {
  SetCounts out;
  std::vector<int> missed;
  std::vector<int> extra;
  std::set_difference(reference.begin(), reference.end(), system.begin(), system.end(),
                      std::back_inserter(missed));
  std::set_difference(system.begin(), system.end(), reference.begin(), reference.end(),
                      std::back_inserter(extra));
  out.n = static_cast<long>(reference.size());
  out.fn = static_cast<long>(missed.size());
  out.fp = static_cast<long>(extra.size());
  out.tp = out.n - out.fn;
  // Pair each missed class with an extra one as a substitution.
  while (!missed.empty() && !extra.empty()) {
    missed.pop_back();
    extra.pop_back();
    ++out.s;
  }
  out.d = static_cast<long>(missed.size());
  out.i = static_cast<long>(extra.size());
  return out;
}

}  // namespace oracle

#endif  // MILPOOL_TESTS_ORACLES_HPP_
