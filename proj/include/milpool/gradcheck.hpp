#ifndef MILPOOL_GRADCHECK_HPP_
#define MILPOOL_GRADCHECK_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "milpool/dataset.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

// Owning storage for a random single-class bag.
struct RandomBag {
  std::vector<double> probs;    // uniform in [0, 1)
  std::vector<double> weights;  // exp(uniform(-2, 2))

  BagActivation view() const { return {probs, weights}; }
};

RandomBag random_bag(std::mt19937_64& engine, int min_frames = 1, int max_frames = 50);

// Small bag for whole-model checks: Gaussian features, labels drawn at random.
Bag toy_bag(std::mt19937_64& engine, int frames = 3, int classes = 2, int dims = 3);

// Five compared kinds plus Generalized at (0, 1), (1, 0) and (2.5, 0.5).
std::vector<PoolingSpec> default_gradcheck_poolings();
std::string describe(const PoolingSpec& spec);

struct GradcheckOptions {
  std::vector<PoolingSpec> poolings = default_gradcheck_poolings();
  int trials = 100;      // random bags per pooling
  int model_bags = 10;   // toy bags per pooling for the whole-model check
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
  double model_tolerance = 1e-4;
  // Test hook: replace each analytic pooling gradient entry d by 1.5 * d + 0.1.
  bool corrupt_gradient = false;
};

struct GradcheckRow {
  std::string label;  // "pool <kind>" or "model <kind>"
  int checked = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;

  bool pass() const { return max_deviation <= tolerance; }
};

// Rows for pooling checks, then whole-model checks; none when trials is 0.
std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& options);

}  // namespace milpool

#endif  // MILPOOL_GRADCHECK_HPP_
