#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/data.hpp"
#include "confex/models.hpp"

namespace confex::fixtures {

/// Normalized 60/20/20 split of synthetic_2d(n, seed); cached per (n, seed).
const Split& synthetic_split(std::size_t n = 2000, std::uint64_t seed = 0);

/// MLP trained with default settings on synthetic_split(2000, seed); cached.
const Classifier& synthetic_mlp(std::uint64_t seed = 0);

/// Random ReLU network with the given layer widths (input first).
MlpModel random_mlp(const std::vector<int>& widths, std::uint64_t seed, double scale = 1.0);

/// Two numeric columns, classes "0"/"1", positive class 1.
FeatureSchema schema_2d();

/// numeric "a", ordinal "b" (3 levels), categorical "c" (3 categories), numeric "d".
FeatureSchema mixed_schema();

/// Random valid encoded row of a schema: numerics uniform in [0,1], ordinals on a
/// level, categoricals one-hot.
Eigen::VectorXd random_row(const FeatureSchema& schema, std::mt19937_64& rng);

/// Dataset of random rows labelled by a fixed rule, for mixed-type tests.
Dataset random_dataset(const FeatureSchema& schema, std::size_t n, std::uint64_t seed);

/// Minimum L1 distance from x0 to a 0.005-grid point of [0,1]^2 that satisfies `ok`.
/// Returns +inf when none does.
template <typename Pred>
double grid_min_distance(const Eigen::Vector2d& x0, Pred ok, double step = 0.005) {
  double best = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::lround(1.0 / step));
  Eigen::VectorXd x(2);
  for (int i = 0; i <= n; ++i) {
    x[0] = i * step;
    const double dx = std::abs(x[0] - x0[0]);
    if (dx >= best) continue;
    for (int j = 0; j <= n; ++j) {
      x[1] = j * step;
      const double d = dx + std::abs(x[1] - x0[1]);
      if (d < best && ok(x)) best = d;
    }
  }
  return best;
}

}  // namespace confex::fixtures
