#pragma once

#include <Eigen/Dense>

#include <optional>
#include <variant>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/cptree.hpp"
#include "confex/data.hpp"
#include "confex/milp.hpp"
#include "confex/models.hpp"

namespace confex::milp {

inline constexpr double kEpsStrict = 1e-6;
inline constexpr double kEpsSplit = 1e-7;

/// Allowed movement of one feature relative to the factual.
enum class Direction { Free, Fixed, Increase, Decrease };

struct Actionability {
  std::vector<Direction> per_feature;  // empty or one entry per schema feature

  Direction of(std::size_t feature) const {
    return feature < per_feature.size() ? per_feature[feature] : Direction::Free;
  }
};

struct InputHandles {
  std::vector<Var> columns;  // one per encoded column
  std::vector<Var> levels;   // ordinal level variable per feature, invalid elsewhere
};

/// Numeric columns become continuous in [0,1], ordinals an integer level plus a
/// scaled alias, categoricals one-hot binaries summing to one. Direction rules
/// other than Free need the factual row.
InputHandles encode_input(MilpModel& b, const FeatureSchema& schema, const Actionability& rules = {},
                          const std::optional<Eigen::VectorXd>& factual = std::nullopt);

/// Pre-activation intervals of every layer (output layer included) over an input box.
struct BigMBounds {
  std::vector<Eigen::VectorXd> lo;
  std::vector<Eigen::VectorXd> hi;

  static BigMBounds compute(const MlpModel& model, const Eigen::VectorXd& input_lo, const Eigen::VectorXd& input_hi);
  /// True when every pre-activation of x lies inside the intervals (with slack `tol`).
  bool contains(const MlpModel& model, const Eigen::VectorXd& x, double tol = 1e-9) const;
};

/// Returns one logit variable per class.
std::vector<Var> encode_mlp(MilpModel& b, const MlpModel& model, const InputHandles& in);

/// Returns one class-probability variable per class.
std::vector<Var> encode_forest(MilpModel& b, const TreeEnsemble& ens, const InputHandles& in,
                               double eps_split = kEpsSplit);

/// Class scores of either model family.
std::vector<Var> encode_classifier(MilpModel& b, const Classifier& model, const InputHandles& in);

/// L1 distance to x0; each categorical block counts half its one-hot difference.
/// Sets the objective to the distance.
Var encode_l1_distance(MilpModel& b, const FeatureSchema& schema, const Eigen::VectorXd& x0, const InputHandles& in);

/// score(target) strictly best by eps_strict.
void encode_classification(MilpModel& b, const std::vector<Var>& scores, int target, double eps_strict = kEpsStrict);

using QuantileRef = std::variant<Var, double>;

/// Constrains the prediction region at the scores to be exactly {target}.
void encode_singleton(MilpModel& b, const std::vector<Var>& scores, int target, QuantileRef q,
                      double eps_strict = kEpsStrict);

struct LcpEncodingOptions {
  std::size_t max_points = 100;
  double eps_kernel = 1e-7;
};

/// Localised quantile as a function of the input variables. Only the L1 kernel
/// is linear; other norms throw. Throws SizeError above `max_points`.
Var encode_lcp_quantile(MilpModel& b, const CalibrationSet& cal, const KernelSpec& spec, double alpha,
                        const InputHandles& in, const LcpEncodingOptions& options = {});

/// Leaf-selected quantile from a quantile forest. Marks the model infeasible when
/// no leaf has a finite quantile.
Var encode_tree_quantile(MilpModel& b, const QuantileForest& forest, const InputHandles& in,
                         double eps_split = kEpsSplit);

}  // namespace confex::milp
