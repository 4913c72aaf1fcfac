#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "confex/data.hpp"
#include "confex/models.hpp"

namespace confex {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Max-vs-rest margin: -v[y] + max_{y' != y} v[y'] on the model's class scores.
/// For an MLP this equals log(max_{y' != y} p[y'] / p[y]) under softmax.
double score_from_class_scores(const Eigen::VectorXd& class_scores, int y);
double score(const Classifier& model, const Eigen::VectorXd& x, int y);

/// Conformal rank k = ceil((1 - alpha)(n + 1)).
std::size_t conformal_rank(std::size_t n, double alpha);

/// k-th smallest score with k = conformal_rank(n, alpha); +inf when k > n.
double cp_quantile(std::vector<double> scores, double alpha);

/// Generic (1 - alpha)-quantile of sum_i w_i delta_{s_i} + w_atom delta_{+inf}.
/// Weights need not be normalized.
double weighted_quantile_with_atom(const std::vector<double>& scores, const std::vector<double>& weights,
                                   double atom_weight, double alpha);

struct CalibrationSet {
  Eigen::MatrixXd points;
  std::vector<int> labels;
  std::vector<double> scores;
  std::string model_id;
  std::optional<double> alpha;

  std::size_t size() const { return labels.size(); }
  Eigen::VectorXd point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
  /// True when every stored score matches the model to within `tol`.
  bool consistent_with(const Classifier& model, double tol = 1e-10) const;
};

CalibrationSet calibrate(const Classifier& model, const Dataset& cal, std::string model_id);

void save_calibration(const std::filesystem::path& path, const CalibrationSet& cal, const std::string& config_hash = {});
CalibrationSet load_calibration(const std::filesystem::path& path, std::string* config_hash = nullptr);

/// Box kernel on the continuous (numeric and ordinal) columns plus an exact
/// match on selected categorical blocks.
struct KernelSpec {
  double bandwidth = 0.1;
  Norm norm = Norm::L1;
  std::vector<std::size_t> continuous_columns;
  std::vector<ColumnBlock> matched_blocks;

  /// `matched_features` lists categorical feature indices that must match;
  /// std::nullopt means all categorical features.
  static KernelSpec for_schema(const FeatureSchema& schema, double bandwidth, Norm norm = Norm::L1,
                               std::optional<std::vector<std::size_t>> matched_features = std::nullopt);
  /// Every column treated as continuous.
  static KernelSpec dense(std::size_t dim, double bandwidth, Norm norm = Norm::L1);
};

double kernel_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec);
bool categorical_match(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec);
bool kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec);

/// Localised quantile with a binary kernel: order statistic over the selected
/// calibration points with its own +inf atom.
double lcp_quantile(const CalibrationSet& cal, const Eigen::VectorXd& x, const KernelSpec& spec, double alpha);
/// Same quantity through the general weighted-CDF form.
double lcp_quantile_weighted(const CalibrationSet& cal, const Eigen::VectorXd& x, const KernelSpec& spec, double alpha);

std::vector<int> prediction_region_from_scores(const Eigen::VectorXd& class_scores, double q);
std::vector<int> prediction_region(const Classifier& model, const Eigen::VectorXd& x, double q);

using QuantileFn = std::function<double(const Eigen::VectorXd&)>;

/// Fraction of rows whose true label lies in the region built from quantile_fn.
double empirical_coverage(const Classifier& model, const Eigen::MatrixXd& points, const std::vector<int>& labels,
                          const QuantileFn& quantile_fn);

}  // namespace confex
