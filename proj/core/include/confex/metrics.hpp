#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/data.hpp"
#include "confex/models.hpp"

namespace confex {

inline constexpr double kLofThreshold = 1.5;

/// Local outlier factor in novelty mode: the reference set is fixed and query
/// points are scored against it. Euclidean distance.
class LofModel {
 public:
  static LofModel fit(Eigen::MatrixXd reference, int k = 20);

  /// LOF ratio of a query point; about 1 for inliers.
  double ratio(const Eigen::VectorXd& x) const;
  int k() const { return k_; }
  const Eigen::VectorXd& local_reachability() const { return lrd_; }

 private:
  std::vector<std::pair<double, Eigen::Index>> neighbours(const Eigen::VectorXd& x, Eigen::Index skip) const;

  Eigen::MatrixXd ref_;
  Eigen::VectorXd kdist_;
  Eigen::VectorXd lrd_;
  int k_ = 20;
};

/// +1 when the ratio is at most `threshold`, else -1.
int lof_label(double ratio, double threshold = kLofThreshold);

/// Mean LOF label of each counterfactual against the reference rows of its
/// target class. Throws MetricError when a stratum has fewer than k + 1 rows.
double lof_plausibility(const std::vector<Eigen::VectorXd>& cfx, const std::vector<int>& targets,
                        const Dataset& reference, int k = 20, double threshold = kLofThreshold);

/// Mean distance to the closest ceil(0.1 N) rows of `target_points`. Plain L1,
/// or the categorical-half-weighted L1 when a schema is given.
double implausibility(const Eigen::VectorXd& x, const Eigen::MatrixXd& target_points,
                      const FeatureSchema* schema = nullptr);

/// Radius of the d-ball holding `fraction` of `total_volume`.
double ball_radius(double fraction, int dims, double total_volume = 1.0);

/// Number of non-categorical encoded columns.
int noncategorical_dims(const FeatureSchema& schema);

/// Uniform sample from the L2 ball of radius r over the non-categorical columns;
/// categoricals are kept, ordinals snapped to a level, everything clipped to [0,1].
Eigen::VectorXd sample_ball(const Eigen::VectorXd& center, double radius, const FeatureSchema& schema,
                            std::mt19937_64& rng);

/// Per-item generator seed that does not depend on evaluation order.
std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index);

struct SensitivitySample {
  Eigen::VectorXd factual;
  std::optional<Eigen::VectorXd> cfx;
  std::vector<Eigen::VectorXd> neighbours;
  std::vector<std::optional<Eigen::VectorXd>> neighbour_cfx;
};

struct SensitivityReport {
  double mean = 0.0;
  std::size_t pairs = 0;
  std::size_t degenerate = 0;  // |x_c - x| below 1e-12
  std::size_t failures = 0;    // no counterfactual for the factual or the neighbour
};

/// Mean of |x'_c - x_c|_2 / |x_c - x|_2 over usable pairs.
SensitivityReport sensitivity_from_samples(const std::vector<SensitivitySample>& samples);

using CfxFunction = std::function<std::optional<Eigen::VectorXd>(const Eigen::VectorXd&)>;

/// Samples `per_factual` neighbours in the budget ball around each factual and
/// regenerates counterfactuals for them.
SensitivityReport sensitivity(const CfxFunction& generator, const std::vector<Eigen::VectorXd>& factuals,
                              const FeatureSchema& schema, double budget = 0.001, int per_factual = 4,
                              std::uint64_t seed = 0);

/// Mean minus population standard deviation.
double stability_from_probabilities(const std::vector<double>& p);

/// Target-class probability over `samples` ball draws around the counterfactual.
double stability(const Classifier& model, const Eigen::VectorXd& cfx, int target, const FeatureSchema& schema,
                 double budget = 0.001, int samples = 100, std::uint64_t seed = 0);

/// Gaps are (1 - alpha) - coverage, in percentage points.
struct CoverageGaps {
  double marginal = 0.0;
  double class_conditional = 0.0;
  double binned = 0.0;
  std::optional<double> simulated;
  std::size_t simulated_points = 0;
  std::size_t simulated_distinct = 0;  // several factuals may resample the same test point
};

struct SimulatedFactual {
  Eigen::VectorXd x;
  int target = 1;
};

CoverageGaps coverage_gaps(const Classifier& model, const QuantileFn& quantile_fn, const Eigen::MatrixXd& test_points,
                           const std::vector<int>& test_labels, double alpha,
                           const std::vector<SimulatedFactual>& factuals, const FeatureSchema* schema = nullptr,
                           int bins = 3, std::uint64_t seed = 0);

struct Summary {
  double mean = 0.0;
  double spread = 0.0;  // population standard deviation
  std::size_t count = 0;
};

Summary summarize(const std::vector<double>& values);

/// One row of the results table.
struct MetricReport {
  std::string method;
  double alpha = 0.0;
  double bandwidth = 0.0;
  std::size_t attempted = 0;
  std::size_t found = 0;
  std::size_t invalid = 0;
  std::size_t failed = 0;  // infeasible or out of time
  double validity_rate = 0.0;
  double failure_rate = 0.0;
  Summary distance;
  Summary plausibility;
  Summary implausibility;
  Summary stability;
  std::optional<SensitivityReport> sensitivity;
};

void write_metric_reports(const std::filesystem::path& path, const std::vector<MetricReport>& reports,
                          const std::string& config_hash);

}  // namespace confex
