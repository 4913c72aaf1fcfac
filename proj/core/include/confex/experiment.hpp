#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "confex/data.hpp"
#include "confex/error.hpp"
#include "confex/generators.hpp"
#include "confex/models.hpp"

namespace confex {

/// Parsed experiment configuration. See README for the file layout.
struct ExperimentConfig {
  // [data]
  std::string source = "synthetic";  // "synthetic" or a CSV path
  std::size_t synthetic_n = 2000;
  std::uint64_t synthetic_seed = 0;
  std::optional<FeatureSchema> schema;  // required for CSV sources

  // [split]
  SplitRatios ratios;
  std::uint64_t split_seed = 0;

  // [model]
  std::string model_kind = "mlp";
  TrainConfig mlp;
  ForestConfig forest;

  // [conformal]
  std::vector<double> alphas{0.01, 0.05, 0.1};
  std::vector<double> bandwidths{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
  bool bandwidth_is_fraction = true;  // of the median pairwise calibration distance
  Norm kernel_norm = Norm::L1;

  // [explain]
  std::vector<Method> methods{Method::MinDist, Method::Naive, Method::Tree};
  std::size_t factuals = 50;
  std::uint64_t factual_seed = 0;
  std::optional<int> target;  // defaults to the schema's positive class
  std::vector<std::string> immutable;
  std::vector<std::string> increasing;
  std::vector<std::string> decreasing;
  double eps_strict = 1e-6;
  std::size_t lcp_max_points = 100;
  WachterConfig wachter;

  // [metrics]
  bool lof = true;
  bool sensitivity = false;
  bool stability = true;
  int lof_k = 20;
  double lof_threshold = 1.5;
  double ball_budget = 0.001;
  int sensitivity_neighbours = 4;
  std::size_t sensitivity_factuals = 25;
  int stability_samples = 100;
  int coverage_bins = 3;
  std::uint64_t metric_seed = 0;

  // [solver]
  std::string backend = "bnb";
  double time_limit_s = 60.0;

  // [output]
  std::filesystem::path out_dir = "confex-out";
  int jobs = 1;

  /// Throws confex::Error naming the offending key.
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// "name:numeric; name:ordinal:a|b|c; name:categorical:x|y"
std::vector<FeatureSpec> parse_feature_list(const std::string& text);

/// Fingerprints of the settings each artifact depends on. Each stage folds in its predecessor.
struct StageHashes {
  std::string data;
  std::string model;
  std::string forest;
  std::string explain;
};

StageHashes stage_hashes(const ExperimentConfig& cfg);

/// Command-line overrides applied on top of a loaded config.
struct Overrides {
  std::optional<std::filesystem::path> out_dir;
  std::optional<int> jobs;
  std::optional<double> time_limit_s;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

/// Raised when an upstream artifact is missing or was built from other settings.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

/// Pipeline commands. Each reads its predecessors' artifacts from the output
/// directory and writes its own. They return a one-line summary.
std::string cmd_synth(const ExperimentConfig& cfg, const std::filesystem::path& csv_out);
std::string cmd_train(const ExperimentConfig& cfg);
std::string cmd_calibrate(const ExperimentConfig& cfg);
std::string cmd_build_tree(const ExperimentConfig& cfg);
std::string cmd_explain(const ExperimentConfig& cfg);
std::string cmd_evaluate(const ExperimentConfig& cfg);
std::string cmd_coverage(const ExperimentConfig& cfg);
/// Writes the LP file of one factual's model for inspection.
std::string cmd_export_lp(const ExperimentConfig& cfg, Method method, std::size_t factual_index, double alpha,
                          double bandwidth, const std::filesystem::path& lp_out);

/// Split used by every command.
Split load_split(const ExperimentConfig& cfg);

/// Test rows explained by cmd_explain: rows not already predicted as the target,
/// in a seeded order, truncated to cfg.factuals.
std::vector<std::size_t> select_factuals(const Classifier& model, const Dataset& test, int target, std::size_t count,
                                         std::uint64_t seed);

/// Absolute bandwidths for cfg.bandwidths given the calibration rows.
std::vector<double> resolve_bandwidths(const ExperimentConfig& cfg, const Eigen::MatrixXd& cal_rows);

}  // namespace confex
