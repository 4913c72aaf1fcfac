#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/cptree.hpp"
#include "confex/data.hpp"
#include "confex/encode.hpp"
#include "confex/milp.hpp"
#include "confex/models.hpp"

namespace confex {

enum class Method { MinDist, Naive, Lcp, Tree, Wachter };

std::string to_string(Method m);
/// Accepts "mindist", "naive", "lcp", "tree", "wachter" (case-insensitive).
Method method_from_string(const std::string& name);

enum class CfxStatus { Found, Infeasible, TimeLimit, InvalidSolution };

std::string to_string(CfxStatus s);

struct CfxRequest {
  Eigen::VectorXd factual;
  int target = 1;
  std::string model_id;
  Method method = Method::MinDist;
  double alpha = 0.1;
  milp::Actionability actionability;
  double time_limit_s = 60.0;
  double eps_strict = milp::kEpsStrict;
};

/// Re-evaluation of a counterfactual outside the optimiser.
struct Verification {
  int predicted = -1;
  std::vector<int> region;  // empty for methods without a conformal region
  double quantile = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
};

struct CfxResult {
  CfxStatus status = CfxStatus::Infeasible;
  Eigen::VectorXd counterfactual;  // empty unless a point was produced
  double distance = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  bool trivial = false;
  long nodes = 0;
  Verification verification;
  std::string message;
};

struct WachterConfig {
  enum class Loss { Hinge, CrossEntropy };
  double lambda_initial = 0.1;
  double lambda_multiplier = 2.0;
  int max_rounds = 20;
  int max_iterations = 500;
  double learning_rate = 0.05;
  double hinge_margin = 0.1;
  Loss loss = Loss::Hinge;
};

/// L1 distance in encoded space where each categorical block counts half its
/// one-hot difference, so changing one category costs 1.
double cfx_distance(const FeatureSchema& schema, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Rounds categorical blocks to one-hot and ordinals to their nearest level; clamps to [0,1].
Eigen::VectorXd snap_to_domain(const FeatureSchema& schema, const Eigen::VectorXd& x);

/// Checks predict == target and, when `quantile` is given, region == {target}.
Verification verify(const Classifier& model, const Eigen::VectorXd& x, int target, std::optional<double> quantile);

CfxResult min_dist(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                   const milp::SolverBackend& backend, milp::SolveOptions options = {});
CfxResult confex_naive(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                       const CalibrationSet& cal, const milp::SolverBackend& backend, milp::SolveOptions options = {});
CfxResult confex_lcp(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                     const CalibrationSet& cal, const KernelSpec& spec, const milp::SolverBackend& backend,
                     milp::SolveOptions options = {}, const milp::LcpEncodingOptions& lcp = {});
CfxResult confex_tree(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                      const QuantileForest& forest, const milp::SolverBackend& backend, milp::SolveOptions options = {});
CfxResult wachter(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                  const WachterConfig& cfg = {});

/// Everything a request may need; unused members stay null.
struct Explainer {
  const Classifier* model = nullptr;
  const FeatureSchema* schema = nullptr;
  const milp::SolverBackend* backend = nullptr;
  const CalibrationSet* calibration = nullptr;
  std::optional<KernelSpec> kernel;
  const QuantileForest* forest = nullptr;
  WachterConfig wachter_config;
  milp::LcpEncodingOptions lcp_options;
  milp::SolveOptions solve_options;

  CfxResult explain(const CfxRequest& req) const;
  /// Runs every request, using up to `jobs` threads when the backend allows it.
  std::vector<CfxResult> explain_batch(const std::vector<CfxRequest>& requests, int jobs = 1) const;
};

/// One JSON object per line; `row` is the factual's index in its source table.
std::string result_to_json(const CfxResult& r, std::size_t row, Method method, const CfxRequest& req);

}  // namespace confex
