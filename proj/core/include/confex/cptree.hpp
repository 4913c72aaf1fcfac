#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/data.hpp"

namespace confex {

struct QuantileLeaf {
  double quantile = kInf;
  Eigen::VectorXd midpoint;  // centre of the member bounding box, over the tree columns
  Eigen::VectorXd box_lo;    // member bounding box
  Eigen::VectorXd box_hi;
  Eigen::VectorXd cell_lo;   // split cell, +-inf where unconstrained
  Eigen::VectorXd cell_hi;
  std::vector<std::size_t> members;  // calibration indices
  std::vector<double> scores;        // member scores, same order
};

struct QuantileNode {
  int column = -1;  // position in QuantileTree::columns(); -1 on leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // index into leaves() on leaf nodes
};

/// kd-style partition of one stratum. A node routes x[col] < threshold left.
class QuantileTree {
 public:
  QuantileTree() = default;
  QuantileTree(std::vector<std::size_t> columns, std::vector<QuantileNode> nodes, std::vector<QuantileLeaf> leaves);

  /// Splits on the widest column at the midpoint of its range until every leaf
  /// spans less than `bandwidth` on each column.
  static QuantileTree build(const CalibrationSet& cal, const std::vector<std::size_t>& members,
                            const std::vector<std::size_t>& columns, double bandwidth, double alpha);

  const std::vector<std::size_t>& columns() const { return columns_; }
  const std::vector<QuantileNode>& nodes() const { return nodes_; }
  const std::vector<QuantileLeaf>& leaves() const { return leaves_; }

  int find_leaf(const Eigen::VectorXd& x) const;
  /// L-infinity distance from x to the leaf midpoint over the tree columns.
  double midpoint_distance(const Eigen::VectorXd& x, int leaf) const;

  bool operator==(const QuantileTree& other) const;

 private:
  std::vector<std::size_t> columns_;
  std::vector<QuantileNode> nodes_;
  std::vector<QuantileLeaf> leaves_;
};

/// Category index per stratified feature.
using StratumKey = std::vector<int>;

class QuantileForest {
 public:
  QuantileForest() = default;

  /// `stratified_features` lists categorical feature indices; nullopt means all.
  static QuantileForest build(const CalibrationSet& cal, const FeatureSchema& schema, double bandwidth, double alpha,
                              std::optional<std::vector<std::size_t>> stratified_features = std::nullopt);

  struct Location {
    const QuantileTree* tree = nullptr;
    StratumKey key;
    int leaf = -1;
    bool accepted = false;  // within h/2 of the midpoint in L-infinity
  };

  /// Stratum and leaf reached by x; nullopt when no stratum matches.
  std::optional<Location> locate(const Eigen::VectorXd& x) const;
  /// Leaf quantile, or +inf for an unknown stratum or a point rejected as non-local.
  double query(const Eigen::VectorXd& x) const;

  StratumKey key_of(const Eigen::VectorXd& x) const;

  double bandwidth() const { return bandwidth_; }
  double alpha() const { return alpha_; }
  const std::string& model_id() const { return model_id_; }
  const std::vector<std::size_t>& stratified_features() const { return stratified_features_; }
  const std::vector<ColumnBlock>& stratified_blocks() const { return stratified_blocks_; }
  const std::map<StratumKey, QuantileTree>& strata() const { return strata_; }
  std::size_t leaf_count() const;

  bool operator==(const QuantileForest& other) const;

  std::string to_json(const std::string& config_hash = {}) const;
  static QuantileForest from_json(const std::string& text, std::string* config_hash = nullptr);

 private:
  double bandwidth_ = 0.0;
  double alpha_ = 0.1;
  std::string model_id_;
  std::vector<std::size_t> stratified_features_;
  std::vector<ColumnBlock> stratified_blocks_;
  std::map<StratumKey, QuantileTree> strata_;
};

void save_forest(const std::filesystem::path& path, const QuantileForest& forest, const std::string& config_hash = {});
QuantileForest load_forest(const std::filesystem::path& path, std::string* config_hash = nullptr);

struct LeafCoverage {
  StratumKey key;
  int leaf = -1;
  double quantile = kInf;
  std::size_t accepted = 0;
  std::size_t covered = 0;
  double coverage() const { return accepted ? static_cast<double>(covered) / static_cast<double>(accepted) : 0.0; }
};

/// Coverage of accepted test points per leaf; leaves with no accepted point are omitted.
std::vector<LeafCoverage> group_coverage(const QuantileForest& forest, const Classifier& model,
                                         const Eigen::MatrixXd& points, const std::vector<int>& labels);

}  // namespace confex
