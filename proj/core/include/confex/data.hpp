#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace confex {

enum class FeatureKind { Numeric, Ordinal, Categorical };

/// One column of the raw table. `levels` holds the ordered levels of an ordinal
/// feature or the category names of a categorical one; it is empty for numerics.
struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::vector<std::string> levels;

  static FeatureSpec numeric(std::string name);
  static FeatureSpec ordinal(std::string name, std::vector<std::string> levels);
  static FeatureSpec categorical(std::string name, std::vector<std::string> categories);

  std::size_t cardinality() const { return levels.size(); }
};

/// Encoded columns occupied by one feature: numerics and ordinals take one
/// column, categoricals take a one-hot block.
struct ColumnBlock {
  std::size_t feature = 0;
  FeatureKind kind = FeatureKind::Numeric;
  std::size_t first = 0;
  std::size_t width = 1;
};

class FeatureLayout {
 public:
  FeatureLayout() = default;
  explicit FeatureLayout(const std::vector<FeatureSpec>& features);

  const std::vector<ColumnBlock>& blocks() const { return blocks_; }
  const ColumnBlock& block(std::size_t feature) const { return blocks_.at(feature); }
  std::size_t width() const { return width_; }

  /// Columns of numeric and ordinal features, in feature order.
  const std::vector<std::size_t>& continuous_columns() const { return continuous_; }
  /// Feature indices of categorical features.
  const std::vector<std::size_t>& categorical_features() const { return categorical_; }

 private:
  std::vector<ColumnBlock> blocks_;
  std::vector<std::size_t> continuous_;
  std::vector<std::size_t> categorical_;
  std::size_t width_ = 0;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  /// Throws confex::Error when names repeat, an ordinal has no levels, a
  /// categorical has fewer than two categories or the positive class is invalid.
  FeatureSchema(std::vector<FeatureSpec> features, std::string target_name,
                std::vector<std::string> class_names, int positive_class);

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& feature(std::size_t i) const { return features_.at(i); }
  std::size_t feature_count() const { return features_.size(); }
  const std::string& target_name() const { return target_name_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  int class_count() const { return static_cast<int>(class_names_.size()); }
  int positive_class() const { return positive_class_; }
  const FeatureLayout& layout() const { return layout_; }
  std::size_t encoded_width() const { return layout_.width(); }
  std::optional<std::size_t> find(const std::string& name) const;

  bool operator==(const FeatureSchema& other) const;

 private:
  std::vector<FeatureSpec> features_;
  std::string target_name_;
  std::vector<std::string> class_names_;
  int positive_class_ = 1;
  FeatureLayout layout_;
};

/// Per-column min/max fitted on training rows. Ordinal columns are mapped by
/// level / (L - 1) regardless of the fitted range; categorical columns pass through.
class Scaler {
 public:
  Scaler() = default;
  static Scaler fit(const FeatureSchema& schema, const Eigen::MatrixXd& rows);

  /// Values outside the fitted range are clipped into [0, 1].
  Eigen::VectorXd transform(const Eigen::VectorXd& row) const;
  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const;
  Eigen::VectorXd inverse_transform(const Eigen::VectorXd& row) const;

  const std::vector<double>& min() const { return min_; }
  const std::vector<double>& max() const { return max_; }

  static Scaler from_parts(std::vector<double> min, std::vector<double> max);

 private:
  std::vector<double> min_;
  std::vector<double> max_;
};

struct Dataset {
  FeatureSchema schema;
  Eigen::MatrixXd rows;  // one sample per row, encoded columns
  std::vector<int> labels;
  std::optional<Scaler> scaler;  // set once the rows have been normalized

  std::size_t size() const { return labels.size(); }
  Eigen::VectorXd row(std::size_t i) const { return rows.row(static_cast<Eigen::Index>(i)).transpose(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
  /// Rows whose label equals `cls`.
  Eigen::MatrixXd rows_of_class(int cls) const;
};

/// Encodes raw cell strings (one per schema feature) into a row.
Eigen::VectorXd encode_cells(const FeatureSchema& schema, const std::vector<std::string>& cells);
/// Inverse of encode_cells on an unnormalized row.
std::vector<std::string> decode_row(const FeatureSchema& schema, const Eigen::VectorXd& row);

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
void write_csv(const std::filesystem::path& path, const Dataset& ds);

struct SplitRatios {
  double train = 0.6;
  double cal = 0.2;
  double test = 0.2;
};

struct Split {
  Dataset train;
  Dataset cal;
  Dataset test;
};

/// Shuffles then cuts: floor(n * train), floor(n * cal), remainder to test.
Split split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

/// Fits a Scaler on the training part and applies it to all three parts.
Split normalize(const Split& raw);

/// Two-class toy data on [0,1]^2: class 0 on an annulus around the centre,
/// class 1 in two Gaussian blobs in opposite corners, 5% label noise.
Dataset synthetic_2d(std::size_t n, std::uint64_t seed);

enum class Norm { L1, L2, LInf };

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm);

/// Exact lower median of all pairwise distances between rows.
double median_pairwise_distance(const Eigen::MatrixXd& rows, Norm norm);

}  // namespace confex
