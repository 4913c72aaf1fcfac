#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "confex/data.hpp"
#include "confex/error.hpp"
#include "fixtures.hpp"

using namespace confex;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  const auto p = fs::temp_directory_path() / ("confex_test_" + name);
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(Data, ThreeRowNumericFile) {
  const auto p = temp_file("age.csv", "age,y\n20,0\n30,1\n40,0\n");
  const FeatureSchema schema({FeatureSpec::numeric("age")}, "y", {"0", "1"}, 1);
  const Dataset ds = load_csv(p, schema);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.rows.cols(), 1);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_DOUBLE_EQ(ds.rows(1, 0), 30.0);
}

TEST(Data, OrdinalEncodingAndScaling) {
  const FeatureSchema schema({FeatureSpec::ordinal("lvl", {"low", "mid", "high"})}, "y", {"0", "1"}, 1);
  const Eigen::VectorXd raw = encode_cells(schema, {"mid"});
  EXPECT_DOUBLE_EQ(raw[0], 1.0);
  Eigen::MatrixXd rows(2, 1);
  rows << 1.0, 1.0;  // fitted range is ignored for ordinals
  const Scaler sc = Scaler::fit(schema, rows);
  EXPECT_DOUBLE_EQ(sc.transform(raw)[0], 0.5);
}

TEST(Data, UnknownCategoryNamesTheCell) {
  const auto p = temp_file("cat.csv", "colour,y\nred,0\nunknown,1\n");
  const FeatureSchema schema({FeatureSpec::categorical("colour", {"red", "blue"})}, "y", {"0", "1"}, 1);
  try {
    (void)load_csv(p, schema);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown"), std::string::npos);
  }
}

TEST(Data, MixedRoundTrip) {
  const FeatureSchema schema = fixtures::mixed_schema();
  const std::vector<std::string> cells{"3.25", "high", "green", "-1.5"};
  const Eigen::VectorXd row = encode_cells(schema, cells);
  EXPECT_EQ(row.size(), 6);
  EXPECT_DOUBLE_EQ(row[3], 1.0);  // one-hot "green"
  const auto back = decode_row(schema, row);
  EXPECT_EQ(back[1], "high");
  EXPECT_EQ(back[2], "green");
  EXPECT_DOUBLE_EQ(std::stod(back[0]), 3.25);
  EXPECT_DOUBLE_EQ(std::stod(back[3]), -1.5);
}

TEST(Data, CsvWriteReadRoundTrip) {
  const Dataset ds = synthetic_2d(50, 4);
  const auto p = fs::temp_directory_path() / "confex_test_roundtrip.csv";
  write_csv(p, ds);
  const Dataset back = load_csv(p, ds.schema);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ((back.rows - ds.rows).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Data, ScalerIdempotentAndClipped) {
  const Dataset ds = fixtures::random_dataset(fixtures::mixed_schema(), 40, 2);
  Eigen::MatrixXd raw = ds.rows;
  raw.col(0) *= 10.0;
  raw.col(1) *= 2.0;  // ordinal levels as indices
  const Scaler sc = Scaler::fit(ds.schema, raw);
  const Eigen::MatrixXd once = sc.transform(raw);
  EXPECT_LE(once.maxCoeff(), 1.0);
  EXPECT_GE(once.minCoeff(), 0.0);
  Eigen::VectorXd outside = raw.row(0).transpose();
  outside[0] = 1e6;
  EXPECT_DOUBLE_EQ(sc.transform(outside)[0], 1.0);
  EXPECT_EQ(once.col(1), ds.rows.col(1));
  // Refitting numeric columns on normalized data changes nothing.
  const Scaler sc2 = Scaler::fit(ds.schema, once);
  const Eigen::MatrixXd twice = sc2.transform(once);
  for (int c : {0, 2, 3, 4, 5}) EXPECT_LT((twice.col(c) - once.col(c)).cwiseAbs().maxCoeff(), 1e-12) << c;
}

TEST(Data, SplitSizesFloorThenRemainder) {
  const Dataset ten = synthetic_2d(10, 1);
  const Split s = split(ten, {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.cal.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  const Split big = split(synthetic_2d(1000, 1), {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(big.train.size(), 600u);
  EXPECT_EQ(big.cal.size(), 200u);
  EXPECT_EQ(big.test.size(), 200u);
}

TEST(Data, SplitDeterministicDisjointCovering) {
  Dataset ds = synthetic_2d(200, 5);
  // Tag each row with a unique value in column 0 so membership is traceable.
  for (Eigen::Index i = 0; i < ds.rows.rows(); ++i) ds.rows(i, 0) = static_cast<double>(i);
  const Split a = split(ds, {0.5, 0.25, 0.25}, 11);
  const Split b = split(ds, {0.5, 0.25, 0.25}, 11);
  EXPECT_EQ(a.train.rows, b.train.rows);
  EXPECT_EQ(a.test.rows, b.test.rows);
  std::multiset<double> seen;
  for (const Dataset* d : {&a.train, &a.cal, &a.test}) {
    for (Eigen::Index i = 0; i < d->rows.rows(); ++i) seen.insert(d->rows(i, 0));
  }
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_EQ(std::set<double>(seen.begin(), seen.end()).size(), 200u);
  const Split c = split(ds, {0.5, 0.25, 0.25}, 12);
  EXPECT_NE(a.train.rows, c.train.rows);
}

TEST(Data, SplitRejectsBadInput) {
  EXPECT_THROW(split(Dataset{}, {0.6, 0.2, 0.2}, 1), Error);
  EXPECT_THROW(split(synthetic_2d(10, 1), {0.6, 0.2, 0.3}, 1), Error);
}

TEST(Data, SyntheticRecipe) {
  const Dataset ds = synthetic_2d(400, 1);
  EXPECT_EQ(ds.size(), 400u);
  EXPECT_EQ(std::set<int>(ds.labels.begin(), ds.labels.end()).size(), 2u);
  EXPECT_GE(ds.rows.minCoeff(), 0.0);
  EXPECT_LE(ds.rows.maxCoeff(), 1.0);
  EXPECT_NE(synthetic_2d(400, 2).rows, ds.rows);

  const Dataset big = synthetic_2d(2000, 3);
  const double pos = std::count(big.labels.begin(), big.labels.end(), 1) / 2000.0;
  EXPECT_GE(pos, 0.3);
  EXPECT_LE(pos, 0.7);
  // Centre of the square belongs to neither class region: few points there.
  int centre = 0;
  for (Eigen::Index i = 0; i < big.rows.rows(); ++i) {
    centre += (big.rows.row(i).transpose() - Eigen::Vector2d(0.5, 0.5)).norm() < 0.1;
  }
  EXPECT_LT(centre, 20);
}

TEST(Data, MedianPairwiseDistance) {
  Eigen::MatrixXd two(2, 1);
  two << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(two, Norm::L1), 1.0);
  Eigen::MatrixXd three(3, 1);
  three << 0.0, 0.5, 1.0;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(three, Norm::L1), 0.5);
  EXPECT_THROW(median_pairwise_distance(Eigen::MatrixXd(1, 1), Norm::L1), Error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd rows(100, 3);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = u(rng);
  for (Norm norm : {Norm::L1, Norm::L2}) {
    std::vector<double> d;
    for (int i = 0; i < 100; ++i) {
      for (int j = i + 1; j < 100; ++j) {
        const Eigen::VectorXd diff = rows.row(i) - rows.row(j);
        d.push_back(norm == Norm::L1 ? diff.cwiseAbs().sum() : diff.norm());
      }
    }
    std::sort(d.begin(), d.end());
    EXPECT_DOUBLE_EQ(median_pairwise_distance(rows, norm), d[(d.size() - 1) / 2]);
  }
}

TEST(Data, SchemaValidation) {
  EXPECT_THROW(FeatureSchema({FeatureSpec::numeric("a"), FeatureSpec::numeric("a")}, "y", {"0", "1"}, 1), Error);
  EXPECT_THROW(FeatureSchema({FeatureSpec::categorical("c", {"only"})}, "y", {"0", "1"}, 1), Error);
  EXPECT_THROW(FeatureSchema({FeatureSpec::numeric("a")}, "y", {"0", "1"}, 2), Error);
  const auto s = fixtures::mixed_schema();
  EXPECT_EQ(s.encoded_width(), 6u);
  EXPECT_EQ(s.layout().continuous_columns(), (std::vector<std::size_t>{0, 1, 5}));
}
