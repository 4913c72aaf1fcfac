#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "confex/cptree.hpp"
#include "fixtures.hpp"

using namespace confex;

namespace {

CalibrationSet cal_1d(const std::vector<double>& xs) {
  CalibrationSet cal;
  cal.points.resize(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cal.points(static_cast<Eigen::Index>(i), 0) = xs[i];
    cal.scores.push_back(0.1 * static_cast<double>(i));
    cal.labels.push_back(0);
  }
  return cal;
}

CalibrationSet random_cal(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CalibrationSet cal;
  cal.points.resize(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < cal.points.size(); ++i) cal.points.data()[i] = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    cal.scores.push_back(u(rng) - 0.5);
    cal.labels.push_back(0);
  }
  return cal;
}

std::vector<std::size_t> all(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Leaf whose split cell contains x, found by scanning every leaf.
int leaf_by_membership(const QuantileTree& t, const Eigen::VectorXd& x) {
  int found = -1;
  for (std::size_t l = 0; l < t.leaves().size(); ++l) {
    const auto& leaf = t.leaves()[l];
    bool in = true;
    for (std::size_t k = 0; k < t.columns().size(); ++k) {
      const double v = x[static_cast<Eigen::Index>(t.columns()[k])];
      in = in && v >= leaf.cell_lo[static_cast<Eigen::Index>(k)] && v < leaf.cell_hi[static_cast<Eigen::Index>(k)];
    }
    if (in) {
      EXPECT_EQ(found, -1) << "cells overlap";
      found = static_cast<int>(l);
    }
  }
  return found;
}

}  // namespace

TEST(CpTree, HandTrace1D) {
  const CalibrationSet cal = cal_1d({0.0, 0.1, 0.9, 1.0});
  const QuantileTree t = QuantileTree::build(cal, all(4), {0}, 0.3, 0.1);
  ASSERT_EQ(t.leaves().size(), 2u);
  EXPECT_EQ(t.nodes()[0].column, 0);
  EXPECT_DOUBLE_EQ(t.nodes()[0].threshold, 0.5);
  for (const auto& leaf : t.leaves()) {
    EXPECT_EQ(leaf.members.size(), 2u);
    EXPECT_NEAR(leaf.box_hi[0] - leaf.box_lo[0], 0.1, 1e-12);
  }
}

TEST(CpTree, IdenticalPointsSingleLeaf) {
  const CalibrationSet cal = cal_1d({0.4, 0.4, 0.4});
  const QuantileTree t = QuantileTree::build(cal, all(3), {0}, 0.1, 0.5);
  ASSERT_EQ(t.leaves().size(), 1u);
  EXPECT_DOUBLE_EQ(t.leaves()[0].midpoint[0], 0.4);
}

TEST(CpTree, SmallLeafQuantileIsInfinite) {
  const CalibrationSet cal = cal_1d({0.1, 0.2, 0.3});
  const QuantileTree t = QuantileTree::build(cal, all(3), {0}, 0.5, 0.01);
  ASSERT_EQ(t.leaves().size(), 1u);
  EXPECT_TRUE(std::isinf(t.leaves()[0].quantile));
}

TEST(CpTree, StopRuleAndLocality) {
  const CalibrationSet cal = random_cal(400, 4);
  const double h = 0.15;
  const QuantileForest f = QuantileForest::build(cal, fixtures::schema_2d(), h, 0.1);
  const QuantileTree& t = f.strata().begin()->second;
  for (const auto& leaf : t.leaves()) {
    EXPECT_LT((leaf.box_hi - leaf.box_lo).maxCoeff(), h);
    for (auto a : leaf.members) {
      for (auto b : leaf.members) EXPECT_LT((cal.point(a) - cal.point(b)).cwiseAbs().maxCoeff(), h);
    }
  }
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.05, 1.05);
  for (int q = 0; q < 200; ++q) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const double v = f.query(x);
    const int leaf = leaf_by_membership(t, x);
    ASSERT_GE(leaf, 0);
    EXPECT_EQ(t.find_leaf(x), leaf);
    const auto& L = t.leaves()[static_cast<std::size_t>(leaf)];
    const bool accepted = (x - L.midpoint).cwiseAbs().maxCoeff() <= h / 2;
    EXPECT_EQ(v, accepted ? L.quantile : kInf);
    if (std::isfinite(v)) {
      for (auto m : L.members) EXPECT_LE((cal.point(m) - x).cwiseAbs().maxCoeff(), h);
    }
  }
}

TEST(CpTree, QueryExamples) {
  const CalibrationSet cal = random_cal(300, 6);
  const double h = 0.2;
  const QuantileForest f = QuantileForest::build(cal, fixtures::schema_2d(), h, 0.2);
  const auto& t = f.strata().begin()->second;
  for (const auto& leaf : t.leaves()) {
    EXPECT_EQ(f.query(leaf.midpoint), leaf.quantile);
  }
  // Shift a midpoint by 0.6 h along a column, staying inside the cell.
  int checked = 0;
  for (const auto& leaf : t.leaves()) {
    for (int c = 0; c < 2; ++c) {
      for (double sign : {-1.0, 1.0}) {
        Eigen::VectorXd x = leaf.midpoint;
        x[c] += sign * 0.6 * h;
        if (x[c] >= leaf.cell_lo[c] && x[c] < leaf.cell_hi[c]) {
          EXPECT_TRUE(std::isinf(f.query(x)));
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(CpTree, KernelEquivalence) {
  // The tree kernel selects exactly the leaf members when the query is accepted.
  const CalibrationSet cal = random_cal(120, 9);
  const double h = 0.25;
  const QuantileForest f = QuantileForest::build(cal, fixtures::schema_2d(), h, 0.2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int q = 0; q < 200; ++q) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const auto loc = f.locate(x);
    ASSERT_TRUE(loc.has_value());
    if (!loc->accepted) continue;
    const auto& leaf = loc->tree->leaves()[static_cast<std::size_t>(loc->leaf)];
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < cal.size(); ++i) {
      if (loc->tree->find_leaf(cal.point(i)) == loc->leaf) selected.push_back(i);
    }
    EXPECT_EQ(selected, leaf.members);
    EXPECT_EQ(f.query(x), cp_quantile(leaf.scores, 0.2));
  }
}

TEST(CpTree, StratifiedUnknownStratum) {
  const FeatureSchema schema = fixtures::mixed_schema();
  const Dataset ds = fixtures::random_dataset(schema, 300, 5);
  CalibrationSet cal;
  cal.points = ds.rows;
  cal.labels = ds.labels;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Drop every "blue" row so that stratum has no tree.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.rows(static_cast<Eigen::Index>(i), 4) < 0.5) keep.push_back(i);
  }
  const Dataset sub = ds.subset(keep);
  cal.points = sub.rows;
  cal.labels = sub.labels;
  cal.scores.clear();
  for (std::size_t i = 0; i < sub.size(); ++i) cal.scores.push_back(u(rng));
  const QuantileForest f = QuantileForest::build(cal, schema, 0.6, 0.2);
  EXPECT_EQ(f.strata().size(), 2u);
  Eigen::VectorXd blue(6);
  blue << 0.5, 0.5, 0, 0, 1, 0.5;
  EXPECT_TRUE(std::isinf(f.query(blue)));
  EXPECT_FALSE(f.locate(blue).has_value());
}

TEST(CpTree, GroupCoverage) {
  const auto& s = fixtures::synthetic_split(2000, 0);
  const Classifier& m = fixtures::synthetic_mlp(0);
  const CalibrationSet cal = calibrate(m, s.cal, "m");
  const QuantileForest f = QuantileForest::build(cal, s.cal.schema, 0.3, 0.1);
  const auto table = group_coverage(f, m, s.test.rows, s.test.labels);
  std::size_t total = 0;
  for (const auto& row : table) {
    EXPECT_GT(row.accepted, 0u);
    if (std::isinf(row.quantile)) {
      EXPECT_DOUBLE_EQ(row.coverage(), 1.0);
    }
    total += row.accepted;
  }
  EXPECT_LE(total, s.test.size());
}

TEST(CpTree, ForestRoundTrip) {
  const CalibrationSet cal = random_cal(200, 12);
  const QuantileForest f = QuantileForest::build(cal, fixtures::schema_2d(), 0.2, 0.1);
  const auto p = std::filesystem::temp_directory_path() / "confex_test_forest.json";
  save_forest(p, f, "hh");
  std::string hash;
  const QuantileForest back = load_forest(p, &hash);
  EXPECT_EQ(hash, "hh");
  EXPECT_TRUE(back == f);
}
