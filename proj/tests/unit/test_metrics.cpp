#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "confex/error.hpp"
#include "confex/metrics.hpp"
#include "fixtures.hpp"

using namespace confex;

namespace {

Eigen::MatrixXd wave_points() {
  Eigen::MatrixXd x(30, 2);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = 0.5 + 0.5 * std::sin(1.3 * i);
    x(i, 1) = 0.5 + 0.5 * std::cos(0.7 * i);
  }
  return x;
}

// O(n^2) local outlier factor from the textbook definitions.
double brute_lof(const Eigen::MatrixXd& ref, const Eigen::VectorXd& q, int k) {
  const int n = static_cast<int>(ref.rows());
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) d(i, j) = (ref.row(i) - ref.row(j)).norm();
  }
  auto knn = [&](const std::vector<double>& dist, int skip) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j) {
      if (j != skip) idx.push_back(j);
    }
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };
  std::vector<double> kdist(static_cast<std::size_t>(n)), lrd(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    for (int j = 0; j < n; ++j) row.push_back(d(i, j));
    nb[static_cast<std::size_t>(i)] = knn(row, i);
    kdist[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(nb[static_cast<std::size_t>(i)].back())];
  }
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int o : nb[static_cast<std::size_t>(i)]) s += std::max(kdist[static_cast<std::size_t>(o)], d(i, o));
    lrd[static_cast<std::size_t>(i)] = 1.0 / (s / k + 1e-10);
  }
  std::vector<double> dq;
  for (int j = 0; j < n; ++j) dq.push_back((ref.row(j).transpose() - q).norm());
  const auto qn = knn(dq, -1);
  double s = 0.0, l = 0.0;
  for (int o : qn) {
    s += std::max(kdist[static_cast<std::size_t>(o)], dq[static_cast<std::size_t>(o)]);
    l += lrd[static_cast<std::size_t>(o)];
  }
  return (l / k) * (s / k + 1e-10);
}

double hp_radius(double b, int d) {
  using big = boost::multiprecision::cpp_bin_float_50;
  const big pi = boost::math::constants::pi<big>();
  const big unit = boost::multiprecision::pow(pi, big(d) / 2) / boost::math::tgamma(big(d) / 2 + 1);
  return static_cast<double>(boost::multiprecision::pow(big(b) / unit, big(1) / d));
}

}  // namespace

TEST(Metrics, LofMatchesReferenceValues) {
  // Values from an independent novelty-mode implementation (k = 5).
  const LofModel m = LofModel::fit(wave_points(), 5);
  const std::vector<std::pair<Eigen::Vector2d, double>> cases{
      {{0.5, 0.5}, 1.0374309155637569},
      {{0.1, 0.9}, 0.97300230662724019},
      {{2.0, 2.0}, 5.7186818564584136},
      {{0.77, 0.31}, 1.007031864455052},
  };
  for (const auto& [q, v] : cases) EXPECT_NEAR(m.ratio(q), v, 1e-9);
}

TEST(Metrics, LofMatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd ref(30, 3);
    for (Eigen::Index i = 0; i < ref.size(); ++i) ref.data()[i] = u(rng);
    const int k = 2 + t % 8;
    const LofModel m = LofModel::fit(ref, k);
    for (int q = 0; q < 10; ++q) {
      const Eigen::Vector3d x(1.4 * u(rng) - 0.2, 1.4 * u(rng) - 0.2, 1.4 * u(rng) - 0.2);
      EXPECT_NEAR(m.ratio(x), brute_lof(ref, x, k), 1e-9);
    }
  }
}

TEST(Metrics, LofLabels) {
  const Eigen::MatrixXd ref = wave_points();
  const LofModel m = LofModel::fit(ref, 5);
  EXPECT_EQ(lof_label(m.ratio(ref.row(3).transpose())), 1);
  EXPECT_EQ(lof_label(m.ratio(Eigen::Vector2d(5.0, 5.0))), -1);
  EXPECT_THROW(LofModel::fit(ref.topRows(5), 5), MetricError);

  Dataset d;
  d.schema = fixtures::schema_2d();
  d.rows = ref;
  d.labels.assign(30, 1);
  d.labels[0] = 0;
  EXPECT_THROW(lof_plausibility({Eigen::Vector2d(0.5, 0.5)}, {0}, d, 5), MetricError);
  EXPECT_DOUBLE_EQ(lof_plausibility({ref.row(3).transpose(), Eigen::Vector2d(5, 5)}, {1, 1}, d, 5), 0.0);
}

TEST(Metrics, ImplausibilityExamples) {
  Eigen::MatrixXd line(10, 1);
  for (int i = 0; i < 10; ++i) line(i, 0) = i;
  EXPECT_DOUBLE_EQ(implausibility(Eigen::VectorXd::Constant(1, 0.0), line), 0.0);
  EXPECT_DOUBLE_EQ(implausibility(Eigen::VectorXd::Constant(1, 4.0), line), 0.0);
  EXPECT_DOUBLE_EQ(implausibility(Eigen::VectorXd::Constant(1, -1.0), line), 1.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + static_cast<int>(u(rng) * 29);
    Eigen::MatrixXd pts(n, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = u(rng);
    const Eigen::Vector2d x(u(rng), u(rng));
    std::vector<double> d;
    for (int i = 0; i < n; ++i) d.push_back(std::abs(pts(i, 0) - x[0]) + std::abs(pts(i, 1) - x[1]));
    std::sort(d.begin(), d.end());
    const int m = static_cast<int>(std::ceil(n / 10.0));
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += d[static_cast<std::size_t>(i)];
    EXPECT_NEAR(implausibility(x, pts), s / m, 1e-12);
  }
}

TEST(Metrics, BallRadius) {
  EXPECT_NEAR(ball_radius(0.001, 2), std::sqrt(0.001 / std::numbers::pi), 1e-15);
  EXPECT_NEAR(ball_radius(0.1, 1), 0.05, 1e-15);
  for (int d = 1; d <= 12; ++d) EXPECT_NEAR(ball_radius(0.001, d), hp_radius(0.001, d), 1e-12) << d;
  EXPECT_THROW(ball_radius(0.001, 0), MetricError);
  EXPECT_EQ(noncategorical_dims(fixtures::mixed_schema()), 3);
}

TEST(Metrics, BallSamplesStayInBallAndDomain) {
  const FeatureSchema s = fixtures::mixed_schema();
  std::mt19937_64 rng(7);
  Eigen::VectorXd c(6);
  c << 0.5, 0.5, 0, 0, 1, 0.5;
  double far = 0.0;
  for (int t = 0; t < 2000; ++t) {
    const Eigen::VectorXd x = sample_ball(c, 0.2, s, rng);
    EXPECT_EQ(x.segment(2, 3), c.segment(2, 3));
    const double lv = x[1] * 2.0;
    EXPECT_NEAR(lv, std::round(lv), 1e-12);
    far = std::max(far, std::hypot(x[0] - c[0], x[5] - c[5]));
  }
  EXPECT_LE(far, 0.2 + 1e-12);
  EXPECT_GT(far, 0.15);
  EXPECT_NE(item_seed(1, 2), item_seed(1, 3));
  EXPECT_EQ(item_seed(1, 2), item_seed(1, 2));
}

TEST(Metrics, SensitivityCases) {
  const FeatureSchema s = fixtures::schema_2d();
  const std::vector<Eigen::VectorXd> facts{Eigen::Vector2d(0.2, 0.2), Eigen::Vector2d(0.6, 0.4)};
  const auto constant = sensitivity([](const Eigen::VectorXd&) { return std::optional<Eigen::VectorXd>(Eigen::Vector2d(0.9, 0.9)); },
                                    facts, s, 0.001, 4, 1);
  EXPECT_EQ(constant.pairs, 8u);
  EXPECT_DOUBLE_EQ(constant.mean, 0.0);
  const auto identity = sensitivity([](const Eigen::VectorXd& x) { return std::optional<Eigen::VectorXd>(x); }, facts, s);
  EXPECT_EQ(identity.pairs, 0u);
  EXPECT_EQ(identity.degenerate, 8u);

  // Hand arithmetic: two factuals, two neighbours each.
  std::vector<SensitivitySample> samples(2);
  samples[0].factual = Eigen::Vector2d(0, 0);
  samples[0].cfx = Eigen::Vector2d(3, 4);  // base 5
  samples[0].neighbour_cfx = {Eigen::Vector2d(3, 4.5), Eigen::Vector2d(3, 3)};  // 0.5 and 1 -> 0.1, 0.2
  samples[1].factual = Eigen::Vector2d(1, 1);
  samples[1].cfx = Eigen::Vector2d(1, 3);  // base 2
  samples[1].neighbour_cfx = {Eigen::Vector2d(2, 3), std::nullopt};  // 1 -> 0.5; one failure
  const auto rep = sensitivity_from_samples(samples);
  EXPECT_EQ(rep.pairs, 3u);
  EXPECT_EQ(rep.failures, 1u);
  EXPECT_NEAR(rep.mean, (0.1 + 0.2 + 0.5) / 3.0, 1e-15);

  // Direct recomputation with the same neighbour draws.
  auto gen = [](const Eigen::VectorXd& x) { return std::optional<Eigen::VectorXd>(Eigen::Vector2d(x[0] * x[0] + 0.5, 0.9)); };
  const auto auto_rep = sensitivity(gen, facts, s, 0.001, 4, 9);
  const double r = ball_radius(0.001, 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    std::mt19937_64 rng(item_seed(9, i));
    const Eigen::VectorXd xc = *gen(facts[i]);
    for (int k = 0; k < 4; ++k) {
      const Eigen::VectorXd nb = sample_ball(facts[i], r, s, rng);
      sum += (*gen(nb) - xc).norm() / (xc - facts[i]).norm();
    }
  }
  EXPECT_NEAR(auto_rep.mean, sum / 8.0, 1e-12);
}

TEST(Metrics, StabilityCases) {
  EXPECT_DOUBLE_EQ(stability_from_probabilities({0.7, 0.7, 0.7}), 0.7);
  EXPECT_DOUBLE_EQ(stability_from_probabilities({1.0, 0.0}), 0.0);
  const Classifier& m = fixtures::synthetic_mlp(0);
  const FeatureSchema s = fixtures::schema_2d();
  const Eigen::Vector2d x(0.3, 0.62);
  const double got = stability(m, x, 1, s, 0.001, 100, 42);
  std::mt19937_64 rng(42);
  const double r = ball_radius(0.001, 2);
  std::vector<double> p;
  for (int k = 0; k < 100; ++k) p.push_back(m.probabilities(sample_ball(x, r, s, rng))[1]);
  double mean = 0.0;
  for (double v : p) mean += v / 100.0;
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean) / 100.0;
  EXPECT_NEAR(got, mean - std::sqrt(var), 1e-9);
}

TEST(Metrics, CoverageGapsHandCase) {
  // Identity logits: s(x, 0) = x1 - x0, s(x, 1) = x0 - x1.
  const Classifier m(MlpModel({DenseLayer{Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()}}));
  Eigen::MatrixXd pts(4, 2);
  pts << 1.0, 0.0,  // region at q=0.5: {0}
      0.0, 1.0,     // {1}
      0.4, 0.6,     // {0,1}
      0.9, 0.0;     // {0}
  const std::vector<int> labels{0, 0, 1, 1};  // covered: yes, no, yes, no
  const auto g = coverage_gaps(m, [](const Eigen::VectorXd&) { return 0.5; }, pts, labels, 0.1,
                               {{Eigen::Vector2d(0.1, 0.9), 1}, {Eigen::Vector2d(0.8, 0.1), 0}}, nullptr, 1, 0);
  EXPECT_NEAR(g.marginal, 40.0, 1e-12);
  EXPECT_NEAR(g.class_conditional, 40.0, 1e-12);  // both classes at 50 %
  EXPECT_NEAR(g.binned, 40.0, 1e-12);             // one bin
  ASSERT_TRUE(g.simulated.has_value());
  EXPECT_EQ(g.simulated_distinct, 2u);
  EXPECT_EQ(g.simulated_points, 2u);               // rows 1 and 3 (the closer {0} row)
  EXPECT_NEAR(*g.simulated, 90.0, 1e-12);          // neither covered
  const auto full = coverage_gaps(m, [](const Eigen::VectorXd&) { return kInf; }, pts, labels, 0.1, {});
  EXPECT_NEAR(full.marginal, -10.0, 1e-12);
  EXPECT_FALSE(full.simulated.has_value());
}

TEST(Metrics, SummaryAndReportFile) {
  const Summary s = summarize({1.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.spread, 1.0);
  EXPECT_EQ(summarize({}).count, 0u);
  MetricReport r;
  r.method = "tree";
  r.attempted = 3;
  const auto p = std::filesystem::temp_directory_path() / "confex_test_metrics.csv";
  write_metric_reports(p, {r}, "hash1");
  std::ifstream in(p);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.rfind("config_hash,method", 0), 0u);
  EXPECT_EQ(row.rfind("hash1,tree,", 0), 0u);
}
