#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "confex/conformal.hpp"
#include "confex/error.hpp"
#include "fixtures.hpp"

using namespace confex;

namespace {

// Identity network: logits equal the input.
Classifier identity2() {
  return Classifier(MlpModel({DenseLayer{Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()}}));
}

// Smallest s with (sum of weights of scores <= s) >= (1 - alpha) * total, the
// +inf atom counted in the total. Enumeration over candidate thresholds.
double weighted_cdf_oracle(const std::vector<double>& s, const std::vector<double>& w, double atom, double alpha) {
  double total = atom;
  for (double v : w) total += v;
  std::vector<double> cand = s;
  std::sort(cand.begin(), cand.end());
  for (double c : cand) {
    double mass = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) mass += s[i] <= c ? w[i] : 0.0;
    if (mass >= (1.0 - alpha) * total - 1e-12) return c;
  }
  return kInf;
}

CalibrationSet random_cal(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CalibrationSet cal;
  cal.points.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < cal.points.size(); ++i) cal.points.data()[i] = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    cal.labels.push_back(static_cast<int>(i % 2));
    cal.scores.push_back(2.0 * u(rng) - 1.0);
  }
  return cal;
}

}  // namespace

TEST(Conformal, ScoreExamples) {
  EXPECT_DOUBLE_EQ(score_from_class_scores(Eigen::Vector2d(2.0, 0.5), 0), -1.5);
  EXPECT_DOUBLE_EQ(score_from_class_scores(Eigen::Vector2d(2.0, 0.5), 1), 1.5);
  EXPECT_DOUBLE_EQ(score_from_class_scores(Eigen::Vector3d(1.0, 3.0, 2.0), 0), 2.0);
  // Log-ratio identity under softmax.
  const Eigen::VectorXd p = softmax(Eigen::Vector2d(2.0, 0.5));
  EXPECT_NEAR(std::log(p[1] / p[0]), -1.5, 1e-12);
}

TEST(Conformal, QuantileExamples) {
  std::vector<double> s;
  for (int i = 1; i <= 10; ++i) s.push_back(0.1 * i);
  EXPECT_EQ(conformal_rank(10, 0.1), 10u);
  EXPECT_DOUBLE_EQ(cp_quantile(s, 0.1), s[9]);
  EXPECT_EQ(conformal_rank(5, 0.01), 6u);
  EXPECT_TRUE(std::isinf(cp_quantile({1, 2, 3, 4, 5}, 0.01)));
  EXPECT_DOUBLE_EQ(cp_quantile({5.0}, 0.5), 5.0);
  EXPECT_THROW(cp_quantile({1.0}, 0.0), Error);
  EXPECT_THROW(cp_quantile({1.0}, 1.0), Error);
  EXPECT_THROW(cp_quantile({}, 0.1), Error);
}

TEST(Conformal, QuantileMatchesWeightedCdf) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(u(rng) * 40);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& v : s) v = u(rng);
    const double alpha = 0.01 + 0.5 * u(rng);
    const double oracle = weighted_cdf_oracle(s, std::vector<double>(s.size(), 1.0), 1.0, alpha);
    EXPECT_EQ(cp_quantile(s, alpha), oracle);
    EXPECT_EQ(weighted_quantile_with_atom(s, std::vector<double>(s.size(), 1.0), 1.0, alpha), oracle);
  }
}

TEST(Conformal, KernelExamples) {
  const KernelSpec spec = KernelSpec::dense(1, 0.3);
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 0.0);
  EXPECT_TRUE(kernel(a, a, spec));
  EXPECT_FALSE(kernel(a, Eigen::VectorXd::Constant(1, 0.4), spec));

  const FeatureSchema schema = fixtures::mixed_schema();
  const KernelSpec mixed = KernelSpec::for_schema(schema, 0.5);
  Eigen::VectorXd x(6), y(6);
  x << 0.1, 0.5, 1, 0, 0, 0.2;
  y << 0.15, 0.5, 0, 1, 0, 0.2;
  EXPECT_FALSE(kernel(x, y, mixed));  // numeric close, category differs
  y.segment(2, 3) << 1, 0, 0;
  EXPECT_TRUE(kernel(x, y, mixed));
}

TEST(Conformal, LcpExamples) {
  CalibrationSet cal = random_cal(30, 2, 3);
  const Eigen::Vector2d far(5.0, 5.0);
  EXPECT_TRUE(std::isinf(lcp_quantile(cal, far, KernelSpec::dense(2, 0.1), 0.1)));
  EXPECT_EQ(lcp_quantile(cal, Eigen::Vector2d(0.5, 0.5), KernelSpec::dense(2, 100.0), 0.1), cp_quantile(cal.scores, 0.1));

  // Exactly nine local points at alpha = 0.1: the largest local score.
  CalibrationSet nine;
  nine.points = Eigen::MatrixXd::Zero(12, 1);
  for (int i = 0; i < 12; ++i) {
    nine.points(i, 0) = i < 9 ? 0.01 * i : 0.9;
    nine.scores.push_back(i < 9 ? 0.1 * i : 5.0);
    nine.labels.push_back(0);
  }
  EXPECT_DOUBLE_EQ(lcp_quantile(nine, Eigen::VectorXd::Constant(1, 0.0), KernelSpec::dense(1, 0.2), 0.1), 0.8);
}

TEST(Conformal, LcpMatchesWeightedOracle) {
  const CalibrationSet cal = random_cal(60, 2, 8);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const KernelSpec spec = KernelSpec::dense(2, 0.1 + 0.5 * u(rng));
    const double alpha = 0.02 + 0.3 * u(rng);
    std::vector<double> w;
    for (std::size_t i = 0; i < cal.size(); ++i) {
      w.push_back((cal.point(i) - x).cwiseAbs().sum() <= spec.bandwidth ? 1.0 : 0.0);
    }
    const double oracle = weighted_cdf_oracle(cal.scores, w, 1.0, alpha);
    EXPECT_EQ(lcp_quantile(cal, x, spec, alpha), oracle);
    EXPECT_EQ(lcp_quantile_weighted(cal, x, spec, alpha), oracle);
  }
}

TEST(Conformal, PredictionRegion) {
  const Eigen::Vector2d z(2.0, 0.5);
  EXPECT_EQ(prediction_region_from_scores(z, 0.0), std::vector<int>{0});
  EXPECT_EQ(prediction_region_from_scores(z, kInf), (std::vector<int>{0, 1}));
  EXPECT_TRUE(prediction_region_from_scores(z, -1.5 - 1e-9).empty());
}

TEST(Conformal, SingletonImpliesPrediction) {
  const Classifier c(fixtures::random_mlp({2, 8, 3}, 17));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const auto r = prediction_region(c, x, 4.0 * u(rng) - 2.0);
    if (r.size() == 1) {
      EXPECT_EQ(r[0], c.predict(x));
    }
  }
}

TEST(Conformal, EmpiricalCoverageHandCase) {
  const Classifier c = identity2();
  Eigen::MatrixXd pts(4, 2);
  pts << 2.0, 0.5,   // scores: y0 -1.5, y1 1.5
      0.0, 1.0,      // y0 1, y1 -1
      1.0, 1.2,      // y0 0.2, y1 -0.2
      3.0, 0.0;      // y0 -3, y1 3
  const std::vector<int> labels{1, 0, 0, 0};
  // q = 0.5: covered iff score(true) <= 0.5 -> {no, no, yes, yes}.
  EXPECT_DOUBLE_EQ(empirical_coverage(c, pts, labels, [](const Eigen::VectorXd&) { return 0.5; }), 0.5);
  EXPECT_DOUBLE_EQ(empirical_coverage(c, pts, labels, [](const Eigen::VectorXd&) { return kInf; }), 1.0);
}

TEST(Conformal, SyntheticCoverage) {
  const auto& s = fixtures::synthetic_split(2000, 0);
  const Classifier& m = fixtures::synthetic_mlp(0);
  const CalibrationSet cal = calibrate(m, s.cal, "m");
  const double q = cp_quantile(cal.scores, 0.1);
  const double cov = empirical_coverage(m, s.test.rows, s.test.labels, [q](const Eigen::VectorXd&) { return q; });
  EXPECT_GE(cov, 0.9 - 0.04);
  EXPECT_TRUE(cal.consistent_with(m));
}

TEST(Conformal, CalibrationRoundTrip) {
  const auto& s = fixtures::synthetic_split(2000, 0);
  CalibrationSet cal = calibrate(fixtures::synthetic_mlp(0), s.cal, "model-x");
  cal.alpha = 0.05;
  const auto p = std::filesystem::temp_directory_path() / "confex_test_cal.json";
  save_calibration(p, cal, "h1");
  std::string hash;
  const CalibrationSet back = load_calibration(p, &hash);
  EXPECT_EQ(hash, "h1");
  EXPECT_EQ(back.points, cal.points);
  EXPECT_EQ(back.scores, cal.scores);
  EXPECT_EQ(back.labels, cal.labels);
  EXPECT_EQ(back.model_id, "model-x");
  EXPECT_EQ(back.alpha, cal.alpha);
}
