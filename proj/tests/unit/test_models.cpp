#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "confex/conformal.hpp"
#include "confex/error.hpp"
#include "confex/models.hpp"
#include "fixtures.hpp"

using namespace confex;

namespace {

// Straight-line re-evaluation with explicit loops.
Eigen::VectorXd oracle_logits(const MlpModel& m, const Eigen::VectorXd& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  const auto& layers = m.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weights;
    std::vector<double> out(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = layers[l].bias[i];
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * a[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = (l + 1 < layers.size()) ? std::max(0.0, s) : s;
    }
    a = out;
  }
  return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

double cross_entropy(const MlpModel& m, const Eigen::VectorXd& x, int y) {
  const Eigen::VectorXd z = m.forward_logits(x);
  const double mx = z.maxCoeff();
  return -(z[y] - mx - std::log((z.array() - mx).exp().sum()));
}

DecisionTree stump(double threshold, Eigen::Vector2d left, Eigen::Vector2d right) {
  DecisionTree t;
  t.feature = {0, -1, -1};
  t.threshold = {threshold, 0.0, 0.0};
  t.left = {1, -1, -1};
  t.right = {2, -1, -1};
  t.value = {Eigen::Vector2d(0.5, 0.5), left, right};
  return t;
}

}  // namespace

TEST(Models, AffineIdentity) {
  DenseLayer l{Eigen::MatrixXd(2, 1), Eigen::VectorXd::Zero(2)};
  l.weights << 1.0, -1.0;
  const MlpModel m({l});
  const Eigen::VectorXd z = m.forward_logits(Eigen::VectorXd::Constant(1, 0.3));
  EXPECT_DOUBLE_EQ(z[0], 0.3);
  EXPECT_DOUBLE_EQ(z[1], -0.3);
}

TEST(Models, DeadReluPassesOutputBias) {
  DenseLayer h{Eigen::MatrixXd::Constant(1, 1, -1.0), Eigen::VectorXd::Zero(1)};
  DenseLayer o{Eigen::MatrixXd::Constant(2, 1, 5.0), Eigen::Vector2d(0.25, -0.75)};
  const MlpModel m({h, o});
  const Eigen::VectorXd z = m.forward_logits(Eigen::VectorXd::Constant(1, 0.5));
  EXPECT_DOUBLE_EQ(z[0], 0.25);
  EXPECT_DOUBLE_EQ(z[1], -0.75);
}

TEST(Models, ForwardMatchesLoopOracle) {
  const MlpModel m = fixtures::random_mlp({2, 16, 2}, 42);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Vector2d x(u(rng), u(rng));
    EXPECT_LT((m.forward_logits(x) - oracle_logits(m, x)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Models, PredictTiesAndForestAggregation) {
  EXPECT_EQ(argmax(Eigen::Vector2d(2.0, 0.5)), 0);
  EXPECT_EQ(argmax(Eigen::Vector2d(1.0, 1.0)), 0);
  const TreeEnsemble ens({stump(2.0, {0.9, 0.1}, {0.0, 1.0}), stump(2.0, {0.4, 0.6}, {0.0, 1.0})}, 2, 1);
  const Classifier c(ens);
  const Eigen::VectorXd p = c.probabilities(Eigen::VectorXd::Constant(1, 0.5));
  EXPECT_NEAR(p[0], 0.65, 1e-15);
  EXPECT_NEAR(p[1], 0.35, 1e-15);
  EXPECT_EQ(c.predict(Eigen::VectorXd::Constant(1, 0.5)), 0);
}

TEST(Models, PredictIsArgminOfScore) {
  const MlpModel m = fixtures::random_mlp({3, 8, 3}, 9);
  const Classifier c(m);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector3d x(u(rng), u(rng), u(rng));
    const int y = c.predict(x);
    for (int k = 0; k < 3; ++k) EXPECT_LE(score(c, x, y), score(c, x, k));
    EXPECT_LE(score(c, x, y), 0.0);
  }
}

TEST(Models, PiecewiseLinearWithinPattern) {
  const MlpModel m = fixtures::random_mlp({2, 10, 2}, 5);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector2d a(u(rng), u(rng));
    const Eigen::Vector2d b = a + 1e-3 * Eigen::Vector2d(u(rng), u(rng));
    auto pattern = [&](const Eigen::VectorXd& x) { return (m.pre_activations(x)[0].array() > 0).eval(); };
    const Eigen::Vector2d mid = 0.5 * (a + b);
    if ((pattern(a) != pattern(b)).any() || (pattern(a) != pattern(mid)).any()) continue;
    ++checked;
    const Eigen::VectorXd interp = 0.5 * (m.forward_logits(a) + m.forward_logits(b));
    EXPECT_LT((m.forward_logits(mid) - interp).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_GT(checked, 150);
}

TEST(Models, GradientClosedFormLinear) {
  DenseLayer l{Eigen::MatrixXd(2, 3), Eigen::Vector2d(0.1, -0.2)};
  l.weights << 1.0, -2.0, 0.5, 0.3, 0.7, -1.1;
  const MlpModel m({l});
  const Eigen::Vector3d x(0.2, 0.4, 0.9);
  const Eigen::VectorXd p = softmax(m.forward_logits(x));
  for (int y = 0; y < 2; ++y) {
    Eigen::VectorXd resid = p;
    resid[y] -= 1.0;
    const Eigen::VectorXd expected = l.weights.transpose() * resid;
    EXPECT_LT((input_gradient(m, x, y) - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Models, GradientFiniteDifferences) {
  const MlpModel m = fixtures::random_mlp({4, 12, 12, 3}, 13);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd x(4);
    for (int j = 0; j < 4; ++j) x[j] = u(rng);
    const int y = t % 3;
    const Eigen::VectorXd g = input_gradient(m, x, y);
    Eigen::VectorXd fd(4);
    for (int j = 0; j < 4; ++j) {
      Eigen::VectorXd hi = x, lo = x;
      hi[j] += 1e-5;
      lo[j] -= 1e-5;
      fd[j] = (cross_entropy(m, hi, y) - cross_entropy(m, lo, y)) / 2e-5;
    }
    EXPECT_LT((g - fd).norm() / std::max(1e-8, fd.norm()), 1e-4);
  }
}

TEST(Models, ZeroWeightsZeroGradient) {
  const MlpModel m({DenseLayer{Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Zero(4)},
                    DenseLayer{Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Zero(2)}});
  EXPECT_EQ(input_gradient(m, Eigen::Vector2d(0.3, 0.6), 1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Models, TrainSeparableAndDeterministic) {
  Dataset ds;
  ds.schema = fixtures::schema_2d();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.05);
  ds.rows.resize(200, 2);
  ds.labels.resize(200);
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    ds.rows(i, 0) = (y ? 0.75 : 0.25) + g(rng);
    ds.rows(i, 1) = (y ? 0.75 : 0.25) + g(rng);
    ds.labels[static_cast<std::size_t>(i)] = y;
  }
  TrainConfig cfg;
  cfg.seed = 3;
  const auto a = train_mlp(ds, cfg);
  const auto b = train_mlp(ds, cfg);
  EXPECT_GE(a.train_accuracy, 0.95);
  ASSERT_EQ(a.model.layers().size(), b.model.layers().size());
  for (std::size_t l = 0; l < a.model.layers().size(); ++l) {
    EXPECT_EQ(a.model.layers()[l].weights, b.model.layers()[l].weights);
    EXPECT_EQ(a.model.layers()[l].bias, b.model.layers()[l].bias);
  }
}

TEST(Models, TrainRejectsSingleClass) {
  Dataset ds = synthetic_2d(20, 1);
  std::fill(ds.labels.begin(), ds.labels.end(), 0);
  EXPECT_THROW(train_mlp(ds, TrainConfig{}), Error);
}

TEST(Models, SyntheticTestAccuracy) {
  const Classifier& m = fixtures::synthetic_mlp(0);
  EXPECT_GE(accuracy(m, fixtures::synthetic_split().test), 0.85);
}

TEST(Models, StumpRecoversThreshold) {
  Eigen::MatrixXd x(200, 1);
  std::vector<int> y(200);
  std::vector<std::size_t> idx(200);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = i / 199.0;
    y[static_cast<std::size_t>(i)] = x(i, 0) >= 0.37 ? 1 : 0;
    idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
  }
  const DecisionTree t = fit_tree(x, y, 2, idx, 2);
  ASSERT_EQ(t.leaf_count(), 2u);
  EXPECT_NEAR(t.threshold[0], 0.37, 1.0 / 199.0);
  for (std::size_t n = 0; n < t.node_count(); ++n) {
    if (t.is_leaf(n)) {
      EXPECT_DOUBLE_EQ(t.value[n].maxCoeff(), 1.0);  // pure leaves
    }
  }
}

TEST(Models, ForestRespectsLeafCap) {
  const auto& s = fixtures::synthetic_split();
  ForestConfig cfg;
  cfg.seed = 1;
  const TreeEnsemble f = train_forest(s.train, cfg);
  EXPECT_EQ(f.trees().size(), 5u);
  for (const auto& t : f.trees()) EXPECT_LE(t.leaf_count(), 500u);
  cfg.max_leaves = 8;
  const TreeEnsemble capped = train_forest(s.train, cfg);
  for (const auto& t : capped.trees()) EXPECT_LE(t.leaf_count(), 8u);
  const Classifier c(f);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(c.probabilities(s.test.row(static_cast<std::size_t>(i))).sum(), 1.0, 1e-12);
  EXPECT_GE(accuracy(c, s.test), 0.8);
}

TEST(Models, SerializationRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const Classifier mlp(fixtures::random_mlp({3, 7, 2}, 21));
  const Classifier single(TreeEnsemble({stump(0.3333333333333333, {0.2, 0.8}, {0.9, 0.1})}, 2, 1));
  ForestConfig fc;
  fc.max_leaves = 20;
  const Classifier forest(train_forest(fixtures::synthetic_split().train, fc));
  for (const Classifier* c : {&mlp, &single, &forest}) {
    const auto p = dir / "confex_test_model.json";
    save_model(p, *c, "abc");
    std::string hash;
    const Classifier back = load_model(p, &hash);
    EXPECT_EQ(hash, "abc");
    EXPECT_EQ(model_to_json(back), model_to_json(*c));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd x(static_cast<Eigen::Index>(c->input_dim()));
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = u(rng);
      EXPECT_EQ(back.class_scores(x), c->class_scores(x));  // bit-exact
    }
  }
}
