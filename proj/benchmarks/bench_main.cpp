#include <benchmark/benchmark.h>

#include <random>

#include "confex/conformal.hpp"
#include "confex/cptree.hpp"
#include "confex/generators.hpp"
#include "confex/metrics.hpp"

using namespace confex;

namespace {

const Split& split2d() {
  static const Split s = normalize(split(synthetic_2d(2000, 0), {0.6, 0.2, 0.2}, 0));
  return s;
}

const Classifier& mlp() {
  static const Classifier m = [] {
    TrainConfig cfg;
    cfg.epochs = 40;
    return Classifier(train_mlp(split2d().train, cfg).model);
  }();
  return m;
}

std::vector<double> random_scores(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

static void BM_CpQuantile(benchmark::State& state) {
  const auto scores = random_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cp_quantile(scores, 0.1));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CpQuantile)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

static void BM_TreeBuild(benchmark::State& state) {
  const Dataset d = synthetic_2d(static_cast<std::size_t>(state.range(0)), 3);
  CalibrationSet cal;
  cal.points = d.rows;
  cal.labels = d.labels;
  cal.scores = random_scores(d.size());
  for (auto _ : state) benchmark::DoNotOptimize(QuantileForest::build(cal, d.schema, 0.1, 0.1).leaf_count());
}
BENCHMARK(BM_TreeBuild)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_TreeQuery(benchmark::State& state) {
  const Dataset d = synthetic_2d(10000, 3);
  CalibrationSet cal;
  cal.points = d.rows;
  cal.labels = d.labels;
  cal.scores = random_scores(d.size());
  const QuantileForest f = QuantileForest::build(cal, d.schema, 0.1, 0.1);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(f.query(d.row(i++ % d.size())));
}
BENCHMARK(BM_TreeQuery);

static void BM_LofRatio(benchmark::State& state) {
  const LofModel lof = LofModel::fit(split2d().train.rows, 20);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(lof.ratio(split2d().test.row(i++ % split2d().test.size())));
}
BENCHMARK(BM_LofRatio);

static void BM_MinDist(benchmark::State& state) {
  const milp::BranchAndBoundBackend backend;
  std::vector<Eigen::VectorXd> facts;
  for (std::size_t i = 0; i < split2d().test.size() && facts.size() < 8; ++i) {
    if (mlp().predict(split2d().test.row(i)) == 0) facts.push_back(split2d().test.row(i));
  }
  std::size_t i = 0;
  for (auto _ : state) {
    CfxRequest r;
    r.factual = facts[i++ % facts.size()];
    r.method = Method::MinDist;
    benchmark::DoNotOptimize(min_dist(mlp(), split2d().test.schema, r, backend).distance);
  }
}
BENCHMARK(BM_MinDist)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
