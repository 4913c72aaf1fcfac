#include "fixtures.hpp"

#include <map>
#include <mutex>

namespace confex::fixtures {

const Split& synthetic_split(std::size_t n, std::uint64_t seed) {
  static std::map<std::pair<std::size_t, std::uint64_t>, Split> cache;
  static std::mutex mu;
  std::lock_guard lock(mu);
  auto it = cache.find({n, seed});
  if (it == cache.end()) {
    it = cache.emplace(std::make_pair(n, seed), normalize(split(synthetic_2d(n, seed), {0.6, 0.2, 0.2}, seed))).first;
  }
  return it->second;
}

const Classifier& synthetic_mlp(std::uint64_t seed) {
  static std::map<std::uint64_t, Classifier> cache;
  static std::mutex mu;
  const Split& s = synthetic_split(2000, seed);
  std::lock_guard lock(mu);
  auto it = cache.find(seed);
  if (it == cache.end()) {
    TrainConfig cfg;
    cfg.seed = seed;
    it = cache.emplace(seed, Classifier(train_mlp(s.train, cfg).model)).first;
  }
  return it->second;
}

MlpModel random_mlp(const std::vector<int>& widths, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    DenseLayer d;
    d.weights.resize(widths[l], widths[l - 1]);
    d.bias.resize(widths[l]);
    for (Eigen::Index i = 0; i < d.weights.size(); ++i) d.weights.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias[i] = 0.3 * g(rng);
    layers.push_back(std::move(d));
  }
  return MlpModel(std::move(layers));
}

FeatureSchema schema_2d() {
  return FeatureSchema({FeatureSpec::numeric("x1"), FeatureSpec::numeric("x2")}, "y", {"0", "1"}, 1);
}

FeatureSchema mixed_schema() {
  return FeatureSchema({FeatureSpec::numeric("a"), FeatureSpec::ordinal("b", {"low", "mid", "high"}),
                        FeatureSpec::categorical("c", {"red", "green", "blue"}), FeatureSpec::numeric("d")},
                       "y", {"no", "yes"}, 1);
}

Eigen::VectorXd random_row(const FeatureSchema& schema, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(schema.encoded_width()));
  for (const auto& blk : schema.layout().blocks()) {
    const auto& f = schema.feature(blk.feature);
    const auto c = static_cast<Eigen::Index>(blk.first);
    switch (blk.kind) {
      case FeatureKind::Numeric:
        x[c] = u(rng);
        break;
      case FeatureKind::Ordinal: {
        const auto levels = static_cast<int>(f.levels.size());
        const int lv = std::uniform_int_distribution<int>(0, levels - 1)(rng);
        x[c] = levels > 1 ? static_cast<double>(lv) / (levels - 1) : 0.0;
        break;
      }
      case FeatureKind::Categorical: {
        const int k = std::uniform_int_distribution<int>(0, static_cast<int>(blk.width) - 1)(rng);
        x[c + k] = 1.0;
        break;
      }
    }
  }
  return x;
}

Dataset random_dataset(const FeatureSchema& schema, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.schema = schema;
  ds.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.encoded_width()));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = random_row(schema, rng);
    ds.rows.row(static_cast<Eigen::Index>(i)) = x.transpose();
    ds.labels[i] = x[0] + x[x.size() - 1] > 1.0 ? 1 : 0;
  }
  return ds;
}

}  // namespace confex::fixtures
