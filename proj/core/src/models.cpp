#include "confex/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>

#include "confex/error.hpp"

namespace confex {

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error("an MLP needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weights.rows() != l.bias.size()) throw DimensionError("layer " + std::to_string(i) + ": bias length mismatch");
    if (i > 0 && l.weights.cols() != layers_[i - 1].weights.rows()) {
      throw DimensionError("layer " + std::to_string(i) + ": input width does not match previous layer");
    }
    if (!l.weights.allFinite() || !l.bias.allFinite()) throw Error("layer " + std::to_string(i) + " has non-finite weights");
  }
  if (layers_.back().weights.rows() < 2) throw Error("an MLP classifier needs at least two outputs");
}

std::size_t MlpModel::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weights.cols());
}

int MlpModel::class_count() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weights.rows());
}

Eigen::VectorXd MlpModel::forward_logits(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim()) {
    throw DimensionError("input has " + std::to_string(x.size()) + " features, model expects " + std::to_string(input_dim()));
  }
  Eigen::VectorXd a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::VectorXd z = layers_[i].weights * a + layers_[i].bias;
    a = i + 1 < layers_.size() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a;
}

std::vector<Eigen::VectorXd> MlpModel::pre_activations(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim()) throw DimensionError("input width mismatch");
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd a = x;
  for (const auto& layer : layers_) {
    Eigen::VectorXd z = layer.weights * a + layer.bias;
    a = z.cwiseMax(0.0);
    out.push_back(std::move(z));
  }
  return out;
}

Eigen::VectorXd MlpModel::backprop(const Eigen::VectorXd& x, const Eigen::VectorXd& output_weights) const {
  const auto pre = pre_activations(x);
  Eigen::VectorXd g = output_weights;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (pre[i][j] <= 0.0) g[j] = 0.0;
      }
    }
    g = layers_[i].weights.transpose() * g;
  }
  return g;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

Eigen::VectorXd input_gradient(const MlpModel& model, const Eigen::VectorXd& x, int y) {
  if (y < 0 || y >= model.class_count()) throw Error("class index out of range");
  Eigen::VectorXd residual = softmax(model.forward_logits(x));
  residual[y] -= 1.0;
  return model.backprop(x, residual);
}

std::size_t DecisionTree::leaf_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < node_count(); ++i) n += is_leaf(i) ? 1 : 0;
  return n;
}

int DecisionTree::leaf_of(const Eigen::VectorXd& x) const {
  int node = 0;
  while (feature[static_cast<std::size_t>(node)] >= 0) {
    const auto n = static_cast<std::size_t>(node);
    node = x[feature[n]] < threshold[n] ? left[n] : right[n];
  }
  return node;
}

TreeEnsemble::TreeEnsemble(std::vector<DecisionTree> trees, int class_count, std::size_t input_dim)
    : trees_(std::move(trees)), class_count_(class_count), input_dim_(input_dim) {
  if (trees_.empty()) throw Error("a forest needs at least one tree");
  if (class_count_ < 2) throw Error("a forest classifier needs at least two classes");
  for (const auto& t : trees_) {
    const auto n = t.node_count();
    if (n == 0 || t.threshold.size() != n || t.left.size() != n || t.right.size() != n || t.value.size() != n) {
      throw FormatError("malformed tree node arrays");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (t.is_leaf(i)) {
        const auto& v = t.value[i];
        if (v.size() != class_count_ || (v.array() < 0.0).any() || std::abs(v.sum() - 1.0) > 1e-9) {
          throw FormatError("leaf frequencies must be nonnegative and sum to 1");
        }
      } else {
        if (static_cast<std::size_t>(t.feature[i]) >= input_dim_) throw FormatError("split feature out of range");
        for (int child : {t.left[i], t.right[i]}) {
          if (child <= static_cast<int>(i) || child >= static_cast<int>(n)) throw FormatError("child index out of range");
        }
      }
    }
  }
}

Eigen::VectorXd TreeEnsemble::probabilities(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim_) throw DimensionError("input width mismatch");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(class_count_);
  for (const auto& t : trees_) p += t.value[static_cast<std::size_t>(t.leaf_of(x))];
  return p / static_cast<double>(trees_.size());
}

int Classifier::class_count() const {
  return std::visit([](const auto& m) { return m.class_count(); }, model_);
}

std::size_t Classifier::input_dim() const {
  return std::visit([](const auto& m) { return m.input_dim(); }, model_);
}

Eigen::VectorXd Classifier::class_scores(const Eigen::VectorXd& x) const {
  if (const auto* m = mlp()) return m->forward_logits(x);
  return forest()->probabilities(x);
}

Eigen::VectorXd Classifier::probabilities(const Eigen::VectorXd& x) const {
  if (const auto* m = mlp()) return softmax(m->forward_logits(x));
  return forest()->probabilities(x);
}

double accuracy(const Classifier& model, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += model.predict(ds.row(i)) == ds.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

void TrainConfig::validate() const {
  if (hidden_units <= 0 || hidden_layers <= 0 || epochs <= 0 || batch_size <= 0 || !(learning_rate > 0.0)) {
    throw Error("training configuration entries must be positive");
  }
}

TrainReport train_mlp(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  const int k = train.schema.class_count();
  {
    std::vector<int> seen(static_cast<std::size_t>(k), 0);
    for (int y : train.labels) seen.at(static_cast<std::size_t>(y)) = 1;
    if (std::accumulate(seen.begin(), seen.end(), 0) < 2) throw Error("training data contains a single class");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<DenseLayer> layers;
  auto d_in = static_cast<Eigen::Index>(train.rows.cols());
  for (int l = 0; l <= cfg.hidden_layers; ++l) {
    const Eigen::Index d_out = l < cfg.hidden_layers ? cfg.hidden_units : k;
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(d_in)));
    DenseLayer layer{Eigen::MatrixXd(d_out, d_in), Eigen::VectorXd::Zero(d_out)};
    for (Eigen::Index i = 0; i < d_out; ++i) {
      for (Eigen::Index j = 0; j < d_in; ++j) layer.weights(i, j) = init(rng);
    }
    layers.push_back(std::move(layer));
    d_in = d_out;
  }

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<DenseLayer> grad;
      for (const auto& l : layers) grad.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()), Eigen::VectorXd::Zero(l.bias.size())});
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        std::vector<Eigen::VectorXd> acts{train.row(i)};
        std::vector<Eigen::VectorXd> pre;
        for (std::size_t l = 0; l < layers.size(); ++l) {
          Eigen::VectorXd z = layers[l].weights * acts.back() + layers[l].bias;
          pre.push_back(z);
          acts.push_back(l + 1 < layers.size() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z);
        }
        Eigen::VectorXd delta = softmax(acts.back());
        epoch_loss -= std::log(std::max(delta[train.labels[i]], 1e-300));
        delta[train.labels[i]] -= 1.0;
        for (std::size_t l = layers.size(); l-- > 0;) {
          if (l + 1 < layers.size()) {
            for (Eigen::Index j = 0; j < delta.size(); ++j) {
              if (pre[l][j] <= 0.0) delta[j] = 0.0;
            }
          }
          grad[l].weights.noalias() += delta * acts[l].transpose();
          grad[l].bias += delta;
          delta = layers[l].weights.transpose() * delta;
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weights -= step * grad[l].weights;
        layers[l].bias -= step * grad[l].bias;
      }
    }
    epoch_loss /= static_cast<double>(n);
  }

  TrainReport report{MlpModel(std::move(layers)), 0.0, epoch_loss};
  report.train_accuracy = accuracy(Classifier(report.model), train);
  return report;
}

namespace {

double gini(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

SplitCandidate best_split(const Eigen::MatrixXd& x, const std::vector<int>& y, int k,
                          const std::vector<std::size_t>& members) {
  SplitCandidate best;
  const auto total = static_cast<double>(members.size());
  std::vector<double> all(static_cast<std::size_t>(k), 0.0);
  for (auto i : members) all[static_cast<std::size_t>(y[i])] += 1.0;
  const double parent = gini(all, total);
  if (parent <= 0.0) return best;

  std::vector<std::size_t> sorted = members;
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f); });
    std::vector<double> left(static_cast<std::size_t>(k), 0.0);
    std::vector<double> right = all;
    for (std::size_t p = 0; p + 1 < sorted.size(); ++p) {
      const auto c = static_cast<std::size_t>(y[sorted[p]]);
      left[c] += 1.0;
      right[c] -= 1.0;
      const double v = x(static_cast<Eigen::Index>(sorted[p]), f);
      const double next = x(static_cast<Eigen::Index>(sorted[p + 1]), f);
      if (!(next > v)) continue;
      const double nl = static_cast<double>(p + 1);
      const double nr = total - nl;
      const double gain = parent - (nl * gini(left, nl) + nr * gini(right, nr)) / total;
      if (gain > best.gain + 1e-12) {
        best.gain = gain;
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (v + next);
        // Guard against the midpoint rounding onto `next`.
        if (!(best.threshold < next) || !(best.threshold > v)) best.threshold = next;
      }
    }
  }
  return best;
}

}  // namespace

DecisionTree fit_tree(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                      const std::vector<std::size_t>& sample, int max_leaves) {
  if (sample.empty()) throw Error("cannot fit a tree on zero samples");
  if (max_leaves < 1) throw Error("max_leaves must be positive");

  DecisionTree tree;
  std::vector<std::vector<std::size_t>> members;
  auto add_leaf = [&](std::vector<std::size_t> m) {
    Eigen::VectorXd freq = Eigen::VectorXd::Zero(class_count);
    for (auto i : m) freq[y[i]] += 1.0;
    freq /= static_cast<double>(m.size());
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(freq);
    members.push_back(std::move(m));
    return static_cast<int>(tree.feature.size() - 1);
  };

  struct Pending {
    double gain;
    int node;
    SplitCandidate split;
    bool operator<(const Pending& o) const { return gain < o.gain || (gain == o.gain && node > o.node); }
  };
  std::priority_queue<Pending> frontier;
  auto consider = [&](int node) {
    const auto s = best_split(x, y, class_count, members[static_cast<std::size_t>(node)]);
    if (s.feature >= 0) frontier.push({s.gain, node, s});
  };

  consider(add_leaf(sample));
  std::size_t leaves = 1;
  while (!frontier.empty() && leaves < static_cast<std::size_t>(max_leaves)) {
    const Pending p = frontier.top();
    frontier.pop();
    const auto node = static_cast<std::size_t>(p.node);
    std::vector<std::size_t> l, r;
    for (auto i : members[node]) {
      (x(static_cast<Eigen::Index>(i), p.split.feature) < p.split.threshold ? l : r).push_back(i);
    }
    members[node].clear();
    tree.feature[node] = p.split.feature;
    tree.threshold[node] = p.split.threshold;
    const int li = add_leaf(std::move(l));
    const int ri = add_leaf(std::move(r));
    tree.left[node] = li;
    tree.right[node] = ri;
    ++leaves;
    consider(li);
    consider(ri);
  }
  return tree;
}

TreeEnsemble train_forest(const Dataset& train, const ForestConfig& cfg) {
  if (cfg.n_trees < 1 || cfg.max_leaves < 1) throw Error("forest configuration entries must be positive");
  if (train.size() == 0) throw Error("cannot train a forest on zero rows");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<DecisionTree> trees;
  for (int t = 0; t < cfg.n_trees; ++t) {
    std::vector<std::size_t> sample(train.size());
    if (cfg.bootstrap) {
      for (auto& s : sample) s = pick(rng);
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    trees.push_back(fit_tree(train.rows, train.labels, train.schema.class_count(), sample, cfg.max_leaves));
  }
  return TreeEnsemble(std::move(trees), train.schema.class_count(), static_cast<std::size_t>(train.rows.cols()));
}

}  // namespace confex
