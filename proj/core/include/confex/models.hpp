#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "confex/data.hpp"

namespace confex {

/// Affine layer y = W x + b with W stored as (outputs x inputs).
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

/// Fully connected ReLU network. Every layer but the last applies ReLU; the last
/// layer emits raw logits.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<DenseLayer> layers);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_dim() const;
  int class_count() const;

  Eigen::VectorXd forward_logits(const Eigen::VectorXd& x) const;
  /// Pre-activation vector of every layer, including the output layer.
  std::vector<Eigen::VectorXd> pre_activations(const Eigen::VectorXd& x) const;
  /// Gradient with respect to x of dot(output_weights, logits(x)). ReLU'(0) = 0.
  Eigen::VectorXd backprop(const Eigen::VectorXd& x, const Eigen::VectorXd& output_weights) const;

 private:
  std::vector<DenseLayer> layers_;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
/// Index of the largest entry; ties go to the lowest index.
int argmax(const Eigen::VectorXd& v);

/// Gradient of the cross-entropy of softmax(logits(x)) against class y.
Eigen::VectorXd input_gradient(const MlpModel& model, const Eigen::VectorXd& x, int y);

/// Array-form binary tree. Internal nodes route x[feature] < threshold to the left.
struct DecisionTree {
  std::vector<int> feature;        // -1 on leaves
  std::vector<double> threshold;
  std::vector<int> left;           // -1 on leaves
  std::vector<int> right;
  std::vector<Eigen::VectorXd> value;  // class frequencies, meaningful on leaves

  std::size_t node_count() const { return feature.size(); }
  bool is_leaf(std::size_t node) const { return feature[node] < 0; }
  std::size_t leaf_count() const;
  int leaf_of(const Eigen::VectorXd& x) const;
};

/// Forest whose class probabilities are the mean of the reached leaf frequencies.
class TreeEnsemble {
 public:
  TreeEnsemble() = default;
  TreeEnsemble(std::vector<DecisionTree> trees, int class_count, std::size_t input_dim);

  const std::vector<DecisionTree>& trees() const { return trees_; }
  int class_count() const { return class_count_; }
  std::size_t input_dim() const { return input_dim_; }
  Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const;

 private:
  std::vector<DecisionTree> trees_;
  int class_count_ = 2;
  std::size_t input_dim_ = 0;
};

/// A trained classifier of either family.
class Classifier {
 public:
  enum class Kind { Mlp, Forest };

  Classifier() = default;
  Classifier(MlpModel mlp) : model_(std::move(mlp)) {}
  Classifier(TreeEnsemble forest) : model_(std::move(forest)) {}

  Kind kind() const { return std::holds_alternative<MlpModel>(model_) ? Kind::Mlp : Kind::Forest; }
  const MlpModel* mlp() const { return std::get_if<MlpModel>(&model_); }
  const TreeEnsemble* forest() const { return std::get_if<TreeEnsemble>(&model_); }

  int class_count() const;
  std::size_t input_dim() const;

  /// Quantities the nonconformity score is built from: logits for an MLP, mean
  /// leaf frequencies for a forest.
  Eigen::VectorXd class_scores(const Eigen::VectorXd& x) const;
  Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const;
  int predict(const Eigen::VectorXd& x) const { return argmax(class_scores(x)); }

 private:
  std::variant<MlpModel, TreeEnsemble> model_;
};

double accuracy(const Classifier& model, const Dataset& ds);

struct TrainConfig {
  int hidden_units = 50;
  int hidden_layers = 1;
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  MlpModel model;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

/// Plain mini-batch SGD on softmax cross-entropy.
TrainReport train_mlp(const Dataset& train, const TrainConfig& cfg);

struct ForestConfig {
  int n_trees = 5;
  int max_leaves = 500;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

/// Best-first CART with Gini impurity on the given sample indices (duplicates
/// allowed, which is how bootstrap samples are passed).
DecisionTree fit_tree(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                      const std::vector<std::size_t>& sample, int max_leaves);

TreeEnsemble train_forest(const Dataset& train, const ForestConfig& cfg);

/// Portable JSON model file.
void save_model(const std::filesystem::path& path, const Classifier& model, const std::string& config_hash = {});
Classifier load_model(const std::filesystem::path& path, std::string* config_hash = nullptr);
std::string model_to_json(const Classifier& model);
Classifier model_from_json(const std::string& text);

}  // namespace confex
