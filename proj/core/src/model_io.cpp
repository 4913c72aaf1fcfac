#include <fstream>
#include <sstream>

#include "confex/error.hpp"
#include "confex/models.hpp"
#include "json.hpp"

namespace confex {

namespace {

using nlohmann::json;

constexpr const char* kModelFormat = "confex.model/1";

json layer_to_json(const DenseLayer& l) {
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(l.weights.size()));
  for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
  }
  return json{{"rows", l.weights.rows()},
              {"cols", l.weights.cols()},
              {"weights", w},
              {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}};
}

DenseLayer layer_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
    throw FormatError("layer shape does not match its weight arrays");
  }
  DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    l.bias[r] = b[static_cast<std::size_t>(r)];
  }
  return l;
}

json tree_to_json(const DecisionTree& t) {
  json values = json::array();
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    if (t.is_leaf(i)) {
      values.push_back(std::vector<double>(t.value[i].data(), t.value[i].data() + t.value[i].size()));
    } else {
      values.push_back(json::array());
    }
  }
  return json{{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left}, {"right", t.right}, {"value", values}};
}

DecisionTree tree_from_json(const json& j) {
  DecisionTree t;
  t.feature = j.at("feature").get<std::vector<int>>();
  t.threshold = j.at("threshold").get<std::vector<double>>();
  t.left = j.at("left").get<std::vector<int>>();
  t.right = j.at("right").get<std::vector<int>>();
  for (const auto& v : j.at("value")) {
    const auto vals = v.get<std::vector<double>>();
    t.value.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  return t;
}

}  // namespace

std::string model_to_json(const Classifier& model) {
  json j{{"format", kModelFormat}};
  if (const auto* m = model.mlp()) {
    j["kind"] = "mlp";
    j["class_count"] = m->class_count();
    j["input_dim"] = m->input_dim();
    json layers = json::array();
    for (const auto& l : m->layers()) layers.push_back(layer_to_json(l));
    j["layers"] = layers;
  } else {
    const auto* f = model.forest();
    j["kind"] = "forest";
    j["class_count"] = f->class_count();
    j["input_dim"] = f->input_dim();
    json trees = json::array();
    for (const auto& t : f->trees()) trees.push_back(tree_to_json(t));
    j["trees"] = trees;
  }
  return j.dump();
}

Classifier model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw FormatError("unsupported model format id");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "mlp") {
      std::vector<DenseLayer> layers;
      for (const auto& l : j.at("layers")) layers.push_back(layer_from_json(l));
      return Classifier(MlpModel(std::move(layers)));
    }
    if (kind == "forest") {
      std::vector<DecisionTree> trees;
      for (const auto& t : j.at("trees")) trees.push_back(tree_from_json(t));
      return Classifier(TreeEnsemble(std::move(trees), j.at("class_count").get<int>(), j.at("input_dim").get<std::size_t>()));
    }
    throw FormatError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Classifier& model, const std::string& config_hash) {
  auto j = json::parse(model_to_json(model));
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump() << '\n';
}

Classifier load_model(const std::filesystem::path& path, std::string* config_hash) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open model file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (config_hash) {
    const auto j = json::parse(ss.str(), nullptr, false);
    *config_hash = j.is_object() && j.contains("config_hash") ? j["config_hash"].get<std::string>() : std::string{};
  }
  return model_from_json(ss.str());
}

}  // namespace confex
