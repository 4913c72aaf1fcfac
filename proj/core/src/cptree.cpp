#include "confex/cptree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "confex/error.hpp"
#include "json.hpp"

namespace confex {

QuantileTree::QuantileTree(std::vector<std::size_t> columns, std::vector<QuantileNode> nodes,
                           std::vector<QuantileLeaf> leaves)
    : columns_(std::move(columns)), nodes_(std::move(nodes)), leaves_(std::move(leaves)) {
  if (nodes_.empty()) throw FormatError("quantile tree has no nodes");
  for (const auto& n : nodes_) {
    if (n.leaf >= 0) {
      if (static_cast<std::size_t>(n.leaf) >= leaves_.size()) throw FormatError("leaf index out of range");
    } else if (n.column < 0 || static_cast<std::size_t>(n.column) >= columns_.size() || n.left < 0 || n.right < 0 ||
               static_cast<std::size_t>(std::max(n.left, n.right)) >= nodes_.size()) {
      throw FormatError("malformed quantile tree node");
    }
  }
}

namespace {

struct Builder {
  const CalibrationSet& cal;
  const std::vector<std::size_t>& columns;
  double bandwidth;
  double alpha;
  std::vector<QuantileNode> nodes;
  std::vector<QuantileLeaf> leaves;

  double value(std::size_t member, std::size_t col) const {
    return cal.points(static_cast<Eigen::Index>(member), static_cast<Eigen::Index>(columns[col]));
  }

  int grow(const std::vector<std::size_t>& members, Eigen::VectorXd cell_lo, Eigen::VectorXd cell_hi) {
    const auto d = static_cast<Eigen::Index>(columns.size());
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, kInf);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(d, -kInf);
    for (auto m : members) {
      for (Eigen::Index c = 0; c < d; ++c) {
        const double v = value(m, static_cast<std::size_t>(c));
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
    }
    // Widest column; ties go to the lowest column.
    Eigen::Index widest = -1;
    double spread = -1.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      if (hi[c] - lo[c] > spread) {
        spread = hi[c] - lo[c];
        widest = c;
      }
    }

    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (widest < 0 || spread < bandwidth) {
      QuantileLeaf leaf;
      leaf.box_lo = lo;
      leaf.box_hi = hi;
      leaf.midpoint = d > 0 ? Eigen::VectorXd(0.5 * (lo + hi)) : Eigen::VectorXd();
      leaf.cell_lo = std::move(cell_lo);
      leaf.cell_hi = std::move(cell_hi);
      leaf.members = members;
      for (auto m : members) leaf.scores.push_back(cal.scores[m]);
      leaf.quantile = cp_quantile(leaf.scores, alpha);
      nodes[static_cast<std::size_t>(id)].leaf = static_cast<int>(leaves.size());
      leaves.push_back(std::move(leaf));
      return id;
    }

    const double threshold = 0.5 * (lo[widest] + hi[widest]);
    std::vector<std::size_t> left, right;
    for (auto m : members) (value(m, static_cast<std::size_t>(widest)) < threshold ? left : right).push_back(m);

    Eigen::VectorXd left_hi = cell_hi;
    left_hi[widest] = threshold;
    Eigen::VectorXd right_lo = cell_lo;
    right_lo[widest] = threshold;
    const int l = grow(left, cell_lo, left_hi);
    const int r = grow(right, right_lo, cell_hi);
    auto& node = nodes[static_cast<std::size_t>(id)];
    node.column = static_cast<int>(widest);
    node.threshold = threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

}  // namespace

QuantileTree QuantileTree::build(const CalibrationSet& cal, const std::vector<std::size_t>& members,
                                 const std::vector<std::size_t>& columns, double bandwidth, double alpha) {
  if (!(bandwidth > 0.0)) throw Error("bandwidth must be positive");
  if (members.empty()) throw Error("cannot build a quantile tree without calibration points");
  Builder b{cal, columns, bandwidth, alpha, {}, {}};
  const auto d = static_cast<Eigen::Index>(columns.size());
  b.grow(members, Eigen::VectorXd::Constant(d, -kInf), Eigen::VectorXd::Constant(d, kInf));
  return QuantileTree(columns, std::move(b.nodes), std::move(b.leaves));
}

int QuantileTree::find_leaf(const Eigen::VectorXd& x) const {
  std::size_t node = 0;
  while (nodes_[node].leaf < 0) {
    const auto& n = nodes_[node];
    const double v = x[static_cast<Eigen::Index>(columns_[static_cast<std::size_t>(n.column)])];
    node = static_cast<std::size_t>(v < n.threshold ? n.left : n.right);
  }
  return nodes_[node].leaf;
}

double QuantileTree::midpoint_distance(const Eigen::VectorXd& x, int leaf) const {
  const auto& l = leaves_.at(static_cast<std::size_t>(leaf));
  double d = 0.0;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    d = std::max(d, std::abs(x[static_cast<Eigen::Index>(columns_[c])] - l.midpoint[static_cast<Eigen::Index>(c)]));
  }
  return d;
}

bool QuantileTree::operator==(const QuantileTree& o) const {
  if (columns_ != o.columns_ || nodes_.size() != o.nodes_.size() || leaves_.size() != o.leaves_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& a = nodes_[i];
    const auto& b = o.nodes_[i];
    if (a.column != b.column || a.threshold != b.threshold || a.left != b.left || a.right != b.right || a.leaf != b.leaf) {
      return false;
    }
  }
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto& a = leaves_[i];
    const auto& b = o.leaves_[i];
    if (a.quantile != b.quantile || a.midpoint != b.midpoint || a.box_lo != b.box_lo || a.box_hi != b.box_hi ||
        a.cell_lo != b.cell_lo || a.cell_hi != b.cell_hi || a.members != b.members || a.scores != b.scores) {
      return false;
    }
  }
  return true;
}

StratumKey QuantileForest::key_of(const Eigen::VectorXd& x) const {
  StratumKey key;
  for (const auto& block : stratified_blocks_) {
    Eigen::Index idx = 0;
    x.segment(static_cast<Eigen::Index>(block.first), static_cast<Eigen::Index>(block.width)).maxCoeff(&idx);
    key.push_back(static_cast<int>(idx));
  }
  return key;
}

QuantileForest QuantileForest::build(const CalibrationSet& cal, const FeatureSchema& schema, double bandwidth,
                                     double alpha, std::optional<std::vector<std::size_t>> stratified_features) {
  if (cal.size() == 0) throw Error("cannot build a quantile forest from an empty calibration set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  const auto& layout = schema.layout();
  if (static_cast<std::size_t>(cal.points.cols()) != layout.width()) throw DimensionError("calibration width does not match schema");

  QuantileForest forest;
  forest.bandwidth_ = bandwidth;
  forest.alpha_ = alpha;
  forest.model_id_ = cal.model_id;
  forest.stratified_features_ = stratified_features.value_or(layout.categorical_features());
  for (auto f : forest.stratified_features_) {
    const auto& block = layout.block(f);
    if (block.kind != FeatureKind::Categorical) throw Error("feature '" + schema.feature(f).name + "' is not categorical");
    forest.stratified_blocks_.push_back(block);
  }

  std::map<StratumKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cal.size(); ++i) groups[forest.key_of(cal.point(i))].push_back(i);
  for (const auto& [key, members] : groups) {
    forest.strata_.emplace(key, QuantileTree::build(cal, members, layout.continuous_columns(), bandwidth, alpha));
  }
  return forest;
}

std::optional<QuantileForest::Location> QuantileForest::locate(const Eigen::VectorXd& x) const {
  auto key = key_of(x);
  const auto it = strata_.find(key);
  if (it == strata_.end()) return std::nullopt;
  Location loc;
  loc.tree = &it->second;
  loc.key = std::move(key);
  loc.leaf = it->second.find_leaf(x);
  loc.accepted = it->second.midpoint_distance(x, loc.leaf) <= 0.5 * bandwidth_;
  return loc;
}

double QuantileForest::query(const Eigen::VectorXd& x) const {
  const auto loc = locate(x);
  if (!loc || !loc->accepted) return kInf;
  return loc->tree->leaves()[static_cast<std::size_t>(loc->leaf)].quantile;
}

std::size_t QuantileForest::leaf_count() const {
  std::size_t n = 0;
  for (const auto& [key, tree] : strata_) n += tree.leaves().size();
  return n;
}

bool QuantileForest::operator==(const QuantileForest& o) const {
  if (bandwidth_ != o.bandwidth_ || alpha_ != o.alpha_ || model_id_ != o.model_id_ ||
      stratified_features_ != o.stratified_features_ || strata_.size() != o.strata_.size()) {
    return false;
  }
  auto it = o.strata_.begin();
  for (const auto& [key, tree] : strata_) {
    if (key != it->first || !(tree == it->second)) return false;
    ++it;
  }
  return true;
}

namespace {

using nlohmann::json;
constexpr const char* kForestFormat = "confex.qforest/1";

// JSON has no infinities: unbounded entries are written as the strings "inf" and "-inf".
json to_json_vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) {
      out.push_back(v[i]);
    } else {
      out.push_back(v[i] > 0 ? "inf" : "-inf");
    }
  }
  return out;
}

double number_or_inf(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw FormatError("unexpected string '" + s + "' where a number was expected");
  }
  return j.get<double>();
}

Eigen::VectorXd from_json_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_or_inf(j[i]);
  return v;
}

}  // namespace

std::string QuantileForest::to_json(const std::string& config_hash) const {
  json strata = json::array();
  for (const auto& [key, tree] : strata_) {
    json nodes{{"column", json::array()}, {"threshold", json::array()}, {"left", json::array()},
               {"right", json::array()},  {"leaf", json::array()}};
    for (const auto& n : tree.nodes()) {
      nodes["column"].push_back(n.column);
      nodes["threshold"].push_back(n.threshold);
      nodes["left"].push_back(n.left);
      nodes["right"].push_back(n.right);
      nodes["leaf"].push_back(n.leaf);
    }
    json leaves = json::array();
    for (const auto& l : tree.leaves()) {
      leaves.push_back(json{{"quantile", std::isfinite(l.quantile) ? json(l.quantile) : json("inf")},
                            {"midpoint", to_json_vec(l.midpoint)},
                            {"count", l.members.size()},
                            {"box_lo", to_json_vec(l.box_lo)},
                            {"box_hi", to_json_vec(l.box_hi)},
                            {"cell_lo", to_json_vec(l.cell_lo)},
                            {"cell_hi", to_json_vec(l.cell_hi)},
                            {"members", l.members},
                            {"scores", l.scores}});
    }
    strata.push_back(json{{"key", key}, {"columns", tree.columns()}, {"nodes", nodes}, {"leaves", leaves}});
  }
  json blocks = json::array();
  for (const auto& b : stratified_blocks_) blocks.push_back(json{{"feature", b.feature}, {"first", b.first}, {"width", b.width}});
  json j{{"format", kForestFormat},
         {"model_id", model_id_},
         {"alpha", alpha_},
         {"bandwidth", bandwidth_},
         {"stratified_features", stratified_features_},
         {"stratified_blocks", blocks},
         {"strata", strata}};
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j.dump();
}

QuantileForest QuantileForest::from_json(const std::string& text, std::string* config_hash) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kForestFormat) throw FormatError("unsupported quantile forest format id");
    QuantileForest f;
    f.model_id_ = j.at("model_id").get<std::string>();
    f.alpha_ = j.at("alpha").get<double>();
    f.bandwidth_ = j.at("bandwidth").get<double>();
    f.stratified_features_ = j.at("stratified_features").get<std::vector<std::size_t>>();
    for (const auto& b : j.at("stratified_blocks")) {
      f.stratified_blocks_.push_back(ColumnBlock{b.at("feature").get<std::size_t>(), FeatureKind::Categorical,
                                                 b.at("first").get<std::size_t>(), b.at("width").get<std::size_t>()});
    }
    for (const auto& s : j.at("strata")) {
      const auto& n = s.at("nodes");
      std::vector<QuantileNode> nodes(n.at("column").size());
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        nodes[i] = QuantileNode{n["column"][i].get<int>(), n["threshold"][i].get<double>(), n["left"][i].get<int>(),
                                n["right"][i].get<int>(), n["leaf"][i].get<int>()};
      }
      std::vector<QuantileLeaf> leaves;
      for (const auto& l : s.at("leaves")) {
        QuantileLeaf leaf;
        leaf.quantile = number_or_inf(l.at("quantile"));
        leaf.midpoint = from_json_vec(l.at("midpoint"));
        leaf.box_lo = from_json_vec(l.at("box_lo"));
        leaf.box_hi = from_json_vec(l.at("box_hi"));
        leaf.cell_lo = from_json_vec(l.at("cell_lo"));
        leaf.cell_hi = from_json_vec(l.at("cell_hi"));
        leaf.members = l.at("members").get<std::vector<std::size_t>>();
        leaf.scores = l.at("scores").get<std::vector<double>>();
        leaves.push_back(std::move(leaf));
      }
      f.strata_.emplace(s.at("key").get<StratumKey>(),
                        QuantileTree(s.at("columns").get<std::vector<std::size_t>>(), std::move(nodes), std::move(leaves)));
    }
    if (config_hash) *config_hash = j.value("config_hash", std::string{});
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed quantile forest file: ") + e.what());
  }
}

void save_forest(const std::filesystem::path& path, const QuantileForest& forest, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << forest.to_json(config_hash) << '\n';
}

QuantileForest load_forest(const std::filesystem::path& path, std::string* config_hash) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open quantile forest file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return QuantileForest::from_json(ss.str(), config_hash);
}

std::vector<LeafCoverage> group_coverage(const QuantileForest& forest, const Classifier& model,
                                         const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  std::map<std::pair<StratumKey, int>, LeafCoverage> table;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Eigen::VectorXd x = points.row(static_cast<Eigen::Index>(i)).transpose();
    const auto loc = forest.locate(x);
    if (!loc || !loc->accepted) continue;
    auto& row = table[{loc->key, loc->leaf}];
    row.key = loc->key;
    row.leaf = loc->leaf;
    row.quantile = loc->tree->leaves()[static_cast<std::size_t>(loc->leaf)].quantile;
    ++row.accepted;
    if (row.quantile == kInf || score(model, x, labels[i]) <= row.quantile) ++row.covered;
  }
  std::vector<LeafCoverage> out;
  for (auto& [k, v] : table) out.push_back(std::move(v));
  return out;
}

}  // namespace confex
