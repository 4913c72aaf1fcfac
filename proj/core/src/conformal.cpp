#include "confex/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "confex/error.hpp"
#include "json.hpp"

namespace confex {

double score_from_class_scores(const Eigen::VectorXd& v, int y) {
  if (y < 0 || y >= v.size()) throw Error("class index " + std::to_string(y) + " is not valid");
  double best_other = -kInf;
  for (Eigen::Index c = 0; c < v.size(); ++c) {
    if (c != y) best_other = std::max(best_other, v[c]);
  }
  return best_other - v[y];
}

double score(const Classifier& model, const Eigen::VectorXd& x, int y) {
  return score_from_class_scores(model.class_scores(x), y);
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  // 1e-9 absorbs representation error, e.g. 0.9 * 10 = 9.000000000000002.
  const double target = (1.0 - alpha) * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::ceil(target - 1e-9));
}

double cp_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw Error("cp_quantile needs at least one score");
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) return kInf;
  if (k == 0) return -kInf;
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k - 1), scores.end());
  return scores[k - 1];
}

double weighted_quantile_with_atom(const std::vector<double>& scores, const std::vector<double>& weights,
                                   double atom_weight, double alpha) {
  if (scores.size() != weights.size()) throw Error("scores and weights differ in length");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  const double total = std::accumulate(weights.begin(), weights.end(), atom_weight);
  if (!(total > 0.0)) throw Error("total weight must be positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  const double level = (1.0 - alpha) * total;
  double cum = 0.0;
  for (std::size_t p = 0; p < order.size(); ++p) {
    cum += weights[order[p]];
    const bool last_of_tie = p + 1 == order.size() || scores[order[p + 1]] > scores[order[p]];
    if (last_of_tie && cum >= level - 1e-9 * total) return scores[order[p]];
  }
  return kInf;
}

bool CalibrationSet::consistent_with(const Classifier& model, double tol) const {
  for (std::size_t i = 0; i < size(); ++i) {
    const double s = score(model, point(i), labels[i]);
    if (!std::isfinite(scores[i]) || std::abs(s - scores[i]) > tol) return false;
  }
  return true;
}

CalibrationSet calibrate(const Classifier& model, const Dataset& cal, std::string model_id) {
  if (cal.size() == 0) throw Error("calibration data is empty");
  CalibrationSet out;
  out.points = cal.rows;
  out.labels = cal.labels;
  out.model_id = std::move(model_id);
  out.scores.reserve(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) out.scores.push_back(score(model, cal.row(i), cal.labels[i]));
  return out;
}

namespace {
constexpr const char* kCalibrationFormat = "confex.calibration/1";
}

void save_calibration(const std::filesystem::path& path, const CalibrationSet& cal, const std::string& config_hash) {
  using nlohmann::json;
  json points = json::array();
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const auto p = cal.point(i);
    points.push_back(std::vector<double>(p.data(), p.data() + p.size()));
  }
  json j{{"format", kCalibrationFormat}, {"model_id", cal.model_id}, {"dim", cal.points.cols()},
         {"points", points},           {"labels", cal.labels},     {"scores", cal.scores}};
  if (cal.alpha) j["alpha"] = *cal.alpha;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump() << '\n';
}

CalibrationSet load_calibration(const std::filesystem::path& path, std::string* config_hash) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open calibration file '" + path.string() + "'");
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != kCalibrationFormat) throw FormatError("unsupported calibration format id");
    CalibrationSet cal;
    cal.model_id = j.at("model_id").get<std::string>();
    cal.labels = j.at("labels").get<std::vector<int>>();
    cal.scores = j.at("scores").get<std::vector<double>>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    const auto& pts = j.at("points");
    if (pts.size() != cal.labels.size() || cal.scores.size() != cal.labels.size()) {
      throw FormatError("calibration arrays differ in length");
    }
    cal.points.resize(static_cast<Eigen::Index>(pts.size()), dim);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto row = pts[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != dim) throw FormatError("calibration point has the wrong width");
      for (Eigen::Index c = 0; c < dim; ++c) cal.points(static_cast<Eigen::Index>(i), c) = row[static_cast<std::size_t>(c)];
    }
    if (j.contains("alpha")) cal.alpha = j["alpha"].get<double>();
    if (config_hash) *config_hash = j.value("config_hash", std::string{});
    return cal;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed calibration file: ") + e.what());
  }
}

KernelSpec KernelSpec::for_schema(const FeatureSchema& schema, double bandwidth, Norm norm,
                                  std::optional<std::vector<std::size_t>> matched_features) {
  if (!(bandwidth > 0.0)) throw Error("kernel bandwidth must be positive");
  KernelSpec spec;
  spec.bandwidth = bandwidth;
  spec.norm = norm;
  const auto& layout = schema.layout();
  spec.continuous_columns = layout.continuous_columns();
  const auto matched = matched_features.value_or(layout.categorical_features());
  for (auto f : matched) {
    const auto& block = layout.block(f);
    if (block.kind != FeatureKind::Categorical) throw Error("feature '" + schema.feature(f).name + "' is not categorical");
    spec.matched_blocks.push_back(block);
  }
  return spec;
}

KernelSpec KernelSpec::dense(std::size_t dim, double bandwidth, Norm norm) {
  if (!(bandwidth > 0.0)) throw Error("kernel bandwidth must be positive");
  KernelSpec spec;
  spec.bandwidth = bandwidth;
  spec.norm = norm;
  spec.continuous_columns.resize(dim);
  std::iota(spec.continuous_columns.begin(), spec.continuous_columns.end(), std::size_t{0});
  return spec;
}

double kernel_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec) {
  double d = 0.0;
  for (auto c : spec.continuous_columns) {
    const double diff = std::abs(a[static_cast<Eigen::Index>(c)] - b[static_cast<Eigen::Index>(c)]);
    switch (spec.norm) {
      case Norm::L1:
        d += diff;
        break;
      case Norm::L2:
        d += diff * diff;
        break;
      case Norm::LInf:
        d = std::max(d, diff);
        break;
    }
  }
  return spec.norm == Norm::L2 ? std::sqrt(d) : d;
}

bool categorical_match(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec) {
  for (const auto& block : spec.matched_blocks) {
    const auto first = static_cast<Eigen::Index>(block.first);
    const auto width = static_cast<Eigen::Index>(block.width);
    Eigen::Index ia = 0;
    Eigen::Index ib = 0;
    a.segment(first, width).maxCoeff(&ia);
    b.segment(first, width).maxCoeff(&ib);
    if (ia != ib) return false;
  }
  return true;
}

bool kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const KernelSpec& spec) {
  return categorical_match(a, b, spec) && kernel_distance(a, b, spec) <= spec.bandwidth;
}

double lcp_quantile(const CalibrationSet& cal, const Eigen::VectorXd& x, const KernelSpec& spec, double alpha) {
  std::vector<double> local;
  for (std::size_t i = 0; i < cal.size(); ++i) {
    if (kernel(x, cal.point(i), spec)) local.push_back(cal.scores[i]);
  }
  const std::size_t k = conformal_rank(local.size(), alpha);
  if (k > local.size()) return kInf;
  std::nth_element(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(k - 1), local.end());
  return local[k - 1];
}

double lcp_quantile_weighted(const CalibrationSet& cal, const Eigen::VectorXd& x, const KernelSpec& spec,
                             double alpha) {
  std::vector<double> weights(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) weights[i] = kernel(x, cal.point(i), spec) ? 1.0 : 0.0;
  // H(x, x) = 1 always, so the +inf atom carries unit mass before normalization.
  return weighted_quantile_with_atom(cal.scores, weights, 1.0, alpha);
}

std::vector<int> prediction_region_from_scores(const Eigen::VectorXd& class_scores, double q) {
  std::vector<int> region;
  for (int y = 0; y < class_scores.size(); ++y) {
    if (q == kInf || score_from_class_scores(class_scores, y) <= q) region.push_back(y);
  }
  return region;
}

std::vector<int> prediction_region(const Classifier& model, const Eigen::VectorXd& x, double q) {
  return prediction_region_from_scores(model.class_scores(x), q);
}

double empirical_coverage(const Classifier& model, const Eigen::MatrixXd& points, const std::vector<int>& labels,
                          const QuantileFn& quantile_fn) {
  if (labels.empty()) return 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Eigen::VectorXd x = points.row(static_cast<Eigen::Index>(i)).transpose();
    const double q = quantile_fn(x);
    if (q == kInf || score(model, x, labels[i]) <= q) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(labels.size());
}

}  // namespace confex
