#include "confex/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "confex/conformal.hpp"
#include "confex/cptree.hpp"
#include "confex/error.hpp"
#include "confex/hash.hpp"
#include "confex/metrics.hpp"
#include "json.hpp"

namespace confex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': '" + v + "' is not a number");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': '" + v + "' is not an integer");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto s = lower(v);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw Error("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v, ',')) out.push_back(to_double(key, item));
  return out;
}

Norm to_norm(const std::string& key, const std::string& v) {
  const auto s = lower(v);
  if (s == "l1") return Norm::L1;
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::LInf;
  throw Error("config key '" + key + "': unknown norm '" + v + "' (l1, l2, linf)");
}

std::string norm_name(Norm n) {
  switch (n) {
    case Norm::L1:
      return "l1";
    case Norm::L2:
      return "l2";
    case Norm::LInf:
      return "linf";
  }
  return "l1";
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Short stable label for file names, e.g. 0.05 -> "0.05".
std::string tag(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& v, const std::string& sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create directory '" + p.string() + "': " + ec.message());
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"data", {"source", "synthetic_n", "synthetic_seed", "features", "target", "classes", "positive_class"}},
      {"split", {"train", "cal", "test", "seed"}},
      {"model",
       {"kind", "hidden_units", "hidden_layers", "epochs", "batch_size", "learning_rate", "seed", "n_trees",
        "max_leaves", "bootstrap"}},
      {"conformal", {"alphas", "bandwidths", "bandwidth_mode", "kernel_norm"}},
      {"explain",
       {"methods", "factuals", "factual_seed", "target", "immutable", "increasing", "decreasing", "eps_strict",
        "lcp_max_points"}},
      {"wachter",
       {"lambda_initial", "lambda_multiplier", "max_rounds", "max_iterations", "learning_rate", "hinge_margin",
        "loss"}},
      {"metrics",
       {"lof", "sensitivity", "stability", "lof_k", "lof_threshold", "ball_budget", "sensitivity_neighbours",
        "sensitivity_factuals", "stability_samples", "coverage_bins", "seed"}},
      {"solver", {"backend", "time_limit_s"}},
      {"output", {"dir", "jobs"}},
  };
  return keys;
}

}  // namespace

std::vector<FeatureSpec> parse_feature_list(const std::string& text) {
  std::vector<FeatureSpec> out;
  for (const auto& item : split_list(text, ';')) {
    const auto parts = split_list(item, ':');
    if (parts.size() < 2) throw Error("feature '" + item + "' needs name:kind");
    const auto kind = lower(parts[1]);
    if (kind == "numeric") {
      if (parts.size() != 2) throw Error("numeric feature '" + parts[0] + "' takes no levels");
      out.push_back(FeatureSpec::numeric(parts[0]));
    } else if (kind == "ordinal" || kind == "categorical") {
      if (parts.size() != 3) throw Error("feature '" + parts[0] + "' needs levels as a|b|c");
      auto levels = split_list(parts[2], '|');
      out.push_back(kind == "ordinal" ? FeatureSpec::ordinal(parts[0], std::move(levels))
                                      : FeatureSpec::categorical(parts[0], std::move(levels)));
    } else {
      throw Error("feature '" + parts[0] + "': unknown kind '" + parts[1] + "'");
    }
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config parse error: ") + e.what());
  }
  const auto& known = known_keys();
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw Error("config has unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw Error("config has unknown key '" + section + "." + key + "'");
      (void)value;
    }
  }
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.'))) return trim(*v);
    return std::nullopt;
  };

  ExperimentConfig c;
  if (auto v = get("data.source")) c.source = *v;
  if (auto v = get("data.synthetic_n")) c.synthetic_n = static_cast<std::size_t>(to_int("data.synthetic_n", *v));
  if (auto v = get("data.synthetic_seed")) c.synthetic_seed = static_cast<std::uint64_t>(to_int("data.synthetic_seed", *v));
  if (auto v = get("data.features")) {
    const auto target = get("data.target").value_or("y");
    const auto classes = split_list(get("data.classes").value_or("0,1"), ',');
    const int positive = static_cast<int>(to_int("data.positive_class", get("data.positive_class").value_or("1")));
    c.schema = FeatureSchema(parse_feature_list(*v), target, classes, positive);
  }

  if (auto v = get("split.train")) c.ratios.train = to_double("split.train", *v);
  if (auto v = get("split.cal")) c.ratios.cal = to_double("split.cal", *v);
  if (auto v = get("split.test")) c.ratios.test = to_double("split.test", *v);
  if (auto v = get("split.seed")) c.split_seed = static_cast<std::uint64_t>(to_int("split.seed", *v));

  if (auto v = get("model.kind")) c.model_kind = lower(*v);
  if (auto v = get("model.hidden_units")) c.mlp.hidden_units = static_cast<int>(to_int("model.hidden_units", *v));
  if (auto v = get("model.hidden_layers")) c.mlp.hidden_layers = static_cast<int>(to_int("model.hidden_layers", *v));
  if (auto v = get("model.epochs")) c.mlp.epochs = static_cast<int>(to_int("model.epochs", *v));
  if (auto v = get("model.batch_size")) c.mlp.batch_size = static_cast<int>(to_int("model.batch_size", *v));
  if (auto v = get("model.learning_rate")) c.mlp.learning_rate = to_double("model.learning_rate", *v);
  if (auto v = get("model.seed")) {
    c.mlp.seed = static_cast<std::uint64_t>(to_int("model.seed", *v));
    c.forest.seed = c.mlp.seed;
  }
  if (auto v = get("model.n_trees")) c.forest.n_trees = static_cast<int>(to_int("model.n_trees", *v));
  if (auto v = get("model.max_leaves")) c.forest.max_leaves = static_cast<int>(to_int("model.max_leaves", *v));
  if (auto v = get("model.bootstrap")) c.forest.bootstrap = to_bool("model.bootstrap", *v);

  if (auto v = get("conformal.alphas")) c.alphas = to_doubles("conformal.alphas", *v);
  if (auto v = get("conformal.bandwidths")) c.bandwidths = to_doubles("conformal.bandwidths", *v);
  if (auto v = get("conformal.bandwidth_mode")) {
    const auto m = lower(*v);
    if (m != "fraction" && m != "absolute") throw Error("config key 'conformal.bandwidth_mode' must be fraction or absolute");
    c.bandwidth_is_fraction = m == "fraction";
  }
  if (auto v = get("conformal.kernel_norm")) c.kernel_norm = to_norm("conformal.kernel_norm", *v);

  if (auto v = get("explain.methods")) {
    c.methods.clear();
    for (const auto& m : split_list(*v, ',')) c.methods.push_back(method_from_string(m));
  }
  if (auto v = get("explain.factuals")) c.factuals = static_cast<std::size_t>(to_int("explain.factuals", *v));
  if (auto v = get("explain.factual_seed")) c.factual_seed = static_cast<std::uint64_t>(to_int("explain.factual_seed", *v));
  if (auto v = get("explain.target")) c.target = static_cast<int>(to_int("explain.target", *v));
  if (auto v = get("explain.immutable")) c.immutable = split_list(*v, ',');
  if (auto v = get("explain.increasing")) c.increasing = split_list(*v, ',');
  if (auto v = get("explain.decreasing")) c.decreasing = split_list(*v, ',');
  if (auto v = get("explain.eps_strict")) c.eps_strict = to_double("explain.eps_strict", *v);
  if (auto v = get("explain.lcp_max_points")) c.lcp_max_points = static_cast<std::size_t>(to_int("explain.lcp_max_points", *v));

  if (auto v = get("wachter.lambda_initial")) c.wachter.lambda_initial = to_double("wachter.lambda_initial", *v);
  if (auto v = get("wachter.lambda_multiplier")) c.wachter.lambda_multiplier = to_double("wachter.lambda_multiplier", *v);
  if (auto v = get("wachter.max_rounds")) c.wachter.max_rounds = static_cast<int>(to_int("wachter.max_rounds", *v));
  if (auto v = get("wachter.max_iterations")) c.wachter.max_iterations = static_cast<int>(to_int("wachter.max_iterations", *v));
  if (auto v = get("wachter.learning_rate")) c.wachter.learning_rate = to_double("wachter.learning_rate", *v);
  if (auto v = get("wachter.hinge_margin")) c.wachter.hinge_margin = to_double("wachter.hinge_margin", *v);
  if (auto v = get("wachter.loss")) {
    const auto l = lower(*v);
    if (l == "hinge") {
      c.wachter.loss = WachterConfig::Loss::Hinge;
    } else if (l == "cross_entropy" || l == "crossentropy") {
      c.wachter.loss = WachterConfig::Loss::CrossEntropy;
    } else {
      throw Error("config key 'wachter.loss' must be hinge or cross_entropy");
    }
  }

  if (auto v = get("metrics.lof")) c.lof = to_bool("metrics.lof", *v);
  if (auto v = get("metrics.sensitivity")) c.sensitivity = to_bool("metrics.sensitivity", *v);
  if (auto v = get("metrics.stability")) c.stability = to_bool("metrics.stability", *v);
  if (auto v = get("metrics.lof_k")) c.lof_k = static_cast<int>(to_int("metrics.lof_k", *v));
  if (auto v = get("metrics.lof_threshold")) c.lof_threshold = to_double("metrics.lof_threshold", *v);
  if (auto v = get("metrics.ball_budget")) c.ball_budget = to_double("metrics.ball_budget", *v);
  if (auto v = get("metrics.sensitivity_neighbours")) {
    c.sensitivity_neighbours = static_cast<int>(to_int("metrics.sensitivity_neighbours", *v));
  }
  if (auto v = get("metrics.sensitivity_factuals")) {
    c.sensitivity_factuals = static_cast<std::size_t>(to_int("metrics.sensitivity_factuals", *v));
  }
  if (auto v = get("metrics.stability_samples")) c.stability_samples = static_cast<int>(to_int("metrics.stability_samples", *v));
  if (auto v = get("metrics.coverage_bins")) c.coverage_bins = static_cast<int>(to_int("metrics.coverage_bins", *v));
  if (auto v = get("metrics.seed")) c.metric_seed = static_cast<std::uint64_t>(to_int("metrics.seed", *v));

  if (auto v = get("solver.backend")) c.backend = *v;
  if (auto v = get("solver.time_limit_s")) c.time_limit_s = to_double("solver.time_limit_s", *v);

  if (auto v = get("output.dir")) c.out_dir = *v;
  if (auto v = get("output.jobs")) c.jobs = static_cast<int>(to_int("output.jobs", *v));

  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

void ExperimentConfig::validate() const {
  if (source != "synthetic" && !schema) throw Error("CSV source needs [data] features, target and classes");
  if (source == "synthetic" && synthetic_n < 10) throw Error("data.synthetic_n must be at least 10");
  if (model_kind != "mlp" && model_kind != "forest") throw Error("model.kind must be mlp or forest");
  mlp.validate();
  if (forest.n_trees < 1 || forest.max_leaves < 2) throw Error("model.n_trees >= 1 and model.max_leaves >= 2 required");
  if (alphas.empty()) throw Error("conformal.alphas is empty");
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw Error("conformal.alphas entries must lie in (0, 1)");
  }
  if (bandwidths.empty()) throw Error("conformal.bandwidths is empty");
  for (double h : bandwidths) {
    if (!(h > 0.0) || (bandwidth_is_fraction && h > 1.0)) {
      throw Error("conformal.bandwidths entries must be positive (and at most 1 as fractions)");
    }
  }
  if (methods.empty()) throw Error("explain.methods needs at least one method");
  if (!(eps_strict > 0.0)) throw Error("explain.eps_strict must be positive");
  if (lof_k < 1 || stability_samples < 1 || sensitivity_neighbours < 1 || coverage_bins < 1) {
    throw Error("metric counts must be positive");
  }
  if (!(ball_budget > 0.0 && ball_budget < 1.0)) throw Error("metrics.ball_budget must lie in (0, 1)");
  if (!(time_limit_s > 0.0)) throw Error("solver.time_limit_s must be positive");
  if (jobs < 1) throw Error("output.jobs must be at least 1");
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.time_limit_s) cfg.time_limit_s = *o.time_limit_s;
  if (o.backend) cfg.backend = *o.backend;
  if (o.seed) {
    cfg.split_seed = *o.seed;
    cfg.mlp.seed = *o.seed;
    cfg.forest.seed = *o.seed;
    cfg.factual_seed = *o.seed;
    cfg.metric_seed = *o.seed;
    if (cfg.source == "synthetic") cfg.synthetic_seed = *o.seed;
  }
  cfg.validate();
}

StageHashes stage_hashes(const ExperimentConfig& c) {
  std::ostringstream d;
  d << "data|source=" << c.source;
  if (c.source == "synthetic") {
    d << "|n=" << c.synthetic_n << "|seed=" << c.synthetic_seed;
  } else {
    std::error_code ec;
    d << "|content=" << (fs::exists(c.source, ec) ? fingerprint(read_file(c.source)) : "missing");
  }
  if (c.schema) {
    for (const auto& f : c.schema->features()) d << "|f=" << f.name << ':' << static_cast<int>(f.kind) << ':' << join(f.levels, "|");
    d << "|target=" << c.schema->target_name() << "|classes=" << join(c.schema->class_names())
      << "|pos=" << c.schema->positive_class();
  }
  d << "|split=" << num(c.ratios.train) << ',' << num(c.ratios.cal) << ',' << num(c.ratios.test) << "|sseed=" << c.split_seed;
  StageHashes h;
  h.data = fingerprint(d.str());

  std::ostringstream m;
  m << h.data << "|model=" << c.model_kind;
  if (c.model_kind == "mlp") {
    m << "|hu=" << c.mlp.hidden_units << "|hl=" << c.mlp.hidden_layers << "|ep=" << c.mlp.epochs
      << "|bs=" << c.mlp.batch_size << "|lr=" << num(c.mlp.learning_rate) << "|seed=" << c.mlp.seed;
  } else {
    m << "|nt=" << c.forest.n_trees << "|ml=" << c.forest.max_leaves << "|bt=" << c.forest.bootstrap
      << "|seed=" << c.forest.seed;
  }
  h.model = fingerprint(m.str());

  std::ostringstream f;
  f << h.model << "|alphas=";
  for (double a : c.alphas) f << num(a) << ',';
  f << "|bw=";
  for (double b : c.bandwidths) f << num(b) << ',';
  f << "|frac=" << c.bandwidth_is_fraction << "|norm=" << norm_name(c.kernel_norm);
  h.forest = fingerprint(f.str());

  std::ostringstream e;
  e << h.forest << "|methods=";
  for (auto mm : c.methods) e << to_string(mm) << ',';
  e << "|n=" << c.factuals << "|fseed=" << c.factual_seed << "|target=" << (c.target ? std::to_string(*c.target) : "pos")
    << "|imm=" << join(c.immutable) << "|inc=" << join(c.increasing) << "|dec=" << join(c.decreasing)
    << "|eps=" << num(c.eps_strict) << "|lcpmax=" << c.lcp_max_points << "|backend=" << c.backend
    << "|tl=" << num(c.time_limit_s) << "|w=" << num(c.wachter.lambda_initial) << ',' << num(c.wachter.lambda_multiplier)
    << ',' << c.wachter.max_rounds << ',' << c.wachter.max_iterations << ',' << num(c.wachter.learning_rate) << ','
    << num(c.wachter.hinge_margin) << ',' << static_cast<int>(c.wachter.loss);
  h.explain = fingerprint(e.str());
  return h;
}

Split load_split(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.source == "synthetic") {
    ds = synthetic_2d(cfg.synthetic_n, cfg.synthetic_seed);
  } else {
    ds = load_csv(cfg.source, *cfg.schema);
  }
  return normalize(split(ds, cfg.ratios, cfg.split_seed));
}

std::vector<std::size_t> select_factuals(const Classifier& model, const Dataset& test, int target, std::size_t count,
                                         std::uint64_t seed) {
  std::vector<std::size_t> idx(test.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> out;
  for (auto i : idx) {
    if (out.size() >= count) break;
    if (model.predict(test.row(i)) != target) out.push_back(i);
  }
  return out;
}

std::vector<double> resolve_bandwidths(const ExperimentConfig& cfg, const Eigen::MatrixXd& cal_rows) {
  if (!cfg.bandwidth_is_fraction) return cfg.bandwidths;
  Eigen::MatrixXd cont = cal_rows;
  if (cfg.schema) {
    const auto& cols = cfg.schema->layout().continuous_columns();
    cont.resize(cal_rows.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) cont.col(static_cast<Eigen::Index>(j)) = cal_rows.col(static_cast<Eigen::Index>(cols[j]));
  }
  const double med = median_pairwise_distance(cont, cfg.kernel_norm);
  std::vector<double> out;
  for (double f : cfg.bandwidths) out.push_back(f * med);
  return out;
}

namespace {

struct Paths {
  fs::path root;
  fs::path model() const { return root / "model.json"; }
  fs::path train_report() const { return root / "train.json"; }
  fs::path calibration() const { return root / "calibration.json"; }
  fs::path forests() const { return root / "forests"; }
  fs::path forest(std::size_t a, std::size_t h) const {
    return forests() / ("forest_a" + std::to_string(a) + "_h" + std::to_string(h) + ".json");
  }
  fs::path results() const { return root / "results"; }
};

Paths paths_of(const ExperimentConfig& cfg) { return Paths{cfg.out_dir}; }

Classifier require_model(const ExperimentConfig& cfg, const StageHashes& h) {
  const auto p = paths_of(cfg).model();
  if (!fs::exists(p)) throw ArtifactError("missing '" + p.string() + "'; run `confex train` first");
  std::string stored;
  Classifier m = load_model(p, &stored);
  if (stored != h.model) {
    throw ArtifactError("'" + p.string() + "' was built from different settings; rerun `confex train`");
  }
  return m;
}

CalibrationSet require_calibration(const ExperimentConfig& cfg, const StageHashes& h) {
  const auto p = paths_of(cfg).calibration();
  if (!fs::exists(p)) throw ArtifactError("missing '" + p.string() + "'; run `confex calibrate` first");
  std::string stored;
  CalibrationSet cal = load_calibration(p, &stored);
  if (stored != h.model) {
    throw ArtifactError("'" + p.string() + "' was built from different settings; rerun `confex calibrate`");
  }
  return cal;
}

QuantileForest require_forest(const ExperimentConfig& cfg, const StageHashes& h, std::size_t a, std::size_t b) {
  const auto p = paths_of(cfg).forest(a, b);
  if (!fs::exists(p)) throw ArtifactError("missing '" + p.string() + "'; run `confex build-tree` first");
  std::string stored;
  QuantileForest f = load_forest(p, &stored);
  if (stored != h.forest) {
    throw ArtifactError("'" + p.string() + "' was built from different settings; rerun `confex build-tree`");
  }
  return f;
}

int target_of(const ExperimentConfig& cfg, const FeatureSchema& schema) {
  const int t = cfg.target.value_or(schema.positive_class());
  if (t < 0 || t >= schema.class_count()) throw Error("explain.target is not a valid class index");
  return t;
}

milp::Actionability actionability_of(const ExperimentConfig& cfg, const FeatureSchema& schema) {
  milp::Actionability a;
  if (cfg.immutable.empty() && cfg.increasing.empty() && cfg.decreasing.empty()) return a;
  a.per_feature.assign(schema.feature_count(), milp::Direction::Free);
  auto set = [&](const std::vector<std::string>& names, milp::Direction d) {
    for (const auto& n : names) {
      const auto f = schema.find(n);
      if (!f) throw Error("actionability rule names unknown feature '" + n + "'");
      a.per_feature[*f] = d;
    }
  };
  set(cfg.immutable, milp::Direction::Fixed);
  set(cfg.increasing, milp::Direction::Increase);
  set(cfg.decreasing, milp::Direction::Decrease);
  return a;
}

/// One explanation run: a method at one (alpha, bandwidth) grid point.
struct Run {
  Method method;
  std::optional<std::size_t> alpha_index;
  std::optional<std::size_t> bandwidth_index;
  std::string name;
};

std::vector<Run> plan_runs(const ExperimentConfig& cfg) {
  std::vector<Run> runs;
  for (auto m : cfg.methods) {
    switch (m) {
      case Method::MinDist:
      case Method::Wachter:
        runs.push_back({m, std::nullopt, std::nullopt, to_string(m)});
        break;
      case Method::Naive:
        for (std::size_t a = 0; a < cfg.alphas.size(); ++a) runs.push_back({m, a, std::nullopt, to_string(m) + "_a" + std::to_string(a)});
        break;
      case Method::Lcp:
      case Method::Tree:
        for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
          for (std::size_t h = 0; h < cfg.bandwidths.size(); ++h) {
            runs.push_back({m, a, h, to_string(m) + "_a" + std::to_string(a) + "_h" + std::to_string(h)});
          }
        }
        break;
    }
  }
  return runs;
}

struct Context {
  Split split;
  Classifier model;
  StageHashes hashes;
  int target = 1;
  std::vector<std::size_t> factual_rows;
};

Context load_context(const ExperimentConfig& cfg) {
  Context c;
  c.hashes = stage_hashes(cfg);
  c.split = load_split(cfg);
  c.model = require_model(cfg, c.hashes);
  c.target = target_of(cfg, c.split.test.schema);
  c.factual_rows = select_factuals(c.model, c.split.test, c.target, cfg.factuals, cfg.factual_seed);
  return c;
}

struct StoredResult {
  std::size_t row = 0;
  CfxStatus status = CfxStatus::Infeasible;
  bool trivial = false;
  double distance = 0.0;
  Eigen::VectorXd factual;
  Eigen::VectorXd cfx;
};

CfxStatus status_from_string(const std::string& s) {
  if (s == "Found") return CfxStatus::Found;
  if (s == "TimeLimit") return CfxStatus::TimeLimit;
  if (s == "InvalidSolution") return CfxStatus::InvalidSolution;
  return CfxStatus::Infeasible;
}

Eigen::VectorXd vec_of(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<StoredResult> read_results(const fs::path& p, const std::string& expected_hash) {
  std::ifstream in(p);
  if (!in) throw ArtifactError("missing '" + p.string() + "'; run `confex explain` first");
  std::string line;
  std::vector<StoredResult> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (header) {
      if (j.value("format", "") != "confex.results/1") throw FormatError("'" + p.string() + "' is not a results file");
      if (j.value("config_hash", "") != expected_hash) {
        throw ArtifactError("'" + p.string() + "' was built from different settings; rerun `confex explain`");
      }
      header = false;
      continue;
    }
    StoredResult r;
    r.row = j.at("row").get<std::size_t>();
    r.status = status_from_string(j.at("status").get<std::string>());
    r.trivial = j.at("trivial").get<bool>();
    if (j.at("distance").is_number()) r.distance = j.at("distance").get<double>();
    r.factual = vec_of(j.at("factual"));
    r.cfx = vec_of(j.at("counterfactual"));
    out.push_back(std::move(r));
  }
  if (header) throw FormatError("'" + p.string() + "' has no header line");
  return out;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

std::string cmd_synth(const ExperimentConfig& cfg, const fs::path& csv_out) {
  const Dataset ds = synthetic_2d(cfg.synthetic_n, cfg.synthetic_seed);
  if (csv_out.has_parent_path()) ensure_dir(csv_out.parent_path());
  write_csv(csv_out, ds);
  return "wrote " + std::to_string(ds.size()) + " synthetic rows to " + csv_out.string();
}

std::string cmd_train(const ExperimentConfig& cfg) {
  const auto h = stage_hashes(cfg);
  const Split s = load_split(cfg);
  const auto p = paths_of(cfg);
  ensure_dir(p.root);
  Classifier model;
  double train_acc = 0.0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  if (cfg.model_kind == "mlp") {
    auto rep = train_mlp(s.train, cfg.mlp);
    train_acc = rep.train_accuracy;
    final_loss = rep.final_loss;
    model = Classifier(std::move(rep.model));
  } else {
    model = Classifier(train_forest(s.train, cfg.forest));
    train_acc = accuracy(model, s.train);
  }
  save_model(p.model(), model, h.model);
  const double test_acc = accuracy(model, s.test);
  json j{{"format", "confex.train/1"},    {"config_hash", h.model},  {"kind", cfg.model_kind},
         {"train_rows", s.train.size()},  {"cal_rows", s.cal.size()}, {"test_rows", s.test.size()},
         {"train_accuracy", train_acc},   {"test_accuracy", test_acc}};
  if (std::isfinite(final_loss)) j["final_loss"] = final_loss;
  std::ofstream(p.train_report()) << j.dump(2) << '\n';
  return "trained " + cfg.model_kind + ": train accuracy " + fixed(train_acc, 4) + ", test accuracy " + fixed(test_acc, 4);
}

std::string cmd_calibrate(const ExperimentConfig& cfg) {
  const auto h = stage_hashes(cfg);
  const Split s = load_split(cfg);
  const Classifier model = require_model(cfg, h);
  const CalibrationSet cal = calibrate(model, s.cal, h.model);
  save_calibration(paths_of(cfg).calibration(), cal, h.model);
  std::string out = "calibrated on " + std::to_string(cal.size()) + " rows;";
  for (double a : cfg.alphas) out += " q(" + tag(a) + ")=" + fixed(cp_quantile(cal.scores, a), 4);
  return out;
}

std::string cmd_build_tree(const ExperimentConfig& cfg) {
  const auto h = stage_hashes(cfg);
  const Split s = load_split(cfg);
  const CalibrationSet cal = require_calibration(cfg, h);
  const auto p = paths_of(cfg);
  ensure_dir(p.forests());
  const auto bws = resolve_bandwidths(cfg, cal.points);
  std::ofstream index(p.forests() / "index.csv");
  index.precision(17);
  index << "config_hash,alpha_index,bandwidth_index,alpha,bandwidth_setting,bandwidth,strata,leaves,finite_leaves,file\n";
  std::size_t built = 0;
  for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
    for (std::size_t b = 0; b < bws.size(); ++b) {
      const auto forest = QuantileForest::build(cal, s.cal.schema, bws[b], cfg.alphas[a]);
      save_forest(p.forest(a, b), forest, h.forest);
      std::size_t finite = 0;
      for (const auto& [key, tree] : forest.strata()) {
        for (const auto& leaf : tree.leaves()) finite += std::isfinite(leaf.quantile) ? 1 : 0;
      }
      index << h.forest << ',' << a << ',' << b << ',' << cfg.alphas[a] << ',' << cfg.bandwidths[b] << ',' << bws[b] << ','
            << forest.strata().size() << ',' << forest.leaf_count() << ',' << finite << ','
            << p.forest(a, b).filename().string() << '\n';
      ++built;
    }
  }
  return "built " + std::to_string(built) + " quantile forests";
}

std::string cmd_explain(const ExperimentConfig& cfg) {
  const Context ctx = load_context(cfg);
  const auto& schema = ctx.split.test.schema;
  const auto p = paths_of(cfg);
  ensure_dir(p.results());
  const auto runs = plan_runs(cfg);
  const bool needs_cal = std::any_of(runs.begin(), runs.end(), [](const Run& r) {
    return r.method == Method::Naive || r.method == Method::Lcp;
  });
  const bool needs_bw = std::any_of(runs.begin(), runs.end(), [](const Run& r) { return r.bandwidth_index.has_value(); });
  std::optional<CalibrationSet> cal;
  if (needs_cal || needs_bw) cal = require_calibration(cfg, ctx.hashes);
  std::vector<double> bws;
  if (needs_bw) bws = resolve_bandwidths(cfg, cal->points);

  const auto backend = milp::make_backend(cfg.backend);
  const auto rules = actionability_of(cfg, schema);

  std::ofstream timing(p.root / "timing.csv");
  timing << "run,row,status,seconds,nodes\n";
  std::ofstream points(p.root / "points.csv");
  points.precision(17);
  points << "config_hash,set,run,row,label";
  for (std::size_t c = 0; c < schema.encoded_width(); ++c) points << ",x" << c;
  points << '\n';
  auto write_point = [&](const std::string& set, const std::string& run, long row, int label, const Eigen::VectorXd& x) {
    points << ctx.hashes.explain << ',' << set << ',' << run << ',' << row << ',' << label;
    for (Eigen::Index c = 0; c < x.size(); ++c) points << ',' << x[c];
    points << '\n';
  };
  for (std::size_t i = 0; i < ctx.split.train.size(); ++i) {
    write_point("train", "", static_cast<long>(i), ctx.split.train.labels[i], ctx.split.train.row(i));
  }
  for (auto r : ctx.factual_rows) write_point("factual", "", static_cast<long>(r), ctx.split.test.labels[r], ctx.split.test.row(r));

  std::size_t found = 0;
  std::size_t attempted = 0;
  for (const auto& run : runs) {
    std::optional<QuantileForest> forest;
    Explainer ex;
    ex.model = &ctx.model;
    ex.schema = &schema;
    ex.backend = backend.get();
    ex.wachter_config = cfg.wachter;
    ex.lcp_options.max_points = cfg.lcp_max_points;
    if (cal) ex.calibration = &*cal;
    if (run.method == Method::Tree) {
      forest = require_forest(cfg, ctx.hashes, *run.alpha_index, *run.bandwidth_index);
      ex.forest = &*forest;
    }
    if (run.method == Method::Lcp) ex.kernel = KernelSpec::for_schema(schema, bws[*run.bandwidth_index], cfg.kernel_norm);
    if (run.method == Method::Wachter && ctx.model.kind() != Classifier::Kind::Mlp) {
      throw Error("the wachter method needs model.kind = mlp");
    }

    std::vector<CfxRequest> reqs;
    for (auto r : ctx.factual_rows) {
      CfxRequest q;
      q.factual = ctx.split.test.row(r);
      q.target = ctx.target;
      q.model_id = ctx.hashes.model;
      q.method = run.method;
      q.alpha = run.alpha_index ? cfg.alphas[*run.alpha_index] : cfg.alphas.front();
      q.actionability = rules;
      q.time_limit_s = cfg.time_limit_s;
      q.eps_strict = cfg.eps_strict;
      reqs.push_back(std::move(q));
    }
    const auto results = ex.explain_batch(reqs, cfg.jobs);

    std::ofstream out(p.results() / (run.name + ".jsonl"));
    json header{{"format", "confex.results/1"},
                {"config_hash", ctx.hashes.explain},
                {"run", run.name},
                {"method", to_string(run.method)},
                {"target", ctx.target}};
    if (run.alpha_index) header["alpha"] = cfg.alphas[*run.alpha_index];
    if (run.bandwidth_index) {
      header["bandwidth_setting"] = cfg.bandwidths[*run.bandwidth_index];
      header["bandwidth"] = bws[*run.bandwidth_index];
    }
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto row = ctx.factual_rows[i];
      out << result_to_json(results[i], row, run.method, reqs[i]) << '\n';
      timing << run.name << ',' << row << ',' << to_string(results[i].status) << ',' << results[i].seconds << ','
             << results[i].nodes << '\n';
      if (results[i].counterfactual.size() > 0) write_point("cfx", run.name, static_cast<long>(row), ctx.target, results[i].counterfactual);
      found += results[i].status == CfxStatus::Found;
      ++attempted;
    }
  }
  return "explained " + std::to_string(ctx.factual_rows.size()) + " factuals over " + std::to_string(runs.size()) +
         " runs: " + std::to_string(found) + "/" + std::to_string(attempted) + " found";
}

std::string cmd_evaluate(const ExperimentConfig& cfg) {
  const Context ctx = load_context(cfg);
  const auto& schema = ctx.split.test.schema;
  const auto p = paths_of(cfg);
  const auto runs = plan_runs(cfg);
  std::optional<CalibrationSet> cal;
  std::vector<double> bws;
  const bool needs_cal = std::any_of(runs.begin(), runs.end(), [](const Run& r) {
    return r.method == Method::Naive || r.method == Method::Lcp || r.bandwidth_index.has_value();
  });
  if (needs_cal) {
    cal = require_calibration(cfg, ctx.hashes);
    bws = resolve_bandwidths(cfg, cal->points);
  }
  const auto backend = milp::make_backend(cfg.backend);
  const Eigen::MatrixXd target_rows = ctx.split.train.rows_of_class(ctx.target);
  std::optional<LofModel> lof;
  if (cfg.lof) lof = LofModel::fit(target_rows, cfg.lof_k);

  std::vector<MetricReport> reports;
  std::ofstream curves(p.root / "curves.csv");
  curves.precision(10);
  curves << "config_hash,method,alpha,bandwidth_setting,bandwidth,metric,value\n";
  for (const auto& run : runs) {
    const auto stored = read_results(p.results() / (run.name + ".jsonl"), ctx.hashes.explain);
    MetricReport rep;
    rep.method = to_string(run.method);
    rep.alpha = run.alpha_index ? cfg.alphas[*run.alpha_index] : 0.0;
    rep.bandwidth = run.bandwidth_index ? bws[*run.bandwidth_index] : 0.0;
    std::vector<double> dist, plaus, implaus, stab;
    for (const auto& r : stored) {
      ++rep.attempted;
      if (r.status == CfxStatus::Found) {
        ++rep.found;
      } else if (r.status == CfxStatus::InvalidSolution) {
        ++rep.invalid;
        continue;
      } else {
        ++rep.failed;
        continue;
      }
      dist.push_back(r.distance);
      if (lof) plaus.push_back(lof_label(lof->ratio(r.cfx), cfg.lof_threshold));
      implaus.push_back(implausibility(r.cfx, target_rows, &schema));
      if (cfg.stability) {
        stab.push_back(stability(ctx.model, r.cfx, ctx.target, schema, cfg.ball_budget, cfg.stability_samples,
                                 item_seed(cfg.metric_seed, r.row)));
      }
    }
    const std::size_t produced = rep.found + rep.invalid;
    rep.validity_rate = produced ? static_cast<double>(rep.found) / static_cast<double>(produced) : 0.0;
    rep.failure_rate = rep.attempted ? static_cast<double>(rep.failed) / static_cast<double>(rep.attempted) : 0.0;
    rep.distance = summarize(dist);
    rep.plausibility = summarize(plaus);
    rep.implausibility = summarize(implaus);
    rep.stability = summarize(stab);

    if (cfg.sensitivity) {
      std::optional<QuantileForest> forest;
      Explainer ex;
      ex.model = &ctx.model;
      ex.schema = &schema;
      ex.backend = backend.get();
      ex.wachter_config = cfg.wachter;
      ex.lcp_options.max_points = cfg.lcp_max_points;
      if (cal) ex.calibration = &*cal;
      if (run.method == Method::Tree) {
        forest = require_forest(cfg, ctx.hashes, *run.alpha_index, *run.bandwidth_index);
        ex.forest = &*forest;
      }
      if (run.method == Method::Lcp) ex.kernel = KernelSpec::for_schema(schema, bws[*run.bandwidth_index], cfg.kernel_norm);
      const double alpha = run.alpha_index ? cfg.alphas[*run.alpha_index] : cfg.alphas.front();
      const auto rules = actionability_of(cfg, schema);
      CfxFunction gen = [&](const Eigen::VectorXd& x) -> std::optional<Eigen::VectorXd> {
        CfxRequest q;
        q.factual = x;
        q.target = ctx.target;
        q.method = run.method;
        q.alpha = alpha;
        q.actionability = rules;
        q.time_limit_s = cfg.time_limit_s;
        q.eps_strict = cfg.eps_strict;
        const auto res = ex.explain(q);
        if (res.status != CfxStatus::Found) return std::nullopt;
        return res.counterfactual;
      };
      std::vector<Eigen::VectorXd> facts;
      for (std::size_t i = 0; i < ctx.factual_rows.size() && i < cfg.sensitivity_factuals; ++i) {
        facts.push_back(ctx.split.test.row(ctx.factual_rows[i]));
      }
      rep.sensitivity = sensitivity(gen, facts, schema, cfg.ball_budget, cfg.sensitivity_neighbours, cfg.metric_seed);
    }

    auto curve = [&](const std::string& metric, double value) {
      curves << ctx.hashes.explain << ',' << rep.method << ',' << rep.alpha << ','
             << (run.bandwidth_index ? cfg.bandwidths[*run.bandwidth_index] : 0.0) << ',' << rep.bandwidth << ','
             << metric << ',' << value << '\n';
    };
    curve("distance", rep.distance.mean);
    if (lof) curve("plausibility", rep.plausibility.mean);
    curve("implausibility", rep.implausibility.mean);
    if (cfg.stability) curve("stability", rep.stability.mean);
    curve("validity_rate", rep.validity_rate);
    curve("failure_rate", rep.failure_rate);
    if (rep.sensitivity) curve("sensitivity", rep.sensitivity->mean);
    reports.push_back(std::move(rep));
  }
  write_metric_reports(p.root / "metrics.csv", reports, ctx.hashes.explain);
  return "evaluated " + std::to_string(reports.size()) + " runs";
}

std::string cmd_coverage(const ExperimentConfig& cfg) {
  const Context ctx = load_context(cfg);
  const auto& schema = ctx.split.test.schema;
  const auto p = paths_of(cfg);
  const CalibrationSet cal = require_calibration(cfg, ctx.hashes);
  const auto bws = resolve_bandwidths(cfg, cal.points);
  std::vector<SimulatedFactual> facts;
  for (auto r : ctx.factual_rows) facts.push_back({ctx.split.test.row(r), ctx.target});

  std::ofstream out(p.root / "coverage.csv");
  out.precision(10);
  out << "config_hash,gap_type,alpha,bandwidth_setting,bandwidth,gap_pp,simulated_points,simulated_distinct\n";
  auto emit = [&](std::ofstream& o, const CoverageGaps& g, double alpha, double setting, double bw) {
    o << ctx.hashes.forest << ",marginal," << alpha << ',' << setting << ',' << bw << ',' << g.marginal << ",,\n";
    o << ctx.hashes.forest << ",class_conditional," << alpha << ',' << setting << ',' << bw << ',' << g.class_conditional << ",,\n";
    o << ctx.hashes.forest << ",binned," << alpha << ',' << setting << ',' << bw << ',' << g.binned << ",,\n";
    o << ctx.hashes.forest << ",simulated," << alpha << ',' << setting << ',' << bw << ',';
    if (g.simulated) o << *g.simulated;
    o << ',' << g.simulated_points << ',' << g.simulated_distinct << '\n';
  };
  std::size_t rows = 0;
  for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
    for (std::size_t b = 0; b < bws.size(); ++b) {
      const auto forest = require_forest(cfg, ctx.hashes, a, b);
      const auto g = coverage_gaps(ctx.model, [&](const Eigen::VectorXd& x) { return forest.query(x); },
                                   ctx.split.test.rows, ctx.split.test.labels, cfg.alphas[a], facts, &schema,
                                   cfg.coverage_bins, cfg.metric_seed);
      emit(out, g, cfg.alphas[a], cfg.bandwidths[b], bws[b]);
      rows += 4;
    }
  }
  std::ofstream naive(p.root / "coverage_naive.csv");
  naive.precision(10);
  naive << "config_hash,gap_type,alpha,bandwidth_setting,bandwidth,gap_pp,simulated_points,simulated_distinct\n";
  for (double alpha : cfg.alphas) {
    const double q = cp_quantile(cal.scores, alpha);
    const auto g = coverage_gaps(ctx.model, [q](const Eigen::VectorXd&) { return q; }, ctx.split.test.rows,
                                 ctx.split.test.labels, alpha, facts, &schema, cfg.coverage_bins, cfg.metric_seed);
    emit(naive, g, alpha, 0.0, 0.0);
  }
  return "wrote " + std::to_string(rows) + " tree coverage rows and " + std::to_string(4 * cfg.alphas.size()) +
         " naive rows";
}

std::string cmd_export_lp(const ExperimentConfig& cfg, Method method, std::size_t factual_index, double alpha,
                          double bandwidth, const fs::path& lp_out) {
  const Context ctx = load_context(cfg);
  const auto& schema = ctx.split.test.schema;
  if (factual_index >= ctx.factual_rows.size()) throw Error("factual index is beyond the selected factuals");
  const Eigen::VectorXd x0 = ctx.split.test.row(ctx.factual_rows[factual_index]);
  milp::MilpModel b;
  const auto in = milp::encode_input(b, schema, actionability_of(cfg, schema), x0);
  const auto scores = milp::encode_classifier(b, ctx.model, in);
  milp::encode_l1_distance(b, schema, x0, in);
  milp::encode_classification(b, scores, ctx.target, cfg.eps_strict);
  if (method == Method::Naive || method == Method::Lcp || method == Method::Tree) {
    const CalibrationSet cal = require_calibration(cfg, ctx.hashes);
    if (method == Method::Naive) {
      milp::encode_singleton(b, scores, ctx.target, cp_quantile(cal.scores, alpha), cfg.eps_strict);
    } else if (method == Method::Lcp) {
      const auto spec = KernelSpec::for_schema(schema, bandwidth, cfg.kernel_norm);
      milp::LcpEncodingOptions opt;
      opt.max_points = cfg.lcp_max_points;
      const auto q = milp::encode_lcp_quantile(b, cal, spec, alpha, in, opt);
      milp::encode_singleton(b, scores, ctx.target, q, cfg.eps_strict);
    } else {
      const auto forest = QuantileForest::build(cal, schema, bandwidth, alpha);
      const auto q = milp::encode_tree_quantile(b, forest, in);
      milp::encode_singleton(b, scores, ctx.target, q, cfg.eps_strict);
    }
  } else if (method == Method::Wachter) {
    throw Error("the gradient baseline has no MILP to export");
  }
  b.validate();
  if (lp_out.has_parent_path()) ensure_dir(lp_out.parent_path());
  std::ofstream(lp_out) << b.to_lp_format();
  return "wrote " + std::to_string(b.variables().size()) + " variables and " + std::to_string(b.constraints().size()) +
         " rows to " + lp_out.string();
}

}  // namespace confex
