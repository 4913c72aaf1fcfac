#include "confex/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "confex/error.hpp"

namespace confex {

FeatureSpec FeatureSpec::numeric(std::string name) {
  return FeatureSpec{std::move(name), FeatureKind::Numeric, {}};
}

FeatureSpec FeatureSpec::ordinal(std::string name, std::vector<std::string> levels) {
  return FeatureSpec{std::move(name), FeatureKind::Ordinal, std::move(levels)};
}

FeatureSpec FeatureSpec::categorical(std::string name, std::vector<std::string> categories) {
  return FeatureSpec{std::move(name), FeatureKind::Categorical, std::move(categories)};
}

FeatureLayout::FeatureLayout(const std::vector<FeatureSpec>& features) {
  for (std::size_t f = 0; f < features.size(); ++f) {
    ColumnBlock block;
    block.feature = f;
    block.kind = features[f].kind;
    block.first = width_;
    block.width = features[f].kind == FeatureKind::Categorical ? features[f].cardinality() : 1;
    if (block.kind == FeatureKind::Categorical) {
      categorical_.push_back(f);
    } else {
      continuous_.push_back(width_);
    }
    width_ += block.width;
    blocks_.push_back(block);
  }
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, std::string target_name,
                             std::vector<std::string> class_names, int positive_class)
    : features_(std::move(features)),
      target_name_(std::move(target_name)),
      class_names_(std::move(class_names)),
      positive_class_(positive_class) {
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (!seen.insert(f.name).second) throw Error("duplicate feature name '" + f.name + "'");
    if (f.kind == FeatureKind::Ordinal) {
      if (f.levels.empty()) throw Error("ordinal feature '" + f.name + "' has no levels");
      std::set<std::string> lv(f.levels.begin(), f.levels.end());
      if (lv.size() != f.levels.size()) throw Error("ordinal feature '" + f.name + "' repeats a level");
    }
    if (f.kind == FeatureKind::Categorical) {
      if (f.levels.size() < 2) throw Error("categorical feature '" + f.name + "' needs at least 2 categories");
      std::set<std::string> lv(f.levels.begin(), f.levels.end());
      if (lv.size() != f.levels.size()) throw Error("categorical feature '" + f.name + "' repeats a category");
    }
  }
  if (seen.count(target_name_)) throw Error("target '" + target_name_ + "' is also a feature");
  if (class_names_.size() < 2) throw Error("schema needs at least two classes");
  if (positive_class_ < 0 || positive_class_ >= static_cast<int>(class_names_.size())) {
    throw Error("positive class index " + std::to_string(positive_class_) + " is not a valid class");
  }
  layout_ = FeatureLayout(features_);
}

std::optional<std::size_t> FeatureSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

bool FeatureSchema::operator==(const FeatureSchema& other) const {
  if (features_.size() != other.features_.size()) return false;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const auto& a = features_[i];
    const auto& b = other.features_[i];
    if (a.name != b.name || a.kind != b.kind || a.levels != b.levels) return false;
  }
  return target_name_ == other.target_name_ && class_names_ == other.class_names_ &&
         positive_class_ == other.positive_class_;
}

Scaler Scaler::fit(const FeatureSchema& schema, const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw Error("cannot fit a scaler on zero rows");
  const auto& layout = schema.layout();
  Scaler s;
  s.min_.assign(layout.width(), 0.0);
  s.max_.assign(layout.width(), 1.0);
  for (const auto& block : layout.blocks()) {
    const auto c = static_cast<Eigen::Index>(block.first);
    if (block.kind == FeatureKind::Numeric) {
      s.min_[block.first] = rows.col(c).minCoeff();
      s.max_[block.first] = rows.col(c).maxCoeff();
    } else if (block.kind == FeatureKind::Ordinal) {
      s.min_[block.first] = 0.0;
      s.max_[block.first] = static_cast<double>(schema.feature(block.feature).cardinality() - 1);
    }
  }
  return s;
}

Scaler Scaler::from_parts(std::vector<double> min, std::vector<double> max) {
  if (min.size() != max.size()) throw Error("scaler min/max lengths differ");
  for (std::size_t i = 0; i < min.size(); ++i) {
    if (max[i] < min[i]) throw Error("scaler max < min at column " + std::to_string(i));
  }
  Scaler s;
  s.min_ = std::move(min);
  s.max_ = std::move(max);
  return s;
}

Eigen::VectorXd Scaler::transform(const Eigen::VectorXd& row) const {
  if (static_cast<std::size_t>(row.size()) != min_.size()) throw DimensionError("scaler width mismatch");
  Eigen::VectorXd out(row.size());
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    const double span = max_[i] - min_[i];
    const double v = span > 0.0 ? (row[i] - min_[i]) / span : 0.0;
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Eigen::MatrixXd Scaler::transform(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) out.row(r) = transform(Eigen::VectorXd(rows.row(r).transpose())).transpose();
  return out;
}

Eigen::VectorXd Scaler::inverse_transform(const Eigen::VectorXd& row) const {
  if (static_cast<std::size_t>(row.size()) != min_.size()) throw DimensionError("scaler width mismatch");
  Eigen::VectorXd out(row.size());
  for (Eigen::Index i = 0; i < row.size(); ++i) out[i] = min_[i] + row[i] * (max_[i] - min_[i]);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.schema = schema;
  out.scaler = scaler;
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), rows.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(labels.at(indices[i]));
  }
  return out;
}

Eigen::MatrixXd Dataset::rows_of_class(int cls) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) keep.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), rows.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(keep[i]);
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::size_t level_index(const FeatureSpec& f, const std::string& cell) {
  const auto it = std::find(f.levels.begin(), f.levels.end(), cell);
  if (it == f.levels.end()) throw LoadError("unknown level '" + cell + "' for feature '" + f.name + "'");
  return static_cast<std::size_t>(it - f.levels.begin());
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Eigen::VectorXd encode_cells(const FeatureSchema& schema, const std::vector<std::string>& cells) {
  if (cells.size() != schema.feature_count()) throw DimensionError("expected one cell per feature");
  const auto& layout = schema.layout();
  Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.width()));
  for (const auto& block : layout.blocks()) {
    const auto& spec = schema.feature(block.feature);
    const auto& cell = cells[block.feature];
    const auto col = static_cast<Eigen::Index>(block.first);
    switch (block.kind) {
      case FeatureKind::Numeric: {
        const auto v = parse_double(cell);
        if (!v) throw LoadError("cannot parse '" + cell + "' as a number for feature '" + spec.name + "'");
        row[col] = *v;
        break;
      }
      case FeatureKind::Ordinal:
        row[col] = static_cast<double>(level_index(spec, cell));
        break;
      case FeatureKind::Categorical:
        row[col + static_cast<Eigen::Index>(level_index(spec, cell))] = 1.0;
        break;
    }
  }
  return row;
}

std::vector<std::string> decode_row(const FeatureSchema& schema, const Eigen::VectorXd& row) {
  const auto& layout = schema.layout();
  if (static_cast<std::size_t>(row.size()) != layout.width()) throw DimensionError("row width mismatch");
  std::vector<std::string> cells;
  for (const auto& block : layout.blocks()) {
    const auto& spec = schema.feature(block.feature);
    const auto col = static_cast<Eigen::Index>(block.first);
    switch (block.kind) {
      case FeatureKind::Numeric:
        cells.push_back(format_double(row[col]));
        break;
      case FeatureKind::Ordinal: {
        const auto idx = static_cast<long>(std::lround(row[col]));
        cells.push_back(spec.levels.at(static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(spec.cardinality()) - 1))));
        break;
      }
      case FeatureKind::Categorical: {
        Eigen::Index best = 0;
        row.segment(col, static_cast<Eigen::Index>(block.width)).maxCoeff(&best);
        cells.push_back(spec.levels.at(static_cast<std::size_t>(best)));
        break;
      }
    }
  }
  return cells;
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw LoadError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw LoadError("missing column '" + name + "' in '" + path.string() + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features()) feature_cols.push_back(column_of(f.name));
  const std::size_t target_col = column_of(schema.target_name());

  std::vector<Eigen::VectorXd> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw LoadError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    std::vector<std::string> feature_cells;
    for (auto c : feature_cols) feature_cells.push_back(cells[c]);
    try {
      rows.push_back(encode_cells(schema, feature_cells));
    } catch (const LoadError& e) {
      throw LoadError("row " + std::to_string(line_no) + ": " + e.what());
    }
    const auto& names = schema.class_names();
    const auto it = std::find(names.begin(), names.end(), cells[target_col]);
    if (it == names.end()) {
      throw LoadError("row " + std::to_string(line_no) + ": unknown class '" + cells[target_col] + "' in column '" +
                      schema.target_name() + "'");
    }
    labels.push_back(static_cast<int>(it - names.begin()));
  }

  Dataset ds;
  ds.schema = schema;
  ds.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.encoded_width()));
  for (std::size_t i = 0; i < rows.size(); ++i) ds.rows.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  ds.labels = std::move(labels);
  return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& f : ds.schema.features()) out << f.name << ',';
  out << ds.schema.target_name() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::VectorXd raw = ds.row(i);
    if (ds.scaler) raw = ds.scaler->inverse_transform(raw);
    for (const auto& cell : decode_row(ds.schema, raw)) out << cell << ',';
    out << ds.schema.class_names().at(static_cast<std::size_t>(ds.labels[i])) << '\n';
  }
}

Split split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  if (ds.size() == 0) throw Error("cannot split an empty dataset");
  if (ratios.train <= 0 || ratios.cal <= 0 || ratios.test <= 0) throw Error("split ratios must be positive");
  if (std::abs(ratios.train + ratios.cal + ratios.test - 1.0) > 1e-9) throw Error("split ratios must sum to 1");

  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  // The small epsilon keeps 0.6 * 10 from flooring to 5 on representation error.
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.train + 1e-9));
  const auto n_cal = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.cal + 1e-9));
  const std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> cal(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
  const std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), order.end());
  return Split{ds.subset(train), ds.subset(cal), ds.subset(test)};
}

Split normalize(const Split& raw) {
  const Scaler scaler = Scaler::fit(raw.train.schema, raw.train.rows);
  auto apply = [&](const Dataset& ds) {
    Dataset out = ds;
    out.rows = scaler.transform(ds.rows);
    out.scaler = scaler;
    return out;
  };
  return Split{apply(raw.train), apply(raw.cal), apply(raw.test)};
}

Dataset synthetic_2d(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw Error("synthetic_2d needs n >= 4");
  constexpr double kInner = 0.2;
  constexpr double kOuter = 0.4;
  constexpr double kSigma = 0.07;
  constexpr double kNoise = 0.05;
  constexpr std::array<std::array<double, 2>, 2> kBlobs{{{0.15, 0.15}, {0.85, 0.85}}};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, kSigma);

  Dataset ds;
  ds.schema = FeatureSchema({FeatureSpec::numeric("x1"), FeatureSpec::numeric("x2")}, "y", {"0", "1"}, 1);
  ds.rows.resize(static_cast<Eigen::Index>(n), 2);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    int label = unit(rng) < 0.5 ? 0 : 1;
    if (label == 0) {
      // Uniform in area on the annulus.
      const double radius = std::sqrt(kInner * kInner + unit(rng) * (kOuter * kOuter - kInner * kInner));
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      ds.rows(r, 0) = 0.5 + radius * std::cos(angle);
      ds.rows(r, 1) = 0.5 + radius * std::sin(angle);
    } else {
      const auto& centre = kBlobs[unit(rng) < 0.5 ? 0 : 1];
      ds.rows(r, 0) = std::clamp(centre[0] + gauss(rng), 0.0, 1.0);
      ds.rows(r, 1) = std::clamp(centre[1] + gauss(rng), 0.0, 1.0);
    }
    if (unit(rng) < kNoise) label = 1 - label;
    ds.labels[i] = label;
  }
  return ds;
}

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm) {
  switch (norm) {
    case Norm::L1:
      return (a - b).lpNorm<1>();
    case Norm::L2:
      return (a - b).norm();
    case Norm::LInf:
      return (a - b).lpNorm<Eigen::Infinity>();
  }
  return 0.0;
}

double median_pairwise_distance(const Eigen::MatrixXd& rows, Norm norm) {
  const auto n = rows.rows();
  if (n < 2) throw Error("median pairwise distance needs at least two rows");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d.push_back(distance(rows.row(i).transpose(), rows.row(j).transpose(), norm));
    }
  }
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>((d.size() - 1) / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace confex
