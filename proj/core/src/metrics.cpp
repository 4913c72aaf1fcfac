#include "confex/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "confex/error.hpp"
#include "confex/generators.hpp"

namespace confex {

LofModel LofModel::fit(Eigen::MatrixXd reference, int k) {
  if (k < 1) throw MetricError("LOF needs k >= 1");
  if (reference.rows() < k + 1) {
    throw MetricError("LOF reference has " + std::to_string(reference.rows()) + " rows, needs at least " +
                      std::to_string(k + 1));
  }
  LofModel m;
  m.ref_ = std::move(reference);
  m.k_ = k;
  const Eigen::Index n = m.ref_.rows();
  std::vector<std::vector<std::pair<double, Eigen::Index>>> nbrs(static_cast<std::size_t>(n));
  m.kdist_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    nbrs[static_cast<std::size_t>(i)] = m.neighbours(m.ref_.row(i).transpose(), i);
    m.kdist_[i] = nbrs[static_cast<std::size_t>(i)].back().first;
  }
  m.lrd_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double reach = 0.0;
    for (const auto& [d, o] : nbrs[static_cast<std::size_t>(i)]) reach += std::max(m.kdist_[o], d);
    m.lrd_[i] = 1.0 / (reach / k + 1e-10);
  }
  return m;
}

std::vector<std::pair<double, Eigen::Index>> LofModel::neighbours(const Eigen::VectorXd& x, Eigen::Index skip) const {
  std::vector<std::pair<double, Eigen::Index>> all;
  all.reserve(static_cast<std::size_t>(ref_.rows()));
  for (Eigen::Index j = 0; j < ref_.rows(); ++j) {
    if (j != skip) all.emplace_back((ref_.row(j).transpose() - x).norm(), j);
  }
  const auto kk = static_cast<std::size_t>(k_);
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end());
  all.resize(kk);
  return all;
}

double LofModel::ratio(const Eigen::VectorXd& x) const {
  if (x.size() != ref_.cols()) throw DimensionError("LOF query has the wrong width");
  const auto nb = neighbours(x, -1);
  double reach = 0.0;
  double lrd_sum = 0.0;
  for (const auto& [d, o] : nb) {
    reach += std::max(kdist_[o], d);
    lrd_sum += lrd_[o];
  }
  const double lrd_x = 1.0 / (reach / k_ + 1e-10);
  return (lrd_sum / k_) / lrd_x;
}

int lof_label(double ratio, double threshold) { return ratio <= threshold ? 1 : -1; }

double lof_plausibility(const std::vector<Eigen::VectorXd>& cfx, const std::vector<int>& targets,
                        const Dataset& reference, int k, double threshold) {
  if (cfx.size() != targets.size()) throw MetricError("counterfactuals and targets differ in length");
  if (cfx.empty()) throw MetricError("no counterfactuals to score");
  std::map<int, LofModel> models;
  double total = 0.0;
  for (std::size_t i = 0; i < cfx.size(); ++i) {
    auto it = models.find(targets[i]);
    if (it == models.end()) {
      const Eigen::MatrixXd rows = reference.rows_of_class(targets[i]);
      if (rows.rows() < k + 1) {
        const auto& names = reference.schema.class_names();
        const std::string name = targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < names.size()
                                     ? names[static_cast<std::size_t>(targets[i])]
                                     : std::to_string(targets[i]);
        throw MetricError("class '" + name + "' stratum has " + std::to_string(rows.rows()) +
                          " rows; LOF needs at least " + std::to_string(k + 1));
      }
      it = models.emplace(targets[i], LofModel::fit(rows, k)).first;
    }
    total += lof_label(it->second.ratio(cfx[i]), threshold);
  }
  return total / static_cast<double>(cfx.size());
}

double implausibility(const Eigen::VectorXd& x, const Eigen::MatrixXd& target_points, const FeatureSchema* schema) {
  const auto n = static_cast<std::size_t>(target_points.rows());
  if (n == 0) throw MetricError("implausibility needs target-class points");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd p = target_points.row(static_cast<Eigen::Index>(i)).transpose();
    d[i] = schema ? cfx_distance(*schema, x, p) : (p - x).cwiseAbs().sum();
  }
  const auto m = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n) - 1e-9));
  const auto take = std::max<std::size_t>(1, m);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
  return std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), 0.0) / static_cast<double>(take);
}

double ball_radius(double fraction, int dims, double total_volume) {
  if (dims < 1) throw MetricError("ball dimension must be positive");
  if (!(fraction > 0.0) || !(total_volume > 0.0)) throw MetricError("ball volume must be positive");
  const double d = dims;
  const double unit = std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
  return std::pow(fraction * total_volume / unit, 1.0 / d);
}

int noncategorical_dims(const FeatureSchema& schema) {
  return static_cast<int>(schema.layout().continuous_columns().size());
}

Eigen::VectorXd sample_ball(const Eigen::VectorXd& center, double radius, const FeatureSchema& schema,
                            std::mt19937_64& rng) {
  const auto& cols = schema.layout().continuous_columns();
  Eigen::VectorXd out = center;
  if (cols.empty()) return out;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd dir(static_cast<Eigen::Index>(cols.size()));
  do {
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = normal(rng);
  } while (dir.norm() == 0.0);
  dir /= dir.norm();
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out[static_cast<Eigen::Index>(cols[i])] += r * dir[static_cast<Eigen::Index>(i)];
  return snap_to_domain(schema, out);
}

std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

SensitivityReport sensitivity_from_samples(const std::vector<SensitivitySample>& samples) {
  SensitivityReport rep;
  double sum = 0.0;
  for (const auto& s : samples) {
    if (!s.cfx) {
      rep.failures += s.neighbour_cfx.size();
      continue;
    }
    const double base = (*s.cfx - s.factual).norm();
    for (const auto& nc : s.neighbour_cfx) {
      if (!nc) {
        ++rep.failures;
        continue;
      }
      if (base < 1e-12) {
        ++rep.degenerate;
        continue;
      }
      sum += (*nc - *s.cfx).norm() / base;
      ++rep.pairs;
    }
  }
  rep.mean = rep.pairs ? sum / static_cast<double>(rep.pairs) : 0.0;
  return rep;
}

SensitivityReport sensitivity(const CfxFunction& generator, const std::vector<Eigen::VectorXd>& factuals,
                              const FeatureSchema& schema, double budget, int per_factual, std::uint64_t seed) {
  const double r = ball_radius(budget, std::max(1, noncategorical_dims(schema)));
  std::vector<SensitivitySample> samples;
  for (std::size_t i = 0; i < factuals.size(); ++i) {
    std::mt19937_64 rng(item_seed(seed, i));
    SensitivitySample s;
    s.factual = factuals[i];
    s.cfx = generator(factuals[i]);
    for (int k = 0; k < per_factual; ++k) {
      s.neighbours.push_back(sample_ball(factuals[i], r, schema, rng));
      s.neighbour_cfx.push_back(s.cfx ? generator(s.neighbours.back()) : std::nullopt);
    }
    samples.push_back(std::move(s));
  }
  return sensitivity_from_samples(samples);
}

double stability_from_probabilities(const std::vector<double>& p) {
  if (p.empty()) throw MetricError("stability needs at least one sample");
  const double n = static_cast<double>(p.size());
  const double mean = std::accumulate(p.begin(), p.end(), 0.0) / n;
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  return mean - std::sqrt(var / n);
}

double stability(const Classifier& model, const Eigen::VectorXd& cfx, int target, const FeatureSchema& schema,
                 double budget, int samples, std::uint64_t seed) {
  if (samples < 1) throw MetricError("stability needs at least one sample");
  const double r = ball_radius(budget, std::max(1, noncategorical_dims(schema)));
  std::mt19937_64 rng(seed);
  std::vector<double> p;
  for (int k = 0; k < samples; ++k) p.push_back(model.probabilities(sample_ball(cfx, r, schema, rng))[target]);
  return stability_from_probabilities(p);
}

CoverageGaps coverage_gaps(const Classifier& model, const QuantileFn& quantile_fn, const Eigen::MatrixXd& test_points,
                           const std::vector<int>& test_labels, double alpha,
                           const std::vector<SimulatedFactual>& factuals, const FeatureSchema* schema, int bins,
                           std::uint64_t seed) {
  const auto n = test_labels.size();
  if (n == 0 || static_cast<std::size_t>(test_points.rows()) != n) throw MetricError("test set is empty or inconsistent");
  if (bins < 1) throw MetricError("bin count must be positive");
  const double target = 1.0 - alpha;
  std::vector<char> covered(n);
  std::vector<int> singleton(n, -1);  // the lone class when the region is a singleton
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = test_points.row(static_cast<Eigen::Index>(i)).transpose();
    const double q = quantile_fn(x);
    const auto region = prediction_region(model, x, q);
    covered[i] = std::find(region.begin(), region.end(), test_labels[i]) != region.end();
    if (region.size() == 1) singleton[i] = region.front();
  }
  auto gap_of = [&](const std::vector<std::size_t>& idx) {
    double c = 0.0;
    for (auto i : idx) c += covered[i];
    return 100.0 * (target - c / static_cast<double>(idx.size()));
  };

  CoverageGaps g;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  g.marginal = gap_of(all);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[test_labels[i]].push_back(i);
  double sum = 0.0;
  for (const auto& [cls, idx] : by_class) sum += gap_of(idx);
  g.class_conditional = sum / static_cast<double>(by_class.size());

  std::vector<std::size_t> perm = all;
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> parts(static_cast<std::size_t>(bins));
  for (std::size_t p = 0; p < n; ++p) parts[p * static_cast<std::size_t>(bins) / n].push_back(perm[p]);
  sum = 0.0;
  std::size_t used = 0;
  for (const auto& part : parts) {
    if (part.empty()) continue;
    sum += gap_of(part);
    ++used;
  }
  g.binned = sum / static_cast<double>(used);

  std::vector<std::size_t> chosen;
  for (const auto& f : factuals) {
    double best = kInf;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (singleton[i] != f.target) continue;
      const Eigen::VectorXd x = test_points.row(static_cast<Eigen::Index>(i)).transpose();
      const double d = schema ? cfx_distance(*schema, f.x, x) : (x - f.x).cwiseAbs().sum();
      if (d < best) {
        best = d;
        pick = i;
      }
    }
    if (pick < n) chosen.push_back(pick);
  }
  g.simulated_points = chosen.size();
  g.simulated_distinct = std::set<std::size_t>(chosen.begin(), chosen.end()).size();
  if (!chosen.empty()) g.simulated = gap_of(chosen);
  return g;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.spread = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

void write_metric_reports(const std::filesystem::path& path, const std::vector<MetricReport>& reports,
                          const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "config_hash,method,alpha,bandwidth,attempted,found,invalid,failed,validity_rate,failure_rate,"
         "distance_mean,distance_sd,plausibility_mean,plausibility_sd,implausibility_mean,implausibility_sd,"
         "stability_mean,stability_sd,sensitivity_mean,sensitivity_pairs,sensitivity_degenerate,sensitivity_failures\n";
  for (const auto& r : reports) {
    out << config_hash << ',' << r.method << ',' << r.alpha << ',' << r.bandwidth << ',' << r.attempted << ','
        << r.found << ',' << r.invalid << ',' << r.failed << ',' << r.validity_rate << ',' << r.failure_rate << ','
        << r.distance.mean << ',' << r.distance.spread << ',' << r.plausibility.mean << ',' << r.plausibility.spread
        << ',' << r.implausibility.mean << ',' << r.implausibility.spread << ',' << r.stability.mean << ','
        << r.stability.spread << ',';
    if (r.sensitivity) {
      out << r.sensitivity->mean << ',' << r.sensitivity->pairs << ',' << r.sensitivity->degenerate << ','
          << r.sensitivity->failures;
    } else {
      out << ",,,";
    }
    out << '\n';
  }
}

}  // namespace confex
