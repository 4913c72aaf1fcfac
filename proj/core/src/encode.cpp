#include "confex/encode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "confex/error.hpp"

namespace confex::milp {

namespace {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

Range range_of(const MilpModel& b, Var v) {
  const auto& var = b.variable(v);
  return {var.lo, var.hi};
}

double widen(double v) { return 1e-6 * (1.0 + std::abs(v)); }

int category_of(const Eigen::VectorXd& row, const ColumnBlock& block) {
  Eigen::Index k = 0;
  row.segment(static_cast<Eigen::Index>(block.first), static_cast<Eigen::Index>(block.width)).maxCoeff(&k);
  return static_cast<int>(k);
}

std::string idx(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }
std::string idx(const std::string& base, std::size_t i, std::size_t j) {
  return base + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
}

}  // namespace

InputHandles encode_input(MilpModel& b, const FeatureSchema& schema, const Actionability& rules,
                          const std::optional<Eigen::VectorXd>& factual) {
  const auto& layout = schema.layout();
  if (!rules.per_feature.empty() && rules.per_feature.size() != schema.feature_count()) {
    throw Error("actionability rules must list every feature");
  }
  if (factual && static_cast<std::size_t>(factual->size()) != layout.width()) {
    throw DimensionError("factual row does not match the schema width");
  }
  InputHandles h;
  h.columns.resize(layout.width());
  h.levels.resize(schema.feature_count());
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const auto& spec = schema.feature(f);
    const auto& block = layout.block(f);
    const Direction dir = rules.of(f);
    if (dir != Direction::Free && !factual) throw Error("feature '" + spec.name + "' has a direction rule but no factual");
    const double x0 = factual ? std::clamp((*factual)[static_cast<Eigen::Index>(block.first)], 0.0, 1.0) : 0.0;

    switch (spec.kind) {
      case FeatureKind::Numeric: {
        double lo = 0.0;
        double hi = 1.0;
        if (dir == Direction::Fixed || dir == Direction::Increase) lo = x0;
        if (dir == Direction::Fixed || dir == Direction::Decrease) hi = x0;
        h.columns[block.first] = b.add_continuous(spec.name, lo, hi);
        break;
      }
      case FeatureKind::Ordinal: {
        const double top = static_cast<double>(spec.cardinality() - 1);
        const double level0 = std::round(x0 * top);
        double lo = 0.0;
        double hi = top;
        if (dir == Direction::Fixed || dir == Direction::Increase) lo = level0;
        if (dir == Direction::Fixed || dir == Direction::Decrease) hi = level0;
        const Var level = b.add_integer(spec.name + ".level", lo, hi);
        const Var alias = b.add_continuous(spec.name, top > 0 ? lo / top : 0.0, top > 0 ? hi / top : 0.0);
        if (top > 0) b.add_eq(LinExpr(alias) - LinExpr(level, 1.0 / top), 0.0, spec.name + ".alias");
        h.columns[block.first] = alias;
        h.levels[f] = level;
        break;
      }
      case FeatureKind::Categorical: {
        if (dir == Direction::Increase || dir == Direction::Decrease) {
          throw Error("categorical feature '" + spec.name + "' admits only Free or Fixed");
        }
        LinExpr sum;
        const int k0 = factual ? category_of(*factual, block) : -1;
        for (std::size_t j = 0; j < block.width; ++j) {
          const Var o = b.add_binary(spec.name + "=" + spec.levels[j]);
          if (dir == Direction::Fixed) b.fix(o, static_cast<int>(j) == k0 ? 1.0 : 0.0);
          h.columns[block.first + j] = o;
          sum += o;
        }
        b.add_eq(sum, 1.0, spec.name + ".onehot");
        break;
      }
    }
  }
  return h;
}

BigMBounds BigMBounds::compute(const MlpModel& model, const Eigen::VectorXd& input_lo, const Eigen::VectorXd& input_hi) {
  if (static_cast<std::size_t>(input_lo.size()) != model.input_dim() || input_hi.size() != input_lo.size()) {
    throw DimensionError("input box does not match the network");
  }
  BigMBounds out;
  Eigen::VectorXd a_lo = input_lo;
  Eigen::VectorXd a_hi = input_hi;
  for (const auto& layer : model.layers()) {
    const Eigen::MatrixXd wp = layer.weights.cwiseMax(0.0);
    const Eigen::MatrixXd wn = layer.weights.cwiseMin(0.0);
    Eigen::VectorXd lo = wp * a_lo + wn * a_hi + layer.bias;
    Eigen::VectorXd hi = wp * a_hi + wn * a_lo + layer.bias;
    if (!lo.allFinite() || !hi.allFinite()) throw Error("pre-activation interval is unbounded");
    a_lo = lo.cwiseMax(0.0);
    a_hi = hi.cwiseMax(0.0);
    out.lo.push_back(std::move(lo));
    out.hi.push_back(std::move(hi));
  }
  return out;
}

bool BigMBounds::contains(const MlpModel& model, const Eigen::VectorXd& x, double tol) const {
  const auto pre = model.pre_activations(x);
  for (std::size_t l = 0; l < pre.size(); ++l) {
    if (((pre[l] - lo[l]).array() < -tol).any() || ((pre[l] - hi[l]).array() > tol).any()) return false;
  }
  return true;
}

std::vector<Var> encode_mlp(MilpModel& b, const MlpModel& model, const InputHandles& in) {
  const auto dim = model.input_dim();
  if (in.columns.size() != dim) throw DimensionError("input handles do not match the network");
  Eigen::VectorXd in_lo(static_cast<Eigen::Index>(dim));
  Eigen::VectorXd in_hi(static_cast<Eigen::Index>(dim));
  std::vector<LinExpr> act;
  for (std::size_t c = 0; c < dim; ++c) {
    const auto r = range_of(b, in.columns[c]);
    in_lo[static_cast<Eigen::Index>(c)] = r.lo;
    in_hi[static_cast<Eigen::Index>(c)] = r.hi;
    act.emplace_back(in.columns[c]);
  }
  const auto bounds = BigMBounds::compute(model, in_lo, in_hi);
  const auto& layers = model.layers();

  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const auto& w = layers[l].weights;
    std::vector<LinExpr> next;
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
      LinExpr pre(layers[l].bias[j]);
      for (Eigen::Index k = 0; k < w.cols(); ++k) {
        if (w(j, k) != 0.0) pre.add(act[static_cast<std::size_t>(k)], w(j, k));
      }
      const double lo = bounds.lo[l][j];
      const double hi = bounds.hi[l][j];
      const std::string name = idx("h" + std::to_string(l), static_cast<std::size_t>(j));
      if (hi <= 0.0) {
        next.emplace_back(0.0);
      } else if (lo >= 0.0) {
        next.push_back(pre);
      } else {
        const Var a = b.add_continuous(name, 0.0, hi);
        const Var z = b.add_binary(name + ".on");
        b.add_ge(LinExpr(a) - pre, 0.0, name + ".ge_pre");
        b.add_le(LinExpr(a) - pre - LinExpr(z, lo), -lo, name + ".off");
        b.add_le(LinExpr(a) - LinExpr(z, hi), 0.0, name + ".on");
        b.record_big_m(name + ".off", -lo, "interval lower bound of the pre-activation");
        b.record_big_m(name + ".on", hi, "interval upper bound of the pre-activation");
        next.emplace_back(a);
      }
    }
    act = std::move(next);
  }

  const auto& out = layers.back();
  const std::size_t last = layers.size() - 1;
  std::vector<Var> logits;
  for (Eigen::Index c = 0; c < out.weights.rows(); ++c) {
    LinExpr pre(out.bias[c]);
    for (Eigen::Index k = 0; k < out.weights.cols(); ++k) {
      if (out.weights(c, k) != 0.0) pre.add(act[static_cast<std::size_t>(k)], out.weights(c, k));
    }
    const double lo = bounds.lo[last][c];
    const double hi = bounds.hi[last][c];
    const Var v = b.add_continuous(idx("logit", static_cast<std::size_t>(c)), lo - widen(lo), hi + widen(hi));
    b.add_eq(LinExpr(v) - pre, 0.0, idx("logit", static_cast<std::size_t>(c)));
    logits.push_back(v);
  }
  b.set_handle("logits", logits);
  return logits;
}

std::vector<Var> encode_forest(MilpModel& b, const TreeEnsemble& ens, const InputHandles& in, double eps_split) {
  if (in.columns.size() != ens.input_dim()) throw DimensionError("input handles do not match the forest");
  const auto k = static_cast<std::size_t>(ens.class_count());
  std::vector<LinExpr> prob(k);
  const double share = 1.0 / static_cast<double>(ens.trees().size());

  for (std::size_t t = 0; t < ens.trees().size(); ++t) {
    const auto& tree = ens.trees()[t];
    std::vector<Var> z(tree.node_count());
    LinExpr one;
    for (std::size_t n = 0; n < tree.node_count(); ++n) {
      if (!tree.is_leaf(n)) continue;
      z[n] = b.add_binary(idx("leaf", t, n));
      one += z[n];
      for (std::size_t c = 0; c < k; ++c) prob[c].add(z[n], share * tree.value[n][static_cast<Eigen::Index>(c)]);
    }
    b.add_eq(one, 1.0, idx("tree", t));

    // Sum of leaf binaries below each node, built bottom-up.
    std::vector<LinExpr> below(tree.node_count());
    for (std::size_t n = tree.node_count(); n-- > 0;) {
      if (tree.is_leaf(n)) below[n] = LinExpr(z[n]);
    }
    std::vector<std::size_t> order;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const auto n = stack.back();
      stack.pop_back();
      order.push_back(n);
      if (!tree.is_leaf(n)) {
        stack.push_back(static_cast<std::size_t>(tree.left[n]));
        stack.push_back(static_cast<std::size_t>(tree.right[n]));
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto n = *it;
      if (tree.is_leaf(n)) continue;
      below[n] = below[static_cast<std::size_t>(tree.left[n])] + below[static_cast<std::size_t>(tree.right[n])];
    }

    for (auto n : order) {
      if (tree.is_leaf(n)) continue;
      const Var x = in.columns.at(static_cast<std::size_t>(tree.feature[n]));
      const auto r = range_of(b, x);
      const double thr = tree.threshold[n];
      const auto& left = below[static_cast<std::size_t>(tree.left[n])];
      const auto& right = below[static_cast<std::size_t>(tree.right[n])];
      const std::string name = idx("split", t, n);
      const double m_left = r.hi - (thr - eps_split);
      if (m_left > 0.0) {
        // x <= thr - eps + M (1 - left)
        b.add_le(LinExpr(x) + m_left * left, thr - eps_split + m_left, name + ".left");
        b.record_big_m(name + ".left", m_left, "input upper bound minus threshold");
      }
      const double m_right = (thr + eps_split) - r.lo;
      if (m_right > 0.0) {
        // x >= thr + eps - M (1 - right)
        b.add_ge(LinExpr(x) - m_right * right, thr + eps_split - m_right, name + ".right");
        b.record_big_m(name + ".right", m_right, "threshold minus input lower bound");
      }
    }
  }

  std::vector<Var> out;
  for (std::size_t c = 0; c < k; ++c) {
    const Var p = b.add_continuous(idx("prob", c), 0.0, 1.0);
    b.add_eq(LinExpr(p) - prob[c], 0.0, idx("prob", c));
    out.push_back(p);
  }
  b.set_handle("probs", out);
  return out;
}

std::vector<Var> encode_classifier(MilpModel& b, const Classifier& model, const InputHandles& in) {
  std::vector<Var> scores = model.mlp() ? encode_mlp(b, *model.mlp(), in) : encode_forest(b, *model.forest(), in);
  b.set_handle("scores", scores);
  return scores;
}

Var encode_l1_distance(MilpModel& b, const FeatureSchema& schema, const Eigen::VectorXd& x0, const InputHandles& in) {
  const auto& layout = schema.layout();
  if (static_cast<std::size_t>(x0.size()) != layout.width() || in.columns.size() != layout.width()) {
    throw DimensionError("factual does not match the schema width");
  }
  LinExpr dist;
  double max_dist = 0.0;
  for (const auto& block : layout.blocks()) {
    const auto& name = schema.feature(block.feature).name;
    if (block.kind == FeatureKind::Categorical) {
      // With x0 one-hot at k, sum_j |o_j - x0_j| = 2 (1 - o_k); half of that is charged.
      const auto k = static_cast<std::size_t>(category_of(x0, block));
      dist.add_constant(1.0);
      dist.add(in.columns[block.first + k], -1.0);
      max_dist += 1.0;
      continue;
    }
    const Var x = in.columns[block.first];
    const double v0 = x0[static_cast<Eigen::Index>(block.first)];
    const auto r = range_of(b, x);
    const double top = std::max({std::abs(r.hi - v0), std::abs(r.lo - v0), 0.0});
    const Var t = b.add_continuous("dist." + name, 0.0, top);
    b.add_ge(LinExpr(t) - LinExpr(x), -v0, "dist." + name + ".pos");
    b.add_ge(LinExpr(t) + LinExpr(x), v0, "dist." + name + ".neg");
    dist += t;
    max_dist += top;
  }
  const Var d = b.add_continuous("distance", 0.0, max_dist);
  b.add_eq(LinExpr(d) - dist, 0.0, "distance");
  b.set_objective(LinExpr(d));
  b.set_handle("distance", {d});
  return d;
}

void encode_classification(MilpModel& b, const std::vector<Var>& scores, int target, double eps_strict) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size()) throw Error("target class is out of range");
  for (std::size_t y = 0; y < scores.size(); ++y) {
    if (static_cast<int>(y) == target) continue;
    b.add_ge(LinExpr(scores[static_cast<std::size_t>(target)]) - LinExpr(scores[y]), eps_strict, idx("classify", y));
  }
}

void encode_singleton(MilpModel& b, const std::vector<Var>& scores, int target, QuantileRef q, double eps_strict) {
  const auto k = scores.size();
  if (target < 0 || static_cast<std::size_t>(target) >= k) throw Error("target class is out of range");
  const auto yp = static_cast<std::size_t>(target);
  LinExpr qe;
  Range qr;
  if (const double* c = std::get_if<double>(&q)) {
    if (std::isinf(*c)) {
      b.mark_infeasible(*c > 0 ? "quantile is +inf: every class is in the region"
                               : "quantile is -inf: the region is empty");
      return;
    }
    qe = LinExpr(*c);
    qr = {*c, *c};
  } else {
    qe = LinExpr(std::get<Var>(q));
    qr = range_of(b, std::get<Var>(q));
  }

  // Target in the region: v[y'] - v[y+] <= q for every other class.
  for (std::size_t y = 0; y < k; ++y) {
    if (y == yp) continue;
    b.add_le(LinExpr(scores[y]) - LinExpr(scores[yp]) - qe, 0.0, idx("region.in", y));
  }
  // Every other class out: some y' != y with v[y'] - v[y] >= q + eps.
  for (std::size_t y = 0; y < k; ++y) {
    if (y == yp) continue;
    if (k == 2) {
      b.add_ge(LinExpr(scores[yp]) - LinExpr(scores[y]) - qe, eps_strict, idx("region.out", y));
      continue;
    }
    LinExpr any;
    for (std::size_t y2 = 0; y2 < k; ++y2) {
      if (y2 == y) continue;
      const Var u = b.add_binary(idx("region.u", y, y2));
      const auto r1 = range_of(b, scores[y2]);
      const auto r2 = range_of(b, scores[y]);
      const double m = std::max(0.0, eps_strict + qr.hi - (r1.lo - r2.hi));
      const std::string name = idx("region.out", y, y2);
      b.add_ge(LinExpr(scores[y2]) - LinExpr(scores[y]) - qe - LinExpr(u, m), eps_strict - m, name);
      b.record_big_m(name, m, "score interval width plus quantile upper bound");
      any += u;
    }
    b.add_ge(any, 1.0, idx("region.any", y));
  }
}

Var encode_lcp_quantile(MilpModel& b, const CalibrationSet& cal, const KernelSpec& spec, double alpha,
                        const InputHandles& in, const LcpEncodingOptions& options) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  if (spec.norm != Norm::L1) throw Error("the localised quantile encoding supports the L1 kernel only");
  const std::size_t n = cal.size();
  if (n > options.max_points) {
    throw SizeError("calibration set has " + std::to_string(n) + " points, above the localised-quantile budget of " +
                    std::to_string(options.max_points) + "; use the quantile-tree method instead");
  }
  if (n == 0) {
    const Var q = b.add_continuous("quantile", 0.0, 0.0);
    b.mark_infeasible("empty calibration set");
    return q;
  }
  const double h = spec.bandwidth;
  const double eps = options.eps_kernel;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto c) { return cal.scores[a] < cal.scores[c]; });

  std::vector<Var> in_vars(n);
  std::vector<Var> w(n);
  LinExpr local_count;
  LinExpr local_in_prefix;
  for (std::size_t p = 0; p < n; ++p) {
    const auto i = order[p];
    const Eigen::VectorXd xi = cal.point(i);
    const std::string tag = idx("lcp", p);

    // Exact |x_c - xi_c| with one sign binary per straddling coordinate.
    LinExpr d;
    double d_lo = 0.0;
    double d_hi = 0.0;
    for (auto c : spec.continuous_columns) {
      const Var x = in.columns.at(c);
      const double v = xi[static_cast<Eigen::Index>(c)];
      const auto r = range_of(b, x);
      const double lo = r.lo - v;
      const double hi = r.hi - v;
      if (lo >= 0.0) {
        d.add(x, 1.0).add_constant(-v);
        d_lo += lo;
        d_hi += hi;
      } else if (hi <= 0.0) {
        d.add(x, -1.0).add_constant(v);
        d_lo += -hi;
        d_hi += -lo;
      } else {
        const std::string en = idx(tag + ".abs", c);
        const Var e = b.add_continuous(en, 0.0, std::max(-lo, hi));
        const Var s = b.add_binary(en + ".sign");
        const LinExpr diff = LinExpr(x).add_constant(-v);
        b.add_ge(LinExpr(e) - diff, 0.0, en + ".pos");
        b.add_ge(LinExpr(e) + diff, 0.0, en + ".neg");
        // s = 1: e <= diff; s = 0: e <= -diff.
        b.add_le(LinExpr(e) - diff + LinExpr(s, -2.0 * lo), -2.0 * lo, en + ".tight_pos");
        b.add_le(LinExpr(e) + diff - LinExpr(s, 2.0 * hi), 0.0, en + ".tight_neg");
        b.record_big_m(en + ".tight_pos", -2.0 * lo, "twice the negative difference range");
        b.record_big_m(en + ".tight_neg", 2.0 * hi, "twice the positive difference range");
        d.add(e, 1.0);
        d_hi += std::max(-lo, hi);
      }
    }

    w[p] = b.add_binary(tag + ".w");
    if (d_hi > h) {
      const double m = d_hi - h;
      b.add_le(d + LinExpr(w[p], m), h + m, tag + ".near");
      b.record_big_m(tag + ".near", m, "distance upper bound minus bandwidth");
    }
    LinExpr mismatch;
    for (const auto& block : spec.matched_blocks) {
      const auto k = static_cast<std::size_t>(category_of(xi, block));
      const Var o = in.columns.at(block.first + k);
      b.add_le(LinExpr(w[p]) - LinExpr(o), 0.0, tag + ".match." + std::to_string(block.feature));
      mismatch.add_constant(1.0).add(o, -1.0);
    }
    const double m_far = h + eps - d_lo;
    if (m_far > 0.0) {
      // w = 0 needs d >= h + eps unless some matched category differs.
      b.add_ge(d + m_far * mismatch + LinExpr(w[p], m_far), h + eps, tag + ".far");
      b.record_big_m(tag + ".far", m_far, "bandwidth plus margin minus distance lower bound");
    }

    in_vars[p] = b.add_binary(tag + ".in");
    const Var prod = b.add_continuous(tag + ".in_and_w", 0.0, 1.0);
    b.add_le(LinExpr(prod) - LinExpr(in_vars[p]), 0.0, tag + ".and1");
    b.add_le(LinExpr(prod) - LinExpr(w[p]), 0.0, tag + ".and2");
    b.add_ge(LinExpr(prod) - LinExpr(in_vars[p]) - LinExpr(w[p]), -1.0, tag + ".and3");
    local_count += w[p];
    local_in_prefix += prod;
  }

  b.fix(in_vars[0], 1.0);
  for (std::size_t p = 0; p < n; ++p) {
    LinExpr last(in_vars[p]);
    if (p + 1 < n) {
      b.add_ge(LinExpr(in_vars[p]) - LinExpr(in_vars[p + 1]), 0.0, idx("lcp.prefix", p));
      last -= LinExpr(in_vars[p + 1]);
    }
    // The prefix ends on a local point.
    b.add_le(last - LinExpr(w[p]), 0.0, idx("lcp.last", p));
  }

  // Prefix holds exactly ceil((1 - alpha)(W + 1)) local points, W = number of local points.
  const double beta = 1.0 - alpha;
  double delta = 1.0;
  for (std::size_t cnt = 0; cnt <= n; ++cnt) {
    const double z = beta * static_cast<double>(cnt + 1);
    delta = std::min(delta, z + 1.0 - std::ceil(z - 1e-9));
  }
  delta *= 0.5;
  const LinExpr rank = local_in_prefix - beta * local_count;
  b.add_ge(rank, beta, "lcp.rank_lo");
  b.add_le(rank, beta + 1.0 - delta, "lcp.rank_hi");

  LinExpr qexpr;
  double prev = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double s = cal.scores[order[p]];
    qexpr.add(in_vars[p], s - prev);
    prev = s;
  }
  const double s_min = cal.scores[order.front()];
  const double s_max = cal.scores[order.back()];
  const Var q = b.add_continuous("quantile", s_min - widen(s_min), s_max + widen(s_max));
  b.add_eq(LinExpr(q) - qexpr, 0.0, "quantile");
  b.set_handle("quantile", {q});
  return q;
}

Var encode_tree_quantile(MilpModel& b, const QuantileForest& forest, const InputHandles& in, double eps_split) {
  const double half = 0.5 * forest.bandwidth();
  struct Candidate {
    const StratumKey* key;
    std::vector<std::size_t> columns;
    std::vector<double> lo;
    std::vector<double> hi;
    double q;
  };
  std::vector<Candidate> cands;
  for (const auto& [key, tree] : forest.strata()) {
    for (const auto& leaf : tree.leaves()) {
      if (!std::isfinite(leaf.quantile)) continue;
      Candidate c{&key, tree.columns(), {}, {}, leaf.quantile};
      bool empty = false;
      for (std::size_t j = 0; j < tree.columns().size() && !empty; ++j) {
        const auto r = range_of(b, in.columns.at(tree.columns()[j]));
        const auto jj = static_cast<Eigen::Index>(j);
        const double lo = std::max({leaf.cell_lo[jj] + eps_split, leaf.midpoint[jj] - half + eps_split, r.lo});
        const double hi = std::min({leaf.cell_hi[jj] - eps_split, leaf.midpoint[jj] + half - eps_split, r.hi});
        empty = lo > hi;
        c.lo.push_back(lo);
        c.hi.push_back(hi);
      }
      if (!empty) cands.push_back(std::move(c));
    }
  }
  if (cands.empty()) {
    const Var q = b.add_continuous("quantile", 0.0, 0.0);
    b.mark_infeasible("no leaf with a finite quantile is reachable");
    return q;
  }

  std::vector<Var> z;
  LinExpr one;
  LinExpr qexpr;
  double q_lo = kInf;
  double q_hi = -kInf;
  for (std::size_t g = 0; g < cands.size(); ++g) {
    z.push_back(b.add_binary(idx("tree.leaf", g)));
    one += z.back();
    qexpr.add(z.back(), cands[g].q);
    q_lo = std::min(q_lo, cands[g].q);
    q_hi = std::max(q_hi, cands[g].q);
  }
  b.add_eq(one, 1.0, "tree.select");

  // Selected leaf box, aggregated over the exactly-one selection.
  std::vector<std::size_t> all_columns;
  for (const auto& c : cands) all_columns.insert(all_columns.end(), c.columns.begin(), c.columns.end());
  std::sort(all_columns.begin(), all_columns.end());
  all_columns.erase(std::unique(all_columns.begin(), all_columns.end()), all_columns.end());
  for (auto col : all_columns) {
    const Var x = in.columns.at(col);
    const auto r = range_of(b, x);
    LinExpr lo_sum;
    LinExpr hi_sum;
    for (std::size_t g = 0; g < cands.size(); ++g) {
      const auto it = std::find(cands[g].columns.begin(), cands[g].columns.end(), col);
      const auto j = static_cast<std::size_t>(it - cands[g].columns.begin());
      lo_sum.add(z[g], it == cands[g].columns.end() ? r.lo : cands[g].lo[j]);
      hi_sum.add(z[g], it == cands[g].columns.end() ? r.hi : cands[g].hi[j]);
    }
    b.add_ge(LinExpr(x) - lo_sum, 0.0, idx("tree.box_lo", col));
    b.add_le(LinExpr(x) - hi_sum, 0.0, idx("tree.box_hi", col));
  }

  // Selected stratum's categorical pattern.
  const auto& blocks = forest.stratified_blocks();
  for (std::size_t p = 0; p < blocks.size(); ++p) {
    for (std::size_t cat = 0; cat < blocks[p].width; ++cat) {
      LinExpr chosen;
      for (std::size_t g = 0; g < cands.size(); ++g) {
        if ((*cands[g].key)[p] == static_cast<int>(cat)) chosen += z[g];
      }
      if (chosen.terms().empty()) continue;
      b.add_ge(LinExpr(in.columns.at(blocks[p].first + cat)) - chosen, 0.0, idx("tree.stratum", p, cat));
    }
  }

  const Var q = b.add_continuous("quantile", q_lo - widen(q_lo), q_hi + widen(q_hi));
  b.add_eq(LinExpr(q) - qexpr, 0.0, "quantile");
  b.set_handle("quantile", {q});
  b.set_handle("tree.leaves", z);
  return q;
}

}  // namespace confex::milp
