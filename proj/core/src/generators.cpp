#include "confex/generators.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <thread>

#include "confex/error.hpp"
#include "json.hpp"

namespace confex {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check_request(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req) {
  if (static_cast<std::size_t>(req.factual.size()) != schema.encoded_width()) {
    throw DimensionError("factual has " + std::to_string(req.factual.size()) + " columns, schema expects " +
                         std::to_string(schema.encoded_width()));
  }
  if (model.input_dim() != schema.encoded_width()) throw DimensionError("model input width does not match the schema");
  if (req.target < 0 || req.target >= model.class_count()) throw Error("target class is out of range");
  if (!(req.alpha > 0.0 && req.alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
}

std::optional<CfxResult> trivial_result(const Classifier& model, const CfxRequest& req, Clock::time_point t0) {
  if (model.predict(req.factual) != req.target) return std::nullopt;
  CfxResult r;
  r.status = CfxStatus::Found;
  r.counterfactual = req.factual;
  r.distance = 0.0;
  r.trivial = true;
  r.verification = verify(model, req.factual, req.target, std::nullopt);
  r.message = "factual already has the target class";
  r.seconds = since(t0);
  return r;
}

struct Built {
  milp::MilpModel b;
  milp::InputHandles in;
  std::vector<milp::Var> scores;
};

Built build_base(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req) {
  Built out;
  out.in = milp::encode_input(out.b, schema, req.actionability, req.factual);
  out.b.set_handle("inputs", out.in.columns);
  out.scores = milp::encode_classifier(out.b, model, out.in);
  milp::encode_l1_distance(out.b, schema, req.factual, out.in);
  milp::encode_classification(out.b, out.scores, req.target, req.eps_strict);
  return out;
}

using QuantileAt = std::function<double(const Eigen::VectorXd&)>;

CfxResult solve_and_verify(const Built& built, const Classifier& model, const FeatureSchema& schema,
                           const CfxRequest& req, const milp::SolverBackend& backend, milp::SolveOptions options,
                           const QuantileAt& quantile_at, Clock::time_point t0) {
  options.time_limit_s = req.time_limit_s;
  const auto sol = backend.solve(built.b, options);
  CfxResult r;
  r.nodes = sol.nodes;
  r.message = sol.message;
  switch (sol.status) {
    case milp::SolveStatus::Optimal:
      r.status = CfxStatus::Found;
      break;
    case milp::SolveStatus::TimeLimit:
      r.status = CfxStatus::TimeLimit;
      break;
    case milp::SolveStatus::Infeasible:
      r.status = CfxStatus::Infeasible;
      break;
    case milp::SolveStatus::Error:
      r.status = CfxStatus::Infeasible;
      r.message = "solver error: " + sol.message;
      break;
  }
  if (sol.has_values()) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(built.in.columns.size()));
    for (std::size_t c = 0; c < built.in.columns.size(); ++c) x[static_cast<Eigen::Index>(c)] = sol.value(built.in.columns[c]);
    r.counterfactual = snap_to_domain(schema, x);
    r.distance = cfx_distance(schema, req.factual, r.counterfactual);
    std::optional<double> q;
    if (quantile_at) q = quantile_at(r.counterfactual);
    r.verification = verify(model, r.counterfactual, req.target, q);
    if (r.status == CfxStatus::Found && !r.verification.valid) {
      r.status = CfxStatus::InvalidSolution;
      r.message = "solution failed re-evaluation outside the optimiser";
    }
  }
  r.seconds = since(t0);
  return r;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::MinDist:
      return "mindist";
    case Method::Naive:
      return "naive";
    case Method::Lcp:
      return "lcp";
    case Method::Tree:
      return "tree";
    case Method::Wachter:
      return "wachter";
  }
  return "mindist";
}

Method method_from_string(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c != '-' && c != '_') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (s == "mindist" || s == "milpmindist") return Method::MinDist;
  if (s == "naive" || s == "confexnaive") return Method::Naive;
  if (s == "lcp" || s == "confexlcp") return Method::Lcp;
  if (s == "tree" || s == "confextree") return Method::Tree;
  if (s == "wachter") return Method::Wachter;
  throw Error("unknown method '" + name + "'");
}

std::string to_string(CfxStatus s) {
  switch (s) {
    case CfxStatus::Found:
      return "Found";
    case CfxStatus::Infeasible:
      return "Infeasible";
    case CfxStatus::TimeLimit:
      return "TimeLimit";
    case CfxStatus::InvalidSolution:
      return "InvalidSolution";
  }
  return "Infeasible";
}

double cfx_distance(const FeatureSchema& schema, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || static_cast<std::size_t>(a.size()) != schema.encoded_width()) {
    throw DimensionError("rows do not match the schema width");
  }
  double d = 0.0;
  for (const auto& block : schema.layout().blocks()) {
    const auto first = static_cast<Eigen::Index>(block.first);
    const auto width = static_cast<Eigen::Index>(block.width);
    const double diff = (a.segment(first, width) - b.segment(first, width)).cwiseAbs().sum();
    d += block.kind == FeatureKind::Categorical ? 0.5 * diff : diff;
  }
  return d;
}

Eigen::VectorXd snap_to_domain(const FeatureSchema& schema, const Eigen::VectorXd& x) {
  Eigen::VectorXd out = x.cwiseMax(0.0).cwiseMin(1.0);
  for (const auto& block : schema.layout().blocks()) {
    const auto first = static_cast<Eigen::Index>(block.first);
    if (block.kind == FeatureKind::Categorical) {
      Eigen::Index k = 0;
      out.segment(first, static_cast<Eigen::Index>(block.width)).maxCoeff(&k);
      out.segment(first, static_cast<Eigen::Index>(block.width)).setZero();
      out[first + k] = 1.0;
    } else if (block.kind == FeatureKind::Ordinal) {
      const double top = static_cast<double>(schema.feature(block.feature).cardinality() - 1);
      out[first] = top > 0 ? std::round(out[first] * top) / top : 0.0;
    }
  }
  return out;
}

Verification verify(const Classifier& model, const Eigen::VectorXd& x, int target, std::optional<double> quantile) {
  Verification v;
  const Eigen::VectorXd s = model.class_scores(x);
  v.predicted = argmax(s);
  v.valid = v.predicted == target;
  if (quantile) {
    v.quantile = *quantile;
    v.region = prediction_region_from_scores(s, *quantile);
    // The target may sit on q within solver tolerance; every other class must be strictly out.
    bool target_in = std::isfinite(*quantile) ? score_from_class_scores(s, target) <= *quantile + 1e-7 : false;
    bool others_out = true;
    for (int y = 0; y < s.size(); ++y) {
      if (y != target && !(score_from_class_scores(s, y) > *quantile)) others_out = false;
    }
    v.valid = v.valid && target_in && others_out;
    if (v.valid) v.region = {target};
  }
  return v;
}

CfxResult min_dist(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                   const milp::SolverBackend& backend, milp::SolveOptions options) {
  const auto t0 = Clock::now();
  check_request(model, schema, req);
  if (auto t = trivial_result(model, req, t0)) return *t;
  const Built built = build_base(model, schema, req);
  return solve_and_verify(built, model, schema, req, backend, options, {}, t0);
}

CfxResult confex_naive(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                       const CalibrationSet& cal, const milp::SolverBackend& backend, milp::SolveOptions options) {
  const auto t0 = Clock::now();
  check_request(model, schema, req);
  if (auto t = trivial_result(model, req, t0)) return *t;
  const double q = cp_quantile(cal.scores, req.alpha);
  Built built = build_base(model, schema, req);
  milp::encode_singleton(built.b, built.scores, req.target, q, req.eps_strict);
  return solve_and_verify(built, model, schema, req, backend, options, [q](const Eigen::VectorXd&) { return q; }, t0);
}

CfxResult confex_lcp(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                     const CalibrationSet& cal, const KernelSpec& spec, const milp::SolverBackend& backend,
                     milp::SolveOptions options, const milp::LcpEncodingOptions& lcp) {
  const auto t0 = Clock::now();
  check_request(model, schema, req);
  if (auto t = trivial_result(model, req, t0)) return *t;
  Built built = build_base(model, schema, req);
  const milp::Var q = milp::encode_lcp_quantile(built.b, cal, spec, req.alpha, built.in, lcp);
  milp::encode_singleton(built.b, built.scores, req.target, q, req.eps_strict);
  const double alpha = req.alpha;
  return solve_and_verify(built, model, schema, req, backend, options,
                          [&](const Eigen::VectorXd& x) { return lcp_quantile(cal, x, spec, alpha); }, t0);
}

CfxResult confex_tree(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req,
                      const QuantileForest& forest, const milp::SolverBackend& backend, milp::SolveOptions options) {
  const auto t0 = Clock::now();
  check_request(model, schema, req);
  if (auto t = trivial_result(model, req, t0)) return *t;
  Built built = build_base(model, schema, req);
  const milp::Var q = milp::encode_tree_quantile(built.b, forest, built.in);
  milp::encode_singleton(built.b, built.scores, req.target, q, req.eps_strict);
  return solve_and_verify(built, model, schema, req, backend, options,
                          [&](const Eigen::VectorXd& x) { return forest.query(x); }, t0);
}

CfxResult wachter(const Classifier& model, const FeatureSchema& schema, const CfxRequest& req, const WachterConfig& cfg) {
  const auto t0 = Clock::now();
  check_request(model, schema, req);
  const MlpModel* net = model.mlp();
  if (!net) throw Error("the gradient baseline needs a differentiable (MLP) model");
  if (!(cfg.lambda_initial > 0 && cfg.lambda_multiplier > 0 && cfg.learning_rate > 0) || cfg.max_rounds < 0 ||
      cfg.max_iterations < 0) {
    throw Error("gradient baseline settings must be positive");
  }
  if (auto t = trivial_result(model, req, t0)) return *t;

  const auto k = net->class_count();
  const Eigen::VectorXd& x0 = req.factual;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd candidate = x0;
  bool found = false;
  double lambda = cfg.lambda_initial;
  for (int round = 0; round < cfg.max_rounds && !found; ++round) {
    for (int it = 0; it < cfg.max_iterations; ++it) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.size());
      if (cfg.loss == WachterConfig::Loss::CrossEntropy) {
        grad = lambda * input_gradient(*net, x, req.target);
      } else {
        const Eigen::VectorXd l = net->forward_logits(x);
        int other = -1;
        for (int c = 0; c < k; ++c) {
          if (c != req.target && (other < 0 || l[c] > l[other])) other = c;
        }
        if (cfg.hinge_margin - (l[req.target] - l[other]) > 0.0) {
          Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
          w[other] = 1.0;
          w[req.target] = -1.0;
          grad = lambda * net->backprop(x, w);
        }
      }
      for (Eigen::Index c = 0; c < x.size(); ++c) {
        const double diff = x[c] - x0[c];
        grad[c] += diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      }
      x = (x - cfg.learning_rate * grad).cwiseMax(0.0).cwiseMin(1.0);
    }
    candidate = snap_to_domain(schema, x);
    found = model.predict(candidate) == req.target;
    lambda *= cfg.lambda_multiplier;
  }

  CfxResult r;
  r.counterfactual = candidate;
  r.distance = cfx_distance(schema, x0, candidate);
  r.verification = verify(model, candidate, req.target, std::nullopt);
  r.status = r.verification.valid ? CfxStatus::Found : CfxStatus::InvalidSolution;
  if (!r.verification.valid) r.message = "gradient search did not reach the target class";
  r.seconds = since(t0);
  return r;
}

CfxResult Explainer::explain(const CfxRequest& req) const {
  if (!model || !schema) throw Error("explainer needs a model and a schema");
  auto need_backend = [&] {
    if (!backend) throw Error("this method needs a solver backend");
    return backend;
  };
  switch (req.method) {
    case Method::MinDist:
      return min_dist(*model, *schema, req, *need_backend(), solve_options);
    case Method::Naive:
      if (!calibration) throw Error("the naive method needs a calibration set");
      return confex_naive(*model, *schema, req, *calibration, *need_backend(), solve_options);
    case Method::Lcp:
      if (!calibration || !kernel) throw Error("the localised method needs a calibration set and a kernel");
      return confex_lcp(*model, *schema, req, *calibration, *kernel, *need_backend(), solve_options, lcp_options);
    case Method::Tree:
      if (!forest) throw Error("the tree method needs a quantile forest");
      return confex_tree(*model, *schema, req, *forest, *need_backend(), solve_options);
    case Method::Wachter:
      return wachter(*model, *schema, req, wachter_config);
  }
  throw Error("unknown method");
}

std::vector<CfxResult> Explainer::explain_batch(const std::vector<CfxRequest>& requests, int jobs) const {
  std::vector<CfxResult> out(requests.size());
  const bool parallel_ok = !backend || backend->capabilities().concurrent_solves;
  const auto workers = static_cast<std::size_t>(std::max(1, parallel_ok ? jobs : 1));
  if (workers == 1 || requests.size() < 2) {
    for (std::size_t i = 0; i < requests.size(); ++i) out[i] = explain(requests[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, requests.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < requests.size() && !failed; i = next++) {
        try {
          out[i] = explain(requests[i]);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::string result_to_json(const CfxResult& r, std::size_t row, Method method, const CfxRequest& req) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf")); };
  json j{{"row", row},
         {"method", to_string(method)},
         {"target", req.target},
         {"alpha", req.alpha},
         {"status", to_string(r.status)},
         {"trivial", r.trivial},
         {"distance", num(r.distance)},
         {"nodes", r.nodes},
         {"predicted", r.verification.predicted},
         {"valid", r.verification.valid},
         {"quantile", num(r.verification.quantile)},
         {"region", r.verification.region},
         {"message", r.message}};
  j["factual"] = std::vector<double>(req.factual.data(), req.factual.data() + req.factual.size());
  j["counterfactual"] = std::vector<double>(r.counterfactual.data(), r.counterfactual.data() + r.counterfactual.size());
  return j.dump();
}

}  // namespace confex
