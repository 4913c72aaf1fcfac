#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>

#include "confex/error.hpp"
#include "confex/milp.hpp"
#include "confex/simplex.hpp"

namespace confex::milp {

namespace {

using Clock = std::chrono::steady_clock;

struct Node {
  std::vector<double> lo;  // per integer variable
  std::vector<double> hi;
  double bound = 0.0;
  int depth = 0;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.depth < b.depth;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

Solution BranchAndBoundBackend::solve(const MilpModel& model, const SolveOptions& options) const {
  const auto t0 = Clock::now();
  const auto deadline = t0 + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(options.time_limit_s));
  Solution sol;
  auto finish = [&](SolveStatus st, std::string msg) {
    sol.status = st;
    sol.message = std::move(msg);
    sol.seconds = seconds_since(t0);
    return sol;
  };

  if (model.infeasible_reason()) return finish(SolveStatus::Infeasible, *model.infeasible_reason());
  try {
    model.validate();
  } catch (const Error& e) {
    return finish(SolveStatus::Error, e.what());
  }
  const auto& vars = model.variables();
  std::vector<int> ints;
  for (std::size_t j = 0; j < vars.size(); ++j) {
    if (vars[j].lo > vars[j].hi) return finish(SolveStatus::Infeasible, "empty variable domain");
    if (vars[j].type != VarType::Continuous) ints.push_back(static_cast<int>(j));
  }

  DualSimplex lp(model, options.feasibility_tol);
  const long lp_cap = 50L * (lp.rows() + lp.structurals()) + 1000;
  const double inf = std::numeric_limits<double>::infinity();
  double incumbent = inf;
  std::vector<double> best;

  auto cutoff = [&] {
    if (!std::isfinite(incumbent)) return inf;
    return incumbent - std::max(options.absolute_gap, options.relative_gap * std::abs(incumbent));
  };

  // Fixes the integers at their rounded values and re-solves to clean the continuous part.
  auto try_incumbent = [&](const std::vector<double>& x) {
    std::vector<double> saved_lo;
    std::vector<double> saved_hi;
    for (int j : ints) {
      saved_lo.push_back(lp.lower(j));
      saved_hi.push_back(lp.upper(j));
      const double v = std::round(x[static_cast<std::size_t>(j)]);
      lp.set_bounds(j, v, v);
    }
    std::vector<double> cand;
    if (lp.solve(lp_cap, deadline) == LpStatus::Optimal) {
      cand = lp.primal();
      for (int j : ints) cand[static_cast<std::size_t>(j)] = std::round(cand[static_cast<std::size_t>(j)]);
    }
    for (std::size_t k = 0; k < ints.size(); ++k) lp.set_bounds(ints[k], saved_lo[k], saved_hi[k]);
    if (cand.empty()) return;
    for (std::size_t j = 0; j < cand.size(); ++j) cand[j] = std::clamp(cand[j], vars[j].lo, vars[j].hi);
    if (model.max_violation(cand) > 1e-6) return;
    const double obj = model.objective().evaluate(cand);
    if (obj < incumbent) {
      incumbent = obj;
      best = std::move(cand);
    }
  };

  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  bool have_current = true;  // root: the LP already carries the model bounds
  int depth = 0;
  bool timed_out = false;
  bool node_capped = false;
  bool numerical = false;

  while (true) {
    if (!have_current) {
      if (open.empty()) break;
      Node node = open.top();
      open.pop();
      if (node.bound >= cutoff()) continue;
      // Every column is boxed, so the current basis stays dual feasible after the bound
      // change; reusing it avoids a refactorization per node.
      for (std::size_t k = 0; k < ints.size(); ++k) lp.set_bounds(ints[k], node.lo[k], node.hi[k]);
      depth = node.depth;
      have_current = true;
    }
    if (sol.nodes >= options.node_limit) {
      node_capped = true;
      break;
    }
    if (Clock::now() >= deadline) {
      timed_out = true;
      break;
    }
    ++sol.nodes;

    const LpStatus st = lp.solve(lp_cap, deadline);
    if (st == LpStatus::TimeLimit) {
      timed_out = true;
      break;
    }
    if (st != LpStatus::Optimal) {
      if (st != LpStatus::Infeasible) numerical = true;
      have_current = false;
      continue;
    }
    const double obj = lp.objective();
    if (obj >= cutoff()) {
      have_current = false;
      continue;
    }
    const std::vector<double> x = lp.primal();

    int branch = -1;
    double best_frac = options.integrality_tol;
    for (int j : ints) {
      const double v = x[static_cast<std::size_t>(j)];
      const double f = std::min(v - std::floor(v), std::ceil(v) - v);
      if (f > best_frac) {
        best_frac = f;
        branch = j;
      }
    }
    if (branch < 0) {
      try_incumbent(x);
      have_current = false;
      continue;
    }

    const double v = x[static_cast<std::size_t>(branch)];
    const double down_hi = std::floor(v);
    const double up_lo = std::ceil(v);
    const bool prefer_up = v - down_hi >= 0.5;

    Node other;
    other.bound = obj;
    other.depth = depth + 1;
    for (int j : ints) {
      other.lo.push_back(lp.lower(j));
      other.hi.push_back(lp.upper(j));
    }
    const auto k = static_cast<std::size_t>(std::find(ints.begin(), ints.end(), branch) - ints.begin());
    if (prefer_up) {
      other.hi[k] = down_hi;
      lp.set_bounds(branch, up_lo, lp.upper(branch));
    } else {
      other.lo[k] = up_lo;
      lp.set_bounds(branch, lp.lower(branch), down_hi);
    }
    open.push(std::move(other));
    ++depth;
  }

  sol.lp_iterations = lp.iterations();
  double open_bound = inf;
  if (!open.empty()) open_bound = open.top().bound;
  if (have_current) open_bound = -inf;  // the interrupted node was never bounded
  sol.best_bound = std::min(open_bound, incumbent);
  if (!best.empty()) {
    sol.values = best;
    sol.objective = incumbent;
  }
  if (timed_out || node_capped) {
    return finish(SolveStatus::TimeLimit, timed_out ? "time limit reached" : "node limit reached");
  }
  if (best.empty()) {
    sol.best_bound = inf;
    return finish(SolveStatus::Infeasible, numerical ? "infeasible (some nodes hit numerical trouble)" : "infeasible");
  }
  sol.best_bound = incumbent;
  return finish(SolveStatus::Optimal, numerical ? "optimal (some nodes hit numerical trouble)" : "optimal");
}

std::unique_ptr<SolverBackend> make_backend(const std::string& name) {
  if (name == "bnb" || name.empty()) return std::make_unique<BranchAndBoundBackend>();
  throw Error("unknown solver backend '" + name + "'; available: bnb");
}

}  // namespace confex::milp
