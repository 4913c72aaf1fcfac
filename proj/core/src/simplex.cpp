#include "confex/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "confex/error.hpp"

namespace confex::milp {

namespace {
constexpr int kRefactorInterval = 256;
constexpr int kStallLimit = 100;
constexpr double kPivotTol = 1e-9;
}  // namespace

DualSimplex::DualSimplex(const MilpModel& model, double primal_tol, double dual_tol)
    : primal_tol_(primal_tol), dual_tol_(dual_tol) {
  const auto& vars = model.variables();
  const auto& rows = model.constraints();
  n_ = static_cast<int>(vars.size());
  m_ = static_cast<int>(rows.size());
  a_ = Eigen::MatrixXd::Zero(m_, n_);
  c_ = Eigen::VectorXd::Zero(n_);
  lo_.resize(static_cast<std::size_t>(n_ + m_));
  hi_.resize(static_cast<std::size_t>(n_ + m_));
  for (int j = 0; j < n_; ++j) {
    lo_[static_cast<std::size_t>(j)] = vars[static_cast<std::size_t>(j)].lo;
    hi_[static_cast<std::size_t>(j)] = vars[static_cast<std::size_t>(j)].hi;
  }
  for (const auto& t : model.objective().canonical_terms()) c_[t.var] = t.coef;
  obj_constant_ = model.objective().constant();
  for (int i = 0; i < m_; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    double act_lo = 0.0;
    double act_hi = 0.0;
    for (const auto& t : row.terms) {
      a_(i, t.var) = t.coef;
      const double l = vars[static_cast<std::size_t>(t.var)].lo;
      const double h = vars[static_cast<std::size_t>(t.var)].hi;
      act_lo += t.coef > 0 ? t.coef * l : t.coef * h;
      act_hi += t.coef > 0 ? t.coef * h : t.coef * l;
    }
    // The implied range can never cut a feasible point; the unit margin keeps it strictly loose.
    const double span = 1.0 + 1e-6 * std::max(std::abs(act_lo), std::abs(act_hi));
    lo_[static_cast<std::size_t>(n_ + i)] = std::isfinite(row.lo) ? row.lo : act_lo - span;
    hi_[static_cast<std::size_t>(n_ + i)] = std::isfinite(row.hi) ? row.hi : act_hi + span;
  }
  x_ = Eigen::VectorXd::Zero(n_ + m_);
  d_ = Eigen::VectorXd::Zero(n_ + m_);
  cold_start();
}

void DualSimplex::set_bounds(int j, double lo, double hi) {
  if (j < 0 || j >= n_) throw Error("bound change on an unknown variable");
  lo_[static_cast<std::size_t>(j)] = lo;
  hi_[static_cast<std::size_t>(j)] = hi;
}

void DualSimplex::cold_start() {
  const auto total = static_cast<std::size_t>(n_ + m_);
  head_.resize(static_cast<std::size_t>(m_));
  pos_.assign(total, -1);
  at_upper_.assign(total, 0);
  for (int i = 0; i < m_; ++i) {
    head_[static_cast<std::size_t>(i)] = n_ + i;
    pos_[static_cast<std::size_t>(n_ + i)] = i;
  }
  for (int j = 0; j < n_; ++j) at_upper_[static_cast<std::size_t>(j)] = c_[j] < 0.0 ? 1 : 0;
  binv_ = -Eigen::MatrixXd::Identity(m_, m_);
  factored_ = true;
  since_refactor_ = 0;
}

LpBasis DualSimplex::basis() const { return LpBasis{head_, at_upper_}; }

void DualSimplex::set_basis(const LpBasis& basis) {
  if (basis.head.size() != static_cast<std::size_t>(m_) || basis.at_upper.size() != static_cast<std::size_t>(n_ + m_)) {
    throw Error("basis does not match the LP dimensions");
  }
  head_ = basis.head;
  at_upper_ = basis.at_upper;
  pos_.assign(static_cast<std::size_t>(n_ + m_), -1);
  for (int i = 0; i < m_; ++i) pos_[static_cast<std::size_t>(head_[static_cast<std::size_t>(i)])] = i;
  factored_ = false;
}

Eigen::VectorXd DualSimplex::column(int j) const {
  if (j < n_) return a_.col(j);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(m_);
  e[j - n_] = -1.0;
  return e;
}

bool DualSimplex::refactor() {
  since_refactor_ = 0;
  if (m_ == 0) {
    factored_ = true;
    return true;
  }
  Eigen::MatrixXd b(m_, m_);
  for (int k = 0; k < m_; ++k) b.col(k) = column(head_[static_cast<std::size_t>(k)]);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
  if (!(lu.rcond() > 1e-13)) {
    cold_start();
    return false;
  }
  binv_ = lu.inverse();
  factored_ = true;
  return true;
}

void DualSimplex::compute_primal() {
  Eigen::VectorXd xs(n_);
  for (int j = 0; j < n_; ++j) {
    const bool basic = pos_[static_cast<std::size_t>(j)] >= 0;
    xs[j] = basic ? 0.0 : nonbasic_value(j);
    if (!basic) x_[j] = xs[j];
  }
  Eigen::VectorXd r = a_ * xs;
  for (int i = 0; i < m_; ++i) {
    const int j = n_ + i;
    if (pos_[static_cast<std::size_t>(j)] < 0) {
      x_[j] = nonbasic_value(j);
      r[i] -= x_[j];
    }
  }
  const Eigen::VectorXd xb = -(binv_ * r);
  for (int k = 0; k < m_; ++k) x_[head_[static_cast<std::size_t>(k)]] = xb[k];
}

void DualSimplex::compute_duals() {
  Eigen::VectorXd cb(m_);
  for (int k = 0; k < m_; ++k) cb[k] = cost(head_[static_cast<std::size_t>(k)]);
  const Eigen::VectorXd y = binv_.transpose() * cb;
  d_.head(n_) = c_ - a_.transpose() * y;
  d_.tail(m_) = y;
  for (int k = 0; k < m_; ++k) d_[head_[static_cast<std::size_t>(k)]] = 0.0;
}

void DualSimplex::repair_dual_feasibility() {
  for (int j = 0; j < n_ + m_; ++j) {
    if (pos_[static_cast<std::size_t>(j)] >= 0 || fixed(j)) continue;
    auto& up = at_upper_[static_cast<std::size_t>(j)];
    if (d_[j] < -dual_tol_) up = 1;
    if (d_[j] > dual_tol_) up = 0;
  }
}

LpStatus DualSimplex::solve(long max_iterations, std::chrono::steady_clock::time_point deadline) {
  for (int j = 0; j < n_; ++j) {
    if (lo_[static_cast<std::size_t>(j)] > hi_[static_cast<std::size_t>(j)]) return LpStatus::Infeasible;
  }
  for (int attempt = 0; attempt < 2; ++attempt) {
    const LpStatus st = iterate(max_iterations, deadline);
    if (st != LpStatus::Numerical) return st;
    cold_start();
  }
  return LpStatus::Numerical;
}

LpStatus DualSimplex::iterate(long max_iterations, std::chrono::steady_clock::time_point deadline) {
  if (!factored_) refactor();
  long local = 0;
  int stall = 0;
  bool bland = false;
  double last_obj = -std::numeric_limits<double>::infinity();
  int mismatches = 0;
  const auto total = n_ + m_;
  Eigen::VectorXd alpha_row(total);

  while (true) {
    if (local >= max_iterations) return LpStatus::IterationLimit;
    if ((local & 15) == 0 && std::chrono::steady_clock::now() >= deadline) return LpStatus::TimeLimit;
    if (since_refactor_ >= kRefactorInterval) refactor();

    compute_duals();
    repair_dual_feasibility();
    compute_primal();

    const double obj = c_.dot(x_.head(n_));
    if (obj > last_obj + 1e-12 * (1.0 + std::abs(obj))) {
      last_obj = obj;
      stall = 0;
    } else if (++stall > kStallLimit) {
      bland = true;
    }

    // Leaving row: dual steepest edge; the exact weights are the row norms of B^-1.
    int r = -1;
    double best = 0.0;
    for (int k = 0; k < m_; ++k) {
      const int j = head_[static_cast<std::size_t>(k)];
      const double v = x_[j];
      const double l = lo_[static_cast<std::size_t>(j)];
      const double h = hi_[static_cast<std::size_t>(j)];
      double infeas = 0.0;
      if (v < l - primal_tol_ * std::max(1.0, std::abs(l))) infeas = l - v;
      if (v > h + primal_tol_ * std::max(1.0, std::abs(h))) infeas = v - h;
      if (infeas <= 0.0) continue;
      if (bland) {
        if (r < 0 || j < head_[static_cast<std::size_t>(r)]) r = k;
        continue;
      }
      const double w = std::max(binv_.row(k).squaredNorm(), 1e-12);
      const double s = infeas * infeas / w;
      if (s > best) {
        best = s;
        r = k;
      }
    }
    if (r < 0) return LpStatus::Optimal;

    const int leaving = head_[static_cast<std::size_t>(r)];
    const bool to_lower = x_[leaving] < lo_[static_cast<std::size_t>(leaving)];
    const Eigen::RowVectorXd rho = binv_.row(r);
    alpha_row.head(n_) = (rho * a_).transpose();
    alpha_row.tail(m_) = -rho.transpose();

    // Harris two-pass ratio test over eligible nonbasic columns.
    auto eligible = [&](int j, double ptol) {
      if (pos_[static_cast<std::size_t>(j)] >= 0 || fixed(j)) return false;
      const double a = alpha_row[j];
      const bool up = at_upper_[static_cast<std::size_t>(j)] != 0;
      if (to_lower) return (!up && a < -ptol) || (up && a > ptol);
      return (!up && a > ptol) || (up && a < -ptol);
    };
    auto ratio_of = [&](int j) {
      const bool up = at_upper_[static_cast<std::size_t>(j)] != 0;
      const double dj = up ? std::max(0.0, -d_[j]) : std::max(0.0, d_[j]);
      return dj / std::abs(alpha_row[j]);
    };

    int q = -1;
    if (bland) {
      double min_ratio = std::numeric_limits<double>::infinity();
      for (int j = 0; j < total; ++j) {
        if (eligible(j, kPivotTol)) min_ratio = std::min(min_ratio, ratio_of(j));
      }
      for (int j = 0; j < total && q < 0; ++j) {
        if (eligible(j, kPivotTol) && ratio_of(j) <= min_ratio * (1.0 + 1e-12) + 1e-15) q = j;
      }
    } else {
      double theta_max = std::numeric_limits<double>::infinity();
      for (int j = 0; j < total; ++j) {
        if (!eligible(j, kPivotTol)) continue;
        const bool up = at_upper_[static_cast<std::size_t>(j)] != 0;
        const double dj = up ? std::max(0.0, -d_[j]) : std::max(0.0, d_[j]);
        theta_max = std::min(theta_max, (dj + dual_tol_) / std::abs(alpha_row[j]));
      }
      double best_alpha = 0.0;
      for (int j = 0; j < total; ++j) {
        if (!eligible(j, kPivotTol) || ratio_of(j) > theta_max) continue;
        if (std::abs(alpha_row[j]) > best_alpha) {
          best_alpha = std::abs(alpha_row[j]);
          q = j;
        }
      }
    }

    if (q < 0) {
      // No usable pivot. Confirm infeasibility from the row itself before reporting it.
      double reach = 0.0;
      for (int j = 0; j < total; ++j) {
        if (pos_[static_cast<std::size_t>(j)] >= 0) continue;
        const double a = alpha_row[j];
        const double l = lo_[static_cast<std::size_t>(j)];
        const double h = hi_[static_cast<std::size_t>(j)];
        // x_leaving = -sum a_j x_j over nonbasic columns.
        if (to_lower) {
          reach += -(a < 0 ? a * h : a * l);
        } else {
          reach += -(a < 0 ? a * l : a * h);
        }
      }
      const double bound = to_lower ? lo_[static_cast<std::size_t>(leaving)] : hi_[static_cast<std::size_t>(leaving)];
      const double slack = 1e-7 * std::max(1.0, std::abs(bound));
      if (to_lower ? reach < bound - slack : reach > bound + slack) return LpStatus::Infeasible;
      return LpStatus::Numerical;
    }

    const Eigen::VectorXd alpha_col = binv_ * column(q);
    const double arq = alpha_row[q];
    if (std::abs(alpha_col[r] - arq) > 1e-7 * (1.0 + std::abs(arq))) {
      if (++mismatches > 5) return LpStatus::Numerical;
      refactor();
      continue;
    }

    // Basis change; primal and dual values are recomputed at the top of the loop.
    at_upper_[static_cast<std::size_t>(leaving)] = to_lower ? 0 : 1;
    pos_[static_cast<std::size_t>(leaving)] = -1;
    head_[static_cast<std::size_t>(r)] = q;
    pos_[static_cast<std::size_t>(q)] = r;
    const Eigen::RowVectorXd pivot_row = binv_.row(r) / alpha_col[r];
    binv_.noalias() -= alpha_col * pivot_row;
    binv_.row(r) = pivot_row;
    ++since_refactor_;
    ++iterations_;
    ++local;
  }
}

std::vector<double> DualSimplex::primal() const {
  std::vector<double> out(static_cast<std::size_t>(n_));
  for (int j = 0; j < n_; ++j) out[static_cast<std::size_t>(j)] = x_[j];
  return out;
}

double DualSimplex::objective() const { return c_.dot(x_.head(n_)) + obj_constant_; }

}  // namespace confex::milp
