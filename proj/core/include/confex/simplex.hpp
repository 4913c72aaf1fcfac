#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <vector>

#include "confex/milp.hpp"

namespace confex::milp {

enum class LpStatus { Optimal, Infeasible, IterationLimit, TimeLimit, Numerical };

/// Basis snapshot: basic variable per row plus the bound side of every variable.
struct LpBasis {
  std::vector<int> head;
  std::vector<char> at_upper;
};

/// Dense bounded dual simplex over the LP relaxation of a MilpModel.
///
/// Rows become A x - s = 0 with the slack s boxed by the row sides. A one-sided
/// row gets its open side from the activity range implied by variable bounds,
/// so every variable is boxed and dual feasibility can always be restored by
/// moving nonbasic variables to the bound matching their reduced cost sign.
class DualSimplex {
 public:
  explicit DualSimplex(const MilpModel& model, double primal_tol = 1e-9, double dual_tol = 1e-9);

  int rows() const { return m_; }
  int structurals() const { return n_; }

  void set_bounds(int j, double lo, double hi);
  double lower(int j) const { return lo_[static_cast<std::size_t>(j)]; }
  double upper(int j) const { return hi_[static_cast<std::size_t>(j)]; }

  LpStatus solve(long max_iterations, std::chrono::steady_clock::time_point deadline);

  /// Structural values of the last solve.
  std::vector<double> primal() const;
  double objective() const;
  long iterations() const { return iterations_; }

  LpBasis basis() const;
  void set_basis(const LpBasis& basis);
  void cold_start();

 private:
  bool refactor();
  void compute_primal();
  void compute_duals();
  void repair_dual_feasibility();
  Eigen::VectorXd column(int j) const;
  bool fixed(int j) const { return hi_[static_cast<std::size_t>(j)] - lo_[static_cast<std::size_t>(j)] <= 0.0; }
  double cost(int j) const { return j < n_ ? c_[j] : 0.0; }
  double nonbasic_value(int j) const {
    return at_upper_[static_cast<std::size_t>(j)] ? hi_[static_cast<std::size_t>(j)] : lo_[static_cast<std::size_t>(j)];
  }
  LpStatus iterate(long max_iterations, std::chrono::steady_clock::time_point deadline);

  int m_ = 0;
  int n_ = 0;
  double primal_tol_;
  double dual_tol_;
  double obj_constant_ = 0.0;
  Eigen::MatrixXd a_;  // m x n
  Eigen::VectorXd c_;
  std::vector<double> lo_;
  std::vector<double> hi_;
  std::vector<int> head_;
  std::vector<int> pos_;  // row of a basic variable, -1 when nonbasic
  std::vector<char> at_upper_;
  Eigen::MatrixXd binv_;
  Eigen::VectorXd x_;  // all n + m variables
  Eigen::VectorXd d_;
  bool factored_ = false;
  int since_refactor_ = 0;
  long iterations_ = 0;
};

}  // namespace confex::milp
