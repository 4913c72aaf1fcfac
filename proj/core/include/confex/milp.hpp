#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace confex::milp {

enum class VarType { Continuous, Binary, Integer };

/// Index of a variable inside one MilpModel.
struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(Var a, Var b) { return a.index == b.index; }
};

struct Term {
  int var = -1;
  double coef = 0.0;
};

/// Affine expression sum(coef * var) + constant.
class LinExpr {
 public:
  LinExpr() = default;
  LinExpr(double constant) : constant_(constant) {}  // NOLINT(google-explicit-constructor)
  LinExpr(Var v, double coef = 1.0) { add(v, coef); }  // NOLINT(google-explicit-constructor)

  LinExpr& add(Var v, double coef);
  LinExpr& add(const LinExpr& other, double scale = 1.0);
  LinExpr& add_constant(double c) {
    constant_ += c;
    return *this;
  }

  const std::vector<Term>& terms() const { return terms_; }
  double constant() const { return constant_; }
  /// Merges duplicate variables and drops zero coefficients.
  std::vector<Term> canonical_terms() const;
  double evaluate(const std::vector<double>& values) const;

  LinExpr& operator+=(const LinExpr& o) { return add(o, 1.0); }
  LinExpr& operator-=(const LinExpr& o) { return add(o, -1.0); }
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
  friend LinExpr operator*(double s, const LinExpr& e) {
    LinExpr out;
    return out.add(e, s);
  }

 private:
  std::vector<Term> terms_;
  double constant_ = 0.0;
};

struct Variable {
  std::string name;
  VarType type = VarType::Continuous;
  double lo = 0.0;
  double hi = 0.0;
};

/// lo <= sum(terms) <= hi. Either side may be infinite.
struct Constraint {
  std::string name;
  std::vector<Term> terms;
  double lo = 0.0;
  double hi = 0.0;
};

/// Provenance of one big-M coefficient.
struct BigMRecord {
  std::string constraint;
  double value = 0.0;
  std::string derivation;
};

/// Minimisation MILP under construction. Variables must carry finite bounds.
class MilpModel {
 public:
  Var add_var(std::string name, VarType type, double lo, double hi);
  Var add_continuous(std::string name, double lo, double hi) { return add_var(std::move(name), VarType::Continuous, lo, hi); }
  Var add_binary(std::string name) { return add_var(std::move(name), VarType::Binary, 0.0, 1.0); }
  Var add_integer(std::string name, double lo, double hi) { return add_var(std::move(name), VarType::Integer, lo, hi); }

  void add_le(const LinExpr& expr, double rhs, std::string name);
  void add_ge(const LinExpr& expr, double rhs, std::string name);
  void add_eq(const LinExpr& expr, double rhs, std::string name);
  void add_range(double lo, const LinExpr& expr, double hi, std::string name);

  void record_big_m(std::string constraint, double value, std::string derivation);

  void set_objective(const LinExpr& expr);
  const LinExpr& objective() const { return objective_; }

  void set_bounds(Var v, double lo, double hi);
  void fix(Var v, double value) { set_bounds(v, value, value); }

  /// Marks the model as infeasible before any solve (e.g. a +inf quantile).
  void mark_infeasible(std::string reason) { infeasible_reason_ = std::move(reason); }
  const std::optional<std::string>& infeasible_reason() const { return infeasible_reason_; }

  void set_handle(const std::string& name, std::vector<Var> vars) { handles_[name] = std::move(vars); }
  const std::vector<Var>& handle(const std::string& name) const;
  bool has_handle(const std::string& name) const { return handles_.count(name) > 0; }

  const std::vector<Variable>& variables() const { return vars_; }
  const Variable& variable(Var v) const { return vars_.at(static_cast<std::size_t>(v.index)); }
  const std::vector<Constraint>& constraints() const { return rows_; }
  const std::vector<BigMRecord>& big_m() const { return big_m_; }
  std::size_t integer_count() const;

  /// Throws when a constraint references an undeclared variable or a coefficient
  /// or big-M value is not finite.
  void validate() const;

  /// Largest violation of bounds, rows and integrality at `values`.
  double max_violation(const std::vector<double>& values, bool check_integrality = true) const;

  /// CPLEX LP file text.
  std::string to_lp_format() const;

 private:
  void add_row(const LinExpr& expr, double lo, double hi, std::string name);

  std::vector<Variable> vars_;
  std::vector<Constraint> rows_;
  std::vector<BigMRecord> big_m_;
  LinExpr objective_;
  std::optional<std::string> infeasible_reason_;
  std::map<std::string, std::vector<Var>> handles_;
};

enum class SolveStatus { Optimal, Infeasible, TimeLimit, Error };

const char* to_string(SolveStatus s);

struct SolveOptions {
  double time_limit_s = 60.0;
  double relative_gap = 0.0;
  double absolute_gap = 1e-9;
  double integrality_tol = 1e-6;
  double feasibility_tol = 1e-9;
  long node_limit = 5'000'000;
};

struct Solution {
  SolveStatus status = SolveStatus::Error;
  std::vector<double> values;  // empty unless a feasible point was found
  double objective = 0.0;
  double best_bound = 0.0;
  long nodes = 0;
  long lp_iterations = 0;
  double seconds = 0.0;
  std::string message;

  bool has_values() const { return !values.empty(); }
  double value(Var v) const { return values.at(static_cast<std::size_t>(v.index)); }
};

struct BackendCapabilities {
  bool binary = true;
  bool integer = true;
  bool indicator_constraints = false;
  bool concurrent_solves = true;
};

/// Anything that can minimise a MilpModel.
class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  virtual std::string name() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  virtual Solution solve(const MilpModel& model, const SolveOptions& options) const = 0;
};

/// Built-in LP-based branch and bound on a dense bounded dual simplex.
class BranchAndBoundBackend final : public SolverBackend {
 public:
  std::string name() const override { return "bnb"; }
  BackendCapabilities capabilities() const override { return {}; }
  Solution solve(const MilpModel& model, const SolveOptions& options) const override;
};

/// Known names: "bnb".
std::unique_ptr<SolverBackend> make_backend(const std::string& name);

}  // namespace confex::milp
