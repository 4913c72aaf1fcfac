#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "confex/error.hpp"
#include "confex/milp.hpp"

namespace confex::milp {

LinExpr& LinExpr::add(Var v, double coef) {
  if (!v.valid()) throw Error("expression references an invalid variable");
  if (coef != 0.0) terms_.push_back({v.index, coef});
  return *this;
}

LinExpr& LinExpr::add(const LinExpr& other, double scale) {
  for (const auto& t : other.terms_) {
    if (t.coef * scale != 0.0) terms_.push_back({t.var, t.coef * scale});
  }
  constant_ += scale * other.constant_;
  return *this;
}

std::vector<Term> LinExpr::canonical_terms() const {
  std::map<int, double> merged;
  for (const auto& t : terms_) merged[t.var] += t.coef;
  std::vector<Term> out;
  for (const auto& [v, c] : merged) {
    if (c != 0.0) out.push_back({v, c});
  }
  return out;
}

double LinExpr::evaluate(const std::vector<double>& values) const {
  double s = constant_;
  for (const auto& t : terms_) s += t.coef * values.at(static_cast<std::size_t>(t.var));
  return s;
}

Var MilpModel::add_var(std::string name, VarType type, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw Error("variable '" + name + "' needs finite bounds");
  if (type == VarType::Binary) {
    lo = std::max(lo, 0.0);
    hi = std::min(hi, 1.0);
  }
  vars_.push_back(Variable{std::move(name), type, lo, hi});
  return Var{static_cast<int>(vars_.size() - 1)};
}

void MilpModel::add_row(const LinExpr& expr, double lo, double hi, std::string name) {
  Constraint c;
  c.name = std::move(name);
  c.terms = expr.canonical_terms();
  c.lo = lo - expr.constant();
  c.hi = hi - expr.constant();
  rows_.push_back(std::move(c));
}

void MilpModel::add_le(const LinExpr& expr, double rhs, std::string name) {
  add_row(expr, -std::numeric_limits<double>::infinity(), rhs, std::move(name));
}

void MilpModel::add_ge(const LinExpr& expr, double rhs, std::string name) {
  add_row(expr, rhs, std::numeric_limits<double>::infinity(), std::move(name));
}

void MilpModel::add_eq(const LinExpr& expr, double rhs, std::string name) { add_row(expr, rhs, rhs, std::move(name)); }

void MilpModel::add_range(double lo, const LinExpr& expr, double hi, std::string name) {
  add_row(expr, lo, hi, std::move(name));
}

void MilpModel::record_big_m(std::string constraint, double value, std::string derivation) {
  big_m_.push_back(BigMRecord{std::move(constraint), value, std::move(derivation)});
}

void MilpModel::set_objective(const LinExpr& expr) { objective_ = expr; }

void MilpModel::set_bounds(Var v, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw Error("variable bounds must be finite");
  auto& var = vars_.at(static_cast<std::size_t>(v.index));
  var.lo = lo;
  var.hi = hi;
}

const std::vector<Var>& MilpModel::handle(const std::string& name) const {
  const auto it = handles_.find(name);
  if (it == handles_.end()) throw Error("model has no handle named '" + name + "'");
  return it->second;
}

std::size_t MilpModel::integer_count() const {
  return static_cast<std::size_t>(std::count_if(vars_.begin(), vars_.end(), [](const Variable& v) { return v.type != VarType::Continuous; }));
}

void MilpModel::validate() const {
  const auto n = static_cast<int>(vars_.size());
  for (const auto& r : rows_) {
    for (const auto& t : r.terms) {
      if (t.var < 0 || t.var >= n) throw Error("constraint '" + r.name + "' references an undeclared variable");
      if (!std::isfinite(t.coef)) throw Error("constraint '" + r.name + "' has a non-finite coefficient");
    }
    if (std::isnan(r.lo) || std::isnan(r.hi)) throw Error("constraint '" + r.name + "' has a NaN side");
  }
  for (const auto& t : objective_.terms()) {
    if (t.var < 0 || t.var >= n || !std::isfinite(t.coef)) throw Error("objective is malformed");
  }
  for (const auto& b : big_m_) {
    if (!std::isfinite(b.value)) throw Error("big-M for '" + b.constraint + "' is not finite");
  }
}

double MilpModel::max_violation(const std::vector<double>& values, bool check_integrality) const {
  if (values.size() != vars_.size()) throw Error("value vector does not match the model");
  double worst = 0.0;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    worst = std::max({worst, vars_[i].lo - values[i], values[i] - vars_[i].hi});
    if (check_integrality && vars_[i].type != VarType::Continuous) {
      worst = std::max(worst, std::abs(values[i] - std::round(values[i])));
    }
  }
  for (const auto& r : rows_) {
    double s = 0.0;
    for (const auto& t : r.terms) s += t.coef * values[static_cast<std::size_t>(t.var)];
    if (std::isfinite(r.lo)) worst = std::max(worst, r.lo - s);
    if (std::isfinite(r.hi)) worst = std::max(worst, s - r.hi);
  }
  return worst;
}

namespace {

std::string lp_name(const std::string& raw, int index) {
  std::string out;
  for (char c : raw) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '[' || c == ']';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || std::isdigit(static_cast<unsigned char>(out.front())) || out.front() == '.') out.insert(0, "v");
  return out + "#" + std::to_string(index);
}

void write_terms(std::ostringstream& os, const std::vector<Term>& terms, const std::vector<std::string>& names) {
  if (terms.empty()) {
    os << " 0 " << names.front();
    return;
  }
  for (const auto& t : terms) os << (t.coef < 0 ? " - " : " + ") << std::abs(t.coef) << ' ' << names[static_cast<std::size_t>(t.var)];
}

}  // namespace

std::string MilpModel::to_lp_format() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < vars_.size(); ++i) names.push_back(lp_name(vars_[i].name, static_cast<int>(i)));
  std::ostringstream os;
  os.precision(17);
  os << "\\ confex MILP export\nMinimize\n obj:";
  const auto obj = objective_.canonical_terms();
  if (obj.empty() && !names.empty()) {
    os << " 0 " << names.front();
  } else {
    write_terms(os, obj, names);
  }
  if (objective_.constant() != 0.0) os << (objective_.constant() < 0 ? " - " : " + ") << std::abs(objective_.constant());
  os << "\nSubject To\n";
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const auto& row = rows_[r];
    const std::string base = lp_name(row.name, static_cast<int>(r));
    if (std::isfinite(row.lo) && std::isfinite(row.hi) && row.lo == row.hi) {
      os << ' ' << base << ':';
      write_terms(os, row.terms, names);
      os << " = " << row.hi << '\n';
      continue;
    }
    if (std::isfinite(row.lo)) {
      os << ' ' << base << (std::isfinite(row.hi) ? "_lo" : "") << ':';
      write_terms(os, row.terms, names);
      os << " >= " << row.lo << '\n';
    }
    if (std::isfinite(row.hi)) {
      os << ' ' << base << (std::isfinite(row.lo) ? "_hi" : "") << ':';
      write_terms(os, row.terms, names);
      os << " <= " << row.hi << '\n';
    }
  }
  os << "Bounds\n";
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].type == VarType::Binary && vars_[i].lo == 0.0 && vars_[i].hi == 1.0) continue;
    os << ' ' << vars_[i].lo << " <= " << names[i] << " <= " << vars_[i].hi << '\n';
  }
  bool header = false;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].type != VarType::Binary) continue;
    if (!header) os << "Binaries\n";
    header = true;
    os << ' ' << names[i] << '\n';
  }
  header = false;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].type != VarType::Integer) continue;
    if (!header) os << "Generals\n";
    header = true;
    os << ' ' << names[i] << '\n';
  }
  os << "End\n";
  return os.str();
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal:
      return "Optimal";
    case SolveStatus::Infeasible:
      return "Infeasible";
    case SolveStatus::TimeLimit:
      return "TimeLimit";
    case SolveStatus::Error:
      return "Error";
  }
  return "Error";
}

}  // namespace confex::milp
