#include "ddia/simplex.hpp"

#include <cmath>

namespace ddia {

void LinearProgram::validate() const {
  const int n = n_vars();
  auto check_block = [&](const Mat& A, const Vec& b, const char* what) {
    if (A.rows() != b.size())
      throw Error(std::string(what) + ": row count does not match right-hand side");
    if (A.rows() > 0 && A.cols() != n)
      throw Error(std::string(what) + ": column count does not match variable count");
  };
  check_block(A_ub, b_ub, "inequality block");
  check_block(A_eq, b_eq, "equality block");
  if (lo.size() != n || hi.size() != n) throw Error("bounds must cover every variable");
  for (int j = 0; j < n; ++j)
    if (lo(j) > hi(j)) throw Error("variable bound has lo > hi");
}

namespace {

constexpr double kEps = 1e-9;

// Internal standard-form problem: min c'y, A y = b, y >= 0.
struct StandardForm {
  Mat A;
  Vec b, c;
  double obj_shift = 0.0;
  // Mapping back to original variables: x_j = base_j + sign_j * y(col_j)
  // (+ optional second column for free variables: x = base + y(col) - y(col2)).
  struct VarMap {
    double base;
    double sign;
    int col;
    int col2 = -1;  // second piece for free variables
  };
  std::vector<VarMap> vmap;
  int n_ub = 0, n_eq = 0;
  std::vector<int> slack_col;  // per inequality row
  std::vector<double> row_scale;  // +1 or -1 applied to each original row
};

StandardForm build_standard(const LinearProgram& lp) {
  const int n = lp.n_vars();
  const double inf = LinearProgram::infinity();

  // Variable substitutions to get y >= 0, collecting extra upper-bound rows.
  StandardForm sf;
  sf.vmap.resize(static_cast<size_t>(n));
  int cols = 0;
  std::vector<std::pair<int, double>> extra_ub;  // (variable, residual upper bound)
  for (int j = 0; j < n; ++j) {
    double lo = lp.lo(j), hi = lp.hi(j);
    auto& vm = sf.vmap[static_cast<size_t>(j)];
    if (lo == -inf && hi == inf) {
      vm = {0.0, 1.0, cols, cols + 1};
      cols += 2;
    } else if (lo != -inf) {
      vm = {lo, 1.0, cols};
      cols += 1;
      if (hi != inf) extra_ub.emplace_back(j, hi - lo);
    } else {
      // Only an upper bound: mirror the variable.
      vm = {hi, -1.0, cols};
      cols += 1;
    }
  }

  const int m_ub = static_cast<int>(lp.A_ub.rows());
  const int m_eq = static_cast<int>(lp.A_eq.rows());
  const int m = m_ub + static_cast<int>(extra_ub.size()) + m_eq;
  const int n_slack = m_ub + static_cast<int>(extra_ub.size());

  sf.A = Mat::Zero(m, cols + n_slack);
  sf.b = Vec::Zero(m);
  sf.c = Vec::Zero(cols + n_slack);
  sf.n_ub = m_ub;
  sf.n_eq = m_eq;
  sf.slack_col.assign(static_cast<size_t>(n_slack), -1);
  sf.row_scale.assign(static_cast<size_t>(m), 1.0);

  auto emit_var = [&](int row, int j, double coeff) {
    const auto& vm = sf.vmap[static_cast<size_t>(j)];
    sf.A(row, vm.col) += coeff * vm.sign;
    if (vm.col2 >= 0) sf.A(row, vm.col2) -= coeff * vm.sign;
    sf.b(row) -= coeff * vm.base;
  };

  int row = 0;
  for (int i = 0; i < m_ub; ++i, ++row) {
    sf.b(row) = lp.b_ub(i);
    for (int j = 0; j < n; ++j)
      if (lp.A_ub(i, j) != 0.0) emit_var(row, j, lp.A_ub(i, j));
    sf.A(row, cols + i) = 1.0;
    sf.slack_col[static_cast<size_t>(i)] = cols + i;
  }
  for (size_t e = 0; e < extra_ub.size(); ++e, ++row) {
    auto [j, ub] = extra_ub[e];
    sf.b(row) = ub;
    const auto& vm = sf.vmap[static_cast<size_t>(j)];
    sf.A(row, vm.col) = 1.0;  // shifted variable is nonnegative with this cap
    sf.A(row, cols + m_ub + static_cast<int>(e)) = 1.0;
    sf.slack_col[static_cast<size_t>(m_ub + e)] = cols + m_ub + static_cast<int>(e);
  }
  for (int i = 0; i < m_eq; ++i, ++row) {
    sf.b(row) = lp.b_eq(i);
    for (int j = 0; j < n; ++j)
      if (lp.A_eq(i, j) != 0.0) emit_var(row, j, lp.A_eq(i, j));
  }

  for (int j = 0; j < n; ++j) {
    const auto& vm = sf.vmap[static_cast<size_t>(j)];
    sf.c(vm.col) += lp.c(j) * vm.sign;
    if (vm.col2 >= 0) sf.c(vm.col2) -= lp.c(j) * vm.sign;
    sf.obj_shift += lp.c(j) * vm.base;
  }

  // Make every right-hand side nonnegative.
  for (int i = 0; i < m; ++i) {
    if (sf.b(i) < 0) {
      sf.A.row(i) = -sf.A.row(i);
      sf.b(i) = -sf.b(i);
      sf.row_scale[static_cast<size_t>(i)] = -1.0;
    }
  }
  return sf;
}

struct Tableau {
  Mat T;                   // m x (n_total + 1); last column is b
  std::vector<int> basis;  // basic column per row
  Vec cost;                // current phase cost over columns
  Vec z_row;               // reduced costs, updated incrementally per pivot
  int n_cols;

  int pivots = 0;

  void reset_phase(const Vec& phase_cost) {
    cost = phase_cost;
    const int m = static_cast<int>(T.rows());
    Vec cb(m);
    for (int i = 0; i < m; ++i) cb(i) = cost(basis[static_cast<size_t>(i)]);
    z_row = cost - T.leftCols(n_cols).transpose() * cb;
  }

  enum class Step { Done, Pivoted, Unbounded };
  Step pivot_once(const std::vector<bool>& allowed) {
    const int m = static_cast<int>(T.rows());
    int enter = -1;
    for (int j = 0; j < n_cols; ++j) {
      if (!allowed[static_cast<size_t>(j)]) continue;
      if (z_row(j) < -kEps) {
        enter = j;
        break;  // smallest index: Bland's rule
      }
    }
    if (enter < 0) return Step::Done;
    int leave = -1;
    double best = 0;
    for (int i = 0; i < m; ++i) {
      double a = T(i, enter);
      if (a > kEps) {
        double ratio = T(i, n_cols) / a;
        if (leave < 0 || ratio < best - kEps ||
            (std::abs(ratio - best) <= kEps &&
             basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
          leave = i;
          best = ratio;
        }
      }
    }
    if (leave < 0) return Step::Unbounded;
    do_pivot(leave, enter);
    return Step::Pivoted;
  }

  void do_pivot(int row, int col) {
    T.row(row) /= T(row, col);
    for (int i = 0; i < T.rows(); ++i) {
      if (i == row) continue;
      double f = T(i, col);
      if (f != 0.0) T.row(i) -= f * T.row(row);
    }
    double zf = z_row(col);
    if (zf != 0.0) z_row -= zf * T.row(row).head(n_cols);
    basis[static_cast<size_t>(row)] = col;
    ++pivots;
  }
};

}  // namespace

LpSolution simplex_solve(const LinearProgram& lp) {
  lp.validate();
  LpSolution sol;
  StandardForm sf = build_standard(lp);
  const int m = static_cast<int>(sf.A.rows());
  const int n0 = static_cast<int>(sf.A.cols());

  if (m == 0) {
    // Only bounds: pick the bound minimizing each cost coordinate.
    sol.x = Vec::Zero(lp.n_vars());
    for (int j = 0; j < lp.n_vars(); ++j) {
      double lo = lp.lo(j), hi = lp.hi(j);
      if (lp.c(j) > 0) {
        if (lo == -LinearProgram::infinity()) { sol.status = LpStatus::Unbounded; return sol; }
        sol.x(j) = lo;
      } else if (lp.c(j) < 0) {
        if (hi == LinearProgram::infinity()) { sol.status = LpStatus::Unbounded; return sol; }
        sol.x(j) = hi;
      } else {
        sol.x(j) = std::clamp(0.0, lo, hi);
      }
    }
    sol.status = LpStatus::Optimal;
    sol.objective = lp.c.dot(sol.x);
    sol.dual_ub = Vec::Zero(0);
    sol.dual_eq = Vec::Zero(0);
    return sol;
  }

  // Phase 1 with one artificial per row.
  Tableau tb;
  tb.n_cols = n0 + m;
  tb.T = Mat::Zero(m, tb.n_cols + 1);
  tb.T.block(0, 0, m, n0) = sf.A;
  tb.T.block(0, n0, m, m) = Mat::Identity(m, m);
  tb.T.col(tb.n_cols) = sf.b;
  tb.basis.resize(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) tb.basis[static_cast<size_t>(i)] = n0 + i;

  Vec phase1_cost = Vec::Zero(tb.n_cols);
  phase1_cost.segment(n0, m).setOnes();
  tb.reset_phase(phase1_cost);

  std::vector<bool> allowed(static_cast<size_t>(tb.n_cols), true);
  const int max_pivots = 200000;
  while (tb.pivots < max_pivots) {
    auto s = tb.pivot_once(allowed);
    if (s == Tableau::Step::Done) break;
    if (s == Tableau::Step::Unbounded)
      throw NumericalError("phase-1 LP reported unbounded: numerical breakdown");
  }
  if (tb.pivots >= max_pivots) {
    sol.status = LpStatus::Stalled;
    return sol;
  }
  double phase1 = 0;
  for (int i = 0; i < m; ++i)
    if (tb.basis[static_cast<size_t>(i)] >= n0) phase1 += tb.T(i, tb.n_cols);
  if (phase1 > 1e-7) {
    sol.status = LpStatus::Infeasible;
    return sol;
  }

  // Drive leftover zero-level artificials out of the basis.
  for (int i = 0; i < m; ++i) {
    if (tb.basis[static_cast<size_t>(i)] < n0) continue;
    int col = -1;
    for (int j = 0; j < n0; ++j) {
      if (std::abs(tb.T(i, j)) > 1e-7) {
        col = j;
        break;
      }
    }
    if (col >= 0) tb.do_pivot(i, col);
    // Otherwise the row is redundant; the artificial stays basic at zero.
  }

  // Phase 2: forbid artificials, minimize the real objective.
  for (int j = n0; j < tb.n_cols; ++j) allowed[static_cast<size_t>(j)] = false;
  Vec phase2_cost = Vec::Zero(tb.n_cols);
  phase2_cost.segment(0, n0) = sf.c;
  tb.reset_phase(phase2_cost);

  while (tb.pivots < max_pivots) {
    auto s = tb.pivot_once(allowed);
    if (s == Tableau::Step::Done) break;
    if (s == Tableau::Step::Unbounded) {
      sol.status = LpStatus::Unbounded;
      return sol;
    }
  }
  if (tb.pivots >= max_pivots) {
    sol.status = LpStatus::Stalled;
    return sol;
  }

  // Recover the standard-form solution.
  Vec y = Vec::Zero(n0 + m);
  for (int i = 0; i < m; ++i) y(tb.basis[static_cast<size_t>(i)]) = tb.T(i, tb.n_cols);

  sol.x = Vec::Zero(lp.n_vars());
  for (int j = 0; j < lp.n_vars(); ++j) {
    const auto& vm = sf.vmap[static_cast<size_t>(j)];
    double v = y(vm.col);
    if (vm.col2 >= 0) v -= y(vm.col2);
    sol.x(j) = vm.base + vm.sign * v;
  }
  sol.objective = lp.c.dot(sol.x);
  sol.pivots = tb.pivots;
  sol.status = LpStatus::Optimal;

  // Shadow prices from reduced costs of the artificial columns:
  // for row i, c_B' B^-1 e_i = -(reduced cost of that row's artificial).
  // The Lagrangian multiplier of a <= row in a minimization is their negation,
  // which is the sign this interface reports (>= 0 on inequality rows).
  Vec dual(m);
  for (int i = 0; i < m; ++i)
    dual(i) = tb.z_row(n0 + i) * sf.row_scale[static_cast<size_t>(i)];
  sol.dual_ub = dual.segment(0, sf.n_ub);
  sol.dual_eq = dual.segment(m - sf.n_eq, sf.n_eq);
  return sol;
}

}  // namespace ddia
