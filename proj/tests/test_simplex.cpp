#include <doctest.h>

#include <cmath>
#include <vector>

#include "ddia/rng.hpp"
#include "ddia/simplex.hpp"

using namespace ddia;

namespace {

LinearProgram empty_lp(int n) {
  LinearProgram lp;
  lp.c = Vec::Zero(n);
  lp.A_ub = Mat::Zero(0, n);
  lp.b_ub = Vec::Zero(0);
  lp.A_eq = Mat::Zero(0, n);
  lp.b_eq = Vec::Zero(0);
  lp.lo = Vec::Constant(n, -LinearProgram::infinity());
  lp.hi = Vec::Constant(n, LinearProgram::infinity());
  return lp;
}

// Exhaustive vertex enumeration over the rows of [A_ub; A_eq; active bounds].
// Only valid for small fully-bounded instances.
double brute_force_min(const LinearProgram& lp, bool& found) {
  const int n = lp.n_vars();
  std::vector<Vec> rows;
  std::vector<double> rhs;
  for (int i = 0; i < lp.A_ub.rows(); ++i) {
    rows.push_back(lp.A_ub.row(i));
    rhs.push_back(lp.b_ub(i));
  }
  for (int i = 0; i < lp.A_eq.rows(); ++i) {
    rows.push_back(lp.A_eq.row(i));
    rhs.push_back(lp.b_eq(i));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(lp.lo(j))) {
      Vec e = Vec::Zero(n);
      e(j) = 1;
      rows.push_back(e);
      rhs.push_back(lp.lo(j));
    }
    if (std::isfinite(lp.hi(j))) {
      Vec e = Vec::Zero(n);
      e(j) = 1;
      rows.push_back(e);
      rhs.push_back(lp.hi(j));
    }
  }
  const int m = static_cast<int>(rows.size());
  double best = std::numeric_limits<double>::infinity();
  found = false;
  std::vector<int> pick(n);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Mat A(n, n);
      Vec b(n);
      for (int k = 0; k < n; ++k) {
        A.row(k) = rows[pick[k]];
        b(k) = rhs[pick[k]];
      }
      Eigen::FullPivLU<Mat> lu(A);
      if (!lu.isInvertible()) return;
      Vec x = lu.solve(b);
      // Feasibility.
      for (int i = 0; i < lp.A_ub.rows(); ++i)
        if (lp.A_ub.row(i).dot(x) > lp.b_ub(i) + 1e-7) return;
      for (int i = 0; i < lp.A_eq.rows(); ++i)
        if (std::abs(lp.A_eq.row(i).dot(x) - lp.b_eq(i)) > 1e-7) return;
      for (int j = 0; j < n; ++j)
        if (x(j) < lp.lo(j) - 1e-7 || x(j) > lp.hi(j) + 1e-7) return;
      found = true;
      best = std::min(best, lp.c.dot(x));
      return;
    }
    for (int i = start; i < m; ++i) {
      pick[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

// First-order optimality for the returned point and multipliers.
void check_kkt(const LinearProgram& lp, const LpSolution& sol) {
  REQUIRE(sol.status == LpStatus::Optimal);
  const double tol = 1e-7;
  // Primal feasibility.
  for (int i = 0; i < lp.A_ub.rows(); ++i)
    CHECK(lp.A_ub.row(i).dot(sol.x) <= lp.b_ub(i) + tol);
  for (int i = 0; i < lp.A_eq.rows(); ++i)
    CHECK(std::abs(lp.A_eq.row(i).dot(sol.x) - lp.b_eq(i)) < tol);
  for (int j = 0; j < lp.n_vars(); ++j) {
    CHECK(sol.x(j) >= lp.lo(j) - tol);
    CHECK(sol.x(j) <= lp.hi(j) + tol);
  }
  // Dual feasibility and complementary slackness on inequalities.
  REQUIRE(sol.dual_ub.size() == lp.A_ub.rows());
  for (int i = 0; i < lp.A_ub.rows(); ++i) {
    CHECK(sol.dual_ub(i) >= -tol);
    double slack = lp.b_ub(i) - lp.A_ub.row(i).dot(sol.x);
    CHECK(std::abs(sol.dual_ub(i) * slack) < 1e-5);
  }
  // Stationarity: reduced cost vanishes for variables strictly inside their
  // bounds, and points outward at active bounds.
  Vec red = lp.c;
  if (lp.A_ub.rows() > 0) red += lp.A_ub.transpose() * sol.dual_ub;
  if (lp.A_eq.rows() > 0) red += lp.A_eq.transpose() * sol.dual_eq;
  for (int j = 0; j < lp.n_vars(); ++j) {
    bool at_lo = sol.x(j) <= lp.lo(j) + tol;
    bool at_hi = sol.x(j) >= lp.hi(j) - tol;
    if (!at_lo && !at_hi) CHECK(std::abs(red(j)) < 1e-6);
    else if (at_lo && !at_hi) CHECK(red(j) > -1e-6);
    else if (at_hi && !at_lo) CHECK(red(j) < 1e-6);
  }
}

}  // namespace

TEST_CASE("a single lower bound pins the minimizer") {
  LinearProgram lp = empty_lp(1);
  lp.c = Vec::Ones(1);
  lp.lo(0) = 3.0;
  LpSolution sol = simplex_solve(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.x(0) == doctest::Approx(3.0));
  CHECK(sol.objective == doctest::Approx(3.0));
}

TEST_CASE("known vertex of the unit simplex") {
  LinearProgram lp = empty_lp(2);
  lp.c << -1, -1;
  lp.A_ub = Mat::Ones(1, 2);
  lp.b_ub = Vec::Ones(1);
  lp.lo = Vec::Zero(2);
  LpSolution sol = simplex_solve(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(-1.0));
  CHECK(sol.x.sum() == doctest::Approx(1.0));
  check_kkt(lp, sol);
}

TEST_CASE("equality constraints are honored exactly") {
  LinearProgram lp = empty_lp(2);
  lp.c << 1, 1;
  lp.A_eq = Mat(1, 2);
  lp.A_eq << 1, -1;
  lp.b_eq = Vec::Ones(1);
  lp.lo = Vec::Zero(2);
  lp.hi = Vec::Constant(2, 10.0);
  LpSolution sol = simplex_solve(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.x(0) == doctest::Approx(1.0));
  CHECK(sol.x(1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sol.objective == doctest::Approx(1.0));
  check_kkt(lp, sol);
}

TEST_CASE("conflicting constraints report infeasibility") {
  LinearProgram lp = empty_lp(1);
  lp.c = Vec::Ones(1);
  lp.A_ub = Mat::Ones(1, 1);
  lp.b_ub = Vec::Constant(1, -1.0);  // x <= -1
  lp.lo(0) = 0.0;                    // x >= 0
  LpSolution sol = simplex_solve(lp);
  CHECK(sol.status == LpStatus::Infeasible);

  LinearProgram lp2 = empty_lp(2);
  lp2.c << 1, 0;
  lp2.A_eq = Mat(2, 2);
  lp2.A_eq << 1, 1, 1, 1;
  lp2.b_eq = Vec(2);
  lp2.b_eq << 1, 2;  // x+y = 1 and x+y = 2
  lp2.lo = Vec::Zero(2);
  lp2.hi = Vec::Constant(2, 5.0);
  CHECK(simplex_solve(lp2).status == LpStatus::Infeasible);
}

TEST_CASE("descent directions without bounds are unbounded") {
  LinearProgram lp = empty_lp(1);
  lp.c = Vec::Constant(1, -1.0);
  lp.lo(0) = 0.0;
  CHECK(simplex_solve(lp).status == LpStatus::Unbounded);
}

TEST_CASE("free variables can take negative optimal values") {
  LinearProgram lp = empty_lp(2);
  lp.c << 1, 0;
  lp.A_ub = Mat(1, 2);
  lp.A_ub << -1, 0;  // -x <= 5  i.e. x >= -5
  lp.b_ub = Vec::Constant(1, 5.0);
  lp.hi(1) = 1.0;
  lp.lo(1) = 0.0;
  LpSolution sol = simplex_solve(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.x(0) == doctest::Approx(-5.0));
  CHECK(sol.objective == doctest::Approx(-5.0));
}

TEST_CASE("degenerate pivoting instance terminates at the optimum") {
  // A classic cycling construction for naive pivot rules.
  LinearProgram lp = empty_lp(4);
  lp.c << -0.75, 150, -0.02, 6;
  lp.A_ub = Mat(3, 4);
  lp.A_ub << 0.25, -60, -0.04, 9, 0.5, -90, -0.02, 3, 0, 0, 1, 0;
  lp.b_ub = Vec(3);
  lp.b_ub << 0, 0, 1;
  lp.lo = Vec::Zero(4);
  lp.hi = Vec::Constant(4, 1e6);
  LpSolution sol = simplex_solve(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  bool found = false;
  double oracle = brute_force_min(lp, found);
  REQUIRE(found);
  CHECK(sol.objective == doctest::Approx(oracle).epsilon(1e-7));
  CHECK(sol.pivots < 200);
  check_kkt(lp, sol);
}

TEST_CASE("random boxed instances match exhaustive vertex enumeration") {
  Rng rng(2024);
  int solved = 0;
  for (int inst = 0; inst < 60; ++inst) {
    const int n = 4, m = 6;
    LinearProgram lp = empty_lp(n);
    for (int j = 0; j < n; ++j) lp.c(j) = rng.uniform(-1.0, 1.0);
    lp.A_ub = Mat(m, n);
    lp.b_ub = Vec(m);
    Vec x0(n);
    for (int j = 0; j < n; ++j) x0(j) = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) lp.A_ub(i, j) = rng.uniform(-1.0, 1.0);
      // Keep x0 feasible so the instance cannot be empty.
      lp.b_ub(i) = lp.A_ub.row(i).dot(x0) + rng.uniform(0.05, 1.0);
    }
    for (int j = 0; j < n; ++j) {
      lp.lo(j) = x0(j) - rng.uniform(0.5, 2.0);
      lp.hi(j) = x0(j) + rng.uniform(0.5, 2.0);
    }
    LpSolution sol = simplex_solve(lp);
    REQUIRE(sol.status == LpStatus::Optimal);
    bool found = false;
    double oracle = brute_force_min(lp, found);
    REQUIRE(found);
    CHECK(sol.objective == doctest::Approx(oracle).epsilon(1e-6));
    check_kkt(lp, sol);
    ++solved;
  }
  CHECK(solved == 60);
}

TEST_CASE("random instances with one equality match enumeration") {
  Rng rng(77);
  for (int inst = 0; inst < 30; ++inst) {
    const int n = 4;
    LinearProgram lp = empty_lp(n);
    for (int j = 0; j < n; ++j) lp.c(j) = rng.uniform(-1.0, 1.0);
    Vec x0(n);
    for (int j = 0; j < n; ++j) x0(j) = rng.uniform(-1.0, 1.0);
    lp.A_eq = Mat(1, n);
    for (int j = 0; j < n; ++j) lp.A_eq(0, j) = rng.uniform(-1.0, 1.0);
    lp.b_eq = Vec::Constant(1, lp.A_eq.row(0).dot(x0));
    lp.A_ub = Mat(3, n);
    lp.b_ub = Vec(3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < n; ++j) lp.A_ub(i, j) = rng.uniform(-1.0, 1.0);
      lp.b_ub(i) = lp.A_ub.row(i).dot(x0) + rng.uniform(0.05, 1.0);
    }
    for (int j = 0; j < n; ++j) {
      lp.lo(j) = x0(j) - rng.uniform(0.5, 2.0);
      lp.hi(j) = x0(j) + rng.uniform(0.5, 2.0);
    }
    LpSolution sol = simplex_solve(lp);
    REQUIRE(sol.status == LpStatus::Optimal);
    bool found = false;
    double oracle = brute_force_min(lp, found);
    REQUIRE(found);
    CHECK(sol.objective == doctest::Approx(oracle).epsilon(1e-6));
    check_kkt(lp, sol);
  }
}

TEST_CASE("malformed programs are rejected") {
  LinearProgram lp = empty_lp(2);
  lp.b_ub = Vec::Ones(1);  // row count mismatch with A_ub
  CHECK_THROWS_AS(lp.validate(), Error);

  LinearProgram lp2 = empty_lp(2);
  lp2.lo(0) = 2.0;
  lp2.hi(0) = 1.0;  // crossed bounds
  CHECK_THROWS_AS(lp2.validate(), Error);
}
