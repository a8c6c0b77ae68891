#pragma once

#include <limits>

#include "ddia/common.hpp"

namespace ddia {

// Minimize c'x subject to A_ub x <= b_ub, A_eq x = b_eq, lo <= x <= hi.
// Infinite bounds are allowed (use +/- infinity()).
struct LinearProgram {
  Vec c;
  Mat A_ub;  // may have zero rows
  Vec b_ub;
  Mat A_eq;  // may have zero rows
  Vec b_eq;
  Vec lo, hi;

  static double infinity() { return std::numeric_limits<double>::infinity(); }
  int n_vars() const { return static_cast<int>(c.size()); }
  void validate() const;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, Stalled };

struct LpSolution {
  LpStatus status = LpStatus::Stalled;
  Vec x;
  double objective = 0.0;
  Vec dual_ub;  // multipliers for the inequality rows (>= 0)
  Vec dual_eq;  // multipliers for the equality rows
  int pivots = 0;
};

LpSolution simplex_solve(const LinearProgram& lp);

}  // namespace ddia
