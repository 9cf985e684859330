#pragma once

#include "reflex/types.hpp"

namespace reflex {

struct QpResult {
  VecX x;
  VecX multipliers;  // one per inequality row, >= 0 at the solution
  bool feasible = false;
  int iterations = 0;
};

/// Minimize 1/2 x'Hx + f'x subject to A x >= b, H symmetric positive definite.
/// Dual active-set method (Goldfarb-Idnani): starts at the unconstrained
/// minimum and adds violated constraints one at a time, so an unconstrained
/// problem returns the exact Cholesky solve. Reports feasible = false when
/// the constraint set is inconsistent.
QpResult solve_qp(const MatX& H, const VecX& f, const MatX& A, const VecX& b,
                  int max_iter = 500);

}  // namespace reflex
