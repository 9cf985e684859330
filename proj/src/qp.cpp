#include "reflex/qp.hpp"

#include <Eigen/Cholesky>

#include <limits>
#include <vector>

namespace reflex {

QpResult solve_qp(const MatX& H, const VecX& f, const MatX& A, const VecX& b, int max_iter) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = A.rows();
  if (H.cols() != n || f.size() != n || (m > 0 && A.cols() != n) || b.size() != m)
    throw NumericalError("solve_qp: inconsistent shapes");
  if (!H.allFinite() || !f.allFinite() || !A.allFinite() || !b.allFinite())
    throw NumericalError("solve_qp: non-finite input");

  Eigen::LLT<MatX> llt(H);
  if (llt.info() != Eigen::Success) {
    MatX Hj = H;
    Hj.diagonal().array() += 1e-10;
    llt.compute(Hj);
    if (llt.info() != Eigen::Success) throw NumericalError("solve_qp: H is not positive definite");
  }

  QpResult result;
  result.x = -llt.solve(f);
  result.multipliers = VecX::Zero(m);
  if (m == 0) {
    result.feasible = true;
    return result;
  }

  constexpr double kViolationTol = 1e-10;
  constexpr double kStepTol = 1e-12;
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<int> active;
  std::vector<double> u_active;
  std::vector<char> is_active(static_cast<std::size_t>(m), 0);
  VecX& x = result.x;

  int iter = 0;
  while (iter < max_iter) {
    ++iter;
    // most violated inactive constraint
    int p = -1;
    double worst = -kViolationTol;
    for (int i = 0; i < m; ++i) {
      if (is_active[static_cast<std::size_t>(i)]) continue;
      const double s = A.row(i).dot(x) - b[i];
      if (s < worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) {
      result.feasible = true;
      break;
    }

    const VecX np = A.row(p).transpose();
    double u_p = 0.0;

    while (iter < max_iter) {
      ++iter;
      const int k = static_cast<int>(active.size());
      const VecX y = llt.solve(np);
      VecX r;
      VecX z;
      MatX Y;
      if (k > 0) {
        MatX N(n, k);
        for (int j = 0; j < k; ++j) N.col(j) = A.row(active[static_cast<std::size_t>(j)]).transpose();
        Y = llt.solve(N);
        const MatX B = N.transpose() * Y;
        r = B.ldlt().solve(N.transpose() * y);
        z = y - Y * r;
      } else {
        z = y;
      }

      // dual step: first active multiplier driven to zero
      double t1 = inf;
      int drop = -1;
      for (int j = 0; j < k; ++j) {
        if (r[j] > kStepTol) {
          const double cand = u_active[static_cast<std::size_t>(j)] / r[j];
          if (cand < t1) {
            t1 = cand;
            drop = j;
          }
        }
      }
      // primal step: violation of p closed along z
      const double s_p = np.dot(x) - b[p];
      const double ztnp = z.dot(np);
      const double t2 = (ztnp > kStepTol) ? -s_p / ztnp : inf;
      const double t = std::min(t1, t2);

      if (t == inf) {
        result.feasible = false;
        result.iterations = iter;
        return result;  // constraints inconsistent
      }

      if (ztnp <= kStepTol) {
        // no primal progress possible: pure dual step, drop the blocker
        for (int j = 0; j < k; ++j) u_active[static_cast<std::size_t>(j)] -= t * r[j];
        u_p += t;
        is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
        active.erase(active.begin() + drop);
        u_active.erase(u_active.begin() + drop);
        continue;
      }

      x += t * z;
      for (int j = 0; j < k; ++j) u_active[static_cast<std::size_t>(j)] -= t * r[j];
      u_p += t;

      if (t == t2) {
        active.push_back(p);
        u_active.push_back(u_p);
        is_active[static_cast<std::size_t>(p)] = 1;
        break;
      }
      // partial step: constraint `drop` left the active set, keep working on p
      is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
      active.erase(active.begin() + drop);
      u_active.erase(u_active.begin() + drop);
    }
  }

  result.iterations = iter;
  if (iter >= max_iter) result.feasible = false;
  for (std::size_t j = 0; j < active.size(); ++j)
    result.multipliers[active[j]] = u_active[j];
  return result;
}

}  // namespace reflex
