#include "reflex/safety_filter.hpp"

#include "reflex/qp.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>

namespace reflex {

namespace {

constexpr double kDistanceClamp = 1e-4;  // m, floor before logarithms
constexpr double kKktTol = 1e-6;
constexpr double kFeasTol = 1e-6;
constexpr int kMaxSqpIter = 20;

struct ConstraintSpec {
  double threshold = 0.1;
  const DistanceEstimate* frozen = nullptr;
  const DistanceQuery* query = nullptr;  // null or empty: use the frozen estimate
  int slot = 0;                          // position in the result arrays
};

struct ConstraintEval {
  double value = 0.0;
  VecX row;  // d(value)/d(dq)
};

bool has_query(const ConstraintSpec& spec) { return spec.query != nullptr && *spec.query; }

ConstraintEval eval_constraint(const SafetyFilterProblem& problem, const ConstraintSpec& spec,
                               const VecX& dq) {
  DistanceEstimate est;
  if (has_query(spec)) {
    est = (*spec.query)(problem.q_c + dq);
  } else {
    est = *spec.frozen;
  }
  const double d = std::max(est.distance, kDistanceClamp);
  ConstraintEval out;
  if (problem.method == FilterMethod::Cbf) {
    out.value = est.gradient.dot(dq) / problem.dt + problem.cbf_gain * (d - spec.threshold);
    out.row = est.gradient * (1.0 / problem.dt + (has_query(spec) ? problem.cbf_gain : 0.0));
  } else {
    out.value = std::log(d / spec.threshold) + dq.dot(est.gradient);
    out.row = est.gradient * (1.0 + (has_query(spec) ? 1.0 / d : 0.0));
  }
  return out;
}

std::vector<ConstraintSpec> included_constraints(const SafetyFilterProblem& problem,
                                                 std::vector<bool>& included) {
  std::vector<ConstraintSpec> specs;
  included.assign(static_cast<std::size_t>(problem.constraint_count()), false);
  for (std::size_t i = 0; i < problem.env_estimates.size(); ++i) {
    if (problem.env_estimates[i].distance < 2.0 * problem.lambda) {
      ConstraintSpec spec;
      spec.threshold = problem.lambda;
      spec.frozen = &problem.env_estimates[i];
      spec.query = i < problem.env_queries.size() ? &problem.env_queries[i] : nullptr;
      spec.slot = static_cast<int>(i);
      specs.push_back(spec);
      included[i] = true;
    }
  }
  if (problem.self_estimate.distance < 2.0 * problem.mu) {
    ConstraintSpec spec;
    spec.threshold = problem.mu;
    spec.frozen = &problem.self_estimate;
    spec.query = problem.self_query ? &problem.self_query : nullptr;
    spec.slot = static_cast<int>(problem.env_estimates.size());
    specs.push_back(spec);
    included.back() = true;
  }
  return specs;
}

void solver_bounds(const SafetyFilterProblem& problem, VecX& lb, VecX& ub) {
  lb = problem.step_lower.cwiseMax(problem.joint_lower - problem.q_c).cwiseMin(0.0);
  ub = problem.step_upper.cwiseMin(problem.joint_upper - problem.q_c).cwiseMax(0.0);
}

double kkt_residual_impl(const VecX& grad_f, const std::vector<ConstraintEval>& evals,
                         const VecX& dq, const VecX& lb, const VecX& ub) {
  const Eigen::Index n = dq.size();
  double feas = 0.0;
  std::vector<VecX> active_rows;
  std::vector<double> active_values;
  for (const ConstraintEval& ev : evals) {
    feas = std::max(feas, -std::min(ev.value, 0.0));
    if (ev.value <= kFeasTol) {
      active_rows.push_back(ev.row);
      active_values.push_back(ev.value);
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    feas = std::max(feas, lb[j] - dq[j]);
    feas = std::max(feas, dq[j] - ub[j]);
    if (dq[j] - lb[j] <= 1e-9) {
      active_rows.push_back(VecX::Unit(n, j));
      active_values.push_back(dq[j] - lb[j]);
    }
    if (ub[j] - dq[j] <= 1e-9) {
      active_rows.push_back(-VecX::Unit(n, j));
      active_values.push_back(ub[j] - dq[j]);
    }
  }

  double stationarity;
  double complementarity = 0.0;
  if (active_rows.empty()) {
    stationarity = grad_f.lpNorm<Eigen::Infinity>();
  } else {
    MatX A(n, static_cast<Eigen::Index>(active_rows.size()));
    for (std::size_t j = 0; j < active_rows.size(); ++j)
      A.col(static_cast<Eigen::Index>(j)) = active_rows[j];
    VecX mu = A.colPivHouseholderQr().solve(grad_f);
    mu = mu.cwiseMax(0.0);
    stationarity = (grad_f - A * mu).lpNorm<Eigen::Infinity>();
    for (std::size_t j = 0; j < active_rows.size(); ++j)
      complementarity = std::max(complementarity, std::abs(mu[static_cast<Eigen::Index>(j)] *
                                                           active_values[j]));
  }
  return std::max({stationarity, feas, complementarity});
}

}  // namespace

void FilterObjective::validate(Eigen::Index dof) const {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("objective weights must be >= 0");
  if (q_de.size() != dof) throw InvalidArity("q_de arity mismatch");
  if (Q.rows() != dof || Q.cols() != dof) throw InvalidArity("Q shape mismatch");
  if ((Q - Q.transpose()).lpNorm<Eigen::Infinity>() > 1e-9)
    throw ConfigError("Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatX> eig(Q, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) throw ConfigError("Q must be positive semidefinite");
}

void SafetyFilterProblem::validate() const {
  const Eigen::Index n = q_c.size();
  if (n == 0) throw InvalidArity("empty problem");
  objective.validate(n);
  if (pinv_jacobian.rows() != n || pinv_jacobian.cols() != objective.v_de.size())
    throw InvalidArity("pinv_jacobian shape mismatch");
  if (!(lambda > 0.0) || !(mu > 0.0)) throw ConfigError("thresholds must be > 0");
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  for (const auto& est : env_estimates) {
    if (est.gradient.size() != n) throw InvalidArity("env estimate gradient arity mismatch");
  }
  if (self_estimate.gradient.size() != n)
    throw InvalidArity("self estimate gradient arity mismatch");
  if (joint_lower.size() != n || joint_upper.size() != n || step_lower.size() != n ||
      step_upper.size() != n)
    throw InvalidArity("bound arity mismatch");
}

std::pair<double, VecX> objective_eval(const SafetyFilterProblem& problem, const VecX& dq) {
  check_arity(dq, problem.q_c.size(), "objective_eval");
  const VecX a = problem.pinv_jacobian * problem.objective.v_de * problem.dt;
  const VecX b = problem.objective.q_de - problem.q_c;
  const VecX ra = dq - a;
  const VecX rb = dq - b;
  const double value = 0.5 * problem.objective.alpha * ra.squaredNorm() +
                       0.5 * problem.objective.beta * rb.squaredNorm() +
                       dq.dot(problem.objective.Q * dq);
  VecX grad = problem.objective.alpha * ra + problem.objective.beta * rb +
              2.0 * (problem.objective.Q * dq);
  return {value, std::move(grad)};
}

double barrier_constraint(double d_hat, const VecX& grad, double threshold, const VecX& dq) {
  const double d = std::max(d_hat, kDistanceClamp);
  return std::log(d / threshold) + dq.dot(grad);
}

double cbf_constraint(double d_hat, const VecX& grad, double threshold, double gain,
                      const VecX& dq, double dt) {
  const double d = std::max(d_hat, kDistanceClamp);
  return grad.dot(dq) / dt + gain * (d - threshold);
}

SafetyFilterResult solve_step(const SafetyFilterProblem& problem) {
  const auto t_start = std::chrono::steady_clock::now();
  problem.validate();
  const Eigen::Index n = problem.q_c.size();

  SafetyFilterResult result;
  result.delta_q = VecX::Zero(n);
  result.constraint_values = VecX::Zero(problem.constraint_count());
  result.active.assign(static_cast<std::size_t>(problem.constraint_count()), false);

  std::vector<ConstraintSpec> specs = included_constraints(problem, result.included);

  VecX lb, ub;
  solver_bounds(problem, lb, ub);

  // constant Hessian and linear term of the exact quadratic objective
  MatX H = 2.0 * problem.objective.Q;
  H.diagonal().array() += problem.objective.alpha + problem.objective.beta;
  const VecX a = problem.pinv_jacobian * problem.objective.v_de * problem.dt;
  const VecX f0 = -(problem.objective.alpha * a +
                    problem.objective.beta * (problem.objective.q_de - problem.q_c));

  const auto objective_at = [&](const VecX& x) { return objective_eval(problem, x).first; };
  const auto eval_all = [&](const VecX& x) {
    std::vector<ConstraintEval> evals;
    evals.reserve(specs.size());
    for (const auto& spec : specs) evals.push_back(eval_constraint(problem, spec, x));
    return evals;
  };
  const auto min_value = [](const std::vector<ConstraintEval>& evals) {
    double v = std::numeric_limits<double>::infinity();
    for (const auto& ev : evals) v = std::min(v, ev.value);
    return v;
  };
  const auto merit = [&](const VecX& x, const std::vector<ConstraintEval>& evals) {
    // violations inside the feasibility tolerance are free, so an active
    // nonlinear constraint cannot veto tangential progress
    double penalty = 0.0;
    for (const auto& ev : evals) penalty += std::max(0.0, -ev.value - 0.1 * kFeasTol);
    return objective_at(x) + 1e3 * penalty;
  };

  VecX x = VecX::Zero(n);
  std::vector<ConstraintEval> evals = eval_all(x);

  VecX best_x;
  double best_obj = std::numeric_limits<double>::infinity();
  bool have_best = false;
  const auto consider_best = [&](const VecX& cand, const std::vector<ConstraintEval>& cand_evals) {
    if (min_value(cand_evals) >= -kFeasTol) {
      const double obj = objective_at(cand);
      if (!have_best || obj < best_obj) {
        best_x = cand;
        best_obj = obj;
        have_best = true;
      }
    }
  };
  consider_best(x, evals);

  const int m_c = static_cast<int>(specs.size());
  const int m_rows = m_c + 2 * static_cast<int>(n);
  MatX A(m_rows, n);
  VecX b(m_rows);

  // Trust-region SQP: the subproblem is exact in the objective, so the
  // radius only guards the constraint linearization. It shrinks on rejected
  // steps and recovers on accepted ones.
  double trust = 0.02;
  constexpr double kTrustMin = 2e-4;

  for (int it = 0; it < kMaxSqpIter; ++it) {
    result.iterations = it + 1;
    for (int i = 0; i < m_c; ++i) {
      A.row(i) = evals[static_cast<std::size_t>(i)].row.transpose();
      b[i] = evals[static_cast<std::size_t>(i)].row.dot(x) - evals[static_cast<std::size_t>(i)].value;
    }
    const bool limit_step = m_c > 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double lo = limit_step ? std::max(lb[j], x[j] - trust) : lb[j];
      const double hi = limit_step ? std::min(ub[j], x[j] + trust) : ub[j];
      A.row(m_c + 2 * j).setZero();
      A(m_c + 2 * j, j) = 1.0;
      b[m_c + 2 * j] = lo;
      A.row(m_c + 2 * j + 1).setZero();
      A(m_c + 2 * j + 1, j) = -1.0;
      b[m_c + 2 * j + 1] = -hi;
    }

    QpResult qp = solve_qp(H, f0, A, b);
    VecX target;
    if (qp.feasible) {
      target = qp.x;
    } else {
      // distinguish a binding trust region from true infeasibility
      for (Eigen::Index j = 0; j < n; ++j) {
        b[m_c + 2 * j] = lb[j];
        b[m_c + 2 * j + 1] = -ub[j];
      }
      qp = solve_qp(H, f0, A, b);
      if (!qp.feasible) {
        if (it == 0) {
          // Both constraints already past recovery within the step bounds:
          // retreat along the combined distance gradient, flagged.
          VecX dir = VecX::Zero(n);
          for (int i = 0; i < m_c; ++i) {
            if (evals[static_cast<std::size_t>(i)].value < 0.0)
              dir += specs[static_cast<std::size_t>(i)].frozen->gradient;
          }
          double scale = std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j < n; ++j) {
            if (dir[j] > 1e-12) scale = std::min(scale, ub[j] / dir[j]);
            if (dir[j] < -1e-12) scale = std::min(scale, lb[j] / dir[j]);
          }
          x = std::isfinite(scale) ? VecX(scale * dir) : VecX(VecX::Zero(n));
          evals = eval_all(x);
          result.infeasible_start = true;
        }
        break;
      }
      const VecX dir = qp.x - x;
      const double len = dir.lpNorm<Eigen::Infinity>();
      target = len > trust && limit_step ? VecX(x + (trust / len) * dir) : qp.x;
    }

    const VecX step = target - x;
    if (step.lpNorm<Eigen::Infinity>() < 1e-14) {
      const double residual =
          kkt_residual_impl(objective_eval(problem, x).second, evals, x, lb, ub);
      result.converged = residual < kKktTol;
      break;
    }

    const VecX cand = target;
    std::vector<ConstraintEval> cand_evals = eval_all(cand);
    if (merit(cand, cand_evals) < merit(x, evals) - 1e-14) {
      x = cand;
      evals = std::move(cand_evals);
      trust = std::min(0.05, trust * 1.6);
    } else {
      trust *= 0.4;
      if (trust < kTrustMin) break;
      continue;
    }

    consider_best(x, evals);
    const double residual = kkt_residual_impl(objective_eval(problem, x).second, evals, x, lb, ub);
    if (residual < kKktTol) {
      result.converged = true;
      break;
    }
  }

  if (!result.infeasible_start) {
    if (min_value(evals) >= -kFeasTol) {
      // current iterate is feasible; fall through with it
    } else if (have_best) {
      x = best_x;
      evals = eval_all(x);
      result.converged = false;
    } else {
      x = VecX::Zero(n);
      evals = eval_all(x);
      result.converged = false;  // safe stop
    }
  }

  result.delta_q = x;
  result.objective_value = objective_at(x);
  result.kkt_residual = kkt_residual_impl(objective_eval(problem, x).second, evals, x, lb, ub);

  // Report every potential constraint's value at the solution. Excluded
  // constraints use their frozen estimate (no extra surrogate queries).
  for (int i = 0; i < problem.constraint_count(); ++i) {
    const bool is_self = i == problem.constraint_count() - 1;
    ConstraintSpec spec;
    spec.threshold = is_self ? problem.mu : problem.lambda;
    spec.frozen = is_self ? &problem.self_estimate
                          : &problem.env_estimates[static_cast<std::size_t>(i)];
    result.constraint_values[i] = eval_constraint(problem, spec, x).value;
  }
  for (std::size_t s = 0; s < specs.size(); ++s) {
    result.constraint_values[specs[s].slot] = evals[s].value;
  }
  for (int i = 0; i < problem.constraint_count(); ++i) {
    result.active[static_cast<std::size_t>(i)] =
        result.included[static_cast<std::size_t>(i)] && result.constraint_values[i] < kFeasTol;
  }

  result.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

double kkt_residual(const SafetyFilterProblem& problem, const VecX& dq) {
  check_arity(dq, problem.q_c.size(), "kkt_residual");
  std::vector<bool> included;
  std::vector<ConstraintSpec> specs = included_constraints(problem, included);
  std::vector<ConstraintEval> evals;
  evals.reserve(specs.size());
  for (const auto& spec : specs) evals.push_back(eval_constraint(problem, spec, dq));
  VecX lb, ub;
  solver_bounds(problem, lb, ub);
  return kkt_residual_impl(objective_eval(problem, dq).second, evals, dq, lb, ub);
}

}  // namespace reflex
