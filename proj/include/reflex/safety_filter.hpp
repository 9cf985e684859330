#pragma once

#include "reflex/collision_geometry.hpp"
#include "reflex/types.hpp"

#include <functional>
#include <vector>

namespace reflex {

enum class FilterMethod : int { Barrier = 0, Cbf = 1, None = 2 };

/// Per-tick motion objective: Cartesian velocity target, reference joints,
/// and the regularization weights of the quadratic program.
struct FilterObjective {
  VecX v_de;           // stacked per-arm twists (6 each), m/s and rad/s
  VecX q_de;           // desired joints, full system arity
  double alpha = 5.0;  // Cartesian velocity weight
  double beta = 1.0;   // reference joint weight
  MatX Q;              // symmetric PSD step regularizer

  void validate(Eigen::Index dof) const;
};

/// Re-evaluates a distance estimate at a candidate configuration. Used by the
/// solver to refresh the nonlinear constraints between SQP iterations; when
/// absent the frozen estimate is used as written.
using DistanceQuery = std::function<DistanceEstimate(const VecX& q)>;

struct SafetyFilterProblem {
  VecX q_c;  // current joints
  FilterObjective objective;
  MatX pinv_jacobian;  // maps stacked twists to joint steps (dof x 6*arms)
  double dt = 0.025;   // control tick, s

  std::vector<DistanceEstimate> env_estimates;  // at q_c, one per arm
  DistanceEstimate self_estimate;               // at q_c
  std::vector<DistanceQuery> env_queries;       // optional, parallel to env_estimates
  DistanceQuery self_query;                     // optional

  double lambda = 0.1;  // environment threshold, m
  double mu = 0.1;      // self threshold, m

  VecX joint_lower, joint_upper;  // rad
  VecX step_lower, step_upper;    // rad per tick

  FilterMethod method = FilterMethod::Barrier;
  double cbf_gain = 0.9;

  int constraint_count() const { return static_cast<int>(env_estimates.size()) + 1; }
  void validate() const;
};

struct SafetyFilterResult {
  VecX delta_q;
  double objective_value = 0.0;
  VecX constraint_values;      // env constraints then self, evaluated at delta_q
  std::vector<bool> included;  // inside the 2x threshold activation band
  std::vector<bool> active;    // included and tight/violated at the solution
  int iterations = 0;
  double solve_time = 0.0;  // s, monotonic clock; exempt from bitwise determinism
  bool converged = false;
  bool infeasible_start = false;
  double kkt_residual = 0.0;
};

/// Objective value and analytic gradient at a candidate step.
///   1/2 a|dq - J^+ v dt|^2 + 1/2 b|dq + q_c - q_de|^2 + dq' Q dq
std::pair<double, VecX> objective_eval(const SafetyFilterProblem& problem, const VecX& dq);

/// Log-barrier collision constraint, feasible iff >= 0. d_hat is clamped at
/// 1e-4 m before the logarithm.
double barrier_constraint(double d_hat, const VecX& grad, double threshold, const VecX& dq);

/// Control-barrier-function constraint (gain K), feasible iff >= 0.
double cbf_constraint(double d_hat, const VecX& grad, double threshold, double gain,
                      const VecX& dq, double dt);

/// One safety-filter tick: SQP with surrogate re-queries, an inner dual
/// active-set QP, and hard joint/step bounds. Constraints enter only when the
/// current estimate is below twice its threshold. Deterministic apart from
/// the solve_time field.
SafetyFilterResult solve_step(const SafetyFilterProblem& problem);

/// Combined stationarity / feasibility / complementarity residual at dq,
/// with multipliers estimated by least squares on the active set.
double kkt_residual(const SafetyFilterProblem& problem, const VecX& dq);

}  // namespace reflex
