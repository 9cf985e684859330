#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "reflex/rng.hpp"
#include "reflex/safety_filter.hpp"

#include <cmath>

using namespace reflex;

namespace {

VecX random_vec(int n, Rng& rng, double scale = 1.0) {
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.gaussian();
  return v;
}

DistanceEstimate far_estimate(int n) {
  DistanceEstimate est;
  est.distance = kEmptyCloudDistance;
  est.gradient = VecX::Zero(n);
  est.source = DistanceSource::Surrogate;
  return est;
}

DistanceEstimate linear_estimate(double d, const VecX& grad) {
  DistanceEstimate est;
  est.distance = d;
  est.gradient = grad;
  est.source = DistanceSource::Surrogate;
  return est;
}

/// Distance model that is exactly linear in q: d(q) = d0 + g . (q - q_c).
DistanceQuery linear_query(double d0, VecX g, VecX q_c) {
  return [d0, g = std::move(g), q_c = std::move(q_c)](const VecX& q) {
    DistanceEstimate est;
    est.gradient = g;
    est.distance = d0 + g.dot(q - q_c);
    est.source = DistanceSource::Surrogate;
    return est;
  };
}

SafetyFilterProblem base_problem(int n, Rng& rng, double q_scale = 0.0) {
  SafetyFilterProblem p;
  p.q_c = random_vec(n, rng, 0.3);
  p.objective.v_de = random_vec(12, rng, 0.05);
  p.objective.q_de = p.q_c + random_vec(n, rng, 0.005);
  p.objective.alpha = 5.0;
  p.objective.beta = 1.0;
  p.objective.Q = MatX::Identity(n, n);
  if (q_scale > 0.0) {
    const MatX A = MatX::Random(n, n);
    p.objective.Q = q_scale * (A * A.transpose()) / n + MatX::Identity(n, n);
  }
  p.pinv_jacobian = MatX::Random(n, 12) * 0.1;
  p.dt = 0.025;
  p.env_estimates = {far_estimate(n), far_estimate(n)};
  p.self_estimate = far_estimate(n);
  p.lambda = 0.1;
  p.mu = 0.1;
  p.joint_lower = VecX::Constant(n, -2.9);
  p.joint_upper = VecX::Constant(n, 2.9);
  p.step_lower = VecX::Constant(n, -0.05);
  p.step_upper = VecX::Constant(n, 0.05);
  return p;
}

VecX closed_form(const SafetyFilterProblem& p) {
  MatX H = 2.0 * p.objective.Q;
  H.diagonal().array() += p.objective.alpha + p.objective.beta;
  const VecX a = p.pinv_jacobian * p.objective.v_de * p.dt;
  const VecX rhs = p.objective.alpha * a + p.objective.beta * (p.objective.q_de - p.q_c);
  return H.ldlt().solve(rhs);
}

}  // namespace

TEST_CASE("objective: both residuals vanishing gives zero value") {
  Rng rng(2);
  SafetyFilterProblem p = base_problem(14, rng);
  p.objective.Q = MatX::Zero(14, 14);
  const VecX a = p.pinv_jacobian * p.objective.v_de * p.dt;
  p.objective.q_de = p.q_c + a;
  const auto [value, grad] = objective_eval(p, a);
  CHECK(value == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(grad.norm() < 1e-12);
}

TEST_CASE("objective: analytic gradient matches finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    SafetyFilterProblem p = base_problem(14, rng, 1.0);
    const VecX dq = random_vec(14, rng, 0.02);
    const auto [value, grad] = objective_eval(p, dq);
    (void)value;
    const double h = 1e-6;
    for (int j = 0; j < 14; ++j) {
      VecX dp = dq, dm = dq;
      dp[j] += h;
      dm[j] -= h;
      const double fd = (objective_eval(p, dp).first - objective_eval(p, dm).first) / (2 * h);
      CHECK(std::abs(grad[j] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  }
}

TEST_CASE("objective: paper weights give the (5a + b)/8 stationary point") {
  Rng rng(5);
  SafetyFilterProblem p = base_problem(14, rng);
  const VecX a = p.pinv_jacobian * p.objective.v_de * p.dt;
  const VecX b = p.objective.q_de - p.q_c;
  const VecX star = (5.0 * a + b) / 8.0;
  CHECK(objective_eval(p, star).second.norm() < 1e-12);
  CHECK((closed_form(p) - star).norm() < 1e-12);
}

TEST_CASE("barrier constraint: boundary and unit values") {
  VecX g = VecX::Zero(14);
  CHECK(barrier_constraint(0.1, g, 0.1, VecX::Zero(14)) == 0.0);
  CHECK(barrier_constraint(std::exp(1.0) * 0.1, g, 0.1, VecX::Zero(14)) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cbf constraint: boundary and gain arithmetic") {
  VecX g = VecX::Zero(14);
  g[0] = 1.0;
  CHECK(cbf_constraint(0.1, g, 0.1, 0.9, VecX::Zero(14), 0.025) == 0.0);
  CHECK(cbf_constraint(0.2, g, 0.1, 0.9, VecX::Zero(14), 0.025) ==
        doctest::Approx(0.09).epsilon(1e-12));
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const double d = rng.uniform(0.0, 0.3);
    const VecX grad = random_vec(14, rng);
    const VecX dq = random_vec(14, rng, 0.02);
    const double got = cbf_constraint(d, grad, 0.1, 0.9, dq, 0.025);
    const double expected = grad.dot(dq) / 0.025 + 0.9 * (std::max(d, 1e-4) - 0.1);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("solve_step: inactive constraints reproduce the closed-form optimum") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    SafetyFilterProblem p = base_problem(14, rng, trial % 2 == 0 ? 0.0 : 1.0);
    const SafetyFilterResult res = solve_step(p);
    REQUIRE(res.converged);
    CHECK((res.delta_q - closed_form(p)).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(res.kkt_residual < 1e-6);
    CHECK_FALSE(res.included[0]);
    CHECK_FALSE(res.included[2]);
  }
}

TEST_CASE("solve_step: zero objective keeps the origin iff the barrier holds there") {
  Rng rng(13);
  SafetyFilterProblem p = base_problem(14, rng);
  p.objective.alpha = 0.0;
  p.objective.beta = 0.0;
  p.objective.v_de.setZero();
  p.objective.q_de = p.q_c;
  VecX g = VecX::Zero(14);
  g[2] = 1.0;

  p.self_estimate = linear_estimate(0.15, g);
  p.self_query = linear_query(0.15, g, p.q_c);
  SafetyFilterResult res = solve_step(p);
  CHECK(res.converged);
  CHECK(res.delta_q.lpNorm<Eigen::Infinity>() < 1e-9);

  p.self_estimate = linear_estimate(0.099, g);
  p.self_query = linear_query(0.099, g, p.q_c);
  res = solve_step(p);
  CHECK(res.delta_q.norm() > 1e-4);
  CHECK(res.constraint_values[2] >= -1e-6);
  CHECK(res.delta_q[2] > 0.0);
}

TEST_CASE("solve_step: frozen log term forces the documented infeasible-start retreat") {
  Rng rng(17);
  SafetyFilterProblem p = base_problem(14, rng);
  p.objective.alpha = 0.0;
  p.objective.beta = 0.0;
  p.objective.v_de.setZero();
  p.objective.q_de = p.q_c;
  VecX g = VecX::Zero(14);
  g[0] = 1.0;
  // ln(0.05/0.1) = -0.693: needs dq[0] >= 0.693, far beyond the 0.05 step bound
  p.self_estimate = linear_estimate(0.05, g);
  const SafetyFilterResult res = solve_step(p);
  CHECK(res.infeasible_start);
  CHECK_FALSE(res.converged);
  CHECK(res.delta_q[0] == doctest::Approx(0.05).epsilon(1e-12));
  for (int j = 1; j < 14; ++j) CHECK(res.delta_q[j] == 0.0);
}

TEST_CASE("solve_step: re-queried barrier recovers within the step bounds") {
  Rng rng(19);
  SafetyFilterProblem p = base_problem(14, rng);
  p.objective.alpha = 0.0;
  p.objective.beta = 0.0;
  p.objective.v_de.setZero();
  p.objective.q_de = p.q_c;
  VecX g = VecX::Zero(14);
  g[0] = 1.0;
  // d(q) = 0.07 + dq[0]: ln((0.07 + s)/0.1) + s = 0 inside the step bounds
  p.self_estimate = linear_estimate(0.07, g);
  p.self_query = linear_query(0.07, g, p.q_c);
  const SafetyFilterResult res = solve_step(p);
  CHECK_FALSE(res.infeasible_start);
  CHECK(res.constraint_values[2] >= -1e-6);
  CHECK(res.delta_q[0] > 0.02);
  CHECK(res.delta_q[0] <= 0.05 + 1e-12);
  const double c = std::log((0.07 + res.delta_q[0]) / 0.1) + res.delta_q[0];
  CHECK(c >= -1e-6);
}

TEST_CASE("solve_step: step and joint bounds are never violated") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    SafetyFilterProblem p = base_problem(14, rng);
    p.objective.v_de = random_vec(12, rng, 2.0);
    p.objective.q_de = p.q_c + random_vec(14, rng, 0.5);
    p.joint_lower = p.q_c.array() - 0.02;
    p.joint_upper = p.q_c.array() + 0.03;
    VecX g = random_vec(14, rng);
    p.self_estimate = linear_estimate(0.12, g);
    p.self_query = linear_query(0.12, g, p.q_c);
    const SafetyFilterResult res = solve_step(p);
    CHECK((res.delta_q.array() >= p.step_lower.array() - 1e-12).all());
    CHECK((res.delta_q.array() <= p.step_upper.array() + 1e-12).all());
    CHECK(((p.q_c + res.delta_q).array() >= p.joint_lower.array() - 1e-12).all());
    CHECK(((p.q_c + res.delta_q).array() <= p.joint_upper.array() + 1e-12).all());
  }
}

TEST_CASE("solve_step: deterministic apart from the wall-clock field") {
  Rng rng(29);
  SafetyFilterProblem p = base_problem(14, rng);
  VecX g = random_vec(14, rng);
  p.self_estimate = linear_estimate(0.11, g);
  p.self_query = linear_query(0.11, g, p.q_c);
  const SafetyFilterResult a = solve_step(p);
  const SafetyFilterResult b = solve_step(p);
  CHECK(a.delta_q == b.delta_q);
  CHECK(a.objective_value == b.objective_value);
  CHECK(a.constraint_values == b.constraint_values);
  CHECK(a.kkt_residual == b.kkt_residual);
  CHECK(a.iterations == b.iterations);
  CHECK(a.converged == b.converged);
}

TEST_CASE("solve_step: barrier and cbf accept the same problem") {
  Rng rng(31);
  SafetyFilterProblem p = base_problem(14, rng);
  VecX g = random_vec(14, rng);
  g.normalize();
  p.self_estimate = linear_estimate(0.08, g);
  p.self_query = linear_query(0.08, g, p.q_c);

  p.method = FilterMethod::Barrier;
  const SafetyFilterResult rb = solve_step(p);
  p.method = FilterMethod::Cbf;
  const SafetyFilterResult rc = solve_step(p);
  CHECK(rb.included[2]);
  CHECK(rc.included[2]);
  CHECK(rb.constraint_values.size() == rc.constraint_values.size());
  CHECK(rb.constraint_values[2] >= -1e-6);
  CHECK(rc.constraint_values[2] >= -1e-6);
}

TEST_CASE("solve_step: converged solutions satisfy all reported constraints") {
  Rng rng(37);
  int converged = 0;
  for (int trial = 0; trial < 50; ++trial) {
    SafetyFilterProblem p = base_problem(14, rng);
    VecX g0 = random_vec(14, rng);
    g0.normalize();
    VecX g1 = random_vec(14, rng);
    g1.normalize();
    p.env_estimates[0] = linear_estimate(rng.uniform(0.08, 0.25), g0);
    p.env_queries.push_back(linear_query(p.env_estimates[0].distance, g0, p.q_c));
    p.env_queries.push_back(DistanceQuery{});
    p.self_estimate = linear_estimate(rng.uniform(0.08, 0.25), g1);
    p.self_query = linear_query(p.self_estimate.distance, g1, p.q_c);
    const SafetyFilterResult res = solve_step(p);
    if (!res.converged) continue;
    ++converged;
    CHECK(res.kkt_residual < 1e-5);
    for (int i = 0; i < 3; ++i) {
      if (res.included[static_cast<std::size_t>(i)]) CHECK(res.constraint_values[i] >= -1e-6);
    }
  }
  CHECK(converged >= 40);
}

TEST_CASE("kkt_residual: zero at the closed form, positive off it") {
  Rng rng(41);
  SafetyFilterProblem p = base_problem(14, rng);
  CHECK(kkt_residual(p, closed_form(p)) < 1e-8);
  const VecX off = closed_form(p) + random_vec(14, rng, 0.01);
  CHECK(kkt_residual(p, off) > 1e-6);
  VecX bad = VecX::Constant(14, 0.06);  // outside the step bounds
  CHECK(kkt_residual(p, bad) > 0.0);
}

TEST_CASE("problem validation rejects broken inputs") {
  Rng rng(43);
  SafetyFilterProblem p = base_problem(14, rng);
  p.lambda = 0.0;
  CHECK_THROWS_AS(solve_step(p), ConfigError);

  SafetyFilterProblem p2 = base_problem(14, rng);
  p2.self_estimate.gradient = VecX::Zero(13);
  CHECK_THROWS_AS(solve_step(p2), InvalidArity);

  SafetyFilterProblem p3 = base_problem(14, rng);
  p3.objective.Q = -MatX::Identity(14, 14);
  CHECK_THROWS_AS(solve_step(p3), ConfigError);

  SafetyFilterProblem p4 = base_problem(14, rng);
  CHECK_THROWS_AS(objective_eval(p4, VecX::Zero(13)), InvalidArity);
}
