#include "reflex/sim.hpp"

#include "reflex/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

namespace reflex {

using nlohmann::json;

void ScenarioConfig::validate() const {
  if (!(tick_rate > 0.0)) throw ConfigError("tick_rate must be > 0");
  if (!(duration >= 0.0)) throw ConfigError("duration must be >= 0");
  if (!(lambda > 0.0) || !(mu > 0.0)) throw ConfigError("thresholds must be > 0");
  if (!(vicinity_radius > 0.0)) throw ConfigError("vicinity_radius must be > 0");
  if (cloud_density < 0) throw ConfigError("cloud_density must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  for (const auto& obs : obstacles) {
    if (!(obs.radius > 0.0)) throw ConfigError("obstacle radius must be > 0");
    if (!(obs.path.period > 0.0)) throw ConfigError("obstacle period must be > 0");
  }
  for (const auto& intr : intruders) {
    if (!(intr.radius > 0.0)) throw ConfigError("intruder radius must be > 0");
    if (!(intr.t_start >= 0.0) || !(intr.t_end <= duration) || !(intr.t_start < intr.t_end))
      throw ConfigError("intruder window must sit inside the scenario duration");
  }
  for (const auto* traj : {&left, &right}) {
    if (!(traj->ellipse.period > 0.0)) throw ConfigError("ellipse period must be > 0");
  }
}

Pose reference_pose(const ScenarioConfig& config, int arm, double t) {
  if (t < -1e-9 || t > config.duration + 1e-9)
    throw InvalidTime("reference_pose: t outside [0, duration]");
  const ArmTrajectory& traj = arm == 0 ? config.left : config.right;
  Pose pose;
  pose.position = traj.ellipse.position(t);
  pose.orientation = traj.ee_orientation;
  return pose;
}

PointCloud sample_obstacle_cloud(const ScenarioConfig& config, double t, Rng& rng) {
  PointCloud cloud;
  const auto sample_sphere = [&](const Vec3& center, double radius, int count,
                                 PointLabel label) {
    for (int i = 0; i < count; ++i) {
      Vec3 p = center + radius * rng.unit_vector();
      if (config.noise_sigma > 0.0) {
        p += config.noise_sigma * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
      }
      cloud.push_back(p, label);
    }
  };
  for (const auto& obs : config.obstacles) {
    sample_sphere(obs.path.position(t), obs.radius, config.cloud_density, PointLabel::Obstacle);
  }
  for (const auto& intr : config.intruders) {
    if (intr.active(t)) {
      sample_sphere(intr.position(t), intr.radius, intr.density, PointLabel::Intruder);
    }
  }
  return cloud;
}

namespace {

VecX home_or_zero(const VecX& home, int dof) {
  if (home.size() == 0) return VecX::Zero(dof);
  if (home.size() != dof) throw ConfigError("home configuration arity mismatch");
  return home;
}

RunLog run_loop(const DualArmSystem& system, const std::optional<SurrogateModels>& models,
                const ScenarioConfig& config, double duration,
                const std::function<Pose(int, double)>& ref_fn, const VecX& q_start) {
  config.validate();
  system.validate();
  if (config.method != FilterMethod::None && !models)
    throw ConfigError("surrogate models required unless method = none");

  const KinematicChain* chains[2] = {&system.left, &system.right};
  const int dof[2] = {system.left.dof(), system.right.dof()};
  const int n = dof[0] + dof[1];
  const int offset[2] = {0, dof[0]};
  const double dt = 1.0 / config.tick_rate;
  const long n_ticks = std::lround(duration * config.tick_rate);

  RunLog log;
  log.tick_rate = config.tick_rate;
  log.method = config.method;
  log.lambda = config.lambda;
  log.mu = config.mu;
  log.ticks.reserve(static_cast<std::size_t>(n_ticks) + 1);

  VecX q = q_start;

  VecX joint_lower(n), joint_upper(n), step_lower(n), step_upper(n);
  for (int arm = 0; arm < 2; ++arm) {
    joint_lower.segment(offset[arm], dof[arm]) = chains[arm]->joint_lower;
    joint_upper.segment(offset[arm], dof[arm]) = chains[arm]->joint_upper;
    step_lower.segment(offset[arm], dof[arm]) = chains[arm]->step_lower;
    step_upper.segment(offset[arm], dof[arm]) = chains[arm]->step_upper;
  }

  for (long k = 0; k <= n_ticks; ++k) {
    const double t = static_cast<double>(k) * dt;
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(k)));
    const PointCloud cloud = sample_obstacle_cloud(config, t, rng);

    TickRecord rec;
    rec.t = t;

    // perception per arm: vicinity filter in world frame, query in base frame
    PointCloud cloud_local[2];
    DistanceEstimate env_est[2];
    for (int arm = 0; arm < 2; ++arm) {
      const VecX q_arm = q.segment(offset[arm], dof[arm]);
      std::vector<Capsule> caps = link_segments(*chains[arm], q_arm);
      std::vector<Capsule> vicinity = caps;
      for (auto& c : vicinity) c.radius = config.vicinity_radius;
      const PointCloud near = vicinity_filter(cloud, vicinity);
      rec.d_env_oracle[arm] = min_cloud_capsule_distance(near, caps).distance;
      cloud_local[arm] = cloud_to_base_frame(near, *chains[arm]);
      if (models) {
        DistanceEstimate est = predict_env_distance(models->env, q_arm, cloud_local[arm]);
        est.gradient = embed_arm_gradient(est.gradient, arm, n);
        env_est[arm] = est;
        rec.d_env_surrogate[arm] = est.distance;
      } else {
        rec.d_env_surrogate[arm] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    rec.d_self_oracle = self_distance_value(q, system);

    DistanceEstimate self_est;
    if (models) {
      self_est = predict_self_distance(models->self_arm, q);
      rec.d_self_surrogate = self_est.distance;
    } else {
      rec.d_self_surrogate = std::numeric_limits<double>::quiet_NaN();
    }

    // reference tracking targets
    VecX q_de(n);
    VecX v_de(12);
    for (int arm = 0; arm < 2; ++arm) {
      const VecX q_arm = q.segment(offset[arm], dof[arm]);
      const Pose ref_now = ref_fn(arm, t);
      rec.ref[arm] = ref_now;
      const IkResult ik = damped_ls_ik(*chains[arm], ref_now, q_arm, config.ik_damping,
                                       config.ik_max_iter);
      q_de.segment(offset[arm], dof[arm]) = ik.q;
      const double t_next = std::min(t + dt, duration);
      if (t_next - t > 1e-12) {
        const Pose ref_next = ref_fn(arm, t_next);
        const double inv = 1.0 / (t_next - t);
        v_de.segment(6 * arm, 3) = (ref_next.position - ref_now.position) * inv;
        v_de.segment(6 * arm + 3, 3) =
            rotation_vector(ref_next.orientation * ref_now.orientation.conjugate()) * inv;
      } else {
        v_de.segment(6 * arm, 6).setZero();
      }
    }

    VecX dq;
    if (config.method == FilterMethod::None) {
      dq = (q_de - q).cwiseMax(step_lower).cwiseMin(step_upper);
      dq = dq.cwiseMax(joint_lower - q).cwiseMin(joint_upper - q);
      rec.dq = dq;
    } else {
      SafetyFilterProblem problem;
      problem.q_c = q;
      problem.objective.v_de = v_de;
      problem.objective.q_de = q_de;
      problem.objective.alpha = config.alpha;
      problem.objective.beta = config.beta;
      problem.objective.Q = config.q_weight * MatX::Identity(n, n);
      problem.dt = dt;
      problem.pinv_jacobian = MatX::Zero(n, 12);
      for (int arm = 0; arm < 2; ++arm) {
        const MatX J = jacobian(*chains[arm], q.segment(offset[arm], dof[arm]));
        problem.pinv_jacobian.block(offset[arm], 6 * arm, dof[arm], 6) = pseudo_inverse(J);
      }
      problem.env_estimates = {env_est[0], env_est[1]};
      problem.self_estimate = self_est;
      for (int arm = 0; arm < 2; ++arm) {
        const Mlp<float>* env_model = &models->env;
        const PointCloud* local = &cloud_local[arm];
        const int off = offset[arm];
        const int na = dof[arm];
        problem.env_queries.push_back([env_model, local, arm, off, na, n](const VecX& q_cand) {
          DistanceEstimate est = predict_env_distance(*env_model, q_cand.segment(off, na), *local);
          est.gradient = embed_arm_gradient(est.gradient, arm, n);
          return est;
        });
      }
      const Mlp<float>* self_model = &models->self_arm;
      problem.self_query = [self_model](const VecX& q_cand) {
        return predict_self_distance(*self_model, q_cand);
      };
      problem.lambda = config.lambda;
      problem.mu = config.mu;
      problem.joint_lower = joint_lower;
      problem.joint_upper = joint_upper;
      problem.step_lower = step_lower;
      problem.step_upper = step_upper;
      problem.method = config.method;
      problem.cbf_gain = config.cbf_gain;

      const SafetyFilterResult result = solve_step(problem);
      dq = result.delta_q;
      rec.dq = dq;
      rec.iterations = result.iterations;
      rec.converged = result.converged;
      rec.infeasible_start = result.infeasible_start;
      rec.kkt_residual = result.kkt_residual;
      rec.solve_time = result.solve_time;
      for (int arm = 0; arm < 2; ++arm) {
        rec.constraint_env[arm] = result.constraint_values[arm];
        rec.included_env[arm] = result.included[static_cast<std::size_t>(arm)];
        rec.active_env[arm] = result.active[static_cast<std::size_t>(arm)];
      }
      rec.constraint_self = result.constraint_values[2];
      rec.included_self = result.included[2];
      rec.active_self = result.active[2];
    }

    // apply, then log the post-step state against this tick's reference; the
    // distance columns keep the perception values that produced dq
    q += dq;
    rec.q = q;
    for (int arm = 0; arm < 2; ++arm) {
      rec.ee[arm] =
          forward_kinematics(*chains[arm], q.segment(offset[arm], dof[arm])).end_effector();
    }
    for (const auto& obs : config.obstacles) rec.obstacle_centers.push_back(obs.path.position(t));
    for (const auto& intr : config.intruders) rec.intruder_centers.push_back(intr.position(t));

    log.ticks.push_back(std::move(rec));
  }
  return log;
}

}  // namespace

RunLog run_scenario(const DualArmSystem& system, const std::optional<SurrogateModels>& models,
                    const ScenarioConfig& config) {
  config.validate();
  const VecX home_l = home_or_zero(config.left_home, system.left.dof());
  const VecX home_r = home_or_zero(config.right_home, system.right.dof());
  const auto ref_fn = [&config](int arm, double t) { return reference_pose(config, arm, t); };

  VecX q0(system.dof());
  q0.head(system.left.dof()) =
      damped_ls_ik(system.left, ref_fn(0, 0.0), home_l, config.ik_damping, 200).q;
  q0.tail(system.right.dof()) =
      damped_ls_ik(system.right, ref_fn(1, 0.0), home_r, config.ik_damping, 200).q;
  return run_loop(system, models, config, config.duration, ref_fn, q0);
}

DeliveryResult delivery_scenario(const DualArmSystem& system,
                                 const std::optional<SurrogateModels>& models,
                                 const DeliveryScenario& scenario) {
  const VecX home_l = home_or_zero(scenario.base.left_home, system.left.dof());
  const VecX home_r = home_or_zero(scenario.base.right_home, system.right.dof());
  const Pose start[2] = {forward_kinematics(system.left, home_l).end_effector(),
                         forward_kinematics(system.right, home_r).end_effector()};
  const std::vector<Pose>* waypoints[2] = {&scenario.left_waypoints, &scenario.right_waypoints};

  const std::size_t segments =
      std::max<std::size_t>(1, std::max(scenario.left_waypoints.size(),
                                        scenario.right_waypoints.size()));
  ScenarioConfig config = scenario.base;
  config.duration = static_cast<double>(segments) * scenario.segment_duration;

  const double seg = scenario.segment_duration;
  const auto ref_fn = [&](int arm, double t) {
    const std::vector<Pose>& wps = *waypoints[arm];
    if (wps.empty()) return start[arm];
    const double ft = t / seg;
    const int i = static_cast<int>(std::floor(ft));
    if (i >= static_cast<int>(wps.size())) return wps.back();
    const double s = ft - i;
    const Pose& from = (i == 0) ? start[arm] : wps[static_cast<std::size_t>(i - 1)];
    const Pose& to = wps[static_cast<std::size_t>(i)];
    Pose out;
    out.position = (1.0 - s) * from.position + s * to.position;
    out.orientation = from.orientation.slerp(s, to.orientation);
    return out;
  };

  VecX q0(system.dof());
  q0.head(system.left.dof()) = home_l;
  q0.tail(system.right.dof()) = home_r;

  DeliveryResult result;
  result.log = run_loop(system, models, config, config.duration, ref_fn, q0);

  const long last = static_cast<long>(result.log.ticks.size()) - 1;
  result.all_waypoints_reached = true;
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double>& errors = arm == 0 ? result.left_errors : result.right_errors;
    const std::vector<Pose>& wps = *waypoints[arm];
    for (std::size_t i = 0; i < wps.size(); ++i) {
      const double t_hit = static_cast<double>(i + 1) * seg;
      long k = std::lround(t_hit * config.tick_rate);
      k = std::min(k, last);
      const double err =
          (result.log.ticks[static_cast<std::size_t>(k)].ee[arm].position - wps[i].position)
              .norm();
      errors.push_back(err);
      if (err > scenario.tolerance) result.all_waypoints_reached = false;
    }
  }
  result.collision_free = true;
  for (const TickRecord& rec : result.log.ticks) {
    if (rec.d_env_oracle[0] <= 0.0 || rec.d_env_oracle[1] <= 0.0 || rec.d_self_oracle <= 0.0)
      result.collision_free = false;
  }
  result.success = result.all_waypoints_reached && result.collision_free;
  return result;
}

MetricsReport compute_metrics(const RunLog& log) {
  MetricsReport m;
  m.ticks = static_cast<int>(log.ticks.size());
  if (log.ticks.empty()) return m;
  const double dt = 1.0 / log.tick_rate;
  const std::size_t n = log.ticks.size();

  std::vector<double> times;
  times.reserve(n);
  for (const auto& rec : log.ticks) times.push_back(rec.solve_time);
  std::sort(times.begin(), times.end());
  m.solve_time_median = times[n / 2];
  double sum = 0.0;
  for (double v : times) sum += v;
  m.solve_time_mean = sum / static_cast<double>(n);

  const double t_end = log.ticks.back().t;
  double err_sum[2] = {0.0, 0.0};
  double win_sum[2] = {0.0, 0.0};
  long win_count[2] = {0, 0};
  for (const auto& rec : log.ticks) {
    for (int arm = 0; arm < 2; ++arm) {
      const double e = (rec.ee[arm].position - rec.ref[arm].position).norm();
      err_sum[arm] += e;
      if (rec.t >= t_end - 5.0 - 1e-9) {
        win_sum[arm] += e;
        ++win_count[arm];
      }
    }
  }
  for (int arm = 0; arm < 2; ++arm) {
    m.mean_pos_error_arm[arm] = err_sum[arm] / static_cast<double>(n);
    m.final_window_pos_error[arm] =
        win_count[arm] > 0 ? win_sum[arm] / static_cast<double>(win_count[arm]) : 0.0;
  }
  m.mean_pos_error = 0.5 * (m.mean_pos_error_arm[0] + m.mean_pos_error_arm[1]);

  for (int arm = 0; arm < 2; ++arm) {
    double worst = 0.0;
    for (std::size_t k = 1; k + 1 < n; ++k) {
      const Vec3 acc = log.ticks[k + 1].ee[arm].position - 2.0 * log.ticks[k].ee[arm].position +
                       log.ticks[k - 1].ee[arm].position;
      worst = std::max(worst, acc.norm() / (dt * dt));
    }
    m.max_accel_arm[arm] = worst;
  }
  m.max_accel = std::max(m.max_accel_arm[0], m.max_accel_arm[1]);

  const auto trace_stats = [&](auto getter, double threshold) {
    TraceStats stats;
    long below = 0, run = 0, longest = 0;
    for (const auto& rec : log.ticks) {
      const double v = getter(rec);
      stats.min_value = std::min(stats.min_value, v);
      if (v < threshold) {
        ++below;
        ++run;
        longest = std::max(longest, run);
      } else {
        run = 0;
      }
    }
    stats.below_fraction = static_cast<double>(below) / static_cast<double>(n);
    stats.longest_below_s = static_cast<double>(longest) * dt;
    return stats;
  };
  m.env_trace[0] = trace_stats([](const TickRecord& r) { return r.d_env_oracle[0]; }, log.lambda);
  m.env_trace[1] = trace_stats([](const TickRecord& r) { return r.d_env_oracle[1]; }, log.lambda);
  m.self_trace = trace_stats([](const TickRecord& r) { return r.d_self_oracle; }, log.mu);

  std::vector<double> diffs;
  for (const auto& rec : log.ticks) {
    const double pairs[3][2] = {{rec.d_env_oracle[0], rec.d_env_surrogate[0]},
                                {rec.d_env_oracle[1], rec.d_env_surrogate[1]},
                                {rec.d_self_oracle, rec.d_self_surrogate}};
    for (const auto& pair : pairs) {
      if (std::isnan(pair[1])) continue;
      if (pair[0] >= 1e8 && pair[1] >= 1e8) continue;  // both sentinel
      diffs.push_back(std::abs(pair[1] - pair[0]));
    }
    m.min_env_oracle = std::min({m.min_env_oracle, rec.d_env_oracle[0], rec.d_env_oracle[1]});
    m.min_self_oracle = std::min(m.min_self_oracle, rec.d_self_oracle);
  }
  if (!diffs.empty()) {
    std::sort(diffs.begin(), diffs.end());
    const std::size_t idx = std::min(
        diffs.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * diffs.size())) - 1);
    m.honesty_p95 = diffs[idx];
  }
  return m;
}

// --- files ---

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_parse(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }
json quat_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }
Quat quat_parse(const json& j) {
  Quat q(j.at(0), j.at(1), j.at(2), j.at(3));
  if (std::abs(q.norm() - 1.0) > 1e-9) throw ConfigError("quaternion must be unit length");
  return q;
}

json ellipse_json(const EllipsePath& e) {
  return {{"center", vec3_json(e.center)},       {"semi_axis_a", e.semi_axis_a},
          {"semi_axis_b", e.semi_axis_b},        {"orientation_wxyz", quat_json(e.orientation)},
          {"period", e.period},                  {"phase", e.phase}};
}

EllipsePath ellipse_parse(const json& j) {
  EllipsePath e;
  e.center = vec3_parse(j.at("center"));
  e.semi_axis_a = j.at("semi_axis_a");
  e.semi_axis_b = j.at("semi_axis_b");
  if (j.contains("orientation_wxyz")) e.orientation = quat_parse(j.at("orientation_wxyz"));
  e.period = j.at("period");
  e.phase = j.value("phase", 0.0);
  return e;
}

std::string method_name(FilterMethod m) {
  switch (m) {
    case FilterMethod::Barrier: return "barrier";
    case FilterMethod::Cbf: return "cbf";
    case FilterMethod::None: return "none";
  }
  return "barrier";
}

FilterMethod method_parse(const std::string& s) {
  if (s == "barrier") return FilterMethod::Barrier;
  if (s == "cbf") return FilterMethod::Cbf;
  if (s == "none") return FilterMethod::None;
  throw ConfigError("unknown method: " + s);
}

json vecx_json(const VecX& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VecX vecx_parse(const json& j) {
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i));
  return v;
}

}  // namespace

ScenarioConfig load_scenario(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("scenario parse error in " + path + ": " + e.what());
  }
  try {
    ScenarioConfig c;
    c.duration = j.at("duration");
    c.tick_rate = j.value("tick_rate", 40.0);
    for (int arm = 0; arm < 2; ++arm) {
      const json& aj = j.at(arm == 0 ? "left" : "right");
      ArmTrajectory traj;
      traj.ellipse = ellipse_parse(aj.at("ellipse"));
      if (aj.contains("ee_orientation_wxyz"))
        traj.ee_orientation = quat_parse(aj.at("ee_orientation_wxyz"));
      (arm == 0 ? c.left : c.right) = traj;
    }
    if (j.contains("left_home")) c.left_home = vecx_parse(j.at("left_home"));
    if (j.contains("right_home")) c.right_home = vecx_parse(j.at("right_home"));
    for (const auto& oj : j.value("obstacles", json::array())) {
      ObstacleSpec obs;
      obs.radius = oj.at("radius");
      obs.path = ellipse_parse(oj.at("path"));
      c.obstacles.push_back(obs);
    }
    for (const auto& ij : j.value("intruders", json::array())) {
      IntruderSpec intr;
      intr.radius = ij.at("radius");
      intr.density = ij.value("density", 256);
      intr.entry = vec3_parse(ij.at("entry"));
      intr.target = vec3_parse(ij.at("target"));
      intr.t_start = ij.at("t_start");
      intr.t_end = ij.at("t_end");
      c.intruders.push_back(intr);
    }
    c.cloud_density = j.value("cloud_density", 256);
    c.noise_sigma = j.value("noise_sigma", 0.002);
    c.seed = j.value("seed", std::uint64_t{0});
    c.method = method_parse(j.value("method", std::string("barrier")));
    c.lambda = j.value("lambda", 0.1);
    c.mu = j.value("mu", 0.1);
    c.vicinity_radius = j.value("vicinity_radius", 0.25);
    c.alpha = j.value("alpha", 5.0);
    c.beta = j.value("beta", 1.0);
    c.q_weight = j.value("q_weight", 1.0);
    c.cbf_gain = j.value("cbf_gain", 0.9);
    c.ik_damping = j.value("ik_damping", 0.05);
    c.ik_max_iter = j.value("ik_max_iter", 100);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError("scenario schema error in " + path + ": " + e.what());
  }
}

void save_scenario(const ScenarioConfig& c, const std::string& path) {
  json j;
  j["duration"] = c.duration;
  j["tick_rate"] = c.tick_rate;
  for (int arm = 0; arm < 2; ++arm) {
    const ArmTrajectory& traj = arm == 0 ? c.left : c.right;
    json aj;
    aj["ellipse"] = ellipse_json(traj.ellipse);
    aj["ee_orientation_wxyz"] = quat_json(traj.ee_orientation);
    j[arm == 0 ? "left" : "right"] = aj;
  }
  if (c.left_home.size() > 0) j["left_home"] = vecx_json(c.left_home);
  if (c.right_home.size() > 0) j["right_home"] = vecx_json(c.right_home);
  j["obstacles"] = json::array();
  for (const auto& obs : c.obstacles)
    j["obstacles"].push_back({{"radius", obs.radius}, {"path", ellipse_json(obs.path)}});
  j["intruders"] = json::array();
  for (const auto& intr : c.intruders) {
    j["intruders"].push_back({{"radius", intr.radius},
                              {"density", intr.density},
                              {"entry", vec3_json(intr.entry)},
                              {"target", vec3_json(intr.target)},
                              {"t_start", intr.t_start},
                              {"t_end", intr.t_end}});
  }
  j["cloud_density"] = c.cloud_density;
  j["noise_sigma"] = c.noise_sigma;
  j["seed"] = c.seed;
  j["method"] = method_name(c.method);
  j["lambda"] = c.lambda;
  j["mu"] = c.mu;
  j["vicinity_radius"] = c.vicinity_radius;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["q_weight"] = c.q_weight;
  j["cbf_gain"] = c.cbf_gain;
  j["ik_damping"] = c.ik_damping;
  j["ik_max_iter"] = c.ik_max_iter;
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

void append_pose_header(std::string& h, const std::string& prefix) {
  for (const char* f : {"_x", "_y", "_z", "_qw", "_qx", "_qy", "_qz"}) h += "," + prefix + f;
}

void append_pose(std::string& row, const Pose& pose) {
  row += "," + format_double(pose.position.x()) + "," + format_double(pose.position.y()) + "," +
         format_double(pose.position.z()) + "," + format_double(pose.orientation.w()) + "," +
         format_double(pose.orientation.x()) + "," + format_double(pose.orientation.y()) + "," +
         format_double(pose.orientation.z());
}

}  // namespace

std::string run_log_to_csv(const RunLog& log) {
  const int nq = log.ticks.empty() ? 0 : static_cast<int>(log.ticks.front().q.size());
  const int n_obs =
      log.ticks.empty() ? 0 : static_cast<int>(log.ticks.front().obstacle_centers.size());
  const int n_intr =
      log.ticks.empty() ? 0 : static_cast<int>(log.ticks.front().intruder_centers.size());

  std::string out = "t,method,lambda,mu";
  for (int i = 0; i < nq; ++i) out += ",q" + std::to_string(i);
  for (int i = 0; i < nq; ++i) out += ",dq" + std::to_string(i);
  append_pose_header(out, "ee_l");
  append_pose_header(out, "ref_l");
  append_pose_header(out, "ee_r");
  append_pose_header(out, "ref_r");
  out += ",d_env_oracle_l,d_env_surr_l,d_env_oracle_r,d_env_surr_r,d_self_oracle,d_self_surr";
  out += ",iterations,converged,infeasible_start,kkt_residual";
  out += ",c_env_l,c_env_r,c_self,inc_env_l,inc_env_r,inc_self,act_env_l,act_env_r,act_self";
  for (int i = 0; i < n_obs; ++i) {
    const std::string p = "obs" + std::to_string(i);
    out += "," + p + "_x," + p + "_y," + p + "_z";
  }
  for (int i = 0; i < n_intr; ++i) {
    const std::string p = "intr" + std::to_string(i);
    out += "," + p + "_x," + p + "_y," + p + "_z";
  }
  out += "\n";

  for (const TickRecord& rec : log.ticks) {
    std::string row = format_double(rec.t);
    row += "," + std::to_string(static_cast<int>(log.method));
    row += "," + format_double(log.lambda) + "," + format_double(log.mu);
    for (int i = 0; i < nq; ++i) row += "," + format_double(rec.q[i]);
    for (int i = 0; i < nq; ++i) row += "," + format_double(rec.dq[i]);
    append_pose(row, rec.ee[0]);
    append_pose(row, rec.ref[0]);
    append_pose(row, rec.ee[1]);
    append_pose(row, rec.ref[1]);
    row += "," + format_double(rec.d_env_oracle[0]) + "," + format_double(rec.d_env_surrogate[0]);
    row += "," + format_double(rec.d_env_oracle[1]) + "," + format_double(rec.d_env_surrogate[1]);
    row += "," + format_double(rec.d_self_oracle) + "," + format_double(rec.d_self_surrogate);
    row += "," + std::to_string(rec.iterations);
    row += rec.converged ? ",1" : ",0";
    row += rec.infeasible_start ? ",1" : ",0";
    row += "," + format_double(rec.kkt_residual);
    row += "," + format_double(rec.constraint_env[0]) + "," + format_double(rec.constraint_env[1]) +
           "," + format_double(rec.constraint_self);
    row += rec.included_env[0] ? ",1" : ",0";
    row += rec.included_env[1] ? ",1" : ",0";
    row += rec.included_self ? ",1" : ",0";
    row += rec.active_env[0] ? ",1" : ",0";
    row += rec.active_env[1] ? ",1" : ",0";
    row += rec.active_self ? ",1" : ",0";
    for (const Vec3& p : rec.obstacle_centers)
      row += "," + format_double(p.x()) + "," + format_double(p.y()) + "," + format_double(p.z());
    for (const Vec3& p : rec.intruder_centers)
      row += "," + format_double(p.x()) + "," + format_double(p.y()) + "," + format_double(p.z());
    out += row + "\n";
  }
  return out;
}

RunLog run_log_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string header;
  if (!std::getline(in, header)) throw ConfigError("empty run log");
  const std::vector<std::string> cols = split(header, ',');
  int nq = 0, n_obs = 0, n_intr = 0;
  for (const std::string& c : cols) {
    if (c.rfind("q", 0) == 0 && c.find('_') == std::string::npos && c != "q") ++nq;
    if (c.rfind("obs", 0) == 0 && c.size() > 4 && c.substr(c.size() - 2) == "_x") ++n_obs;
    if (c.rfind("intr", 0) == 0 && c.size() > 5 && c.substr(c.size() - 2) == "_x") ++n_intr;
  }

  RunLog log;
  std::string line;
  bool first = true;
  double prev_t = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (static_cast<int>(f.size()) != static_cast<int>(cols.size()))
      throw ConfigError("run log row width mismatch");
    std::size_t i = 0;
    TickRecord rec;
    rec.t = parse_double(f[i++]);
    const int method = static_cast<int>(parse_double(f[i++]));
    log.method = static_cast<FilterMethod>(method);
    log.lambda = parse_double(f[i++]);
    log.mu = parse_double(f[i++]);
    rec.q.resize(nq);
    for (int k = 0; k < nq; ++k) rec.q[k] = parse_double(f[i++]);
    rec.dq.resize(nq);
    for (int k = 0; k < nq; ++k) rec.dq[k] = parse_double(f[i++]);
    const auto read_pose = [&]() {
      Pose pose;
      pose.position = Vec3(parse_double(f[i]), parse_double(f[i + 1]), parse_double(f[i + 2]));
      pose.orientation = Quat(parse_double(f[i + 3]), parse_double(f[i + 4]),
                              parse_double(f[i + 5]), parse_double(f[i + 6]));
      i += 7;
      return pose;
    };
    rec.ee[0] = read_pose();
    rec.ref[0] = read_pose();
    rec.ee[1] = read_pose();
    rec.ref[1] = read_pose();
    rec.d_env_oracle[0] = parse_double(f[i++]);
    rec.d_env_surrogate[0] = parse_double(f[i++]);
    rec.d_env_oracle[1] = parse_double(f[i++]);
    rec.d_env_surrogate[1] = parse_double(f[i++]);
    rec.d_self_oracle = parse_double(f[i++]);
    rec.d_self_surrogate = parse_double(f[i++]);
    rec.iterations = static_cast<int>(parse_double(f[i++]));
    rec.converged = parse_double(f[i++]) != 0.0;
    rec.infeasible_start = parse_double(f[i++]) != 0.0;
    rec.kkt_residual = parse_double(f[i++]);
    rec.constraint_env[0] = parse_double(f[i++]);
    rec.constraint_env[1] = parse_double(f[i++]);
    rec.constraint_self = parse_double(f[i++]);
    rec.included_env[0] = parse_double(f[i++]) != 0.0;
    rec.included_env[1] = parse_double(f[i++]) != 0.0;
    rec.included_self = parse_double(f[i++]) != 0.0;
    rec.active_env[0] = parse_double(f[i++]) != 0.0;
    rec.active_env[1] = parse_double(f[i++]) != 0.0;
    rec.active_self = parse_double(f[i++]) != 0.0;
    for (int k = 0; k < n_obs; ++k) {
      rec.obstacle_centers.emplace_back(parse_double(f[i]), parse_double(f[i + 1]),
                                        parse_double(f[i + 2]));
      i += 3;
    }
    for (int k = 0; k < n_intr; ++k) {
      rec.intruder_centers.emplace_back(parse_double(f[i]), parse_double(f[i + 1]),
                                        parse_double(f[i + 2]));
      i += 3;
    }
    if (!first) {
      const double dt = rec.t - prev_t;
      if (dt > 1e-12) log.tick_rate = 1.0 / dt;
    }
    prev_t = rec.t;
    first = false;
    log.ticks.push_back(std::move(rec));
  }
  return log;
}

std::string timing_to_csv(const RunLog& log) {
  std::string out = "tick,solve_time\n";
  for (std::size_t k = 0; k < log.ticks.size(); ++k)
    out += std::to_string(k) + "," + format_double(log.ticks[k].solve_time) + "\n";
  return out;
}

std::string metrics_to_csv(const MetricsReport& m) {
  std::string out = "metric,value\n";
  const auto row = [&](const std::string& name, double v) {
    out += name + "," + format_double(v) + "\n";
  };
  row("ticks", m.ticks);
  row("solve_time_median", m.solve_time_median);
  row("solve_time_mean", m.solve_time_mean);
  row("mean_pos_error", m.mean_pos_error);
  row("mean_pos_error_left", m.mean_pos_error_arm[0]);
  row("mean_pos_error_right", m.mean_pos_error_arm[1]);
  row("final_window_pos_error_left", m.final_window_pos_error[0]);
  row("final_window_pos_error_right", m.final_window_pos_error[1]);
  row("max_accel", m.max_accel);
  row("max_accel_left", m.max_accel_arm[0]);
  row("max_accel_right", m.max_accel_arm[1]);
  for (int arm = 0; arm < 2; ++arm) {
    const std::string p = arm == 0 ? "env_left_" : "env_right_";
    row(p + "min", m.env_trace[arm].min_value);
    row(p + "below_fraction", m.env_trace[arm].below_fraction);
    row(p + "longest_below_s", m.env_trace[arm].longest_below_s);
  }
  row("self_min", m.self_trace.min_value);
  row("self_below_fraction", m.self_trace.below_fraction);
  row("self_longest_below_s", m.self_trace.longest_below_s);
  row("honesty_p95", m.honesty_p95);
  row("min_env_oracle", m.min_env_oracle);
  row("min_self_oracle", m.min_self_oracle);
  return out;
}

std::string metrics_to_text(const MetricsReport& m) {
  std::ostringstream out;
  out << "ticks:                  " << m.ticks << "\n";
  out << "opt cost time (median): " << m.solve_time_median << " s\n";
  out << "opt cost time (mean):   " << m.solve_time_mean << " s\n";
  out << "mean pos error:         " << m.mean_pos_error << " m\n";
  out << "  left / right:         " << m.mean_pos_error_arm[0] << " / " << m.mean_pos_error_arm[1]
      << " m\n";
  out << "final 5 s pos error:    " << m.final_window_pos_error[0] << " / "
      << m.final_window_pos_error[1] << " m\n";
  out << "max accel:              " << m.max_accel << " m/s^2\n";
  out << "min env distance:       " << m.min_env_oracle << " m (L "
      << m.env_trace[0].min_value << ", R " << m.env_trace[1].min_value << ")\n";
  out << "min self distance:      " << m.min_self_oracle << " m\n";
  out << "below-threshold (L/R/self): " << m.env_trace[0].below_fraction << " / "
      << m.env_trace[1].below_fraction << " / " << m.self_trace.below_fraction << "\n";
  out << "longest below spans (s):    " << m.env_trace[0].longest_below_s << " / "
      << m.env_trace[1].longest_below_s << " / " << m.self_trace.longest_below_s << "\n";
  out << "surrogate honesty p95:  " << m.honesty_p95 << " m\n";
  return out.str();
}

void validate_run_log(const RunLog& log, double expected_duration) {
  const long expected = std::lround(expected_duration * log.tick_rate) + 1;
  if (static_cast<long>(log.ticks.size()) != expected)
    throw ConfigError("run log row count " + std::to_string(log.ticks.size()) + ", expected " +
                      std::to_string(expected));
  const double dt = 1.0 / log.tick_rate;
  for (std::size_t k = 0; k < log.ticks.size(); ++k) {
    if (std::abs(log.ticks[k].t - static_cast<double>(k) * dt) > 1e-9)
      throw ConfigError("run log timestamps are not uniform");
    if (k > 0 && !(log.ticks[k].t > log.ticks[k - 1].t))
      throw ConfigError("run log timestamps must strictly increase");
  }
}

}  // namespace reflex
