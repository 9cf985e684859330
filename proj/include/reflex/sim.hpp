#pragma once

#include "reflex/collision_geometry.hpp"
#include "reflex/mlp.hpp"
#include "reflex/robot_model.hpp"
#include "reflex/rng.hpp"
#include "reflex/safety_filter.hpp"
#include "reflex/surrogate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace reflex {

struct EllipsePath {
  Vec3 center = Vec3::Zero();
  double semi_axis_a = 0.1;  // m, along the plane's local x
  double semi_axis_b = 0.1;  // m, along the plane's local y
  Quat orientation = Quat::Identity();
  double period = 12.0;  // s
  double phase = 0.0;    // rad

  Vec3 position(double t) const {
    const double theta = 2.0 * M_PI * t / period + phase;
    return center + orientation * Vec3(semi_axis_a * std::cos(theta),
                                       semi_axis_b * std::sin(theta), 0.0);
  }
};

struct ObstacleSpec {
  double radius = 0.03;
  EllipsePath path;
};

/// Scripted intruder: a point blob that enters from `entry`, reaches `target`
/// mid-window and retreats (sin^2 ease), active only inside [t_start, t_end].
struct IntruderSpec {
  double radius = 0.06;
  int density = 256;  // points per tick while active
  Vec3 entry = Vec3::Zero();
  Vec3 target = Vec3::Zero();
  double t_start = 18.0;
  double t_end = 30.0;

  bool active(double t) const { return t >= t_start && t <= t_end; }

  Vec3 position(double t) const {
    if (!active(t)) return entry;
    const double u = (t - t_start) / (t_end - t_start);
    const double s = std::sin(M_PI * u);
    return entry + (s * s) * (target - entry);
  }
};

struct ArmTrajectory {
  EllipsePath ellipse;
  Quat ee_orientation = Quat::Identity();
};

struct ScenarioConfig {
  double duration = 60.0;
  double tick_rate = 40.0;  // Hz
  ArmTrajectory left, right;
  VecX left_home, right_home;  // IK seeds at t = 0; empty = zeros
  std::vector<ObstacleSpec> obstacles;
  std::vector<IntruderSpec> intruders;
  int cloud_density = 256;     // points per obstacle per tick
  double noise_sigma = 0.002;  // m
  std::uint64_t seed = 0;
  FilterMethod method = FilterMethod::Barrier;
  double lambda = 0.1;  // m
  double mu = 0.1;      // m
  double vicinity_radius = 0.25;  // m
  double alpha = 5.0;
  double beta = 1.0;
  double q_weight = 1.0;  // Q = q_weight * I
  double cbf_gain = 0.9;
  double ik_damping = 0.05;
  int ik_max_iter = 100;

  void validate() const;
};

struct SurrogateModels {
  Mlp<float> env;
  Mlp<float> self_arm;
};

/// One control period. q, dq and the end-effector poses describe the state
/// after the tick's step was applied; the distance fields hold the perception
/// values that produced that step (so surrogate and oracle are like-for-like).
struct TickRecord {
  double t = 0.0;
  VecX q;
  VecX dq;
  Pose ee[2];
  Pose ref[2];
  double d_env_oracle[2] = {kEmptyCloudDistance, kEmptyCloudDistance};
  double d_env_surrogate[2] = {kEmptyCloudDistance, kEmptyCloudDistance};
  double d_self_oracle = 0.0;
  double d_self_surrogate = 0.0;
  int iterations = 0;
  bool converged = true;
  bool infeasible_start = false;
  double kkt_residual = 0.0;
  double solve_time = 0.0;  // s, wall clock; lives in the timing file, not the log
  double constraint_env[2] = {0.0, 0.0};
  double constraint_self = 0.0;
  bool included_env[2] = {false, false};
  bool included_self = false;
  bool active_env[2] = {false, false};
  bool active_self = false;
  std::vector<Vec3> obstacle_centers;
  std::vector<Vec3> intruder_centers;
};

struct RunLog {
  double tick_rate = 40.0;
  FilterMethod method = FilterMethod::Barrier;
  double lambda = 0.1;
  double mu = 0.1;
  std::vector<TickRecord> ticks;
};

/// Elliptical reference for one arm (0 = left, 1 = right). Throws InvalidTime
/// outside [0, duration].
Pose reference_pose(const ScenarioConfig& config, int arm, double t);

/// Surface-sampled sphere points for every obstacle (and intruder inside its
/// window) at time t, with Gaussian coordinate noise. Deterministic given the
/// generator state.
PointCloud sample_obstacle_cloud(const ScenarioConfig& config, double t, Rng& rng);

/// Closed-loop scenario: per tick, sample and filter the cloud, query the
/// surrogates, IK the reference, solve the safety filter, integrate. Models
/// may be absent only for method = None (direct tracking baseline).
RunLog run_scenario(const DualArmSystem& system, const std::optional<SurrogateModels>& models,
                    const ScenarioConfig& config);

struct TraceStats {
  double min_value = kEmptyCloudDistance;
  double below_fraction = 0.0;   // ticks below threshold / ticks
  double longest_below_s = 0.0;  // longest contiguous below-threshold span
};

struct MetricsReport {
  int ticks = 0;
  double solve_time_median = 0.0;
  double solve_time_mean = 0.0;
  double mean_pos_error = 0.0;  // over ticks and arms
  double mean_pos_error_arm[2] = {0.0, 0.0};
  double final_window_pos_error[2] = {0.0, 0.0};  // mean over the last 5 s
  double max_accel = 0.0;  // max second difference / dt^2 over ticks and arms
  double max_accel_arm[2] = {0.0, 0.0};
  TraceStats env_trace[2];
  TraceStats self_trace;
  double honesty_p95 = 0.0;  // 95th pct |surrogate - oracle|, sentinels skipped
  double min_env_oracle = kEmptyCloudDistance;
  double min_self_oracle = kEmptyCloudDistance;
};

MetricsReport compute_metrics(const RunLog& log);

/// Waypoint delivery on the same control loop: linear Cartesian interpolation
/// between waypoints (slerp orientation), one segment_duration each, starting
/// from the initial end-effector pose. An arm with fewer waypoints holds its
/// last one.
struct DeliveryScenario {
  ScenarioConfig base;  // solver, obstacle and noise settings; ellipses unused
  std::vector<Pose> left_waypoints;
  std::vector<Pose> right_waypoints;
  double segment_duration = 3.0;  // s
  double tolerance = 0.005;       // m, waypoint success radius
};

struct DeliveryResult {
  RunLog log;
  bool success = false;
  bool all_waypoints_reached = false;
  bool collision_free = false;
  std::vector<double> left_errors;  // per waypoint, m
  std::vector<double> right_errors;
};

DeliveryResult delivery_scenario(const DualArmSystem& system,
                                 const std::optional<SurrogateModels>& models,
                                 const DeliveryScenario& scenario);

// --- files ---

ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& config, const std::string& path);

/// Deterministic per-tick log; byte-identical across repeated runs of the
/// same manifest. Wall-clock solve times live in the separate timing CSV.
std::string run_log_to_csv(const RunLog& log);
RunLog run_log_from_csv(const std::string& csv);
std::string timing_to_csv(const RunLog& log);

std::string metrics_to_csv(const MetricsReport& m);
std::string metrics_to_text(const MetricsReport& m);

/// Uniform strictly-increasing timestamps and the expected row count.
void validate_run_log(const RunLog& log, double expected_duration);

}  // namespace reflex
