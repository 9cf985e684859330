#pragma once

#include "reflex/robot_model.hpp"
#include "reflex/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace reflex {

enum class PointLabel : int { Obstacle = 0, Robot = 1, Intruder = 2 };

/// World-frame points with synthetic provenance labels.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<PointLabel> labels;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push_back(const Vec3& p, PointLabel label) {
    points.push_back(p);
    labels.push_back(label);
  }
};

enum class DistanceSource : int { Oracle = 0, Surrogate = 1 };

/// Distance to the capsule surface: 0 = touching, negative = penetration.
/// Reported when the queried cloud is empty; the barrier constraint is
/// inactive by construction at this value.
constexpr double kEmptyCloudDistance = 1e9;

struct DistanceEstimate {
  double distance = kEmptyCloudDistance;  // m, signed surface distance
  VecX gradient;                          // d(distance)/dq, arity of the query
  std::optional<Vec3> witness_point;
  DistanceSource source = DistanceSource::Oracle;
};

struct PointSegmentResult {
  double distance = 0.0;
  Vec3 closest = Vec3::Zero();
};

/// Distance from p to segment [a, b]; a == b degenerates to point distance.
PointSegmentResult point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

struct SegmentPairResult {
  double distance = 0.0;
  Vec3 closest_a = Vec3::Zero();
  Vec3 closest_b = Vec3::Zero();
};

/// Exact minimum distance between segments [a0,a1] and [b0,b1], including
/// parallel and degenerate cases. Bitwise symmetric in its arguments.
SegmentPairResult segment_segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                                           const Vec3& b1);

/// Signed distance from a point to a capsule surface (axis distance - radius).
double capsule_surface_distance(const Vec3& p, const Capsule& c);

/// Points within some capsule (axis distance <= that capsule's radius) whose
/// label is not Robot. Input order is preserved.
PointCloud vicinity_filter(const PointCloud& cloud, const std::vector<Capsule>& capsules);

/// Minimum surface distance from the cloud to the capsule set, with the argmin
/// point index (ties broken toward the lowest point index, then the lowest
/// capsule index). Returns kEmptyCloudDistance on an empty cloud.
struct CloudDistance {
  double distance = kEmptyCloudDistance;
  int point_index = -1;
  int capsule_index = -1;
};
CloudDistance min_cloud_capsule_distance(const PointCloud& cloud,
                                         const std::vector<Capsule>& capsules);

/// Exact robot-environment minimum distance for the dual-arm system at q
/// (arity 14), gradient by central finite differences (h = 1e-5 rad) on the
/// minimizing point/capsule pair.
DistanceEstimate min_distance_oracle(const VecX& q, const PointCloud& cloud,
                                     const DualArmSystem& system);

/// Exact arm-arm minimum distance at q (arity 14): min over left x right
/// capsule pairs of segment distance minus both radii. Intra-arm pairs are
/// excluded. Gradient by central finite differences on the minimizing pair.
DistanceEstimate self_distance_oracle(const VecX& q, const DualArmSystem& system);

/// Distance only, no gradient; the cheap form used in logging and training.
double self_distance_value(const VecX& q, const DualArmSystem& system);

// --- point cloud files: one "x y z label" record per line ---

PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const PointCloud& cloud, const std::string& path);

}  // namespace reflex
