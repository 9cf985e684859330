#include "reflex/collision_geometry.hpp"

#include "reflex/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace reflex {

PointSegmentResult point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  PointSegmentResult out;
  if (len2 < 1e-30) {
    out.closest = a;
  } else {
    double t = (p - a).dot(ab) / len2;
    t = std::clamp(t, 0.0, 1.0);
    out.closest = a + t * ab;
  }
  out.distance = (p - out.closest).norm();
  return out;
}

namespace {

// Ericson-style closest points between segments; not symmetric bitwise,
// hence the canonical ordering in the public wrapper.
SegmentPairResult segment_segment_core(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                                       const Vec3& q2) {
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);

  double s = 0.0, t = 0.0;
  constexpr double kEps = 1e-30;
  if (a < kEps && e < kEps) {
    // both degenerate
  } else if (a < kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e < kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      if (denom > kEps) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  SegmentPairResult out;
  out.closest_a = p1 + s * d1;
  out.closest_b = p2 + t * d2;
  out.distance = (out.closest_a - out.closest_b).norm();
  return out;
}

bool lex_less(const Vec3& a, const Vec3& b) {
  for (int i = 0; i < 3; ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

}  // namespace

SegmentPairResult segment_segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                                           const Vec3& b1) {
  // Canonical argument order makes the result exactly symmetric.
  const bool swap = lex_less(b0, a0) || (!lex_less(a0, b0) && lex_less(b1, a1));
  if (swap) {
    SegmentPairResult r = segment_segment_core(b0, b1, a0, a1);
    std::swap(r.closest_a, r.closest_b);
    return r;
  }
  return segment_segment_core(a0, a1, b0, b1);
}

double capsule_surface_distance(const Vec3& p, const Capsule& c) {
  return point_segment_distance(p, c.a, c.b).distance - c.radius;
}

PointCloud vicinity_filter(const PointCloud& cloud, const std::vector<Capsule>& capsules) {
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] == PointLabel::Robot) continue;
    for (const Capsule& c : capsules) {
      if (point_segment_distance(cloud.points[i], c.a, c.b).distance <= c.radius) {
        out.push_back(cloud.points[i], cloud.labels[i]);
        break;
      }
    }
  }
  return out;
}

CloudDistance min_cloud_capsule_distance(const PointCloud& cloud,
                                         const std::vector<Capsule>& capsules) {
  CloudDistance best;
  for (std::size_t pi = 0; pi < cloud.size(); ++pi) {
    for (std::size_t ci = 0; ci < capsules.size(); ++ci) {
      const double d = capsule_surface_distance(cloud.points[pi], capsules[ci]);
      if (best.point_index < 0 || d < best.distance) {
        best.distance = d;
        best.point_index = static_cast<int>(pi);
        best.capsule_index = static_cast<int>(ci);
      }
    }
  }
  return best;
}

DistanceEstimate min_distance_oracle(const VecX& q, const PointCloud& cloud,
                                     const DualArmSystem& system) {
  check_arity(q, system.dof(), "min_distance_oracle");
  DistanceEstimate est;
  est.source = DistanceSource::Oracle;
  est.gradient = VecX::Zero(q.size());
  if (cloud.empty()) return est;

  const std::vector<Capsule> capsules = system_capsules(system, q);
  const CloudDistance hit = min_cloud_capsule_distance(cloud, capsules);
  est.distance = hit.distance;
  est.witness_point = cloud.points[static_cast<std::size_t>(hit.point_index)];

  // Central differences on the minimizing pair only (valid subgradient at ties).
  const Vec3& p = *est.witness_point;
  constexpr double h = 1e-5;
  VecX qp = q;
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    qp[j] = q[j] + h;
    const double dp = capsule_surface_distance(
        p, system_capsules(system, qp)[static_cast<std::size_t>(hit.capsule_index)]);
    qp[j] = q[j] - h;
    const double dm = capsule_surface_distance(
        p, system_capsules(system, qp)[static_cast<std::size_t>(hit.capsule_index)]);
    qp[j] = q[j];
    est.gradient[j] = (dp - dm) / (2.0 * h);
  }
  return est;
}

DistanceEstimate self_distance_oracle(const VecX& q, const DualArmSystem& system) {
  check_arity(q, system.dof(), "self_distance_oracle");
  const int n_left = system.left.dof();
  const auto left = link_segments(system.left, q.head(n_left));
  const auto right = link_segments(system.right, q.tail(system.right.dof()));

  DistanceEstimate est;
  est.source = DistanceSource::Oracle;
  est.gradient = VecX::Zero(q.size());

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0, best_j = 0;
  for (std::size_t i = 0; i < left.size(); ++i) {
    for (std::size_t j = 0; j < right.size(); ++j) {
      const double d = segment_segment_distance(left[i].a, left[i].b, right[j].a, right[j].b)
                           .distance -
                       left[i].radius - right[j].radius;
      if (d < best) {
        best = d;
        best_i = i;
        best_j = j;
      }
    }
  }
  est.distance = best;

  const auto pair_distance = [&](const VecX& qq) {
    const auto l = link_segments(system.left, qq.head(n_left));
    const auto r = link_segments(system.right, qq.tail(system.right.dof()));
    return segment_segment_distance(l[best_i].a, l[best_i].b, r[best_j].a, r[best_j].b).distance -
           l[best_i].radius - r[best_j].radius;
  };
  constexpr double h = 1e-5;
  VecX qp = q;
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    qp[j] = q[j] + h;
    const double dp = pair_distance(qp);
    qp[j] = q[j] - h;
    const double dm = pair_distance(qp);
    qp[j] = q[j];
    est.gradient[j] = (dp - dm) / (2.0 * h);
  }
  return est;
}

double self_distance_value(const VecX& q, const DualArmSystem& system) {
  check_arity(q, system.dof(), "self_distance_value");
  const auto left = link_segments(system.left, q.head(system.left.dof()));
  const auto right = link_segments(system.right, q.tail(system.right.dof()));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& l : left) {
    for (const auto& r : right) {
      best = std::min(best, segment_segment_distance(l.a, l.b, r.a, r.b).distance - l.radius -
                                r.radius);
    }
  }
  return best;
}

PointCloud load_point_cloud(const std::string& path) {
  PointCloud cloud;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string x, y, z, label;
    if (!(row >> x >> y >> z >> label)) throw ConfigError("bad point cloud record: " + line);
    const int lab = static_cast<int>(parse_double(label));
    if (lab < 0 || lab > 2) throw ConfigError("bad point label: " + label);
    cloud.push_back(Vec3(parse_double(x), parse_double(y), parse_double(z)),
                    static_cast<PointLabel>(lab));
  }
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::string& path) {
  std::string out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out += format_double(cloud.points[i].x()) + " " + format_double(cloud.points[i].y()) + " " +
           format_double(cloud.points[i].z()) + " " +
           std::to_string(static_cast<int>(cloud.labels[i])) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace reflex
