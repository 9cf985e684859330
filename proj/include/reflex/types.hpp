#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>

namespace reflex {

using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;
using Isometry = Eigen::Isometry3d;

/// Joint vector does not match the chain/system it addresses.
struct InvalidArity : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite math is required.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Optimizer loss became non-finite.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Time argument outside the scenario horizon.
struct InvalidTime : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent configuration data.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check_arity(const VecX& q, Eigen::Index expected, const char* where) {
  if (q.size() != expected) {
    throw InvalidArity(std::string(where) + ": joint vector has arity " +
                       std::to_string(q.size()) + ", expected " + std::to_string(expected));
  }
}

/// World-frame rigid pose. Orientation is kept unit-norm (1e-9).
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Isometry isometry() const {
    Isometry T = Isometry::Identity();
    T.linear() = orientation.toRotationMatrix();
    T.translation() = position;
    return T;
  }

  static Pose from_isometry(const Isometry& T) {
    Pose p;
    p.position = T.translation();
    p.orientation = Quat(T.linear()).normalized();
    return p;
  }
};

/// Angle of the relative quaternion between two orientations, in [0, pi].
inline double orientation_angle(const Quat& a, const Quat& b) {
  Quat rel = a * b.conjugate();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

/// Axis-angle vector of a quaternion (rotation vector), shortest representation.
inline Vec3 rotation_vector(const Quat& q_in) {
  Quat q = q_in;
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  double sin_half = q.vec().norm();
  double angle = 2.0 * std::atan2(sin_half, q.w());
  if (sin_half < 1e-14) return 2.0 * q.vec();  // small-angle limit
  return q.vec() * (angle / sin_half);
}

}  // namespace reflex
