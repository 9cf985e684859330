#pragma once

#include "reflex/types.hpp"

#include <string>
#include <vector>

namespace reflex {

/// A capsule in world coordinates: segment [a, b] swept by a sphere of `radius`.
/// Degenerate segments (a == b) are spheres and are allowed.
struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.05;
};

/// One revolute joint followed by the link's fixed transform.
/// The joint axis is expressed in the parent frame; the link frame is
///   frame_i = frame_{i-1} * Rot(axis, q_i) * (rotation, translation).
struct LinkParam {
  Vec3 axis = Vec3::UnitZ();
  Vec3 translation = Vec3::Zero();
  Quat rotation = Quat::Identity();
};

/// Capsule attached to link i. Endpoint a lives in the parent joint frame
/// (frame i-1), endpoint b in the link frame (frame i), so zero offsets give
/// the segment connecting adjacent joint centers.
struct CapsuleAttachment {
  Vec3 parent_offset = Vec3::Zero();
  Vec3 child_offset = Vec3::Zero();
  double radius = 0.05;
};

/// Serial revolute chain with joint/step limits and per-link capsules.
struct KinematicChain {
  std::vector<LinkParam> links;
  VecX joint_lower;  // rad
  VecX joint_upper;  // rad
  VecX step_lower;   // rad per control tick, < 0
  VecX step_upper;   // rad per control tick, > 0
  Pose base_pose;
  std::vector<CapsuleAttachment> capsules;  // one per link

  int dof() const { return static_cast<int>(links.size()); }

  /// Throws ConfigError if any structural invariant is broken.
  void validate() const;
};

struct DualArmSystem {
  KinematicChain left;
  KinematicChain right;

  int dof() const { return left.dof() + right.dof(); }
  void validate() const;
};

/// Frames produced by forward kinematics. frames[0] is the base pose,
/// frames[i] the frame of link i; the end effector is the last frame.
struct FkResult {
  std::vector<Isometry> frames;

  Pose end_effector() const { return Pose::from_isometry(frames.back()); }
};

FkResult forward_kinematics(const KinematicChain& chain, const VecX& q);

/// Geometric Jacobian of the end effector, 6 x n. Rows 0-2 linear (m/rad),
/// rows 3-5 angular (rad/rad).
MatX jacobian(const KinematicChain& chain, const VecX& q);

/// Moore-Penrose pseudo-inverse via SVD; singular values below `tol` are
/// treated as zero.
MatX pseudo_inverse(const MatX& J, double tol = 1e-8);

struct IkResult {
  VecX q;
  bool converged = false;
  int iterations = 0;
  double position_error = 0.0;     // m
  double orientation_error = 0.0;  // rad
};

/// Damped least-squares IK with per-iteration joint-limit clamping.
/// Terminates at position error < 1e-3 m and orientation error < 1e-2 rad;
/// otherwise returns the best iterate with converged = false.
IkResult damped_ls_ik(const KinematicChain& chain, const Pose& target, const VecX& q_seed,
                      double damping = 0.05, int max_iter = 200);

/// World-frame capsules of every link at configuration q.
std::vector<Capsule> link_segments(const KinematicChain& chain, const VecX& q);

/// Capsules of both arms, left arm first. q is the stacked [left, right] vector.
std::vector<Capsule> system_capsules(const DualArmSystem& system, const VecX& q);

// --- configuration files (structured text, bit-exact round trip) ---

DualArmSystem load_dual_arm(const std::string& path);
void save_dual_arm(const DualArmSystem& system, const std::string& path);

KinematicChain load_chain(const std::string& path);
void save_chain(const KinematicChain& chain, const std::string& path);

/// The 7-DOF arm shipped in configs/: an S-R-S layout with ~1.1 m reach.
KinematicChain default_arm();

/// Two default arms 0.9 m apart; the right base is the left base rotated by
/// pi about the world z axis, which makes the pair swap-symmetric.
DualArmSystem default_dual_arm();

}  // namespace reflex
