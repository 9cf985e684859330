#include "reflex/robot_model.hpp"

#include "reflex/io_util.hpp"

#include <json.hpp>

#include <Eigen/SVD>

#include <cmath>

namespace reflex {

using nlohmann::json;

void KinematicChain::validate() const {
  const auto n = static_cast<Eigen::Index>(links.size());
  if (n < 1) throw ConfigError("chain needs at least one link");
  if (joint_lower.size() != n || joint_upper.size() != n)
    throw ConfigError("joint limit arity does not match link count");
  if (step_lower.size() != n || step_upper.size() != n)
    throw ConfigError("step limit arity does not match link count");
  if (capsules.size() != links.size())
    throw ConfigError("capsule count does not match link count");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(joint_lower[i] < joint_upper[i]))
      throw ConfigError("joint_lower must be < joint_upper elementwise");
    if (!(step_lower[i] < 0.0 && 0.0 < step_upper[i]))
      throw ConfigError("step limits must straddle zero");
  }
  for (const auto& cap : capsules) {
    if (!(cap.radius > 0.0)) throw ConfigError("capsule radius must be > 0");
  }
  for (const auto& link : links) {
    if (std::abs(link.axis.norm() - 1.0) > 1e-9)
      throw ConfigError("joint axis must be unit length");
  }
  if (std::abs(base_pose.orientation.norm() - 1.0) > 1e-9)
    throw ConfigError("base orientation must be a unit quaternion");
}

void DualArmSystem::validate() const {
  left.validate();
  right.validate();
  for (const auto* chain : {&left, &right}) {
    Mat3 R = chain->base_pose.orientation.toRotationMatrix();
    if ((R * R.transpose() - Mat3::Identity()).norm() > 1e-9 || R.determinant() < 0.0)
      throw ConfigError("base pose rotation must be orthonormal with det +1");
  }
}

FkResult forward_kinematics(const KinematicChain& chain, const VecX& q) {
  check_arity(q, chain.dof(), "forward_kinematics");
  FkResult out;
  out.frames.reserve(chain.links.size() + 1);
  Isometry T = chain.base_pose.isometry();
  out.frames.push_back(T);
  for (size_t i = 0; i < chain.links.size(); ++i) {
    const LinkParam& link = chain.links[i];
    T = T * Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], link.axis);
    Isometry fixed = Isometry::Identity();
    fixed.linear() = link.rotation.toRotationMatrix();
    fixed.translation() = link.translation;
    T = T * fixed;
    out.frames.push_back(T);
  }
  return out;
}

MatX jacobian(const KinematicChain& chain, const VecX& q) {
  check_arity(q, chain.dof(), "jacobian");
  FkResult fk = forward_kinematics(chain, q);
  const Vec3 p_ee = fk.frames.back().translation();
  MatX J(6, chain.dof());
  for (int j = 0; j < chain.dof(); ++j) {
    // Joint j rotates about its axis anchored at the parent frame origin.
    const Isometry& parent = fk.frames[static_cast<size_t>(j)];
    Vec3 z = parent.linear() * chain.links[static_cast<size_t>(j)].axis;
    Vec3 p = parent.translation();
    J.block<3, 1>(0, j) = z.cross(p_ee - p);
    J.block<3, 1>(3, j) = z;
  }
  return J;
}

MatX pseudo_inverse(const MatX& J, double tol) {
  if (!J.allFinite()) throw NumericalError("pseudo_inverse: non-finite input");
  Eigen::JacobiSVD<MatX> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX& s = svd.singularValues();
  VecX inv = VecX::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > tol) inv[i] = 1.0 / s[i];
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

IkResult damped_ls_ik(const KinematicChain& chain, const Pose& target, const VecX& q_seed,
                      double damping, int max_iter) {
  check_arity(q_seed, chain.dof(), "damped_ls_ik");
  constexpr double kPosTol = 1e-3;
  constexpr double kOriTol = 1e-2;

  IkResult result;
  result.q = q_seed;
  VecX q = q_seed;
  VecX best_q = q;
  double best_score = std::numeric_limits<double>::infinity();

  for (int it = 0; it <= max_iter; ++it) {
    Pose ee = forward_kinematics(chain, q).end_effector();
    double pos_err = (target.position - ee.position).norm();
    double ori_err = orientation_angle(target.orientation, ee.orientation);
    double score = pos_err + 0.1 * ori_err;
    if (score < best_score) {
      best_score = score;
      best_q = q;
      result.position_error = pos_err;
      result.orientation_error = ori_err;
    }
    if (pos_err < kPosTol && ori_err < kOriTol) {
      result.q = q;
      result.converged = true;
      result.iterations = it;
      result.position_error = pos_err;
      result.orientation_error = ori_err;
      return result;
    }
    if (it == max_iter) break;

    VecX twist(6);
    twist.head<3>() = target.position - ee.position;
    twist.tail<3>() = rotation_vector(target.orientation * ee.orientation.conjugate());

    MatX J = jacobian(chain, q);
    MatX JJt = J * J.transpose();
    JJt.diagonal().array() += damping * damping;
    q += J.transpose() * JJt.ldlt().solve(twist);
    q = q.cwiseMax(chain.joint_lower).cwiseMin(chain.joint_upper);
    result.iterations = it + 1;
  }

  result.q = best_q;
  result.converged = false;
  return result;
}

std::vector<Capsule> link_segments(const KinematicChain& chain, const VecX& q) {
  check_arity(q, chain.dof(), "link_segments");
  FkResult fk = forward_kinematics(chain, q);
  std::vector<Capsule> out;
  out.reserve(chain.capsules.size());
  for (size_t i = 0; i < chain.capsules.size(); ++i) {
    const CapsuleAttachment& spec = chain.capsules[i];
    Capsule c;
    c.a = fk.frames[i] * spec.parent_offset;
    c.b = fk.frames[i + 1] * spec.child_offset;
    c.radius = spec.radius;
    out.push_back(c);
  }
  return out;
}

std::vector<Capsule> system_capsules(const DualArmSystem& system, const VecX& q) {
  check_arity(q, system.dof(), "system_capsules");
  std::vector<Capsule> out = link_segments(system.left, q.head(system.left.dof()));
  std::vector<Capsule> right = link_segments(system.right, q.tail(system.right.dof()));
  out.insert(out.end(), right.begin(), right.end());
  return out;
}

// --- configuration files ---

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json quat_to_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

Quat quat_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("expected 4-element quaternion (w x y z)");
  Quat q(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
  if (std::abs(q.norm() - 1.0) > 1e-9) throw ConfigError("quaternion must be unit length");
  return q;
}

json vecx_to_json(const VecX& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VecX vecx_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("expected array");
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<size_t>(i)].get<double>();
  return v;
}

json chain_to_json(const KinematicChain& chain) {
  json j;
  j["base_pose"] = {{"translation", vec3_to_json(chain.base_pose.position)},
                    {"rotation_wxyz", quat_to_json(chain.base_pose.orientation)}};
  j["links"] = json::array();
  for (const auto& link : chain.links) {
    j["links"].push_back({{"axis", vec3_to_json(link.axis)},
                          {"translation", vec3_to_json(link.translation)},
                          {"rotation_wxyz", quat_to_json(link.rotation)}});
  }
  j["joint_lower"] = vecx_to_json(chain.joint_lower);
  j["joint_upper"] = vecx_to_json(chain.joint_upper);
  j["step_lower"] = vecx_to_json(chain.step_lower);
  j["step_upper"] = vecx_to_json(chain.step_upper);
  j["capsules"] = json::array();
  for (const auto& cap : chain.capsules) {
    j["capsules"].push_back({{"parent_offset", vec3_to_json(cap.parent_offset)},
                             {"child_offset", vec3_to_json(cap.child_offset)},
                             {"radius", cap.radius}});
  }
  return j;
}

KinematicChain chain_from_json(const json& j) {
  KinematicChain chain;
  chain.base_pose.position = vec3_from_json(j.at("base_pose").at("translation"));
  chain.base_pose.orientation = quat_from_json(j.at("base_pose").at("rotation_wxyz"));
  for (const auto& lj : j.at("links")) {
    LinkParam link;
    link.axis = vec3_from_json(lj.at("axis"));
    link.translation = vec3_from_json(lj.at("translation"));
    link.rotation = quat_from_json(lj.at("rotation_wxyz"));
    chain.links.push_back(link);
  }
  chain.joint_lower = vecx_from_json(j.at("joint_lower"));
  chain.joint_upper = vecx_from_json(j.at("joint_upper"));
  chain.step_lower = vecx_from_json(j.at("step_lower"));
  chain.step_upper = vecx_from_json(j.at("step_upper"));
  for (const auto& cj : j.at("capsules")) {
    CapsuleAttachment cap;
    cap.parent_offset = vec3_from_json(cj.at("parent_offset"));
    cap.child_offset = vec3_from_json(cj.at("child_offset"));
    cap.radius = cj.at("radius").get<double>();
    chain.capsules.push_back(cap);
  }
  chain.validate();
  return chain;
}

}  // namespace

DualArmSystem load_dual_arm(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("robot config parse error in " + path + ": " + e.what());
  }
  try {
    DualArmSystem system;
    system.left = chain_from_json(j.at("left"));
    system.right = chain_from_json(j.at("right"));
    system.validate();
    return system;
  } catch (const json::exception& e) {
    throw ConfigError("robot config schema error in " + path + ": " + e.what());
  }
}

void save_dual_arm(const DualArmSystem& system, const std::string& path) {
  json j;
  j["left"] = chain_to_json(system.left);
  j["right"] = chain_to_json(system.right);
  write_text_file(path, j.dump(2) + "\n");
}

KinematicChain load_chain(const std::string& path) {
  try {
    return chain_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw ConfigError("chain config error in " + path + ": " + e.what());
  }
}

void save_chain(const KinematicChain& chain, const std::string& path) {
  write_text_file(path, chain_to_json(chain).dump(2) + "\n");
}

KinematicChain default_arm() {
  KinematicChain chain;
  const Vec3 z = Vec3::UnitZ();
  const Vec3 y = Vec3::UnitY();
  struct Row {
    Vec3 axis;
    double dz;
    double radius;
  };
  // S-R-S layout: roll/pitch shoulder, elbow, wrist; ~1.10 m reach.
  const Row rows[7] = {
      {z, 0.33, 0.09}, {y, 0.0, 0.09}, {z, 0.32, 0.075}, {y, 0.0, 0.075},
      {z, 0.30, 0.06}, {y, 0.0, 0.06}, {z, 0.15, 0.05},
  };
  VecX lower(7), upper(7);
  lower << -2.0, -1.7628, -2.0, -2.6, -2.0, -2.6, -2.0;
  upper << 2.0, 1.7628, 2.0, 2.6, 2.0, 2.6, 2.0;
  for (const Row& row : rows) {
    LinkParam link;
    link.axis = row.axis;
    link.translation = Vec3(0.0, 0.0, row.dz);
    chain.links.push_back(link);
    CapsuleAttachment cap;
    cap.radius = row.radius;
    chain.capsules.push_back(cap);
  }
  chain.joint_lower = lower;
  chain.joint_upper = upper;
  chain.step_lower = VecX::Constant(7, -0.05);
  chain.step_upper = VecX::Constant(7, 0.05);
  return chain;
}

DualArmSystem default_dual_arm() {
  DualArmSystem system;
  system.left = default_arm();
  system.right = default_arm();
  system.left.base_pose.position = Vec3(0.0, 0.45, 0.0);
  system.right.base_pose.position = Vec3(0.0, -0.45, 0.0);
  // Exact pi yaw: swapping arm configurations mirrors the scene onto itself.
  system.right.base_pose.orientation = Quat(0.0, 0.0, 0.0, 1.0);
  return system;
}

}  // namespace reflex
