#pragma once

#include "reflex/robot_model.hpp"
#include "reflex/rng.hpp"

namespace reflex::test {

/// Single revolute joint about z followed by a +0.3 m x translation.
inline KinematicChain one_link_rz_x() {
  KinematicChain chain;
  LinkParam link;
  link.axis = Vec3::UnitZ();
  link.translation = Vec3(0.3, 0.0, 0.0);
  chain.links.push_back(link);
  chain.capsules.push_back(CapsuleAttachment{Vec3::Zero(), Vec3::Zero(), 0.05});
  chain.joint_lower = VecX::Constant(1, -M_PI);
  chain.joint_upper = VecX::Constant(1, M_PI);
  chain.step_lower = VecX::Constant(1, -0.05);
  chain.step_upper = VecX::Constant(1, 0.05);
  return chain;
}

/// Two links, each translating +0.3 m along local z (axes about z).
inline KinematicChain two_link_z() {
  KinematicChain chain;
  for (int i = 0; i < 2; ++i) {
    LinkParam link;
    link.axis = Vec3::UnitZ();
    link.translation = Vec3(0.0, 0.0, 0.3);
    chain.links.push_back(link);
    chain.capsules.push_back(CapsuleAttachment{Vec3::Zero(), Vec3::Zero(), 0.05});
  }
  chain.joint_lower = VecX::Constant(2, -M_PI);
  chain.joint_upper = VecX::Constant(2, M_PI);
  chain.step_lower = VecX::Constant(2, -0.05);
  chain.step_upper = VecX::Constant(2, 0.05);
  return chain;
}

inline VecX random_joints(const KinematicChain& chain, Rng& rng) {
  VecX q(chain.dof());
  for (int j = 0; j < chain.dof(); ++j)
    q[j] = rng.uniform(chain.joint_lower[j], chain.joint_upper[j]);
  return q;
}

inline Quat random_quat(Rng& rng) {
  Quat q(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
  q.normalize();
  return q;
}

}  // namespace reflex::test
