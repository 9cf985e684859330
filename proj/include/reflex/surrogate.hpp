#pragma once

#include "reflex/collision_geometry.hpp"
#include "reflex/mlp.hpp"
#include "reflex/robot_model.hpp"

#include <cstdint>
#include <string>

namespace reflex {

/// Sampling plan for oracle-supervised training sets.
struct SampleConfig {
  int env_rows = 400000;
  int self_rows = 600000;
  double shell_inner = -0.05;  // m of allowed penetration
  double shell_outer = 0.4;    // m beyond the capsule surface
  /// Distance targets saturate here (env per-capsule values and the self
  /// distance alike). The barrier activation band ends at twice the 0.1 m
  /// threshold, so behaviour below 0.5 m is untouched while regression
  /// capacity stops being spent on far-apart geometry.
  double target_cap = 0.5;
  /// Fraction of self rows rejection-sampled to lie below near_threshold;
  /// uniform sampling alone starves the close-approach region the filter
  /// lives in.
  double near_fraction = 0.3;
  double near_threshold = 0.3;  // m
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Optimizer settings the shipped surrogates are trained with.
inline TrainHyper surrogate_train_hyper(std::uint64_t seed) {
  TrainHyper hyper;
  hyper.learning_rate = 3e-3;
  hyper.final_lr_fraction = 0.01;
  hyper.batch_size = 1024;
  hyper.epochs = 150;
  hyper.seed = seed;
  return hyper;
}

/// Untrained environment-distance network for one arm. Inputs are the 7
/// joints plus a point in the arm base frame; outputs are per-capsule surface
/// distances. Joint inputs normalize to [-1, 1] by the limits, point inputs
/// by the reach box.
Mlp<double> make_env_model(const KinematicChain& chain, int hidden = 4, int width = 256,
                           std::uint64_t seed = 0);

/// Untrained arm-arm distance network: 14 joints in, scalar distance out.
Mlp<double> make_self_model(const DualArmSystem& system, int hidden = 4, int width = 256,
                            std::uint64_t seed = 0);

/// (q, point) rows with per-capsule distance targets. Points are sampled in
/// the arm base frame, uniformly in the shell [shell_inner, shell_outer]
/// around the capsule set at each sampled q. Deterministic for a fixed seed.
TrainingSet generate_env_training_data(const KinematicChain& chain, const SampleConfig& config);

/// Uniform 14-dim joint rows with exact inter-arm distance targets. Each
/// sampled configuration also appears with the two arms swapped, so a
/// swap-symmetric system trains to a swap-symmetric predictor.
TrainingSet generate_self_training_data(const DualArmSystem& system, const SampleConfig& config);

/// Surrogate distance to a vicinity cloud expressed in the arm base frame:
/// min over points and capsules of the network outputs. The gradient is the
/// backprop gradient at the argmin (lowest point, then capsule, on ties).
/// Empty cloud: sentinel distance, zero gradient.
template <class Scalar>
DistanceEstimate predict_env_distance(const Mlp<Scalar>& model, const VecX& q,
                                      const PointCloud& cloud_base_frame);

/// Surrogate arm-arm distance with backprop gradient over all 14 joints.
template <class Scalar>
DistanceEstimate predict_self_distance(const Mlp<Scalar>& model, const VecX& q);

/// Place a 7-dim per-arm gradient into the stacked dual-arm vector
/// (zeros for the other arm). arm: 0 = left, 1 = right.
VecX embed_arm_gradient(const VecX& grad, int arm, int total_dof);

/// Express a world-frame cloud in the arm base frame (labels preserved).
PointCloud cloud_to_base_frame(const PointCloud& cloud, const KinematicChain& chain);

struct HeldOutError {
  double mae = 0.0;
  double max_error = 0.0;
};

/// Fresh oracle-labelled samples (same distribution as training) scored
/// against the model's min-over-capsules prediction.
HeldOutError env_heldout_error(const Mlp<double>& model, const KinematicChain& chain, int n,
                               std::uint64_t seed);
HeldOutError self_heldout_error(const Mlp<double>& model, const DualArmSystem& system, int n,
                                std::uint64_t seed);

// --- implementation ---

template <class Scalar>
DistanceEstimate predict_env_distance(const Mlp<Scalar>& model, const VecX& q,
                                      const PointCloud& cloud_base_frame) {
  const int n_q = model.input_arity() - 3;
  check_arity(q, n_q, "predict_env_distance");
  DistanceEstimate est;
  est.source = DistanceSource::Surrogate;
  est.gradient = VecX::Zero(n_q);
  if (cloud_base_frame.empty()) return est;

  using Vec = typename Mlp<Scalar>::Vec;
  // One canonical forward per point: results do not depend on cloud size or
  // point order, so the min decomposes exactly over points.
  Vec x(model.input_arity());
  x.head(n_q) = q.cast<Scalar>();
  int best_pt = 0, best_cap = 0;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  const int n_pts = static_cast<int>(cloud_base_frame.size());
  for (int i = 0; i < n_pts; ++i) {
    x.tail(3) = cloud_base_frame.points[static_cast<std::size_t>(i)].cast<Scalar>();
    const Vec out = mlp_forward(model, x);
    for (int c = 0; c < out.size(); ++c) {
      if (out[c] < best) {
        best = out[c];
        best_pt = i;
        best_cap = c;
      }
    }
  }
  est.distance = static_cast<double>(best);
  est.witness_point = cloud_base_frame.points[static_cast<std::size_t>(best_pt)];
  x.tail(3) = cloud_base_frame.points[static_cast<std::size_t>(best_pt)].cast<Scalar>();
  const Vec g = mlp_input_gradient(model, x, best_cap);
  est.gradient = g.head(n_q).template cast<double>();
  return est;
}

template <class Scalar>
DistanceEstimate predict_self_distance(const Mlp<Scalar>& model, const VecX& q) {
  check_arity(q, model.input_arity(), "predict_self_distance");
  using Vec = typename Mlp<Scalar>::Vec;
  const Vec x = q.cast<Scalar>();
  DistanceEstimate est;
  est.source = DistanceSource::Surrogate;
  est.distance = static_cast<double>(mlp_forward(model, x)[0]);
  est.gradient = mlp_input_gradient(model, x, 0).template cast<double>();
  return est;
}

}  // namespace reflex
