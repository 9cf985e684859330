#include "reflex/surrogate.hpp"

#include "reflex/io_util.hpp"
#include "reflex/rng.hpp"

#include <algorithm>
#include <numeric>

namespace reflex {

namespace {

KinematicChain base_stripped(const KinematicChain& chain) {
  KinematicChain local = chain;
  local.base_pose = Pose{};
  return local;
}

/// Axis-aligned box guaranteed to contain every capsule point reachable by
/// the (base-stripped) chain, inflated by the sampling shell.
void reach_box(const KinematicChain& chain, double inflate, Vec3& lo, Vec3& hi) {
  double reach = 0.0;
  double max_radius = 0.0;
  for (const auto& link : chain.links) reach += link.translation.norm();
  for (const auto& cap : chain.capsules) {
    max_radius = std::max(max_radius, cap.radius);
    reach += cap.parent_offset.norm() + cap.child_offset.norm();
  }
  const double r = reach + max_radius + inflate;
  lo = Vec3::Constant(-r);
  hi = Vec3::Constant(r);
}

VecX sample_joints(const KinematicChain& chain, Rng& rng) {
  VecX q(chain.dof());
  for (int j = 0; j < chain.dof(); ++j)
    q[j] = rng.uniform(chain.joint_lower[j], chain.joint_upper[j]);
  return q;
}

void make_split(TrainingSet& set, double validation_fraction, std::uint64_t seed) {
  const int rows = static_cast<int>(set.inputs.rows());
  std::vector<int> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5b117));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next_u64() % i)]);
  const int n_val = static_cast<int>(rows * validation_fraction);
  set.val_indices.assign(order.begin(), order.begin() + n_val);
  set.train_indices.assign(order.begin() + n_val, order.end());
}

}  // namespace

Mlp<double> make_env_model(const KinematicChain& chain, int hidden, int width,
                           std::uint64_t seed) {
  const int n_q = chain.dof();
  Mlp<double> m = make_mlp<double>(n_q + 3, static_cast<int>(chain.capsules.size()), hidden,
                                   width, seed);
  for (int j = 0; j < n_q; ++j) {
    m.input_shift[j] = 0.5 * (chain.joint_lower[j] + chain.joint_upper[j]);
    m.input_scale[j] = 0.5 * (chain.joint_upper[j] - chain.joint_lower[j]);
  }
  Vec3 lo, hi;
  reach_box(chain, 0.5, lo, hi);
  for (int k = 0; k < 3; ++k) {
    m.input_shift[n_q + k] = 0.5 * (lo[k] + hi[k]);
    m.input_scale[n_q + k] = 0.5 * (hi[k] - lo[k]);
  }
  return m;
}

Mlp<double> make_self_model(const DualArmSystem& system, int hidden, int width,
                            std::uint64_t seed) {
  Mlp<double> m = make_mlp<double>(system.dof(), 1, hidden, width, seed);
  int j = 0;
  for (const KinematicChain* chain : {&system.left, &system.right}) {
    for (int k = 0; k < chain->dof(); ++k, ++j) {
      m.input_shift[j] = 0.5 * (chain->joint_lower[k] + chain->joint_upper[k]);
      m.input_scale[j] = 0.5 * (chain->joint_upper[k] - chain->joint_lower[k]);
    }
  }
  return m;
}

TrainingSet generate_env_training_data(const KinematicChain& chain, const SampleConfig& config) {
  const KinematicChain local = base_stripped(chain);
  const int n_q = chain.dof();
  const int n_caps = static_cast<int>(chain.capsules.size());
  TrainingSet set;
  set.seed = config.seed;
  set.inputs.resize(config.env_rows, n_q + 3);
  set.targets.resize(config.env_rows, n_caps);

  Rng rng(mix_seed(config.seed, 0xe0f));
  for (int row = 0; row < config.env_rows; ++row) {
    const VecX q = sample_joints(local, rng);
    const auto capsules = link_segments(local, q);
    // Tight enclosing box of the shell at this configuration keeps the
    // rejection rate low without changing the shell distribution.
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& c : capsules) {
      const Vec3 pad = Vec3::Constant(c.radius + config.shell_outer);
      lo = lo.cwiseMin(c.a.cwiseMin(c.b) - pad);
      hi = hi.cwiseMax(c.a.cwiseMax(c.b) + pad);
    }
    Vec3 p;
    while (true) {
      p = Vec3(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
               rng.uniform(lo.z(), hi.z()));
      double d_min = std::numeric_limits<double>::infinity();
      for (const auto& c : capsules) d_min = std::min(d_min, capsule_surface_distance(p, c));
      if (d_min >= config.shell_inner && d_min <= config.shell_outer) break;
    }
    set.inputs.row(row).head(n_q) = q.transpose();
    set.inputs.row(row).tail(3) = p.transpose();
    for (int c = 0; c < n_caps; ++c) {
      const double d = capsule_surface_distance(p, capsules[static_cast<std::size_t>(c)]);
      set.targets(row, c) = std::min(d, config.target_cap);
    }
  }
  make_split(set, config.validation_fraction, config.seed);
  return set;
}

TrainingSet generate_self_training_data(const DualArmSystem& system, const SampleConfig& config) {
  const int n = system.dof();
  const int n_left = system.left.dof();
  TrainingSet set;
  set.seed = config.seed;
  set.inputs.resize(config.self_rows, n);
  set.targets.resize(config.self_rows, 1);

  Rng rng(mix_seed(config.seed, 0x5e1f));
  for (int row = 0; row < config.self_rows; ++row) {
    VecX q(n);
    if (row % 2 == 0) {
      const bool biased = rng.uniform() < config.near_fraction;
      for (int attempt = 0;; ++attempt) {
        q.head(n_left) = sample_joints(system.left, rng);
        q.tail(n - n_left) = sample_joints(system.right, rng);
        if (!biased || attempt >= 200) break;
        if (self_distance_value(q, system) < config.near_threshold) break;
      }
    } else {
      // swapped copy of the previous sample
      const VecX prev = set.inputs.row(row - 1).transpose();
      q.head(n - n_left) = prev.tail(n - n_left);
      q.tail(n_left) = prev.head(n_left);
    }
    set.inputs.row(row) = q.transpose();
    set.targets(row, 0) = std::min(self_distance_value(q, system), config.target_cap);
  }
  make_split(set, config.validation_fraction, config.seed);
  return set;
}

VecX embed_arm_gradient(const VecX& grad, int arm, int total_dof) {
  VecX out = VecX::Zero(total_dof);
  if (arm == 0) {
    out.head(grad.size()) = grad;
  } else {
    out.tail(grad.size()) = grad;
  }
  return out;
}

PointCloud cloud_to_base_frame(const PointCloud& cloud, const KinematicChain& chain) {
  const Isometry inv = chain.base_pose.isometry().inverse();
  PointCloud out;
  out.points.reserve(cloud.size());
  out.labels = cloud.labels;
  for (const Vec3& p : cloud.points) out.points.push_back(inv * p);
  return out;
}

namespace {

HeldOutError score_env(const Mlp<double>& model, const KinematicChain& chain, int n,
                       std::uint64_t seed) {
  SampleConfig config;
  config.env_rows = n;
  config.seed = seed;
  const TrainingSet fresh = generate_env_training_data(chain, config);
  HeldOutError err;
  for (int i = 0; i < n; ++i) {
    const VecX x = fresh.inputs.row(i).transpose();
    const VecX pred = mlp_forward(model, x);
    const double d_pred = pred.minCoeff();
    const double d_true = fresh.targets.row(i).minCoeff();
    const double e = std::abs(d_pred - d_true);
    err.mae += e;
    err.max_error = std::max(err.max_error, e);
  }
  err.mae /= n;
  return err;
}

}  // namespace

HeldOutError env_heldout_error(const Mlp<double>& model, const KinematicChain& chain, int n,
                               std::uint64_t seed) {
  return score_env(model, chain, n, seed);
}

HeldOutError self_heldout_error(const Mlp<double>& model, const DualArmSystem& system, int n,
                                std::uint64_t seed) {
  SampleConfig config;
  config.self_rows = n;
  config.seed = seed;
  const TrainingSet fresh = generate_self_training_data(system, config);
  HeldOutError err;
  for (int i = 0; i < n; ++i) {
    const VecX x = fresh.inputs.row(i).transpose();
    const double e = std::abs(mlp_forward(model, x)[0] - fresh.targets(i, 0));
    err.mae += e;
    err.max_error = std::max(err.max_error, e);
  }
  err.mae /= n;
  return err;
}

void save_loss_csv(const LossHistory& history, const std::string& path) {
  std::string out = "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < history.train_mse.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(history.train_mse[e]) + "," +
           format_double(history.val_mse[e]) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace reflex
