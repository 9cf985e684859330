#pragma once

#include "reflex/rng.hpp"
#include "reflex/types.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace reflex {

/// Hidden-layer nonlinearities. Both are smooth sigmoid-based functions, so
/// input gradients are continuous everywhere (the barrier constraints consume
/// them). Silu (x * logistic(x)) is the default: it is unbounded and fits
/// distance regressions considerably faster than tanh.
enum class Activation : int { Tanh = 0, Silu = 1 };

/// Dense multilayer perceptron with a linear output layer. Inputs are
/// normalized inside the model: x_n = (x - shift) / scale. Templated on
/// scalar so training and in-loop inference can run in float while gradient
/// checks and serialization stay in double.
template <class Scalar>
struct Mlp {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<Mat> weights;  // weights[l]: (rows = layer output, cols = layer input)
  std::vector<Vec> biases;
  Vec input_shift;
  Vec input_scale;  // > 0 elementwise
  Activation activation = Activation::Silu;

  int input_arity() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_arity() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
  int hidden_layers() const { return static_cast<int>(weights.size()) - 1; }
};

namespace detail {

template <class Derived>
auto act_value(Activation act, const Eigen::ArrayBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  if (act == Activation::Tanh) return z.tanh().eval();
  return (z / (Scalar(1) + (-z).exp())).eval();
}

/// Derivative with respect to the pre-activation z.
template <class Derived>
auto act_deriv(Activation act, const Eigen::ArrayBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  if (act == Activation::Tanh) {
    return (Scalar(1) - z.tanh().square()).eval();
  }
  const auto sig = (Scalar(1) / (Scalar(1) + (-z).exp())).eval();
  return (sig * (Scalar(1) + z * (Scalar(1) - sig))).eval();
}

}  // namespace detail

using MlpF = Mlp<float>;
using MlpD = Mlp<double>;

/// Uniform-initialized network: `hidden` layers of `width` units. He-style
/// bounds for Silu, Xavier for tanh.
template <class Scalar>
Mlp<Scalar> make_mlp(int input, int output, int hidden, int width, std::uint64_t seed,
                     Activation activation = Activation::Silu) {
  if (input < 1 || output < 1 || hidden < 0 || (hidden > 0 && width < 1))
    throw ConfigError("make_mlp: bad shape");
  using Vec = typename Mlp<Scalar>::Vec;
  Mlp<Scalar> m;
  m.activation = activation;
  Rng rng(mix_seed(seed, 0x6d6c70));
  std::vector<int> sizes;
  sizes.push_back(input);
  for (int l = 0; l < hidden; ++l) sizes.push_back(width);
  sizes.push_back(output);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int nin = sizes[l], nout = sizes[l + 1];
    const double bound = activation == Activation::Silu ? std::sqrt(6.0 / nin)
                                                        : std::sqrt(6.0 / (nin + nout));
    typename Mlp<Scalar>::Mat W(nout, nin);
    for (int r = 0; r < nout; ++r)
      for (int c = 0; c < nin; ++c) W(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    m.weights.push_back(std::move(W));
    m.biases.push_back(Vec::Zero(nout));
  }
  m.input_shift = Vec::Zero(input);
  m.input_scale = Vec::Ones(input);
  return m;
}

template <class To, class From>
Mlp<To> cast_mlp(const Mlp<From>& src) {
  Mlp<To> out;
  for (const auto& W : src.weights) out.weights.push_back(W.template cast<To>());
  for (const auto& b : src.biases) out.biases.push_back(b.template cast<To>());
  out.input_shift = src.input_shift.template cast<To>();
  out.input_scale = src.input_scale.template cast<To>();
  out.activation = src.activation;
  return out;
}

template <class Scalar>
typename Mlp<Scalar>::Vec mlp_forward(const Mlp<Scalar>& m, const typename Mlp<Scalar>::Vec& x) {
  if (x.size() != m.input_arity())
    throw InvalidArity("mlp_forward: input arity " + std::to_string(x.size()) + ", expected " +
                       std::to_string(m.input_arity()));
  typename Mlp<Scalar>::Vec a = (x - m.input_shift).cwiseQuotient(m.input_scale);
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    a = (m.weights[l] * a + m.biases[l]).eval();
    if (l != last) a = detail::act_value(m.activation, a.array()).matrix();
  }
  return a;
}

/// Batched forward pass; X rows are samples. Returns (rows x output_arity).
template <class Scalar>
typename Mlp<Scalar>::Mat mlp_forward_batch(const Mlp<Scalar>& m,
                                            const typename Mlp<Scalar>::Mat& X) {
  if (X.cols() != m.input_arity()) throw InvalidArity("mlp_forward_batch: input arity mismatch");
  typename Mlp<Scalar>::Mat A =
      (X.rowwise() - m.input_shift.transpose()).array().rowwise() /
      m.input_scale.transpose().array();
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    typename Mlp<Scalar>::Mat Z = A * m.weights[l].transpose();
    Z.rowwise() += m.biases[l].transpose();
    A = (l == last) ? Z : detail::act_value(m.activation, Z.array()).matrix();
  }
  return A;
}

/// Exact reverse-mode Jacobian of the raw (unnormalized) input,
/// shape (output_arity x input_arity).
template <class Scalar>
typename Mlp<Scalar>::Mat mlp_input_jacobian(const Mlp<Scalar>& m,
                                             const typename Mlp<Scalar>::Vec& x) {
  if (x.size() != m.input_arity()) throw InvalidArity("mlp_input_jacobian: input arity mismatch");
  using Vec = typename Mlp<Scalar>::Vec;
  using Mat = typename Mlp<Scalar>::Mat;
  std::vector<Vec> zs;  // pre-activation values per hidden layer
  Vec a = (x - m.input_shift).cwiseQuotient(m.input_scale);
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    const Vec z = m.weights[l] * a + m.biases[l];
    zs.push_back(z);
    a = detail::act_value(m.activation, z.array()).matrix();
  }
  // Backward sweep carried as a matrix: rows = outputs.
  Mat D = m.weights[last];  // d out / d a_{last-1}
  for (std::size_t l = last; l-- > 0;) {
    const Vec deriv = detail::act_deriv(m.activation, zs[l].array()).matrix();
    D = (D.array().rowwise() * deriv.transpose().array()).matrix() * m.weights[l];
  }
  return (D.array().rowwise() / m.input_scale.transpose().array()).matrix();
}

/// Gradient of one output component with respect to the raw input.
template <class Scalar>
typename Mlp<Scalar>::Vec mlp_input_gradient(const Mlp<Scalar>& m,
                                             const typename Mlp<Scalar>::Vec& x,
                                             int output_index = 0) {
  if (x.size() != m.input_arity()) throw InvalidArity("mlp_input_gradient: input arity mismatch");
  if (output_index < 0 || output_index >= m.output_arity())
    throw InvalidArity("mlp_input_gradient: output index out of range");
  using Vec = typename Mlp<Scalar>::Vec;
  std::vector<Vec> zs;
  Vec a = (x - m.input_shift).cwiseQuotient(m.input_scale);
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    const Vec z = m.weights[l] * a + m.biases[l];
    zs.push_back(z);
    a = detail::act_value(m.activation, z.array()).matrix();
  }
  Vec delta = m.weights[last].row(output_index).transpose();
  for (std::size_t l = last; l-- > 0;) {
    delta = (delta.array() * detail::act_deriv(m.activation, zs[l].array())).matrix();
    delta = (m.weights[l].transpose() * delta).eval();
  }
  return delta.cwiseQuotient(m.input_scale);
}

// --- training ---

struct TrainingSet {
  MatX inputs;   // rows x input_arity
  MatX targets;  // rows x output_arity
  std::vector<int> train_indices;
  std::vector<int> val_indices;
  std::uint64_t seed = 0;
};

struct TrainHyper {
  double learning_rate = 1e-3;  // initial; decays per epoch
  double final_lr_fraction = 0.01;  // cosine-annealed floor as a fraction of learning_rate
  int batch_size = 1024;
  int epochs = 100;
  std::uint64_t seed = 0;  // mandatory: shared by init shuffling and Adam order
};

struct LossHistory {
  std::vector<double> train_mse;  // per epoch, m^2
  std::vector<double> val_mse;
};

namespace detail {

template <class Scalar>
typename Mlp<Scalar>::Mat gather_rows(const MatX& src, const std::vector<int>& idx, int begin,
                                      int count) {
  typename Mlp<Scalar>::Mat out(count, src.cols());
  for (int r = 0; r < count; ++r)
    out.row(r) = src.row(idx[static_cast<std::size_t>(begin + r)]).template cast<Scalar>();
  return out;
}

}  // namespace detail

/// Adam-minimized mean squared error. Deterministic for a fixed seed: batch
/// order, initialization, and update order are all derived from it. Throws
/// TrainingDiverged when the loss stops being finite.
template <class Scalar>
LossHistory mlp_train(Mlp<Scalar>& m, const TrainingSet& set, const TrainHyper& hyper) {
  using Mat = typename Mlp<Scalar>::Mat;
  using Vec = typename Mlp<Scalar>::Vec;
  if (set.inputs.cols() != m.input_arity() || set.targets.cols() != m.output_arity())
    throw InvalidArity("mlp_train: set shape does not match model");
  if (set.inputs.rows() != set.targets.rows()) throw InvalidArity("mlp_train: rows mismatch");

  const std::size_t n_layers = m.weights.size();
  std::vector<Mat> mW(n_layers), vW(n_layers);
  std::vector<Vec> mB(n_layers), vB(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    mW[l] = Mat::Zero(m.weights[l].rows(), m.weights[l].cols());
    vW[l] = mW[l];
    mB[l] = Vec::Zero(m.biases[l].size());
    vB[l] = mB[l];
  }
  const Scalar beta1 = Scalar(0.9), beta2 = Scalar(0.999), eps = Scalar(1e-8);
  long adam_step = 0;

  std::vector<int> order = set.train_indices;
  LossHistory history;
  std::vector<Mat> acts(n_layers + 1), zs(n_layers), deltas(n_layers);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double anneal =
        hyper.epochs > 1 ? 0.5 * (1.0 + std::cos(M_PI * epoch / (hyper.epochs - 1))) : 1.0;
    const Scalar lr = static_cast<Scalar>(
        hyper.learning_rate *
        (hyper.final_lr_fraction + (1.0 - hyper.final_lr_fraction) * anneal));
    Rng rng(mix_seed(hyper.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    long epoch_terms = 0;
    for (int begin = 0; begin < static_cast<int>(order.size()); begin += hyper.batch_size) {
      const int count = std::min<int>(hyper.batch_size, static_cast<int>(order.size()) - begin);
      Mat X = detail::gather_rows<Scalar>(set.inputs, order, begin, count);
      Mat Y = detail::gather_rows<Scalar>(set.targets, order, begin, count);

      // forward, keeping pre- and post-activations
      acts[0] = (X.rowwise() - m.input_shift.transpose()).array().rowwise() /
                m.input_scale.transpose().array();
      for (std::size_t l = 0; l < n_layers; ++l) {
        Mat Z = acts[l] * m.weights[l].transpose();
        Z.rowwise() += m.biases[l].transpose();
        if (l == n_layers - 1) {
          acts[l + 1] = std::move(Z);
        } else {
          acts[l + 1] = detail::act_value(m.activation, Z.array()).matrix();
          zs[l] = std::move(Z);
        }
      }

      const Mat err = acts[n_layers] - Y;
      const double batch_loss = static_cast<double>(err.squaredNorm()) / err.size();
      if (!std::isfinite(batch_loss)) throw TrainingDiverged("loss became non-finite");
      epoch_loss += batch_loss * err.size();
      epoch_terms += err.size();

      // backward
      deltas[n_layers - 1] = err * Scalar(2.0 / err.size());
      for (std::size_t l = n_layers - 1; l-- > 0;) {
        deltas[l] = (deltas[l + 1] * m.weights[l + 1]).array() *
                    detail::act_deriv(m.activation, zs[l].array());
      }

      ++adam_step;
      const Scalar corr1 = Scalar(1) - std::pow(beta1, Scalar(adam_step));
      const Scalar corr2 = Scalar(1) - std::pow(beta2, Scalar(adam_step));
      for (std::size_t l = 0; l < n_layers; ++l) {
        Mat gW = deltas[l].transpose() * acts[l];
        Vec gB = deltas[l].colwise().sum().transpose();
        mW[l] = beta1 * mW[l] + (Scalar(1) - beta1) * gW;
        vW[l] = (beta2 * vW[l]).array() + (Scalar(1) - beta2) * gW.array().square();
        mB[l] = beta1 * mB[l] + (Scalar(1) - beta1) * gB;
        vB[l] = (beta2 * vB[l]).array() + (Scalar(1) - beta2) * gB.array().square();
        m.weights[l].array() -=
            lr * (mW[l].array() / corr1) / ((vW[l].array() / corr2).sqrt() + eps);
        m.biases[l].array() -=
            lr * (mB[l].array() / corr1) / ((vB[l].array() / corr2).sqrt() + eps);
      }
    }
    history.train_mse.push_back(epoch_terms > 0 ? epoch_loss / epoch_terms : 0.0);

    // validation loss
    double val_loss = 0.0;
    long val_terms = 0;
    const int vb = 8192;
    for (int begin = 0; begin < static_cast<int>(set.val_indices.size()); begin += vb) {
      const int count = std::min<int>(vb, static_cast<int>(set.val_indices.size()) - begin);
      Mat X = detail::gather_rows<Scalar>(set.inputs, set.val_indices, begin, count);
      Mat Y = detail::gather_rows<Scalar>(set.targets, set.val_indices, begin, count);
      const Mat err = mlp_forward_batch(m, X) - Y;
      val_loss += static_cast<double>(err.squaredNorm());
      val_terms += err.size();
    }
    history.val_mse.push_back(val_terms > 0 ? val_loss / val_terms : 0.0);
    if (!history.val_mse.empty() && !std::isfinite(history.val_mse.back()))
      throw TrainingDiverged("validation loss became non-finite");
  }
  return history;
}

// --- serialization (64-bit floats in the file regardless of Scalar) ---

namespace detail {

constexpr std::uint64_t kMlpMagic = 0x31504c4d584c4652ull;  // "RFLXMLP1"

inline void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace detail

template <class Scalar>
void save_mlp(const Mlp<Scalar>& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write model file: " + path);
  detail::put_u64(out, detail::kMlpMagic);
  detail::put_u32(out, 1);  // version
  detail::put_u32(out, static_cast<std::uint32_t>(m.activation));
  detail::put_u32(out, static_cast<std::uint32_t>(m.weights.size()));
  for (const auto& W : m.weights) {
    detail::put_u32(out, static_cast<std::uint32_t>(W.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(W.cols()));
  }
  for (Eigen::Index i = 0; i < m.input_shift.size(); ++i)
    detail::put_f64(out, static_cast<double>(m.input_shift[i]));
  for (Eigen::Index i = 0; i < m.input_scale.size(); ++i)
    detail::put_f64(out, static_cast<double>(m.input_scale[i]));
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const auto& W = m.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) detail::put_f64(out, static_cast<double>(W(r, c)));
    for (Eigen::Index i = 0; i < m.biases[l].size(); ++i)
      detail::put_f64(out, static_cast<double>(m.biases[l][i]));
  }
  if (!out) throw ConfigError("model file write failed: " + path);
}

template <class Scalar>
Mlp<Scalar> load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model file: " + path);
  if (detail::get_u64(in) != detail::kMlpMagic) throw ConfigError("not a model file: " + path);
  if (detail::get_u32(in) != 1) throw ConfigError("unsupported model file version: " + path);
  const std::uint32_t act = detail::get_u32(in);
  if (act > 1) throw ConfigError("unsupported activation id: " + path);
  const std::uint32_t n_layers = detail::get_u32(in);
  if (n_layers == 0 || n_layers > 64) throw ConfigError("corrupt model file: " + path);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(n_layers);
  for (auto& s : shapes) {
    s.first = detail::get_u32(in);
    s.second = detail::get_u32(in);
  }
  Mlp<Scalar> m;
  m.activation = static_cast<Activation>(act);
  const std::uint32_t input = shapes.front().second;
  m.input_shift.resize(input);
  m.input_scale.resize(input);
  for (std::uint32_t i = 0; i < input; ++i)
    m.input_shift[i] = static_cast<Scalar>(detail::get_f64(in));
  for (std::uint32_t i = 0; i < input; ++i)
    m.input_scale[i] = static_cast<Scalar>(detail::get_f64(in));
  for (const auto& s : shapes) {
    typename Mlp<Scalar>::Mat W(s.first, s.second);
    for (std::uint32_t r = 0; r < s.first; ++r)
      for (std::uint32_t c = 0; c < s.second; ++c)
        W(r, c) = static_cast<Scalar>(detail::get_f64(in));
    typename Mlp<Scalar>::Vec b(s.first);
    for (std::uint32_t i = 0; i < s.first; ++i) b[i] = static_cast<Scalar>(detail::get_f64(in));
    m.weights.push_back(std::move(W));
    m.biases.push_back(std::move(b));
  }
  if (!in) throw ConfigError("model file truncated: " + path);
  return m;
}

void save_loss_csv(const LossHistory& history, const std::string& path);

}  // namespace reflex
