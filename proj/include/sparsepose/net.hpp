#pragma once

// Pose network: ReLU embedding -> stacked (bi)LSTM -> linear head emitting a
// 6D rotation per joint. Forward pass, backpropagation through time, the
// rotation + joint-position loss, Adam training and the weight file.
//
// Matrices are feature-major: a batch of `batch` windows of `steps` frames is
// one (features x steps*batch) matrix whose column t*batch + b holds frame t of
// window b. Gate order is (input, forget, cell, output) with separate input and
// recurrent bias vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sparsepose/binio.hpp"
#include "sparsepose/body.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"
#include "sparsepose/synth.hpp"

namespace sparsepose::net {

constexpr int kPoseDim = kNumJoints * 6;

struct ModelConfig {
  int input_dim = kInputDim;
  int embed_dim = 512;
  int hidden_dim = 512;
  int layers = 2;
  bool bidirectional = true;
  int output_dim = kPoseDim;

  int directions() const { return bidirectional ? 2 : 1; }
  int layer_input(int layer) const { return layer == 0 ? embed_dim : directions() * hidden_dim; }

  void validate() const {
    if (input_dim <= 0 || embed_dim <= 0 || hidden_dim <= 0 || layers <= 0) {
      throw InvalidConfig("model dimensions must be positive");
    }
    if (output_dim != kPoseDim) throw InvalidConfig("output_dim must be 24 x 6 = 144");
  }

  static ModelConfig toy(int embed, int hidden) {
    ModelConfig c;
    c.embed_dim = embed;
    c.hidden_dim = hidden;
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form trainable parameter count.
inline std::size_t parameter_count(const ModelConfig& c) {
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  std::size_t n = static_cast<std::size_t>(c.embed_dim) * (static_cast<std::size_t>(c.input_dim) + 1);
  for (int l = 0; l < c.layers; ++l) {
    const auto in = static_cast<std::size_t>(c.layer_input(l));
    n += static_cast<std::size_t>(c.directions()) * (4 * h * in + 4 * h * h + 8 * h);
  }
  n += static_cast<std::size_t>(c.output_dim) * (static_cast<std::size_t>(c.directions()) * h + 1);
  return n;
}

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct LstmDirection {
  Matrix<T> w_ih;  // 4h x in
  Matrix<T> w_hh;  // 4h x h
  Matrix<T> b_ih;  // 4h x 1
  Matrix<T> b_hh;  // 4h x 1
};

template <typename T>
struct ModelWeights {
  ModelConfig config;
  Matrix<T> embed_w;  // embed x input
  Matrix<T> embed_b;  // embed x 1
  std::vector<LstmDirection<T>> lstm;  // index layer * directions + dir
  Matrix<T> head_w;   // output x (directions * hidden)
  Matrix<T> head_b;   // output x 1

  static ModelWeights zeros(const ModelConfig& c) {
    c.validate();
    ModelWeights w;
    w.config = c;
    const int h = c.hidden_dim;
    w.embed_w = Matrix<T>::Zero(c.embed_dim, c.input_dim);
    w.embed_b = Matrix<T>::Zero(c.embed_dim, 1);
    for (int l = 0; l < c.layers; ++l) {
      for (int d = 0; d < c.directions(); ++d) {
        w.lstm.push_back({Matrix<T>::Zero(4 * h, c.layer_input(l)), Matrix<T>::Zero(4 * h, h), Matrix<T>::Zero(4 * h, 1),
                          Matrix<T>::Zero(4 * h, 1)});
      }
    }
    w.head_w = Matrix<T>::Zero(c.output_dim, c.directions() * h);
    w.head_b = Matrix<T>::Zero(c.output_dim, 1);
    return w;
  }

  /// Uniform in +-1/sqrt(fan_in) of the matrix each tensor feeds, seeded.
  static ModelWeights initialize(const ModelConfig& c, std::uint64_t seed) {
    ModelWeights w = zeros(c);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Matrix<T>& m, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(u(rng));
    };
    fill(w.embed_w, c.input_dim);
    fill(w.embed_b, c.input_dim);
    for (int l = 0; l < c.layers; ++l) {
      for (int d = 0; d < c.directions(); ++d) {
        auto& cell = w.lstm[static_cast<std::size_t>(l * c.directions() + d)];
        fill(cell.w_ih, c.layer_input(l));
        fill(cell.w_hh, c.hidden_dim);
        fill(cell.b_ih, c.layer_input(l));
        fill(cell.b_hh, c.hidden_dim);
      }
    }
    fill(w.head_w, c.directions() * c.hidden_dim);
    fill(w.head_b, c.directions() * c.hidden_dim);
    return w;
  }

  const LstmDirection<T>& cell(int layer, int dir) const {
    return lstm[static_cast<std::size_t>(layer * config.directions() + dir)];
  }
  LstmDirection<T>& cell(int layer, int dir) { return lstm[static_cast<std::size_t>(layer * config.directions() + dir)]; }

  /// Tensor names, in serialization order.
  std::vector<std::string> tensor_names() const {
    std::vector<std::string> names = {"embed.weight", "embed.bias"};
    for (int l = 0; l < config.layers; ++l) {
      for (int d = 0; d < config.directions(); ++d) {
        const std::string suffix = "_l" + std::to_string(l) + (d == 1 ? "_reverse" : "");
        for (const char* base : {"lstm.weight_ih", "lstm.weight_hh", "lstm.bias_ih", "lstm.bias_hh"})
          names.push_back(base + suffix);
      }
    }
    names.push_back("head.weight");
    names.push_back("head.bias");
    return names;
  }

  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out = {&embed_w, &embed_b};
    for (auto& c : lstm) {
      out.push_back(&c.w_ih);
      out.push_back(&c.w_hh);
      out.push_back(&c.b_ih);
      out.push_back(&c.b_hh);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }
  std::vector<const Matrix<T>*> tensors() const {
    auto ptrs = const_cast<ModelWeights*>(this)->tensors();
    return {ptrs.begin(), ptrs.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix<T>* m : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out = ModelWeights<U>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  void set_zero() {
    for (Matrix<T>* m : tensors()) m->setZero();
  }
};

namespace detail {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using T = typename Derived::Scalar;
  return (T(1) + (-x).exp()).inverse();
}

}  // namespace detail

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct Activations {
  struct Direction {
    Matrix<T> gates;  // 4h x TB, post-activation (i, f, g, o)
    Matrix<T> cell;   // h x TB
    Matrix<T> cell_tanh;
    Matrix<T> hidden;  // h x TB
  };
  int steps = 0;
  int batch = 0;
  Matrix<T> input;                  // in x TB
  Matrix<T> embed;                  // embed x TB, post-ReLU
  std::vector<Direction> dirs;      // layer * directions + dir
  std::vector<Matrix<T>> layer_out; // (directions * h) x TB per layer
  Matrix<T> output;                 // out x TB
};

namespace detail {

template <typename T>
void run_direction(const LstmDirection<T>& cell, const Matrix<T>& in, int steps, int batch, bool reverse,
                   typename Activations<T>::Direction& cache) {
  const auto h = cell.w_hh.cols();
  const Eigen::Index tb = static_cast<Eigen::Index>(steps) * batch;
  Matrix<T> proj = cell.w_ih * in;
  proj.colwise() += (cell.b_ih + cell.b_hh).col(0);
  cache.gates.resize(4 * h, tb);
  cache.cell.resize(h, tb);
  cache.cell_tanh.resize(h, tb);
  cache.hidden.resize(h, tb);
  Matrix<T> h_prev = Matrix<T>::Zero(h, batch);
  Matrix<T> c_prev = Matrix<T>::Zero(h, batch);
  Matrix<T> z(4 * h, batch);
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
    z.noalias() = cell.w_hh * h_prev;
    z += proj.middleCols(col, batch);
    auto gates = cache.gates.middleCols(col, batch);
    gates.topRows(h) = sigmoid(z.topRows(h).array()).matrix();
    gates.middleRows(h, h) = sigmoid(z.middleRows(h, h).array()).matrix();
    gates.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
    gates.bottomRows(h) = sigmoid(z.bottomRows(h).array()).matrix();
    auto c = cache.cell.middleCols(col, batch);
    c = (gates.middleRows(h, h).array() * c_prev.array() + gates.topRows(h).array() * gates.middleRows(2 * h, h).array())
            .matrix();
    cache.cell_tanh.middleCols(col, batch) = c.array().tanh().matrix();
    cache.hidden.middleCols(col, batch) =
        (gates.bottomRows(h).array() * cache.cell_tanh.middleCols(col, batch).array()).matrix();
    h_prev = cache.hidden.middleCols(col, batch);
    c_prev = c;
  }
}

template <typename T>
void run_direction_backward(const LstmDirection<T>& cell, const typename Activations<T>::Direction& cache,
                            const Matrix<T>& in, const Matrix<T>& d_hidden, int steps, int batch, bool reverse,
                            LstmDirection<T>& grad, Matrix<T>& d_in) {
  const auto h = cell.w_hh.cols();
  const Eigen::Index tb = static_cast<Eigen::Index>(steps) * batch;
  Matrix<T> dz(4 * h, tb);
  Matrix<T> h_prev_all = Matrix<T>::Zero(h, tb);
  Matrix<T> dh_next = Matrix<T>::Zero(h, batch);
  Matrix<T> dc_next = Matrix<T>::Zero(h, batch);
  Matrix<T> zero = Matrix<T>::Zero(h, batch);
  for (int s = steps - 1; s >= 0; --s) {
    const int t = reverse ? steps - 1 - s : s;
    const int tp = reverse ? t + 1 : t - 1;
    const bool has_prev = tp >= 0 && tp < steps;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
    const Eigen::Index pcol = static_cast<Eigen::Index>(tp) * batch;
    const auto gates = cache.gates.middleCols(col, batch);
    const auto i = gates.topRows(h).array();
    const auto f = gates.middleRows(h, h).array();
    const auto g = gates.middleRows(2 * h, h).array();
    const auto o = gates.bottomRows(h).array();
    const auto tc = cache.cell_tanh.middleCols(col, batch).array();
    const Matrix<T> c_prev_m = has_prev ? Matrix<T>(cache.cell.middleCols(pcol, batch)) : zero;
    const auto c_prev = c_prev_m.array();
    if (has_prev) h_prev_all.middleCols(col, batch) = cache.hidden.middleCols(pcol, batch);

    const Matrix<T> dh = d_hidden.middleCols(col, batch) + dh_next;
    const auto dha = dh.array();
    const Matrix<T> dc = (dha * o * (T(1) - tc * tc) + dc_next.array()).matrix();
    const auto dca = dc.array();
    auto dzt = dz.middleCols(col, batch);
    dzt.topRows(h) = (dca * g * i * (T(1) - i)).matrix();
    dzt.middleRows(h, h) = (dca * c_prev * f * (T(1) - f)).matrix();
    dzt.middleRows(2 * h, h) = (dca * i * (T(1) - g * g)).matrix();
    dzt.bottomRows(h) = (dha * tc * o * (T(1) - o)).matrix();
    dc_next = (dca * f).matrix();
    dh_next.noalias() = cell.w_hh.transpose() * dzt;
  }
  grad.w_ih.noalias() += dz * in.transpose();
  grad.w_hh.noalias() += dz * h_prev_all.transpose();
  const Matrix<T> db = dz.rowwise().sum();
  grad.b_ih += db;
  grad.b_hh += db;
  d_in.noalias() += cell.w_ih.transpose() * dz;
}

}  // namespace detail

/// `input` is (input_dim x steps*batch).
template <typename T>
void forward_batch(const ModelWeights<T>& w, const Matrix<T>& input, int steps, int batch, Activations<T>& act) {
  const ModelConfig& c = w.config;
  if (input.rows() != c.input_dim || input.cols() != static_cast<Eigen::Index>(steps) * batch || steps < 1 || batch < 1) {
    throw ShapeMismatch("network input must be " + std::to_string(c.input_dim) + " x steps*batch");
  }
  act.steps = steps;
  act.batch = batch;
  act.input = input;
  act.embed.noalias() = w.embed_w * input;
  act.embed.colwise() += w.embed_b.col(0);
  act.embed = act.embed.cwiseMax(T(0));
  act.dirs.resize(static_cast<std::size_t>(c.layers * c.directions()));
  act.layer_out.resize(static_cast<std::size_t>(c.layers));
  const Matrix<T>* layer_in = &act.embed;
  for (int l = 0; l < c.layers; ++l) {
    Matrix<T>& out = act.layer_out[static_cast<std::size_t>(l)];
    out.resize(c.directions() * c.hidden_dim, input.cols());
    for (int d = 0; d < c.directions(); ++d) {
      auto& cache = act.dirs[static_cast<std::size_t>(l * c.directions() + d)];
      detail::run_direction(w.cell(l, d), *layer_in, steps, batch, d == 1, cache);
      out.middleRows(d * c.hidden_dim, c.hidden_dim) = cache.hidden;
    }
    layer_in = &out;
  }
  act.output.noalias() = w.head_w * *layer_in;
  act.output.colwise() += w.head_b.col(0);
}

/// Accumulates parameter gradients into `grad` given dL/doutput (out x TB).
template <typename T>
void backward_batch(const ModelWeights<T>& w, const Activations<T>& act, const Matrix<T>& d_output,
                    ModelWeights<T>& grad) {
  const ModelConfig& c = w.config;
  const Matrix<T>& top = act.layer_out.back();
  grad.head_w.noalias() += d_output * top.transpose();
  grad.head_b += d_output.rowwise().sum();
  Matrix<T> d_layer = w.head_w.transpose() * d_output;
  for (int l = c.layers - 1; l >= 0; --l) {
    const Matrix<T>& in = l == 0 ? act.embed : act.layer_out[static_cast<std::size_t>(l - 1)];
    Matrix<T> d_in = Matrix<T>::Zero(in.rows(), in.cols());
    for (int d = 0; d < c.directions(); ++d) {
      const Matrix<T> d_hidden = d_layer.middleRows(d * c.hidden_dim, c.hidden_dim);
      detail::run_direction_backward(w.cell(l, d), act.dirs[static_cast<std::size_t>(l * c.directions() + d)], in,
                                     d_hidden, act.steps, act.batch, d == 1, grad.cell(l, d), d_in);
    }
    d_layer = std::move(d_in);
  }
  const Matrix<T> d_pre = (act.embed.array() > T(0)).select(d_layer, Matrix<T>::Zero(d_layer.rows(), d_layer.cols()));
  grad.embed_w.noalias() += d_pre * act.input.transpose();
  grad.embed_b += d_pre.rowwise().sum();
}

/// Window given frame-major (steps x input_dim); returns steps x output_dim.
template <typename T>
Matrix<T> forward(const ModelWeights<T>& w, const Matrix<T>& window) {
  if (window.cols() != w.config.input_dim || window.rows() < 1) {
    throw ShapeMismatch("window must be T x " + std::to_string(w.config.input_dim) + " with T >= 1");
  }
  Activations<T> act;
  forward_batch(w, Matrix<T>(window.transpose()), static_cast<int>(window.rows()), 1, act);
  return act.output.transpose();
}

// ---------------------------------------------------------------------------
// Loss: MSE over the 144 rotation parameters + MSE over the 24x3 root-relative
// joint positions obtained by forward kinematics of the decoded prediction.
// Always evaluated in double.
// ---------------------------------------------------------------------------

using PoseVector = Eigen::Matrix<double, kPoseDim, 1>;

struct FrameTarget {
  PoseVector rot6d = PoseVector::Zero();
  JointArray<Vec3> positions{};

  static FrameTarget from_pose(const Pose& p, const Skeleton& skel) {
    FrameTarget t;
    for (int j = 0; j < kNumJoints; ++j) t.rot6d.segment<6>(6 * j) = matrix_to_rot6d(p.local_rot[j]);
    t.positions = forward_kinematics(p, skel).global_pos;
    return t;
  }
};

inline PoseVector encode_pose(const Pose& p) {
  PoseVector v;
  for (int j = 0; j < kNumJoints; ++j) v.segment<6>(6 * j) = matrix_to_rot6d(p.local_rot[j]);
  return v;
}

/// Decodes 144 values to a pose. Joints whose 6D value is degenerate take the
/// rotation from `fallback` (identity when none is given).
inline Pose decode_pose(const PoseVector& v, const Pose* fallback = nullptr) {
  Pose p;
  for (int j = 0; j < kNumJoints; ++j) {
    try {
      p.local_rot[j] = rot6d_to_matrix(v.segment<6>(6 * j));
    } catch (const DegenerateRotation&) {
      p.local_rot[j] = fallback ? fallback->local_rot[j] : RotMat::Identity();
    }
  }
  return p;
}

/// Adds one frame's loss `rot_weight * |pred - gt|^2 + pos_weight * |pos - gt_pos|^2`
/// and, when `grad` is non-null, writes its gradient w.r.t. pred.
inline double frame_loss(const PoseVector& pred, const FrameTarget& target, const Skeleton& skel, double rot_weight,
                         double pos_weight, PoseVector* grad) {
  const PoseVector diff = pred - target.rot6d;
  double loss = rot_weight * diff.squaredNorm();
  Pose pose;
  for (int j = 0; j < kNumJoints; ++j) pose.local_rot[j] = gram_schmidt(pred.segment<6>(6 * j));
  const FkResult fk = forward_kinematics(pose, skel);
  JointArray<Vec3> dpos{};
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3 e = fk.global_pos[j] - target.positions[j];
    loss += pos_weight * e.squaredNorm();
    dpos[j] = 2.0 * pos_weight * e;
  }
  if (grad) {
    *grad = 2.0 * rot_weight * diff;
    JointArray<RotMat> zero_rot;
    zero_rot.fill(RotMat::Zero());
    const auto dlocal = forward_kinematics_backward(pose, skel, fk, dpos, zero_rot);
    for (int j = 0; j < kNumJoints; ++j)
      grad->segment<6>(6 * j) += gram_schmidt_backward(pred.segment<6>(6 * j), dlocal[j]);
  }
  return loss;
}

/// Loss of one window: pred is (T x 144), gt has T poses.
inline double loss(const Matrix<double>& pred, std::span<const Pose> gt, const Skeleton& skel) {
  if (pred.cols() != kPoseDim || pred.rows() != static_cast<Eigen::Index>(gt.size()) || gt.empty()) {
    throw ShapeMismatch("prediction must be T x 144 with T ground-truth poses");
  }
  const double steps = static_cast<double>(gt.size());
  double total = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    const PoseVector p = pred.row(static_cast<Eigen::Index>(t)).transpose();
    total += frame_loss(p, FrameTarget::from_pose(gt[t], skel), skel, 1.0 / (steps * kPoseDim),
                        1.0 / (steps * kNumJoints * 3), nullptr);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Batched loss + gradient for training
// ---------------------------------------------------------------------------

struct Window {
  int steps = 0;
  Matrix<double> inputs;             // input_dim x steps
  std::vector<FrameTarget> targets;  // steps
};

template <typename T>
struct BatchResult {
  double loss = 0.0;
};

/// Loss averaged over windows (each window's loss is a mean over its own
/// elements). Gradients are accumulated into `grad` scaled by `weight`.
template <typename T>
double accumulate_batch(const ModelWeights<T>& w, std::span<const Window* const> windows, const Skeleton& skel,
                        double weight, ModelWeights<T>& grad, Activations<T>& act) {
  const int steps = windows.front()->steps;
  const int batch = static_cast<int>(windows.size());
  Matrix<T> input(w.config.input_dim, static_cast<Eigen::Index>(steps) * batch);
  for (int b = 0; b < batch; ++b) {
    if (windows[static_cast<std::size_t>(b)]->steps != steps) throw ShapeMismatch("batched windows must share a length");
    for (int t = 0; t < steps; ++t)
      input.col(static_cast<Eigen::Index>(t) * batch + b) = windows[static_cast<std::size_t>(b)]->inputs.col(t).template cast<T>();
  }
  forward_batch(w, input, steps, batch, act);
  Matrix<T> d_out(w.config.output_dim, input.cols());
  const double rot_w = weight / (static_cast<double>(steps) * kPoseDim);
  const double pos_w = weight / (static_cast<double>(steps) * kNumJoints * 3);
  double total = 0.0;
  PoseVector g;
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * batch + b;
      const PoseVector pred = act.output.col(col).template cast<double>();
      total += frame_loss(pred, windows[static_cast<std::size_t>(b)]->targets[static_cast<std::size_t>(t)], skel, rot_w,
                          pos_w, &g);
      d_out.col(col) = g.cast<T>();
    }
  }
  backward_batch(w, act, d_out, grad);
  return total;
}

/// Loss and gradient of a single window (steps x input_dim inputs).
template <typename T>
std::pair<double, ModelWeights<T>> loss_and_gradient(const ModelWeights<T>& w, const Matrix<double>& window,
                                                     std::span<const Pose> gt, const Skeleton& skel) {
  if (window.rows() != static_cast<Eigen::Index>(gt.size())) throw ShapeMismatch("window and ground truth differ in length");
  Window win;
  win.steps = static_cast<int>(window.rows());
  win.inputs = window.transpose();
  for (const Pose& p : gt) win.targets.push_back(FrameTarget::from_pose(p, skel));
  ModelWeights<T> grad = ModelWeights<T>::zeros(w.config);
  Activations<T> act;
  const Window* ptr = &win;
  const double l = accumulate_batch<T>(w, std::span<const Window* const>(&ptr, 1), skel, 1.0, grad, act);
  return {l, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Adam + training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch = 256;
  double lr = 3e-4;
  int window = 125;
  int epochs = 80;
  long max_steps = -1;  // stop early after this many optimizer steps when >= 0
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (batch <= 0 || window <= 0 || epochs <= 0 || !(lr > 0.0)) throw InvalidConfig("invalid training configuration");
  }
};

template <typename T>
class Adam {
 public:
  Adam(const ModelConfig& c, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(ModelWeights<T>::zeros(c)), v_(ModelWeights<T>::zeros(c)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelWeights<T>& w, const ModelWeights<T>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto params = w.tensors();
    auto grads = grad.tensors();
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto m = ms[k]->array();
      auto v = vs[k]->array();
      const auto g = grads[k]->array();
      m = T(beta1_) * m + T(1.0 - beta1_) * g;
      v = T(beta2_) * v + T(1.0 - beta2_) * g * g;
      params[k]->array() -= T(lr_) * (m / T(c1)) / ((v / T(c2)).sqrt() + T(eps_));
    }
  }

  long steps() const { return t_; }

 private:
  ModelWeights<T> m_;
  ModelWeights<T> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Paired network inputs (T x input_dim) and ground-truth poses.
struct TrainingSequence {
  Matrix<double> inputs;
  std::vector<Pose> poses;
};

/// Non-overlapping chunks of `window` frames; a sequence shorter than the
/// window becomes one window of its own length, a shorter tail is dropped.
inline std::vector<Window> make_windows(std::span<const TrainingSequence> data, int window, const Skeleton& skel) {
  std::vector<Window> out;
  for (const TrainingSequence& s : data) {
    const auto n = static_cast<int>(s.inputs.rows());
    if (n == 0) continue;
    if (static_cast<std::size_t>(n) != s.poses.size()) throw ShapeMismatch("training sequence inputs and poses differ in length");
    const int len = std::min(window, n);
    for (int start = 0; start + len <= n; start += len) {
      Window w;
      w.steps = len;
      w.inputs = s.inputs.middleRows(start, len).transpose();
      for (int t = 0; t < len; ++t) w.targets.push_back(FrameTarget::from_pose(s.poses[static_cast<std::size_t>(start + t)], skel));
      out.push_back(std::move(w));
    }
  }
  return out;
}

template <typename T>
struct TrainResult {
  ModelWeights<T> weights;
  std::vector<double> epoch_loss;  // mean batch loss per (possibly partial) epoch
  std::vector<double> step_loss;
  long steps = 0;
};

using StepCallback = std::function<void(long step, int epoch, double loss)>;

template <typename T>
TrainResult<T> train(ModelWeights<T> weights, std::span<const TrainingSequence> data, const TrainConfig& cfg,
                     const Skeleton& skel, const StepCallback& on_step = {}) {
  cfg.validate();
  const std::vector<Window> windows = make_windows(data, cfg.window, skel);
  if (windows.empty()) throw EmptyDataset("no training windows");

  TrainResult<T> result;
  Adam<T> adam(weights.config, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  ModelWeights<T> grad = ModelWeights<T>::zeros(weights.config);
  Activations<T> act;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own index draw so the order is identical across standard libraries.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      if (cfg.max_steps >= 0 && result.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double n = static_cast<double>(end - start);
      // group by window length, preserving shuffled order within a group
      std::vector<std::vector<const Window*>> groups;
      std::vector<int> lengths;
      for (std::size_t k = start; k < end; ++k) {
        const Window* w = &windows[order[k]];
        auto it = std::find(lengths.begin(), lengths.end(), w->steps);
        if (it == lengths.end()) {
          lengths.push_back(w->steps);
          groups.push_back({w});
        } else {
          groups[static_cast<std::size_t>(it - lengths.begin())].push_back(w);
        }
      }
      grad.set_zero();
      double batch_loss = 0.0;
      for (const auto& g : groups) {
        batch_loss += accumulate_batch<T>(weights, std::span<const Window* const>(g), skel, 1.0 / n, grad, act);
      }
      adam.step(weights, grad);
      ++result.steps;
      result.step_loss.push_back(batch_loss);
      epoch_sum += batch_loss;
      ++epoch_batches;
      if (on_step) on_step(result.steps, epoch, batch_loss);
    }
    if (epoch_batches > 0) result.epoch_loss.push_back(epoch_sum / epoch_batches);
    if (cfg.max_steps >= 0 && result.steps >= cfg.max_steps) break;
  }
  result.weights = std::move(weights);
  return result;
}

template <typename T>
TrainResult<T> train(std::span<const TrainingSequence> data, const ModelConfig& model, const TrainConfig& cfg,
                     const Skeleton& skel, const StepCallback& on_step = {}) {
  return train<T>(ModelWeights<T>::initialize(model, cfg.seed), data, cfg, skel, on_step);
}

// ---------------------------------------------------------------------------
// Sequence prediction (evaluation helpers)
// ---------------------------------------------------------------------------

/// Online protocol for a whole sequence: output frame t comes from the last
/// row of a forward pass over the `window` frames ending at t, zero-padded at
/// the start. Windows are evaluated in batches; the result equals running an
/// online estimator tick by tick.
template <typename T>
Matrix<double> predict_online(const ModelWeights<T>& w, const Matrix<double>& inputs, int window = 125,
                              int batch = 64) {
  const auto n = static_cast<int>(inputs.rows());
  Matrix<double> out(n, w.config.output_dim);
  Activations<T> act;
  for (int start = 0; start < n; start += batch) {
    const int b = std::min(batch, n - start);
    Matrix<T> x = Matrix<T>::Zero(w.config.input_dim, static_cast<Eigen::Index>(window) * b);
    for (int k = 0; k < b; ++k) {
      const int last = start + k;
      for (int s = 0; s < window; ++s) {
        const int frame = last - (window - 1) + s;
        if (frame >= 0) x.col(static_cast<Eigen::Index>(s) * b + k) = inputs.row(frame).transpose().template cast<T>();
      }
    }
    forward_batch(w, x, window, b, act);
    for (int k = 0; k < b; ++k)
      out.row(start + k) = act.output.col(static_cast<Eigen::Index>(window - 1) * b + k).transpose().template cast<double>();
  }
  return out;
}

/// Decodes every row; degenerate joints fall back to the previous frame.
inline std::vector<Pose> decode_sequence(const Matrix<double>& outputs) {
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(outputs.rows()));
  for (Eigen::Index t = 0; t < outputs.rows(); ++t) {
    const PoseVector v = outputs.row(t).transpose();
    poses.push_back(decode_pose(v, poses.empty() ? nullptr : &poses.back()));
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Weight file, little-endian:
//   "SPNW" | u16 version=1 | u32 input, embed, hidden, layers, bidirectional, output
//   u32 tensor_count, then per tensor:
//     u16 name_len, name, u8 rank, rank x u32 dims, f32 data (row-major)
//   u32 CRC-32 of every preceding byte
// ---------------------------------------------------------------------------

template <typename T>
binio::Bytes encode_weights(const ModelWeights<T>& w) {
  binio::Writer out;
  out.str("SPNW");
  out.u16(1);
  const ModelConfig& c = w.config;
  for (int v : {c.input_dim, c.embed_dim, c.hidden_dim, c.layers, c.bidirectional ? 1 : 0, c.output_dim})
    out.u32(static_cast<std::uint32_t>(v));
  const auto names = w.tensor_names();
  const auto tensors = w.tensors();
  out.u32(static_cast<std::uint32_t>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const Matrix<T>& m = *tensors[k];
    out.u16(static_cast<std::uint16_t>(names[k].size()));
    out.str(names[k]);
    const bool vec = m.cols() == 1;
    out.u8(vec ? 1 : 2);
    out.u32(static_cast<std::uint32_t>(m.rows()));
    if (!vec) out.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) out.f32(static_cast<float>(m(i, j)));
  }
  out.u32(binio::crc32(out.bytes()));
  return out.take();
}

/// Rejects bad checksums, unknown tensors and shape mismatches. When
/// `expected` is given the stored configuration must equal it.
template <typename T>
ModelWeights<T> decode_weights(std::span<const std::uint8_t> bytes, const ModelConfig* expected = nullptr) {
  if (bytes.size() < 4) throw FormatError("weight file truncated");
  binio::Reader tail(bytes.subspan(bytes.size() - 4));
  if (tail.u32() != binio::crc32(bytes.first(bytes.size() - 4))) throw FormatError("weight file checksum mismatch");
  binio::Reader r(bytes.first(bytes.size() - 4));
  r.expect_magic("SPNW");
  if (const auto v = r.u16(); v != 1) throw FormatError("unsupported weight file version " + std::to_string(v));
  ModelConfig c;
  c.input_dim = static_cast<int>(r.u32());
  c.embed_dim = static_cast<int>(r.u32());
  c.hidden_dim = static_cast<int>(r.u32());
  c.layers = static_cast<int>(r.u32());
  c.bidirectional = r.u32() != 0;
  c.output_dim = static_cast<int>(r.u32());
  c.validate();
  if (expected && !(*expected == c)) throw ShapeMismatch("weight file configuration differs from the expected model");
  ModelWeights<T> w = ModelWeights<T>::zeros(c);
  const auto names = w.tensor_names();
  auto tensors = w.tensors();
  if (r.u32() != names.size()) throw ShapeMismatch("weight file tensor count differs from the model");
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string name = r.str(r.u16());
    if (name != names[k]) throw ShapeMismatch("unexpected tensor '" + name + "', expected '" + names[k] + "'");
    Matrix<T>& m = *tensors[k];
    const std::uint8_t rank = r.u8();
    if (rank != 1 && rank != 2) throw FormatError("tensor rank must be 1 or 2");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = rank == 2 ? r.u32() : 1;
    if (static_cast<Eigen::Index>(rows) != m.rows() || static_cast<Eigen::Index>(cols) != m.cols() ||
        (rank == 1) != (m.cols() == 1)) {
      throw ShapeMismatch("tensor '" + name + "' has the wrong shape");
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<T>(r.f32());
  }
  if (!r.at_end()) throw FormatError("trailing bytes in weight file");
  return w;
}

template <typename T>
void save_weights(const std::string& path, const ModelWeights<T>& w) {
  binio::write_file(path, encode_weights(w));
}

template <typename T>
ModelWeights<T> load_weights(const std::string& path, const ModelConfig* expected = nullptr) {
  return decode_weights<T>(binio::read_file(path), expected);
}

}  // namespace sparsepose::net
