#pragma once

// Rolling-window online inference. Every tick runs the recurrent layers over
// the whole window of the last `window` frames (zero-padded until full) and
// emits the pose of the newest frame.
//
// OnlineEstimator is the reference: a literal forward() on the window.
// FastOnlineEstimator produces the same quantity with float math, recurrent
// matrices stored as IEEE half precision, and per-frame work (embedding and
// first-layer input projections) computed once per frame instead of once per
// tick. The last layer's backward direction only contributes its first step
// (taken from zero state) to the newest frame's output, so only that step is
// evaluated.

#include <cstdint>
#include <cstring>
#include <vector>

#include <Eigen/Dense>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "sparsepose/net.hpp"

namespace sparsepose::net {

constexpr int kOnlineWindow = 125;

template <typename T>
class OnlineEstimator {
 public:
  explicit OnlineEstimator(const ModelWeights<T>& weights, int window = kOnlineWindow)
      : weights_(&weights), window_(Matrix<T>::Zero(window, weights.config.input_dim)) {
    if (window < 1) throw InvalidConfig("online window must be at least one frame");
  }

  /// Raw 144-vector for the newest frame.
  PoseVector push_raw(const InputVector& x) {
    const auto n = window_.rows();
    if (n > 1) window_.topRows(n - 1) = window_.bottomRows(n - 1).eval();
    window_.row(n - 1) = x.transpose().template cast<T>();
    const Matrix<T> out = forward(*weights_, window_);
    return out.row(n - 1).transpose().template cast<double>();
  }

  Pose push(const InputVector& x) {
    last_ = decode_pose(push_raw(x), has_last_ ? &last_ : nullptr);
    has_last_ = true;
    return last_;
  }

  void reset() {
    window_.setZero();
    has_last_ = false;
  }

  const Matrix<T>& window() const { return window_; }

 private:
  const ModelWeights<T>* weights_;
  Matrix<T> window_;
  Pose last_;
  bool has_last_ = false;
};

namespace detail {

/// Row-major matrix with half-precision storage, arranged for y = W x with
/// 64-row panels: panel p holds, for every column k, rows [64p, 64p + 64).
class HalfMatrix {
 public:
  static constexpr int kPanel = 64;

  HalfMatrix() = default;
  explicit HalfMatrix(const Matrix<float>& m) : rows_(m.rows()), cols_(m.cols()) {
    const Eigen::Index panels = (rows_ + kPanel - 1) / kPanel;
    data_.assign(static_cast<std::size_t>(panels * cols_ * kPanel), 0);
    for (Eigen::Index p = 0; p < panels; ++p)
      for (Eigen::Index k = 0; k < cols_; ++k)
        for (int r = 0; r < kPanel; ++r) {
          const Eigen::Index row = p * kPanel + r;
          if (row >= rows_) continue;
          data_[static_cast<std::size_t>((p * cols_ + k) * kPanel + r)] =
              Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(m(row, k)));
        }
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }

  /// y += W x
  void multiply_add(const float* x, float* y) const {
    const Eigen::Index panels = (rows_ + kPanel - 1) / kPanel;
    for (Eigen::Index p = 0; p < panels; ++p) {
      const std::uint16_t* w = data_.data() + p * cols_ * kPanel;
      alignas(64) float acc[kPanel];
      panel(w, x, acc);
      const Eigen::Index n = std::min<Eigen::Index>(kPanel, rows_ - p * kPanel);
      for (Eigen::Index r = 0; r < n; ++r) y[p * kPanel + r] += acc[r];
    }
  }

 private:
  void panel(const std::uint16_t* w, const float* x, float* out) const {
#if defined(__AVX512F__)
    __m512 a0 = _mm512_setzero_ps(), a1 = _mm512_setzero_ps(), a2 = _mm512_setzero_ps(), a3 = _mm512_setzero_ps();
    __m512 b0 = _mm512_setzero_ps(), b1 = _mm512_setzero_ps(), b2 = _mm512_setzero_ps(), b3 = _mm512_setzero_ps();
    Eigen::Index k = 0;
    for (; k + 1 < cols_; k += 2) {
      const std::uint16_t* p0 = w + k * kPanel;
      const std::uint16_t* p1 = p0 + kPanel;
      _mm_prefetch(reinterpret_cast<const char*>(p0 + 8 * kPanel), _MM_HINT_T0);
      _mm_prefetch(reinterpret_cast<const char*>(p0 + 8 * kPanel + 32), _MM_HINT_T0);
      _mm_prefetch(reinterpret_cast<const char*>(p1 + 8 * kPanel), _MM_HINT_T0);
      _mm_prefetch(reinterpret_cast<const char*>(p1 + 8 * kPanel + 32), _MM_HINT_T0);
      const __m512 x0 = _mm512_set1_ps(x[k]);
      const __m512 x1 = _mm512_set1_ps(x[k + 1]);
      a0 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0))), x0, a0);
      a1 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 16))), x0, a1);
      a2 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 32))), x0, a2);
      a3 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 48))), x0, a3);
      b0 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p1))), x1, b0);
      b1 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p1 + 16))), x1, b1);
      b2 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p1 + 32))), x1, b2);
      b3 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p1 + 48))), x1, b3);
    }
    for (; k < cols_; ++k) {
      const std::uint16_t* p0 = w + k * kPanel;
      const __m512 x0 = _mm512_set1_ps(x[k]);
      a0 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0))), x0, a0);
      a1 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 16))), x0, a1);
      a2 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 32))), x0, a2);
      a3 = _mm512_fmadd_ps(_mm512_cvtph_ps(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(p0 + 48))), x0, a3);
    }
    _mm512_store_ps(out, _mm512_add_ps(a0, b0));
    _mm512_store_ps(out + 16, _mm512_add_ps(a1, b1));
    _mm512_store_ps(out + 32, _mm512_add_ps(a2, b2));
    _mm512_store_ps(out + 48, _mm512_add_ps(a3, b3));
#else
    for (int r = 0; r < kPanel; ++r) out[r] = 0.0f;
    for (Eigen::Index k = 0; k < cols_; ++k) {
      const std::uint16_t* p = w + k * kPanel;
      for (int r = 0; r < kPanel; ++r)
        out[r] += static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(p[r])) * x[k];
    }
#endif
  }

  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::vector<std::uint16_t> data_;
};

}  // namespace detail

class FastOnlineEstimator {
 public:
  explicit FastOnlineEstimator(const ModelWeights<float>& weights, int window = kOnlineWindow)
      : w_(&weights), cfg_(weights.config), window_(window) {
    if (window < 1) throw InvalidConfig("online window must be at least one frame");
    const int h = cfg_.hidden_dim;
    for (const auto& cell : w_->lstm) {
      w_hh_.emplace_back(cell.w_hh);
      bias_.push_back(cell.b_ih.col(0) + cell.b_hh.col(0));
    }
    // Projections of the zero frame pre-fill the ring so a partial window
    // behaves exactly like zero padding.
    for (int d = 0; d < cfg_.directions(); ++d) proj0_.push_back(Matrix<float>(4 * h, window_));
    const Eigen::VectorXf zero_proj_frame = Eigen::VectorXf::Zero(cfg_.input_dim);
    for (int s = 0; s < window_; ++s) write_frame_projection(zero_proj_frame, s);
    layer_out_.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto& m : layer_out_) m.resize(cfg_.directions() * h, window_);
    z_.resize(4 * h);
    h_.resize(h);
    c_.resize(h);
  }

  PoseVector push_raw(const InputVector& x) {
    write_frame_projection(x.cast<float>(), head_);
    head_ = (head_ + 1) % window_;
    return run();
  }

  Pose push(const InputVector& x) {
    last_ = decode_pose(push_raw(x), has_last_ ? &last_ : nullptr);
    has_last_ = true;
    return last_;
  }

  void reset() {
    const Eigen::VectorXf zero = Eigen::VectorXf::Zero(cfg_.input_dim);
    for (int s = 0; s < window_; ++s) write_frame_projection(zero, s);
    head_ = 0;
    has_last_ = false;
  }

 private:
  void write_frame_projection(const Eigen::VectorXf& x, int slot) {
    const Eigen::VectorXf e = (w_->embed_w * x + w_->embed_b.col(0)).cwiseMax(0.0f);
    for (int d = 0; d < cfg_.directions(); ++d)
      proj0_[static_cast<std::size_t>(d)].col(slot).noalias() = w_->cell(0, d).w_ih * e + bias_[static_cast<std::size_t>(d)];
  }

  // One LSTM step from (h_, c_) with pre-activation input `proj`; updates h_, c_.
  void step(const detail::HalfMatrix& w_hh, const float* proj, bool zero_state) {
    const int h = cfg_.hidden_dim;
    std::memcpy(z_.data(), proj, sizeof(float) * static_cast<std::size_t>(4 * h));
    if (!zero_state) w_hh.multiply_add(h_.data(), z_.data());
    auto i = detail::sigmoid(z_.head(h).array());
    auto f = detail::sigmoid(z_.segment(h, h).array());
    auto g = z_.segment(2 * h, h).array().tanh();
    auto o = detail::sigmoid(z_.tail(h).array());
    if (zero_state) {
      c_ = (i * g).matrix();
    } else {
      c_ = (f * c_.array() + i * g).matrix();
    }
    h_ = (o * c_.array().tanh()).matrix();
  }

  // Runs direction d of layer l over the window given its input projections
  // (column s = window position s). Writes hidden states to `out` rows when non-null.
  void run_direction(int l, int d, const Matrix<float>& proj, bool ring, Matrix<float>* out) {
    const int h = cfg_.hidden_dim;
    const auto idx = static_cast<std::size_t>(l * cfg_.directions() + d);
    const bool reverse = d == 1;
    for (int s = 0; s < window_; ++s) {
      const int pos = reverse ? window_ - 1 - s : s;
      const int col = ring ? (head_ + pos) % window_ : pos;
      step(w_hh_[idx], proj.col(col).data(), s == 0);
      if (out) out->col(pos).segment(d * h, h) = h_;
    }
  }

  PoseVector run() {
    const int h = cfg_.hidden_dim;
    const int dirs = cfg_.directions();
    const int last = cfg_.layers - 1;
    Eigen::VectorXf top(dirs * h);
    for (int l = 0; l < cfg_.layers; ++l) {
      const bool is_last = l == last;
      for (int d = 0; d < dirs; ++d) {
        const auto idx = static_cast<std::size_t>(l * dirs + d);
        if (is_last && d == 1) {
          // Newest frame is the first step of the reverse pass.
          if (l == 0) {
            step(w_hh_[idx], proj0_[1].col((head_ + window_ - 1) % window_).data(), true);
          } else {
            const Eigen::VectorXf p =
                w_->cell(l, d).w_ih * layer_out_[static_cast<std::size_t>(l - 1)].col(window_ - 1) + bias_[idx];
            step(w_hh_[idx], p.data(), true);
          }
          top.segment(h, h) = h_;
          continue;
        }
        Matrix<float>* out = is_last ? nullptr : &layer_out_[static_cast<std::size_t>(l)];
        if (l == 0) {
          run_direction(l, d, proj0_[static_cast<std::size_t>(d)], true, out);
        } else {
          proj_.noalias() = w_->cell(l, d).w_ih * layer_out_[static_cast<std::size_t>(l - 1)];
          proj_.colwise() += bias_[idx];
          run_direction(l, d, proj_, false, out);
        }
        if (is_last) top.segment(d * h, h) = h_;
      }
    }
    const Eigen::VectorXf y = w_->head_w * top + w_->head_b.col(0);
    return y.cast<double>();
  }

  const ModelWeights<float>* w_;
  ModelConfig cfg_;
  int window_;
  int head_ = 0;  // ring column of the oldest frame
  std::vector<detail::HalfMatrix> w_hh_;
  std::vector<Eigen::VectorXf> bias_;
  std::vector<Matrix<float>> proj0_;
  std::vector<Matrix<float>> layer_out_;
  Matrix<float> proj_;
  Eigen::VectorXf z_, h_, c_;
  Pose last_;
  bool has_last_ = false;
};

}  // namespace sparsepose::net
