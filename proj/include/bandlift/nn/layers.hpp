#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bandlift/nn/tensor.hpp"

namespace bandlift::nn {

template <class T>
struct Param {
  AlignedVector<T> value;
  AlignedVector<T> grad;

  explicit Param(std::size_t n = 0) : value(n, T(0)), grad(n, T(0)) {}
  std::size_t size() const noexcept { return value.size(); }
};

template <class T>
using ParamList = std::vector<Param<T>*>;

template <class T>
void zero_grad(const ParamList<T>& params) {
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
std::size_t count_values(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

template <class T>
std::vector<float> flatten_values(const ParamList<T>& params) {
  std::vector<float> out;
  out.reserve(count_values(params));
  for (const auto* p : params)
    for (T v : p->value) out.push_back(static_cast<float>(v));
  return out;
}

template <class T>
void assign_values(const ParamList<T>& params, std::span<const float> flat) {
  require(flat.size() == count_values(params), ErrorCode::CheckpointMismatch, "parameter count mismatch");
  std::size_t i = 0;
  for (auto* p : params)
    for (T& v : p->value) v = static_cast<T>(flat[i++]);
}

struct ConvShape {
  int in = 1, out = 1;
  int kh = 3, kw = 3;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  int dh = 1, dw = 1;
};

/// 2-D convolution via im2col + GEMM. Weight is out x (in * kh * kw), row-major.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  explicit Conv2d(ConvShape s)
      : weight(static_cast<std::size_t>(s.out) * s.in * s.kh * s.kw), bias(static_cast<std::size_t>(s.out)), shape_(s) {}

  template <class Rng>
  void init(Rng& rng, double gain = 1.0) {
    std::normal_distribution<double> nd(0.0, gain / std::sqrt(static_cast<double>(fan_in())));
    for (T& w : weight.value) w = static_cast<T>(nd(rng));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  const ConvShape& shape() const noexcept { return shape_; }
  int fan_in() const noexcept { return shape_.in * shape_.kh * shape_.kw; }
  int out_height(int h) const { return (h + 2 * shape_.ph - shape_.dh * (shape_.kh - 1) - 1) / shape_.sh + 1; }
  int out_width(int w) const { return (w + 2 * shape_.pw - shape_.dw * (shape_.kw - 1) - 1) / shape_.sw + 1; }

  /// `cols` receives the unfolded input when the caller needs a backward pass.
  Tensor<T> forward(const Tensor<T>& x, RowMatrix<T>* cols = nullptr) const {
    require(x.channels == shape_.in, ErrorCode::ShapeMismatch, "conv input channels");
    const int oh = out_height(x.height), ow = out_width(x.width);
    require(oh > 0 && ow > 0, ErrorCode::ShapeMismatch, "conv input too small");
    RowMatrix<T> local;
    RowMatrix<T>& unfolded = cols ? *cols : local;
    im2col(x, oh, ow, unfolded);
    Tensor<T> y(shape_.out, oh, ow);
    auto ym = y.matrix();
    ym.noalias() = weight_matrix() * unfolded;
    for (int c = 0; c < shape_.out; ++c) ym.row(c).array() += bias.value[c];
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy, const RowMatrix<T>& cols, int in_h, int in_w) {
    auto dym = dy.matrix();
    Eigen::Map<RowMatrix<T>> gw(weight.grad.data(), shape_.out, fan_in());
    gw.noalias() += dym * cols.transpose();
    for (int c = 0; c < shape_.out; ++c) bias.grad[c] += dym.row(c).sum();
    RowMatrix<T> dcols = weight_matrix().transpose() * dym;
    Tensor<T> dx(shape_.in, in_h, in_w);
    col2im(dcols, dy.height, dy.width, dx);
    return dx;
  }

  ParamList<T> params() { return {&weight, &bias}; }

  Param<T> weight;
  Param<T> bias;

 private:
  Eigen::Map<const RowMatrix<T>> weight_matrix() const { return {weight.value.data(), shape_.out, fan_in()}; }

  bool pointwise() const {
    return shape_.kh == 1 && shape_.kw == 1 && shape_.sh == 1 && shape_.sw == 1 && shape_.ph == 0 && shape_.pw == 0;
  }

  void im2col(const Tensor<T>& x, int oh, int ow, RowMatrix<T>& cols) const {
    if (pointwise()) {
      cols = x.matrix();
      return;
    }
    const auto& s = shape_;
    cols.setZero(fan_in(), static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < s.in; ++c)
      for (int ky = 0; ky < s.kh; ++ky)
        for (int kx = 0; kx < s.kw; ++kx) {
          T* row = cols.row((c * s.kh + ky) * s.kw + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s.sh - s.ph + ky * s.dh;
            if (iy < 0 || iy >= x.height) continue;
            const T* src = &x.data[(static_cast<std::size_t>(c) * x.height + iy) * x.width];
            T* dst = row + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.sw - s.pw + kx * s.dw;
              if (ix >= 0 && ix < x.width) dst[ox] = src[ix];
            }
          }
        }
  }

  void col2im(const RowMatrix<T>& cols, int oh, int ow, Tensor<T>& dx) const {
    if (pointwise()) {
      dx.matrix() = cols;
      return;
    }
    const auto& s = shape_;
    for (int c = 0; c < s.in; ++c)
      for (int ky = 0; ky < s.kh; ++ky)
        for (int kx = 0; kx < s.kw; ++kx) {
          const T* row = cols.row((c * s.kh + ky) * s.kw + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s.sh - s.ph + ky * s.dh;
            if (iy < 0 || iy >= dx.height) continue;
            T* dst = &dx.data[(static_cast<std::size_t>(c) * dx.height + iy) * dx.width];
            const T* src = row + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.sw - s.pw + kx * s.dw;
              if (ix >= 0 && ix < dx.width) dst[ix] += src[ox];
            }
          }
        }
  }

  ConvShape shape_;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out) : in_(in), out_(out), weight(static_cast<std::size_t>(in) * out), bias(static_cast<std::size_t>(out)) {}

  template <class Rng>
  void init(Rng& rng, double gain = 1.0) {
    std::normal_distribution<double> nd(0.0, gain / std::sqrt(static_cast<double>(in_)));
    for (T& w : weight.value) w = static_cast<T>(nd(rng));
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  std::vector<T> forward(std::span<const T> x) const {
    std::vector<T> y(bias.value.begin(), bias.value.end());
    for (int o = 0; o < out_; ++o)
      for (int i = 0; i < in_; ++i) y[o] += weight.value[static_cast<std::size_t>(o) * in_ + i] * x[i];
    return y;
  }

  std::vector<T> backward(std::span<const T> dy, std::span<const T> x) {
    std::vector<T> dx(static_cast<std::size_t>(in_), T(0));
    for (int o = 0; o < out_; ++o) {
      bias.grad[o] += dy[o];
      for (int i = 0; i < in_; ++i) {
        weight.grad[static_cast<std::size_t>(o) * in_ + i] += dy[o] * x[i];
        dx[i] += weight.value[static_cast<std::size_t>(o) * in_ + i] * dy[o];
      }
    }
    return dx;
  }

  ParamList<T> params() { return {&weight, &bias}; }

  int in_ = 0, out_ = 0;
  Param<T> weight;
  Param<T> bias;
};

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void silu_inplace(std::span<T> x) {
  for (T& v : x) v = v * sigmoid(v);
}

template <class T>
Tensor<T> silu(Tensor<T> x) {
  silu_inplace(std::span<T>(x.data));
  return x;
}

/// dy * silu'(pre), where pre is the activation input.
template <class T>
void silu_backward_inplace(std::span<T> dy, std::span<const T> pre) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T s = sigmoid(pre[i]);
    dy[i] *= s * (T(1) + pre[i] * (T(1) - s));
  }
}

/// (C*r*r, H, W) -> (C, H*r, W*r); input channel c*r*r + dy*r + dx feeds offset (dy, dx).
template <class T>
Tensor<T> depth_to_space(const Tensor<T>& x, int r) {
  require(x.channels % (r * r) == 0, ErrorCode::ShapeMismatch, "depth_to_space channel count");
  const int c_out = x.channels / (r * r);
  Tensor<T> y(c_out, x.height * r, x.width * r);
  for (int c = 0; c < c_out; ++c)
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx) {
        const int src = c * r * r + dy * r + dx;
        for (int h = 0; h < x.height; ++h)
          for (int w = 0; w < x.width; ++w) y.at(c, h * r + dy, w * r + dx) = x.at(src, h, w);
      }
  return y;
}

template <class T>
Tensor<T> space_to_depth(const Tensor<T>& y, int r) {
  require(y.height % r == 0 && y.width % r == 0, ErrorCode::ShapeMismatch, "space_to_depth spatial size");
  Tensor<T> x(y.channels * r * r, y.height / r, y.width / r);
  for (int c = 0; c < y.channels; ++c)
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx) {
        const int dst = c * r * r + dy * r + dx;
        for (int h = 0; h < x.height; ++h)
          for (int w = 0; w < x.width; ++w) x.at(dst, h, w) = y.at(c, h * r + dy, w * r + dx);
      }
  return x;
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (T& g : p->grad) g *= scale;
  }
  return norm;
}

/// Adaptive moment estimation with bias correction.
template <class T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(const ParamList<T>& params, Options opt) : opt_(opt) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), T(0));
      v_.emplace_back(p->size(), T(0));
    }
  }

  void step(const ParamList<T>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(opt_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& m = m_[k];
      auto& v = v_[k];
      auto* p = params[k];
      for (std::size_t i = 0; i < p->size(); ++i) {
        const T g = p->grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        p->value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  Options& options() noexcept { return opt_; }

  std::vector<float> flat_state() const {
    std::vector<float> out;
    for (const auto& m : m_) out.insert(out.end(), m.begin(), m.end());
    for (const auto& v : v_) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  void restore(std::uint64_t steps, std::span<const float> state) {
    std::size_t total = 0;
    for (const auto& m : m_) total += m.size();
    require(state.size() == 2 * total, ErrorCode::CheckpointMismatch, "optimizer state size mismatch");
    std::size_t i = 0;
    for (auto& m : m_)
      for (T& x : m) x = static_cast<T>(state[i++]);
    for (auto& v : v_)
      for (T& x : v) x = static_cast<T>(state[i++]);
    t_ = steps;
  }

 private:
  Options opt_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T, class Rng>
void fill_normal(Tensor<T>& x, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (T& v : x.data) v = static_cast<T>(nd(rng));
}

}  // namespace bandlift::nn
