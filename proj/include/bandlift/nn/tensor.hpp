#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "bandlift/error.hpp"

namespace bandlift::nn {

// Buffers start on Eigen's widest packet boundary so vectorized reductions
// take the same path for every instance.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense channels x height x width array, channel-major.
template <class T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  AlignedVector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  int plane() const noexcept { return height * width; }
  bool same_shape(const Tensor& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  Eigen::Map<RowMatrix<T>> matrix() { return {data.data(), channels, plane()}; }
  Eigen::Map<const RowMatrix<T>> matrix() const { return {data.data(), channels, plane()}; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(channels, height, width);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.same_shape(b), ErrorCode::ShapeMismatch, what);
}

/// Stacks tensors of equal height/width along the channel axis.
template <class T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  const Tensor<T>& first = **parts.begin();
  int channels = 0;
  for (const auto* p : parts) {
    require(p->height == first.height && p->width == first.width, ErrorCode::ShapeMismatch,
            "concat: spatial sizes differ");
    channels += p->channels;
  }
  Tensor<T> out(channels, first.height, first.width);
  auto it = out.data.begin();
  for (const auto* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
  return out;
}

/// Copy of rows [y0, y0 + rows) of every channel.
template <class T>
Tensor<T> crop_height(const Tensor<T>& x, int y0, int rows) {
  Tensor<T> out(x.channels, rows, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < rows; ++y)
      std::copy_n(&x.data[(static_cast<std::size_t>(c) * x.height + y0 + y) * x.width], x.width, &out.at(c, y, 0));
  return out;
}

template <class T>
double squared_norm(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <class T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data.begin(), x.data.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace bandlift::nn
