#pragma once

// Independent reference computations used by the test suites. Nothing here
// calls into the library's DSP code.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "bandlift/signal_io.hpp"

namespace oracle {

inline bandlift::AudioBuffer sine(double hz, int rate, std::size_t n, double amp = 0.5, double phase = 0.0) {
  bandlift::AudioBuffer b;
  b.sample_rate = rate;
  b.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    b.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate + phase));
  return b;
}

inline bandlift::AudioBuffer white_noise(std::size_t n, int rate, std::uint64_t seed, double sd = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  bandlift::AudioBuffer b;
  b.sample_rate = rate;
  b.samples.resize(n);
  for (auto& s : b.samples) s = static_cast<float>(nd(rng));
  return b;
}

inline double correlation(const std::vector<float>& a, const std::vector<float>& b, std::size_t from = 0,
                          std::size_t to = 0) {
  if (to == 0) to = std::min(a.size(), b.size());
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = from; i < to; ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline double energy(const std::vector<float>& x) {
  double e = 0;
  for (float v : x) e += static_cast<double>(v) * v;
  return e;
}

/// Power spectrum frames by direct summation: centred frames, mirror padding
/// that does not repeat the edge sample, periodic Hann window.
inline std::vector<std::vector<double>> naive_power_frames(const std::vector<float>& x, int n_fft, int hop) {
  const auto n = static_cast<std::int64_t>(x.size());
  const int half = n_fft / 2;
  auto sample = [&](std::int64_t i) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return static_cast<double>(x[static_cast<std::size_t>(i)]);
  };
  const std::int64_t frames = n / hop + 1;
  std::vector<double> window(static_cast<std::size_t>(n_fft));
  for (int i = 0; i < n_fft; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n_fft);
  // Explicit cosine/sine basis, applied as one matrix product per signal.
  struct Basis {
    int n_fft = 0;
    Eigen::MatrixXd cos, sin;
  };
  static Basis basis;
  if (basis.n_fft != n_fft) {
    basis.n_fft = n_fft;
    basis.cos.resize(half + 1, n_fft);
    basis.sin.resize(half + 1, n_fft);
    for (int k = 0; k <= half; ++k)
      for (int i = 0; i < n_fft; ++i) {
        const double phase =
            2.0 * std::numbers::pi * static_cast<double>((static_cast<std::int64_t>(k) * i) % n_fft) / n_fft;
        basis.cos(k, i) = std::cos(phase);
        basis.sin(k, i) = std::sin(phase);
      }
  }
  Eigen::MatrixXd segs(n_fft, frames);
  for (std::int64_t t = 0; t < frames; ++t)
    for (int i = 0; i < n_fft; ++i) segs(i, t) = window[i] * sample(t * hop - half + i);
  const Eigen::MatrixXd re = basis.cos * segs, im = basis.sin * segs;
  std::vector<std::vector<double>> out;
  for (std::int64_t t = 0; t < frames; ++t) {
    std::vector<double> power(static_cast<std::size_t>(half + 1));
    for (int k = 0; k <= half; ++k) power[k] = re(k, t) * re(k, t) + im(k, t) * im(k, t);
    out.push_back(std::move(power));
  }
  return out;
}

inline double naive_lsd(const bandlift::AudioBuffer& a, const bandlift::AudioBuffer& b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::vector<float> x(a.samples.begin(), a.samples.begin() + n), y(b.samples.begin(), b.samples.begin() + n);
  const auto pa = naive_power_frames(x, 2048, 512);
  const auto pb = naive_power_frames(y, 2048, 512);
  double total = 0;
  for (std::size_t t = 0; t < pa.size(); ++t) {
    double acc = 0;
    for (std::size_t k = 0; k < pa[t].size(); ++k) {
      const double d = std::log10(std::max(pa[t][k], 1e-16)) - std::log10(std::max(pb[t][k], 1e-16));
      acc += d * d;
    }
    total += std::sqrt(acc / static_cast<double>(pa[t].size()));
  }
  return total / static_cast<double>(pa.size());
}

/// Worst relative error between analytic gradients and central differences
/// over (a subsample of) parameter entries. `loss` must be a pure function
/// of the current parameter values.
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

template <class Param>
GradCheck check_gradients(const std::vector<Param*>& params, const std::function<double()>& loss, double eps = 1e-4,
                          std::size_t per_tensor = 24, double abs_tol = 1e-7) {
  GradCheck out;
  for (auto* p : params) {
    const std::size_t n = p->size();
    const std::size_t stride = std::max<std::size_t>(1, n / per_tensor);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss();
      p->value[i] = saved - eps;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p->grad[i];
      const double diff = std::abs(numeric - analytic);
      if (diff < abs_tol) {
        ++out.checked;
        continue;
      }
      const double rel = diff / std::max(std::abs(numeric), std::abs(analytic));
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
