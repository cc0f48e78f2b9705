#pragma once

// Jacobi elliptic helpers for elliptic (Cauer) filter design, evaluated with
// descending Landen transformations. Arguments are in units of the quarter
// period K, so cde(1, k) == 0 and sne(1, k) == 1.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace bandlift::detail::elliptic {

using cplx = std::complex<double>;

inline std::vector<double> landen(double k) {
  std::vector<double> v;
  for (int n = 0; n < 32 && k > 1e-16; ++n) {
    const double kp = std::sqrt((1.0 - k) * (1.0 + k));
    k = (k / (1.0 + kp)) * (k / (1.0 + kp));
    v.push_back(k);
  }
  return v;
}

/// Complete elliptic integral of the first kind, K(k).
inline double ellipk(double k) {
  double prod = 1.0;
  for (double vn : landen(k)) prod *= 1.0 + vn;
  return prod * std::numbers::pi / 2.0;
}

inline cplx cde(cplx u, double k) {
  const auto v = landen(k);
  cplx w = std::cos(u * (std::numbers::pi / 2.0));
  for (auto it = v.rbegin(); it != v.rend(); ++it) w = (1.0 + *it) * w / (1.0 + *it * w * w);
  return w;
}

inline cplx sne(cplx u, double k) {
  const auto v = landen(k);
  cplx w = std::sin(u * (std::numbers::pi / 2.0));
  for (auto it = v.rbegin(); it != v.rend(); ++it) w = (1.0 + *it) * w / (1.0 + *it * w * w);
  return w;
}

inline double symmetric_remainder(double x, double y) { return x - y * std::round(x / y); }

/// Inverse of cde: u such that cd(u K, k) = w, reduced to the fundamental period.
inline cplx acde(cplx w, double k) {
  const auto v = landen(k);
  double prev = k;
  for (double vn : v) {
    w = w / (1.0 + std::sqrt(1.0 - w * w * (prev * prev))) * (2.0 / (1.0 + vn));
    prev = vn;
  }
  cplx u = (2.0 / std::numbers::pi) * std::acos(w);
  const double kk = ellipk(k);
  const double kp = ellipk(std::sqrt(1.0 - k * k));
  return {symmetric_remainder(u.real(), 4.0), symmetric_remainder(u.imag(), 2.0 * kp / kk)};
}

inline cplx asne(cplx w, double k) { return 1.0 - acde(w, k); }

/// Solves the degree equation: selectivity k for order n and discrimination k1.
inline double ellipdeg(int n, double k1) {
  const int pairs = n / 2;
  const double k1p = std::sqrt(1.0 - k1 * k1);
  double kp = std::pow(k1p, n);
  for (int i = 1; i <= pairs; ++i) {
    const double ui = (2.0 * i - 1.0) / n;
    const double s = sne(ui, k1p).real();
    kp *= s * s * s * s;
  }
  return std::sqrt(1.0 - kp * kp);
}

}  // namespace bandlift::detail::elliptic
