#pragma once

// Image similarity: L1, SSIM (with analytic gradient) and PSNR on [0,1] data.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gslight/errors.hpp"
#include "gslight/image.hpp"

namespace gslight {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline const std::array<double, kSsimWindow>& ssim_kernel() {
  static const std::array<double, kSsimWindow> k = [] {
    std::array<double, kSsimWindow> w{};
    double s = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
  }();
  return k;
}

/// Separable 11×11 Gaussian filter, zero padding, same-size output. The
/// kernel is symmetric, so this operator is its own adjoint.
inline std::vector<double> gaussian_filter(const std::vector<double>& in, int w, int h) {
  const auto& k = ssim_kernel();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) s += k[i + r] * in[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) s += k[i + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM over all pixels and channels; if `grad` is non-null it receives
/// ∂SSIM/∂a.
inline double ssim(const RgbImage& a, const RgbImage& b, RgbImage* grad = nullptr) {
  require_same_shape(a, b, "ssim");
  const int w = a.width(), h = a.height(), ch = a.channels();
  const std::size_t n = a.pixel_count();
  const double inv_count = 1.0 / static_cast<double>(n * ch);
  if (grad) *grad = RgbImage(w, h, ch, 0.0);
  double total = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.values()[i * ch + c];
      y[i] = b.values()[i * ch + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::gaussian_filter(x, w, h);
    const auto my = detail::gaussian_filter(y, w, h);
    const auto exx = detail::gaussian_filter(xx, w, h);
    const auto eyy = detail::gaussian_filter(yy, w, h);
    const auto exy = detail::gaussian_filter(xy, w, h);
    // ∂S/∂x_q = 2 Σ_p w(p-q) S_p [μy/A1 - μx/B1 + (y_q - μy)/A2 - (x_q - μx)/B2], grouped so
    // every term cancels bitwise when a == b.
    std::vector<double> d_mean(grad ? n : 0), d_y(grad ? n : 0), d_x(grad ? n : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
      const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + kSsimC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
      const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (grad) {
        d_mean[i] = s * ((my[i] / a1 - mx[i] / b1) + (mx[i] / b2 - my[i] / a2));
        d_y[i] = s / a2;
        d_x[i] = s / b2;
      }
    }
    if (grad) {
      const auto g_mean = detail::gaussian_filter(d_mean, w, h);
      const auto g_y = detail::gaussian_filter(d_y, w, h);
      const auto g_x = detail::gaussian_filter(d_x, w, h);
      for (std::size_t i = 0; i < n; ++i) {
        grad->values()[i * ch + c] = 2.0 * inv_count * (g_mean[i] + (y[i] * g_y[i] - x[i] * g_x[i]));
      }
    }
  }
  return total * inv_count;
}

inline double mean_abs_error(const RgbImage& a, const RgbImage& b) {
  require_same_shape(a, b, "l1");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

inline double mean_squared_error(const RgbImage& a, const RgbImage& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

/// 10·log10(1/MSE); +inf for identical images.
inline double psnr(const RgbImage& a, const RgbImage& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

struct ImageQuality {
  double psnr = 0.0;
  double ssim = 0.0;
};

inline ImageQuality compute_psnr_ssim(const RgbImage& a, const RgbImage& b) { return {psnr(a, b), ssim(a, b)}; }

}  // namespace gslight
