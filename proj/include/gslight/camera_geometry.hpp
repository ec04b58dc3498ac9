#pragma once

// Pinhole projection and calibrated two-view epipolar algebra.

#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "gslight/errors.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

inline constexpr double kDefaultFundamentalEpsilon = 1e-8;
inline constexpr double kDefaultEpipolarBand = 2.0;

struct PixelIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Continuous coordinates of a pixel's centre.
inline Eigen::Vector2d pixel_center(PixelIndex p) { return {p.x + 0.5, p.y + 0.5}; }

/// Back-projects continuous pixel coordinates at camera-z `depth`.
inline Eigen::Vector3d unproject(const CameraView& view, const Eigen::Vector2d& pixel, double depth) {
  if (!(depth > 0.0)) fail(ErrorKind::domain, "unproject: depth must be positive");
  if (!(pixel.x() >= 0.0 && pixel.x() <= view.width && pixel.y() >= 0.0 && pixel.y() <= view.height)) {
    fail(ErrorKind::domain, "unproject: pixel outside image");
  }
  return {(pixel.x() - view.cx) / view.fx * depth, (pixel.y() - view.cy) / view.fy * depth, depth};
}

struct FundamentalMatrix {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Zero();
  bool normalized = false;
  double epsilon = 0.0;

  double norm() const { return matrix.norm(); }
  FundamentalMatrix scaled(double s) const { return {matrix * s, false, 0.0}; }
  FundamentalMatrix transposed() const { return {matrix.transpose(), normalized, epsilon}; }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& t) {
  Eigen::Matrix3d m;
  m << 0.0, -t.z(), t.y(), t.z(), 0.0, -t.x(), -t.y(), t.x(), 0.0;
  return m;
}

/// F with p_dstᵀ F p_src = 0 for corresponding continuous pixels, built from
/// the calibrated poses: F = K_dst⁻ᵀ [t]ₓ R K_src⁻¹.
inline FundamentalMatrix fundamental_matrix(const CameraView& src, const CameraView& dst) {
  const double baseline = (src.center() - dst.center()).norm();
  const double scale = std::max({1.0, src.center().norm(), dst.center().norm()});
  if (baseline <= 1e-12 * scale) {
    fail(ErrorKind::degenerate, "views " + std::to_string(src.view_id) + " and " + std::to_string(dst.view_id) +
                                    " share a camera centre; epipolar geometry undefined");
  }
  const Eigen::Matrix3d r = dst.rotation * src.rotation.transpose();
  const Eigen::Vector3d t = dst.translation - r * src.translation;
  const Eigen::Matrix3d essential = skew(t) * r;
  return {dst.intrinsics().inverse().transpose() * essential * src.intrinsics().inverse(), false, 0.0};
}

/// F / (‖F‖_F + ε).
inline FundamentalMatrix normalize_fundamental(const FundamentalMatrix& f,
                                               double epsilon = kDefaultFundamentalEpsilon) {
  return {f.matrix / (f.matrix.norm() + epsilon), true, epsilon};
}

/// Re-expresses F for feature grids whose continuous coordinate u_grid maps
/// to u_image = u_grid * (image/grid). Both input and output use the
/// pixel-centre continuous convention.
inline FundamentalMatrix to_feature_grid(const FundamentalMatrix& f, int src_image_w, int src_image_h,
                                         int src_grid_w, int src_grid_h, int dst_image_w, int dst_image_h,
                                         int dst_grid_w, int dst_grid_h) {
  const Eigen::Vector3d s_src(static_cast<double>(src_image_w) / src_grid_w,
                              static_cast<double>(src_image_h) / src_grid_h, 1.0);
  const Eigen::Vector3d s_dst(static_cast<double>(dst_image_w) / dst_grid_w,
                              static_cast<double>(dst_image_h) / dst_grid_h, 1.0);
  return {s_dst.asDiagonal() * f.matrix * s_src.asDiagonal(), false, 0.0};
}

/// a·x + b·y + c = 0 in pixel-index coordinates of the target view: integer
/// pixel (i,j) lies on the line iff a·i + b·j + c = 0.
struct EpipolarLine {
  Eigen::Vector3d coefficients = Eigen::Vector3d::Zero();

  double a() const { return coefficients.x(); }
  double b() const { return coefficients.y(); }
  double c() const { return coefficients.z(); }

  /// Perpendicular distance from pixel index (x, y).
  double distance(double x, double y) const {
    return std::abs(a() * x + b() * y + c()) / std::hypot(a(), b());
  }
};

/// Line F·[u, v, 1]ᵀ for continuous source coordinates (u, v), shifted into
/// target pixel-index coordinates. Throws at the epipole.
inline EpipolarLine epipolar_line(const FundamentalMatrix& f, const Eigen::Vector2d& pixel_src) {
  const Eigen::Vector3d p(pixel_src.x(), pixel_src.y(), 1.0);
  Eigen::Vector3d l = f.matrix * p;
  if (!(std::hypot(l.x(), l.y()) > 1e-12 * f.matrix.norm() * p.norm())) {
    fail(ErrorKind::degenerate, "source pixel is at the epipole; epipolar line undefined");
  }
  l.z() += 0.5 * (l.x() + l.y());
  return {l};
}

namespace detail {

/// Unit normal (a,b) and offset c of a line, plus its canonical direction
/// (positive x, or positive y when vertical).
struct UnitLine {
  double a, b, c;
  double dx, dy;

  explicit UnitLine(const EpipolarLine& line) {
    const double n = std::hypot(line.a(), line.b());
    a = line.a() / n;
    b = line.b() / n;
    c = line.c() / n;
    dx = b;
    dy = -a;
    if (dx < 0.0 || (dx == 0.0 && dy < 0.0)) {
      dx = -dx;
      dy = -dy;
    }
  }
  double offset(double x, double y) const { return a * x + b * y + c; }
  double along(double x, double y) const { return x * dx + y * dy; }
};

}  // namespace detail

/// Orders pixels by position along the line (then by signed offset, row, column).
inline void sort_along_line(const EpipolarLine& line, std::vector<PixelIndex>& pixels) {
  const detail::UnitLine u(line);
  auto key = [&](const PixelIndex& p) {
    return std::make_tuple(u.along(p.x, p.y), u.offset(p.x, p.y), p.y, p.x);
  };
  std::sort(pixels.begin(), pixels.end(), [&](const PixelIndex& l, const PixelIndex& r) { return key(l) < key(r); });
}

/// Integer pixels of a width×height grid within perpendicular distance `band`
/// of the line, ordered along it. Empty when the line misses the grid.
inline std::vector<PixelIndex> sample_epipolar_candidates(const EpipolarLine& line, int width, int height,
                                                          double band) {
  if (band < 0.0) fail(ErrorKind::domain, "epipolar band must be non-negative");
  std::vector<PixelIndex> out;
  if (!(std::hypot(line.a(), line.b()) > 0.0) || !line.coefficients.allFinite()) return out;
  const detail::UnitLine u(line);
  auto accept = [&](int x, int y) {
    if (std::abs(u.offset(x, y)) <= band) out.push_back({x, y});
  };
  // Walk the axis the line is most aligned with; each step hits a short run.
  if (std::abs(u.b) >= std::abs(u.a)) {
    const double half = band / std::abs(u.b);
    for (int x = 0; x < width; ++x) {
      const double yc = -(u.a * x + u.c) / u.b;
      const int y0 = static_cast<int>(std::clamp(std::floor(yc - half) - 1.0, 0.0, double(height)));
      const int y1 = static_cast<int>(std::clamp(std::ceil(yc + half) + 1.0, -1.0, height - 1.0));
      for (int y = y0; y <= y1; ++y) accept(x, y);
    }
  } else {
    const double half = band / std::abs(u.a);
    for (int y = 0; y < height; ++y) {
      const double xc = -(u.b * y + u.c) / u.a;
      const int x0 = static_cast<int>(std::clamp(std::floor(xc - half) - 1.0, 0.0, double(width)));
      const int x1 = static_cast<int>(std::clamp(std::ceil(xc + half) + 1.0, -1.0, width - 1.0));
      for (int x = x0; x <= x1; ++x) accept(x, y);
    }
  }
  sort_along_line(line, out);
  return out;
}

inline std::vector<PixelIndex> sample_epipolar_candidates(const EpipolarLine& line, const CameraView& view,
                                                          double band) {
  return sample_epipolar_candidates(line, view.width, view.height, band);
}

}  // namespace gslight
