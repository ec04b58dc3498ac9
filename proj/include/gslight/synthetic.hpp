#pragma once

// Procedural textured-plane scenes with exact depth, normals and masks.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gslight/gaussian_scene.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

/// World-to-camera pose looking from `eye` at `target` (OpenCV axes).
inline CameraView look_at(int view_id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width,
                          int height, double focal) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  CameraView v;
  v.view_id = view_id;
  v.width = width;
  v.height = height;
  v.fx = v.fy = focal;
  v.cx = width / 2.0;
  v.cy = height / 2.0;
  v.rotation.row(0) = x;
  v.rotation.row(1) = y;
  v.rotation.row(2) = z;
  v.translation = -v.rotation * eye;
  return v;
}

struct SyntheticOptions {
  int gaussians = 400;
  int width = 64;
  int height = 64;
  int views = 4;
  double focal = 64.0;
  double plane_z = 4.0;     // world plane z = plane_z, facing the cameras at z = 0
  double half_extent = 2.5;
  double baseline = 0.6;    // camera centres spread over [-baseline, baseline] in x
  double object_radius = 0.8;
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  GaussianScene scene;
  std::vector<CameraView> views;
  std::vector<DepthMap> depths;
  std::vector<NormalMap> normals;
  std::vector<RgbImage> images;
  ObjectMask reference_mask;  // disc around the plane centre, seen from views[0]
};

inline SyntheticDataset make_plane_dataset(const SyntheticOptions& opt = {}) {
  SyntheticDataset ds;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int side = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(opt.gaussians)))));
  const double spacing = 2.0 * opt.half_extent / side;
  for (int i = 0; i < opt.gaussians; ++i) {
    const int gx = i % side, gy = i / side;
    GaussianRecord g;
    g.position = {-opt.half_extent + (gx + 0.25 + 0.5 * unit(rng)) * spacing,
                  -opt.half_extent + (gy + 0.25 + 0.5 * unit(rng)) * spacing, opt.plane_z};
    g.log_scale = {std::log(spacing * (0.6 + 0.3 * unit(rng))), std::log(spacing * (0.6 + 0.3 * unit(rng))),
                   std::log(0.01)};
    g.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(2.0 * M_PI * unit(rng), Eigen::Vector3d::UnitZ()));
    g.color_logit = {normal(rng), normal(rng), normal(rng)};
    g.opacity_logit = 2.0 + unit(rng);
    ds.scene.records.push_back(g);
  }

  const Eigen::Vector3d target(0.0, 0.0, opt.plane_z);
  for (int k = 0; k < opt.views; ++k) {
    const double s = opt.views > 1 ? -1.0 + 2.0 * k / (opt.views - 1) : 0.0;
    const Eigen::Vector3d eye(opt.baseline * s, 0.25 * opt.baseline * std::sin(3.0 * s), 0.1 * s * s);
    ds.views.push_back(look_at(k, eye, target, opt.width, opt.height, opt.focal));
  }

  for (const auto& v : ds.views) {
    DepthMap depth(v.width, v.height);
    NormalMap normals(v.width, v.height);
    const Eigen::Vector3d n_cam = v.rotation * Eigen::Vector3d(0.0, 0.0, -1.0);
    const Eigen::Vector3d eye = v.center();
    const Eigen::Matrix3d k_inv = v.intrinsics().inverse();
    for (int y = 0; y < v.height; ++y) {
      for (int x = 0; x < v.width; ++x) {
        const Eigen::Vector3d ray = v.rotation.transpose() * (k_inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0));
        const double s = (opt.plane_z - eye.z()) / ray.z();
        const Eigen::Vector3d hit = eye + s * ray;
        if (!(s > 0.0) || std::abs(hit.x()) > opt.half_extent || std::abs(hit.y()) > opt.half_extent) continue;
        depth.at(x, y) = static_cast<float>(v.to_camera(hit).z());
        normals.set(x, y, n_cam);
      }
    }
    ds.depths.push_back(std::move(depth));
    ds.normals.push_back(std::move(normals));
  }

  const CameraView& ref = ds.views.front();
  ds.reference_mask = ObjectMask(ref.width, ref.height);
  const Eigen::Matrix3d k_inv = ref.intrinsics().inverse();
  for (int y = 0; y < ref.height; ++y) {
    for (int x = 0; x < ref.width; ++x) {
      const Eigen::Vector3d ray = ref.rotation.transpose() * (k_inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0));
      const double s = (opt.plane_z - ref.center().z()) / ray.z();
      const Eigen::Vector3d hit = ref.center() + s * ray;
      if ((hit - target).norm() <= opt.object_radius) ds.reference_mask.set(x, y);
    }
  }

  ds.images = render_all(ds.scene, ds.views);
  return ds;
}

}  // namespace gslight
