#pragma once

// Tile-based Gaussian splatting renderer with colour/opacity gradients, the
// L1+SSIM photometric loss, and the appearance fine-tuning loop.

#include <Eigen/Core>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "gslight/errors.hpp"
#include "gslight/image.hpp"
#include "gslight/metrics.hpp"
#include "gslight/parallel.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

inline constexpr int kTileSize = 16;
inline constexpr double kLowPassVariance = 0.3;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kTransmittanceCutoff = 1e-4;
/// A splat touches a pixel iff its 2D Mahalanobis power is at most this,
/// i.e. its Gaussian weight is at least 1/255.
inline const double kSupportPower = 2.0 * std::log(255.0);

/// exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ)).
inline double evaluate_gaussian(const GaussianRecord& g, const Eigen::Vector3d& point) {
  const Eigen::Vector3d inv_var = (-2.0 * g.log_scale).array().exp();
  if (!inv_var.allFinite() || !(inv_var.minCoeff() > 0.0) || !g.log_scale.allFinite()) {
    fail(ErrorKind::numeric, "covariance is not positive definite");
  }
  const Eigen::Matrix3d r = g.rotation.normalized().toRotationMatrix();
  const Eigen::Vector3d local = r.transpose() * (point - g.position);
  return std::exp(-0.5 * local.dot(inv_var.asDiagonal() * local));
}

/// Screen-space footprint of one Gaussian.
struct ProjectedGaussian {
  std::uint32_t index = 0;  // into scene.records
  double depth = 0.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();
  double opacity = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds of the support
};

/// Local-affine projection of Σ plus the low-pass term; nullopt when culled.
inline std::optional<ProjectedGaussian> project_gaussian(const GaussianRecord& g, std::uint32_t index,
                                                         const CameraView& view) {
  const Eigen::Vector3d t = view.to_camera(g.position);
  if (!(t.z() > kNearPlane)) return std::nullopt;
  Eigen::Matrix<double, 2, 3> j;
  j << view.fx / t.z(), 0.0, -view.fx * t.x() / (t.z() * t.z()), 0.0, view.fy / t.z(),
      -view.fy * t.y() / (t.z() * t.z());
  const Eigen::Matrix<double, 2, 3> jw = j * view.rotation;
  ProjectedGaussian p;
  p.index = index;
  p.depth = t.z();
  p.mean = view.project(t);
  p.cov = jw * g.covariance() * jw.transpose() + kLowPassVariance * Eigen::Matrix2d::Identity();
  const double det = p.cov.determinant();
  if (!(det > 0.0) || !p.cov.allFinite()) return std::nullopt;
  p.conic = p.cov.inverse();
  p.opacity = g.opacity();
  p.color = g.color();
  const double hx = std::sqrt(kSupportPower * p.cov(0, 0));
  const double hy = std::sqrt(kSupportPower * p.cov(1, 1));
  auto lo = [](double v, int n) { return static_cast<int>(std::clamp(std::ceil(v - 0.5), 0.0, double(n))); };
  auto hi = [](double v, int n) { return static_cast<int>(std::clamp(std::floor(v - 0.5), -1.0, n - 1.0)); };
  p.x0 = lo(p.mean.x() - hx, view.width);
  p.x1 = hi(p.mean.x() + hx, view.width);
  p.y0 = lo(p.mean.y() - hy, view.height);
  p.y1 = hi(p.mean.y() + hy, view.height);
  if (p.x0 > p.x1 || p.y0 > p.y1) return std::nullopt;
  return p;
}

/// Mahalanobis power at the centre of pixel (x, y).
inline double splat_power(const ProjectedGaussian& p, int x, int y) {
  const double dx = x + 0.5 - p.mean.x();
  const double dy = y + 0.5 - p.mean.y();
  return p.conic(0, 0) * dx * dx + 2.0 * p.conic(0, 1) * dx * dy + p.conic(1, 1) * dy * dy;
}

/// Canonical front-to-back order: camera depth, then screen position and
/// appearance, so the result does not depend on record order.
inline bool front_to_back(const ProjectedGaussian& a, const ProjectedGaussian& b) {
  return std::tie(a.depth, a.mean.x(), a.mean.y(), a.opacity, a.color.x(), a.color.y(), a.color.z()) <
         std::tie(b.depth, b.mean.x(), b.mean.y(), b.opacity, b.color.x(), b.color.y(), b.color.z());
}

struct RenderOutput {
  RgbImage color;
  Raster<double> alpha;
  Raster<int> contributors;
};

/// A view's projected, depth-sorted splats binned into 16×16 tiles. Shared by
/// the forward and backward passes.
class PreparedFrame {
 public:
  PreparedFrame(const GaussianScene& scene, const CameraView& view, int workers = 1)
      : view_(view), workers_(workers), record_count_(scene.size()) {
    if (scene.empty()) fail(ErrorKind::domain, "cannot render an empty scene");
    splats_.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
      if (auto p = project_gaussian(scene.records[i], static_cast<std::uint32_t>(i), view)) splats_.push_back(*p);
    }
    std::stable_sort(splats_.begin(), splats_.end(), front_to_back);
    tiles_x_ = (view.width + kTileSize - 1) / kTileSize;
    tiles_y_ = (view.height + kTileSize - 1) / kTileSize;
    bins_.assign(static_cast<std::size_t>(tiles_x_) * tiles_y_, {});
    for (std::uint32_t s = 0; s < splats_.size(); ++s) {
      const auto& p = splats_[s];
      for (int ty = p.y0 / kTileSize; ty <= p.y1 / kTileSize; ++ty)
        for (int tx = p.x0 / kTileSize; tx <= p.x1 / kTileSize; ++tx)
          bins_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(s);
    }
  }

  const CameraView& view() const { return view_; }
  const std::vector<ProjectedGaussian>& splats() const { return splats_; }

  RenderOutput forward() const {
    RenderOutput out{RgbImage(view_.width, view_.height, 3, 0.0), Raster<double>(view_.width, view_.height, 1, 0.0),
                     Raster<int>(view_.width, view_.height, 1, 0)};
    parallel_for(bins_.size(), workers_, [&](std::size_t tile) {
      for_each_pixel(tile, [&](int x, int y) {
        double t = 1.0;
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        int count = 0;
        for (std::uint32_t s : bins_[tile]) {
          const auto& p = splats_[s];
          const double power = splat_power(p, x, y);
          if (power > kSupportPower) continue;
          const double a = p.opacity * std::exp(-0.5 * power);
          c += a * t * p.color;
          t *= 1.0 - a;
          ++count;
          if (t < kTransmittanceCutoff) break;
        }
        for (int k = 0; k < 3; ++k) out.color.at(x, y, k) = c[k];
        out.alpha.at(x, y) = 1.0 - t;
        out.contributors.at(x, y) = count;
      });
    });
    return out;
  }

  /// Gradients w.r.t. colour and opacity logits given ∂L/∂colour.
  struct Gradients {
    std::vector<Eigen::Vector3d> color_logit;
    std::vector<double> opacity_logit;
  };

  Gradients backward(const RgbImage& grad_color) const {
    if (!grad_color.same_extent(view_.width, view_.height) || grad_color.channels() != 3) {
      fail(ErrorKind::shape, "colour gradient does not match the view");
    }
    // Per-worker accumulators over fixed tile chunks, merged in worker order.
    const int workers = std::max(1, std::min<int>(workers_ <= 0 ? default_workers() : workers_,
                                                  static_cast<int>(std::max<std::size_t>(bins_.size(), 1))));
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(workers),
                                             std::vector<double>(splats_.size() * 4, 0.0));
    parallel_chunks(bins_.size(), workers, [&](int w, std::size_t begin, std::size_t end) {
      auto& acc = partial[static_cast<std::size_t>(w)];
      struct Hit {
        std::uint32_t splat;
        double alpha, weight, transmittance;
      };
      std::vector<Hit> hits;
      for (std::size_t tile = begin; tile < end; ++tile) {
        for_each_pixel(tile, [&](int x, int y) {
          const Eigen::Vector3d g(grad_color.at(x, y, 0), grad_color.at(x, y, 1), grad_color.at(x, y, 2));
          if (g.isZero(0.0)) return;
          hits.clear();
          double t = 1.0;
          for (std::uint32_t s : bins_[tile]) {
            const auto& p = splats_[s];
            const double power = splat_power(p, x, y);
            if (power > kSupportPower) continue;
            const double weight = std::exp(-0.5 * power);
            const double a = p.opacity * weight;
            hits.push_back({s, a, weight, t});
            t *= 1.0 - a;
            if (t < kTransmittanceCutoff) break;
          }
          // behind = colour composited by everything after the current hit,
          // relative to the transmittance just past it.
          Eigen::Vector3d behind = Eigen::Vector3d::Zero();
          for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            const auto& p = splats_[it->splat];
            double* slot = &acc[static_cast<std::size_t>(it->splat) * 4];
            const double at = it->alpha * it->transmittance;
            for (int k = 0; k < 3; ++k) slot[k] += at * g[k];
            const double d_alpha = it->transmittance * (p.color - behind).dot(g);
            slot[3] += d_alpha * it->weight;
            behind = it->alpha * p.color + (1.0 - it->alpha) * behind;
          }
        });
      }
    });

    Gradients out{std::vector<Eigen::Vector3d>(record_count_, Eigen::Vector3d::Zero()),
                  std::vector<double>(record_count_, 0.0)};
    for (std::size_t s = 0; s < splats_.size(); ++s) {
      const auto& p = splats_[s];
      double d[4] = {0.0, 0.0, 0.0, 0.0};
      for (const auto& acc : partial)
        for (int k = 0; k < 4; ++k) d[k] += acc[s * 4 + k];
      // Chain through the sigmoid activations.
      for (int k = 0; k < 3; ++k) out.color_logit[p.index][k] = d[k] * p.color[k] * (1.0 - p.color[k]);
      out.opacity_logit[p.index] = d[3] * p.opacity * (1.0 - p.opacity);
    }
    return out;
  }

 private:
  template <typename Fn>
  void for_each_pixel(std::size_t tile, Fn&& fn) const {
    const int tx = static_cast<int>(tile % tiles_x_);
    const int ty = static_cast<int>(tile / tiles_x_);
    const int x_end = std::min(view_.width, (tx + 1) * kTileSize);
    const int y_end = std::min(view_.height, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y)
      for (int x = tx * kTileSize; x < x_end; ++x) fn(x, y);
  }

  CameraView view_;
  int workers_;
  std::size_t record_count_;
  std::vector<ProjectedGaussian> splats_;
  int tiles_x_ = 0;
  int tiles_y_ = 0;
  std::vector<std::vector<std::uint32_t>> bins_;
};

using GaussianGradients = PreparedFrame::Gradients;

inline RenderOutput render(const GaussianScene& scene, const CameraView& view, int workers = 1) {
  return PreparedFrame(scene, view, workers).forward();
}

inline GaussianGradients render_backward(const GaussianScene& scene, const CameraView& view,
                                         const RgbImage& grad_color, int workers = 1) {
  return PreparedFrame(scene, view, workers).backward(grad_color);
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kDefaultSsimWeight = 0.2;

struct LossBreakdown {
  double l1 = 0.0;
  double ssim = 0.0;
  double total = 0.0;
};

struct LossResult {
  LossBreakdown loss;
  RgbImage grad;  // ∂total/∂rendered colour
};

/// total = (1-λ)·L1 + λ·(1-SSIM).
inline LossResult compute_loss(const RgbImage& rendered, const RgbImage& target, double lambda = kDefaultSsimWeight) {
  require_same_shape(rendered, target, "loss");
  LossResult r;
  RgbImage ssim_grad;
  r.loss.l1 = mean_abs_error(rendered, target);
  r.loss.ssim = ssim(rendered, target, &ssim_grad);
  r.loss.total = (1.0 - lambda) * r.loss.l1 + lambda * (1.0 - r.loss.ssim);
  r.grad = RgbImage(rendered.width(), rendered.height(), rendered.channels(), 0.0);
  const double l1_scale = (1.0 - lambda) / static_cast<double>(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered.values()[i] - target.values()[i];
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    r.grad.values()[i] = l1_scale * sign - lambda * ssim_grad.values()[i];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct TuneSchedule {
  int k_int = 500;
  int k_reap = 2;
  double lr_color = 0.0025;
  double lr_opacity = 0.05;
  double lambda = kDefaultSsimWeight;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-15;

  void validate() const {
    if (k_int < 1 || k_reap < 1) fail(ErrorKind::validation, "k_int and k_reap must be >= 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorKind::validation, "lambda must lie in [0,1]");
    if (!(lr_color >= 0.0) || !(lr_opacity >= 0.0)) fail(ErrorKind::validation, "learning rates must be >= 0");
  }
};

/// Adam moments for the trainable fields of every record.
class AppearanceOptimizer {
 public:
  AppearanceOptimizer(std::size_t n, const TuneSchedule& s)
      : schedule_(s), m_(n * 4, 0.0), v_(n * 4, 0.0) {}

  void step(GaussianScene& scene, const GaussianGradients& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(schedule_.beta1, t_);
    const double bc2 = 1.0 - std::pow(schedule_.beta2, t_);
    for (std::size_t i = 0; i < scene.size(); ++i) {
      auto& rec = scene.records[i];
      if (scene.trainable.color) {
        for (int k = 0; k < 3; ++k) rec.color_logit[k] -= update(i * 4 + k, g.color_logit[i][k], schedule_.lr_color, bc1, bc2);
      }
      if (scene.trainable.opacity) {
        rec.opacity_logit -= update(i * 4 + 3, g.opacity_logit[i], schedule_.lr_opacity, bc1, bc2);
      }
    }
  }

 private:
  double update(std::size_t slot, double grad, double lr, double bc1, double bc2) {
    if (!std::isfinite(grad)) fail(ErrorKind::numeric, "non-finite gradient");
    m_[slot] = schedule_.beta1 * m_[slot] + (1.0 - schedule_.beta1) * grad;
    v_[slot] = schedule_.beta2 * v_[slot] + (1.0 - schedule_.beta2) * grad * grad;
    return lr * (m_[slot] / bc1) / (std::sqrt(v_[slot] / bc2) + schedule_.adam_epsilon);
  }

  TuneSchedule schedule_;
  std::vector<double> m_;
  std::vector<double> v_;
  int t_ = 0;
};

struct LossLogEntry {
  int step = 0;
  int view_id = 0;
  LossBreakdown loss;
};

/// Maps (current renders, current targets, update index) to new targets.
using RelightFn =
    std::function<std::vector<RgbImage>(const std::vector<RgbImage>&, const std::vector<RgbImage>&, int)>;

struct FinetuneResult {
  GaussianScene scene;
  std::vector<LossLogEntry> log;
  std::vector<int> dataset_updates;  // step index at which each update happened
  std::vector<RgbImage> targets;     // final training targets
  std::optional<std::string> aborted;
};

struct FinetuneOptions {
  int workers = 1;
  std::function<void(const LossLogEntry&)> on_step;
};

inline std::vector<RgbImage> render_all(const GaussianScene& scene, const std::vector<CameraView>& views,
                                        int workers = 1) {
  std::vector<RgbImage> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(render(scene, v, workers).color);
  return out;
}

/// k_reap epochs; each starts with a dataset update (render every view, then
/// relight_fn) followed by k_int Adam steps over the views in round-robin
/// order. Geometry is never modified.
inline FinetuneResult finetune(const GaussianScene& scene, const std::vector<CameraView>& views,
                               std::vector<RgbImage> targets, const TuneSchedule& schedule,
                               const RelightFn& relight_fn, const FinetuneOptions& options = {}) {
  schedule.validate();
  if (views.empty()) fail(ErrorKind::domain, "finetune needs at least one view");
  if (targets.size() != views.size()) fail(ErrorKind::shape, "need exactly one target per view");
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!targets[i].same_extent(views[i].width, views[i].height) || targets[i].channels() != 3) {
      fail(ErrorKind::shape, "target size does not match view " + std::to_string(views[i].view_id));
    }
  }

  FinetuneResult result;
  result.scene = scene;
  result.scene.trainable = TrainableMask{};
  AppearanceOptimizer optimizer(scene.size(), schedule);
  int step = 0;
  for (int epoch = 0; epoch < schedule.k_reap; ++epoch) {
    try {
      auto fresh = relight_fn(render_all(result.scene, views, options.workers), targets, epoch);
      if (fresh.size() != views.size()) fail(ErrorKind::adapter, "relight_fn returned the wrong number of images");
      for (std::size_t i = 0; i < views.size(); ++i) {
        if (!fresh[i].same_shape(targets[i])) fail(ErrorKind::adapter, "relight_fn changed image dimensions");
      }
      targets = std::move(fresh);
    } catch (const std::exception& e) {
      result.aborted = "dataset update " + std::to_string(epoch) + " failed after " + std::to_string(step) +
                       " steps: " + e.what();
      result.targets = std::move(targets);
      return result;
    }
    result.dataset_updates.push_back(step);
    for (int k = 0; k < schedule.k_int; ++k, ++step) {
      const std::size_t vi = static_cast<std::size_t>(step) % views.size();
      const PreparedFrame frame(result.scene, views[vi], options.workers);
      const RenderOutput rendered = frame.forward();
      const LossResult loss = compute_loss(rendered.color, targets[vi], schedule.lambda);
      LossLogEntry entry{step, views[vi].view_id, loss.loss};
      result.log.push_back(entry);
      if (options.on_step) options.on_step(entry);
      optimizer.step(result.scene, frame.backward(loss.grad));
    }
  }
  result.targets = std::move(targets);
  return result;
}

inline std::string loss_log_csv(const std::vector<LossLogEntry>& log) {
  std::string out = "step,view_id,l1,ssim,total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", e.step, e.view_id, e.loss.l1, e.loss.ssim,
                  e.loss.total);
    out += buf;
  }
  return out;
}

}  // namespace gslight
