#pragma once

// Per-view diffuse illumination maps and the init latents built from them.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include "gslight/camera_geometry.hpp"
#include "gslight/errors.hpp"
#include "gslight/image.hpp"
#include "gslight/parallel.hpp"
#include "gslight/prompt_align.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

inline constexpr double kDefaultGamma = 2.0;
inline constexpr double kDefaultNoiseLevel = 0.6;
inline constexpr int kLatentDownsample = 8;

struct IlluminationMap {
  Raster<double> values;  // 1 channel, [0,1]
  double gamma = kDefaultGamma;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  double at(int x, int y) const { return values.at(x, y); }
};

/// Unit vector from the light to the surface point seen at `pixel`.
inline Eigen::Vector3d incident_direction(const CameraView& view, const Eigen::Vector2d& pixel, double depth,
                                          const LightPosition& light) {
  const Eigen::Vector3d d = unproject(view, pixel, depth) - light.position;
  const double n = d.norm();
  if (!(n > 1e-12)) fail(ErrorKind::degenerate, "surface point coincides with the light position");
  return d / n;
}

/// Point light, or a directional light whose incident direction is fixed.
enum class LightModel { point, directional };

struct ViewLight {
  LightModel model = LightModel::point;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();   // camera coords, point model
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();  // camera coords, directional model (unit)
};

/// I_d = max(-<l_in, n>, 0)^γ at every pixel with valid depth and normal.
inline IlluminationMap phong_diffuse(const CameraView& view, const DepthMap& depth, const NormalMap& normals,
                                     const ViewLight& light, double gamma = kDefaultGamma, int workers = 1) {
  if (!(gamma > 0.0)) fail(ErrorKind::domain, "gamma must be positive");
  if (!depth.raster.same_extent(view.width, view.height) || !normals.raster.same_extent(view.width, view.height)) {
    fail(ErrorKind::shape, "depth/normal size does not match view " + std::to_string(view.view_id));
  }
  IlluminationMap map{Raster<double>(view.width, view.height, 1, 0.0), gamma};
  parallel_for(static_cast<std::size_t>(view.height), workers, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < view.width; ++x) {
      if (!depth.valid(x, y) || !normals.valid(x, y)) continue;
      Eigen::Vector3d l_in;
      if (light.model == LightModel::directional) {
        l_in = light.direction;
      } else {
        const Eigen::Vector3d d = unproject(view, pixel_center({x, y}), depth.at(x, y)) - light.position;
        const double len = d.norm();
        if (!(len > 1e-12)) continue;
        l_in = d / len;
      }
      const double cosine = -l_in.dot(normals.at(x, y));
      map.values.at(x, y) = cosine > 0.0 ? std::min(1.0, std::pow(cosine, gamma)) : 0.0;
    }
  });
  return map;
}

inline IlluminationMap phong_diffuse(const CameraView& view, const DepthMap& depth, const NormalMap& normals,
                                     const LightPosition& light, double gamma = kDefaultGamma) {
  return phong_diffuse(view, depth, normals, ViewLight{LightModel::point, light.position, {}}, gamma);
}

// ---------------------------------------------------------------------------
// Latents

/// H/8 × W/8 × channels latent grid.
struct LatentBlock {
  Raster<float> values;
  int source_view = 0;

  int height() const { return values.height(); }
  int width() const { return values.width(); }
  int channel_count() const { return values.channels(); }

  friend bool operator==(const LatentBlock&, const LatentBlock&) = default;
};

/// Image encoder seam. Implementations map an H×W×3 image to an
/// (H/8)×(W/8)×channel_count() grid.
class LatentEncoder {
 public:
  virtual ~LatentEncoder() = default;
  virtual int channel_count() const = 0;
  virtual bool deterministic() const = 0;
  virtual Raster<float> encode(const RgbImage& image) const = 0;
};

/// 8×8 area average of R, G, B plus Rec.709 luminance.
class ReferenceEncoder final : public LatentEncoder {
 public:
  int channel_count() const override { return 4; }
  bool deterministic() const override { return true; }

  Raster<float> encode(const RgbImage& image) const override {
    if (image.channels() != 3) fail(ErrorKind::shape, "encoder expects a 3-channel image");
    if (image.width() % kLatentDownsample || image.height() % kLatentDownsample) {
      fail(ErrorKind::shape, "image dimensions must be divisible by 8");
    }
    const int w = image.width() / kLatentDownsample;
    const int h = image.height() / kLatentDownsample;
    Raster<float> out(w, h, 4);
    constexpr double kArea = kLatentDownsample * kLatentDownsample;
    for (int by = 0; by < h; ++by) {
      for (int bx = 0; bx < w; ++bx) {
        double r = 0.0, g = 0.0, b = 0.0;
        for (int y = by * kLatentDownsample; y < (by + 1) * kLatentDownsample; ++y) {
          for (int x = bx * kLatentDownsample; x < (bx + 1) * kLatentDownsample; ++x) {
            r += image.at(x, y, 0);
            g += image.at(x, y, 1);
            b += image.at(x, y, 2);
          }
        }
        r /= kArea;
        g /= kArea;
        b /= kArea;
        out.at(bx, by, 0) = static_cast<float>(r);
        out.at(bx, by, 1) = static_cast<float>(g);
        out.at(bx, by, 2) = static_cast<float>(b);
        out.at(bx, by, 3) = static_cast<float>(0.2126 * r + 0.7152 * g + 0.0722 * b);
      }
    }
    return out;
  }
};

inline std::shared_ptr<const LatentEncoder> reference_encoder() { return std::make_shared<ReferenceEncoder>(); }

inline RgbImage replicate_to_rgb(const IlluminationMap& illum) {
  RgbImage img(illum.width(), illum.height(), 3);
  for (int y = 0; y < illum.height(); ++y)
    for (int x = 0; x < illum.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = illum.at(x, y);
  return img;
}

/// l_i = concat(√ᾱ·l_d + √(1-ᾱ)·ε, l_I) with ᾱ = 1 - noise_level; ε is drawn
/// from a generator seeded by (seed, view_id).
inline LatentBlock encode_init_latent(const IlluminationMap& illum, const RgbImage& source,
                                      const LatentEncoder& encoder, double noise_level, std::uint64_t seed,
                                      int view_id = 0) {
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) fail(ErrorKind::domain, "noise_level must lie in [0,1]");
  if (!illum.values.same_extent(source.width(), source.height())) {
    fail(ErrorKind::shape, "illumination map and source image sizes differ");
  }
  if (source.width() % kLatentDownsample || source.height() % kLatentDownsample) {
    fail(ErrorKind::shape, "image dimensions must be divisible by 8");
  }
  const Raster<float> ld = encoder.encode(replicate_to_rgb(illum));
  const Raster<float> li = encoder.encode(source);
  const int c = encoder.channel_count();
  if (ld.channels() != c || li.channels() != c || ld.width() != source.width() / kLatentDownsample ||
      ld.height() != source.height() / kLatentDownsample || !li.same_shape(ld)) {
    fail(ErrorKind::shape, "encoder output violates its (H/8, W/8, C) contract");
  }

  const double alpha_bar = 1.0 - noise_level;
  const double keep = std::sqrt(alpha_bar);
  const double spread = std::sqrt(1.0 - alpha_bar);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(view_id)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  LatentBlock out{Raster<float>(ld.width(), ld.height(), 2 * c), view_id};
  for (int y = 0; y < ld.height(); ++y) {
    for (int x = 0; x < ld.width(); ++x) {
      for (int k = 0; k < c; ++k) {
        const double eps = normal(rng);
        out.values.at(x, y, k) = static_cast<float>(keep * ld.at(x, y, k) + spread * eps);
        out.values.at(x, y, c + k) = li.at(x, y, k);
      }
    }
  }
  return out;
}

/// "GSLL" magic, u32 height, u32 width, u32 channels, then float32 HWC, all
/// little-endian.
inline void save_latent(const fs::path& path, const LatentBlock& block) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::format, "cannot write " + path.string());
  out.write("GSLL", 4);
  for (int v : {block.height(), block.width(), block.channel_count()}) {
    const auto u = detail::from_little_endian(static_cast<std::uint32_t>(v));
    out.write(reinterpret_cast<const char*>(&u), sizeof(u));
  }
  for (float v : block.values.values()) {
    const float le = detail::from_little_endian(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
  }
}

inline LatentBlock load_latent(const fs::path& path, int source_view = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::format, "cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[3];
  if (!in.read(magic, 4) || std::memcmp(magic, "GSLL", 4) != 0) {
    fail(ErrorKind::format, path.string() + ": bad latent magic");
  }
  if (!in.read(reinterpret_cast<char*>(dims), sizeof(dims))) fail(ErrorKind::format, path.string() + ": short header");
  for (auto& d : dims) d = detail::from_little_endian(d);
  LatentBlock block{Raster<float>(static_cast<int>(dims[1]), static_cast<int>(dims[0]), static_cast<int>(dims[2])),
                    source_view};
  auto vals = block.values.values();
  if (!in.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(float)))) {
    fail(ErrorKind::format, path.string() + ": truncated latent data");
  }
  for (float& v : vals) v = detail::from_little_endian(v);
  return block;
}

}  // namespace gslight
