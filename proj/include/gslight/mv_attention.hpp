#pragma once

// Multi-view coupling: cross-view attention over key frames, epipolar
// correspondence for the remaining frames, and the relighter boundary.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gslight/camera_geometry.hpp"
#include "gslight/errors.hpp"
#include "gslight/half.hpp"
#include "gslight/illumination.hpp"
#include "gslight/image.hpp"
#include "gslight/parallel.hpp"
#include "gslight/process.hpp"
#include "gslight/prompt_align.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

/// H×W grid of d-dimensional features.
struct FeatureMap {
  int view_id = 0;
  Raster<double> values;

  FeatureMap() = default;
  FeatureMap(int id, int width, int height, int dim) : view_id(id), values(width, height, dim) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  int dim() const { return values.channels(); }
  std::span<const double> at(int x, int y) const { return values.pixel(x, y); }
  std::span<double> at(int x, int y) { return values.pixel(x, y); }
};

// ---------------------------------------------------------------------------
// Key frames

/// Every stride-th view in view_id order, starting with the first.
inline std::vector<int> select_key_frames(const std::vector<CameraView>& views, int stride) {
  if (stride < 1) fail(ErrorKind::domain, "key-frame stride must be >= 1");
  if (views.empty()) fail(ErrorKind::domain, "no views to select key frames from");
  std::vector<int> ids;
  for (const auto& v : views) ids.push_back(v.view_id);
  std::sort(ids.begin(), ids.end());
  std::vector<int> keys;
  for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(stride)) keys.push_back(ids[i]);
  return keys;
}

/// Key view whose camera centre is closest; ties go to the lower view_id.
inline int nearest_key_frame(const CameraView& view, const std::vector<CameraView>& keys) {
  if (keys.empty()) fail(ErrorKind::domain, "empty key-frame set");
  int best = keys.front().view_id;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& k : keys) {
    const double d = (k.center() - view.center()).norm();
    if (d < best_d || (d == best_d && k.view_id < best)) {
      best = k.view_id;
      best_d = d;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Cross-view attention

namespace detail {

inline void require_same_grid(const std::vector<FeatureMap>& maps, int w, int h, const char* what) {
  for (const auto& m : maps) {
    if (m.width() != w || m.height() != h) fail(ErrorKind::shape, std::string(what) + ": spatial size mismatch");
  }
}

}  // namespace detail

/// Softmax(Q_f·[K_1..K_F]ᵀ/√d) weights for one query pixel of frame `frame`
/// (0-based), laid out frame-major then row-major.
inline std::vector<double> cross_view_attention_weights(const std::vector<FeatureMap>& queries,
                                                        const std::vector<FeatureMap>& keys, std::size_t frame,
                                                        PixelIndex query) {
  if (frame >= queries.size()) fail(ErrorKind::domain, "frame index out of range");
  const FeatureMap& q = queries[frame];
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim()));
  const auto qv = q.at(query.x, query.y);
  std::vector<double> logits;
  logits.reserve(keys.size() * keys.front().values.pixel_count());
  for (const auto& k : keys) {
    if (k.dim() != q.dim()) fail(ErrorKind::shape, "query/key dimension mismatch");
    for (int y = 0; y < k.height(); ++y) {
      for (int x = 0; x < k.width(); ++x) {
        const auto kv = k.at(x, y);
        double dot = 0.0;
        for (int c = 0; c < q.dim(); ++c) dot += qv[c] * kv[c];
        logits.push_back(dot * inv_sqrt_d);
      }
    }
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - m));
  for (double& l : logits) l /= z;
  return logits;
}

/// Attention output for every query pixel of frame `frame` (0-based) against
/// the keys and values of all frames.
inline FeatureMap cross_view_attention(const std::vector<FeatureMap>& queries, const std::vector<FeatureMap>& keys,
                                       const std::vector<FeatureMap>& values, std::size_t frame, int workers = 1) {
  if (queries.empty() || keys.size() != queries.size() || values.size() != queries.size()) {
    fail(ErrorKind::shape, "queries, keys and values need one map per frame");
  }
  if (frame >= queries.size()) fail(ErrorKind::domain, "frame index out of range");
  const int w = queries.front().width();
  const int h = queries.front().height();
  const int d = queries.front().dim();
  const int dv = values.front().dim();
  detail::require_same_grid(queries, w, h, "queries");
  detail::require_same_grid(keys, w, h, "keys");
  detail::require_same_grid(values, w, h, "values");
  for (std::size_t f = 0; f < queries.size(); ++f) {
    if (queries[f].dim() != d || keys[f].dim() != d) fail(ErrorKind::shape, "query/key dimension mismatch");
    if (values[f].dim() != dv) fail(ErrorKind::shape, "value dimension mismatch");
  }

  FeatureMap out(queries[frame].view_id, w, h, dv);
  parallel_for(static_cast<std::size_t>(w) * h, workers, [&](std::size_t i) {
    const PixelIndex p{static_cast<int>(i % w), static_cast<int>(i / w)};
    const auto weights = cross_view_attention_weights(queries, keys, frame, p);
    auto o = out.at(p.x, p.y);
    std::size_t k = 0;
    for (const auto& vm : values) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x, ++k) {
          const auto v = vm.at(x, y);
          for (int c = 0; c < dv; ++c) o[c] += weights[k] * v[c];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Epipolar correspondence

/// 1 - cos(a, b); zero-norm vectors are at distance 1 from everything.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

/// `reduced` evaluates epipolar residuals with binary16 rounding.
enum class PrecisionMode { full, reduced };

inline const char* to_string(PrecisionMode m) { return m == PrecisionMode::full ? "full" : "reduced"; }

/// Overflow counts keyed by feature-grid size. Merging is a per-key sum, so
/// aggregation is associative and order-independent.
struct OverflowReport {
  struct Counts {
    std::uint64_t total = 0;
    std::uint64_t overflowed = 0;
    double rate() const { return total ? static_cast<double>(overflowed) / static_cast<double>(total) : 0.0; }
    friend bool operator==(const Counts&, const Counts&) = default;
  };
  std::map<int, Counts> resolutions;

  void add(int size, std::uint64_t total, std::uint64_t overflowed) {
    auto& c = resolutions[size];
    c.total += total;
    c.overflowed += overflowed;
  }
  void merge(const OverflowReport& other) {
    for (const auto& [size, c] : other.resolutions) add(size, c.total, c.overflowed);
  }
  /// Unweighted mean of the per-resolution rates.
  double avg_rate() const {
    if (resolutions.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [size, c] : resolutions) s += c.rate();
    return s / static_cast<double>(resolutions.size());
  }

  friend bool operator==(const OverflowReport&, const OverflowReport&) = default;
};

inline nlohmann::json to_json(const OverflowReport& r) {
  nlohmann::json j;
  j["resolutions"] = nlohmann::json::array();
  for (const auto& [size, c] : r.resolutions) {
    j["resolutions"].push_back({{"size", size}, {"total", c.total}, {"overflowed", c.overflowed}, {"rate", c.rate()}});
  }
  j["avg_rate"] = r.avg_rate();
  return j;
}

inline OverflowReport overflow_report_from_json(const nlohmann::json& j) {
  OverflowReport r;
  for (const auto& e : j.at("resolutions")) {
    r.add(e.at("size").get<int>(), e.at("total").get<std::uint64_t>(), e.at("overflowed").get<std::uint64_t>());
  }
  return r;
}

inline constexpr PixelIndex kUnmatched{-1, -1};

/// Per-pixel match from a non-key feature grid into its key view's grid.
struct CorrespondenceMap {
  int source_view_id = 0;
  int key_view_id = 0;
  int width = 0;
  int height = 0;
  int key_width = 0;
  int key_height = 0;
  std::vector<PixelIndex> entries;  // row-major, kUnmatched where no candidate existed

  PixelIndex at(int x, int y) const { return entries[static_cast<std::size_t>(y) * width + x]; }
  bool matched(int x, int y) const { return at(x, y) != kUnmatched; }
  std::size_t matched_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](auto p) { return p != kUnmatched; }));
  }

  friend bool operator==(const CorrespondenceMap&, const CorrespondenceMap&) = default;
};

namespace detail {

inline PixelIndex argmin_cosine(std::span<const double> feature, const FeatureMap& key,
                                const std::vector<PixelIndex>& candidates) {
  PixelIndex best = kUnmatched;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    const double d = cosine_distance(feature, key.at(c.x, c.y));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline PixelIndex global_argmin_cosine(std::span<const double> feature, const FeatureMap& key) {
  PixelIndex best = kUnmatched;
  double best_d = std::numeric_limits<double>::infinity();
  for (int y = 0; y < key.height(); ++y) {
    for (int x = 0; x < key.width(); ++x) {
      const double d = cosine_distance(feature, key.at(x, y));
      if (d < best_d) {
        best_d = d;
        best = {x, y};
      }
    }
  }
  return best;
}

/// Candidate search with every intermediate of the residual pᵥᵀF̂pᵤ rounded
/// to binary16. Returns std::nullopt when any intermediate overflows.
inline std::optional<std::vector<PixelIndex>> reduced_precision_candidates(const Eigen::Matrix3d& f, PixelIndex src,
                                                                           int key_w, int key_h, double band) {
  using H = HalfOps;
  const double px = H::value(src.x + 0.5);
  const double py = H::value(src.y + 0.5);
  double l[3];
  for (int r = 0; r < 3; ++r) {
    l[r] = H::add(H::add(H::mul(H::value(f(r, 0)), px), H::mul(H::value(f(r, 1)), py)), H::value(f(r, 2)));
  }
  if (!std::isfinite(l[0]) || !std::isfinite(l[1]) || !std::isfinite(l[2])) return std::nullopt;
  const double norm2 = H::add(H::mul(l[0], l[0]), H::mul(l[1], l[1]));
  if (!std::isfinite(norm2)) return std::nullopt;
  const double threshold = H::mul(H::value(band), H::value(std::sqrt(norm2)));

  std::vector<PixelIndex> out;
  for (int y = 0; y < key_h; ++y) {
    const double by = H::mul(l[1], H::value(y + 0.5));
    for (int x = 0; x < key_w; ++x) {
      const double r = H::add(H::add(H::mul(l[0], H::value(x + 0.5)), by), l[2]);
      if (!std::isfinite(r)) return std::nullopt;
      if (std::abs(r) <= threshold) out.push_back({x, y});
    }
  }
  if (norm2 > 0.0 && !out.empty()) {
    EpipolarLine line{{l[0], l[1], l[2] + 0.5 * (l[0] + l[1])}};
    sort_along_line(line, out);
  }
  return out;
}

}  // namespace detail

/// Matches every non-key pixel to the key pixel on its epipolar band with
/// minimal cosine distance. `f` maps non-key grid coordinates to key-grid
/// lines (see to_feature_grid). In reduced mode, pixels whose residuals
/// overflow fall back to a global argmin and are counted in the report.
inline std::pair<CorrespondenceMap, OverflowReport> epipolar_correspondence(const FeatureMap& nonkey,
                                                                            const FeatureMap& key,
                                                                            const FundamentalMatrix& f, double band,
                                                                            PrecisionMode mode, int workers = 1) {
  if (nonkey.dim() != key.dim()) fail(ErrorKind::shape, "feature dimension mismatch between views");
  CorrespondenceMap corr{nonkey.view_id, key.view_id, nonkey.width(), nonkey.height(), key.width(), key.height(),
                         std::vector<PixelIndex>(nonkey.values.pixel_count(), kUnmatched)};
  std::vector<std::uint8_t> overflowed(corr.entries.size(), 0);

  parallel_for(corr.entries.size(), workers, [&](std::size_t i) {
    const PixelIndex p{static_cast<int>(i % nonkey.width()), static_cast<int>(i / nonkey.width())};
    const auto feature = nonkey.at(p.x, p.y);
    if (mode == PrecisionMode::full) {
      std::vector<PixelIndex> candidates;
      try {
        candidates = sample_epipolar_candidates(epipolar_line(f, pixel_center(p)), key.width(), key.height(), band);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate) throw;
      }
      corr.entries[i] = detail::argmin_cosine(feature, key, candidates);
    } else {
      const auto candidates =
          detail::reduced_precision_candidates(f.matrix, p, key.width(), key.height(), band);
      if (!candidates) {
        overflowed[i] = 1;
        corr.entries[i] = detail::global_argmin_cosine(feature, key);
      } else {
        corr.entries[i] = detail::argmin_cosine(feature, key, *candidates);
      }
    }
  });

  OverflowReport report;
  report.add(nonkey.width(), corr.entries.size(),
             static_cast<std::uint64_t>(std::count(overflowed.begin(), overflowed.end(), 1)));
  return {std::move(corr), std::move(report)};
}

/// Matched pixels copy the key output at their match; the rest copy fallback.
inline FeatureMap propagate_features(const FeatureMap& key_output, const CorrespondenceMap& corr,
                                     const FeatureMap& fallback) {
  if (corr.key_view_id != key_output.view_id) fail(ErrorKind::domain, "correspondence targets a different key view");
  if (corr.key_width != key_output.width() || corr.key_height != key_output.height()) {
    fail(ErrorKind::shape, "correspondence key grid does not match key output");
  }
  if (fallback.width() != corr.width || fallback.height() != corr.height || fallback.dim() != key_output.dim()) {
    fail(ErrorKind::shape, "fallback map does not match the correspondence grid");
  }
  FeatureMap out = fallback;
  for (int y = 0; y < corr.height; ++y) {
    for (int x = 0; x < corr.width; ++x) {
      const PixelIndex m = corr.at(x, y);
      if (m == kUnmatched) continue;
      const auto src = key_output.at(m.x, m.y);
      std::copy(src.begin(), src.end(), out.at(x, y).begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relighter boundary

/// "0007"-style stem shared by every per-view file.
inline std::string view_stem(int view_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d", view_id);
  return buf;
}

struct RelightRequest {
  int view_id = 0;
  RgbImage image;
  IlluminationMap illumination;
  LatentBlock latent;
  std::string prompt;
};

class RelighterBackend {
 public:
  virtual ~RelighterBackend() = default;
  virtual std::vector<RgbImage> relight(const std::vector<RelightRequest>& batch) const = 0;
};

/// Colour multiplier from the first recognised colour word in the prompt.
inline Eigen::Vector3d tint_for_prompt(const std::string& prompt) {
  static const std::vector<std::pair<std::string, Eigen::Vector3d>> kTable = {
      {"warm", {1.0, 0.85, 0.65}},   {"sunset", {1.0, 0.7, 0.45}}, {"golden", {1.0, 0.85, 0.5}},
      {"orange", {1.0, 0.7, 0.4}},   {"red", {1.0, 0.55, 0.5}},    {"pink", {1.0, 0.7, 0.85}},
      {"purple", {0.8, 0.6, 1.0}},   {"neon", {0.9, 0.6, 1.0}},    {"blue", {0.6, 0.75, 1.0}},
      {"cool", {0.8, 0.9, 1.0}},     {"cold", {0.8, 0.9, 1.0}},    {"moonlight", {0.75, 0.8, 1.0}},
      {"green", {0.65, 1.0, 0.7}},   {"white", {1.0, 1.0, 1.0}},
  };
  std::string word;
  auto check = [&]() -> std::optional<Eigen::Vector3d> {
    for (const auto& [name, tint] : kTable)
      if (word == name) return tint;
    return std::nullopt;
  };
  for (char ch : to_lower(prompt) + " ") {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word += ch;
      continue;
    }
    if (auto t = check()) return *t;
    word.clear();
  }
  return Eigen::Vector3d::Ones();
}

/// out = clamp(src ⊙ tint ⊙ (ambient + diffuse·I_d)).
class AnalyticRelighter final : public RelighterBackend {
 public:
  AnalyticRelighter(double ambient = 0.3, double diffuse = 0.7) : ambient_(ambient), diffuse_(diffuse) {}

  std::vector<RgbImage> relight(const std::vector<RelightRequest>& batch) const override {
    std::vector<RgbImage> out;
    out.reserve(batch.size());
    for (const auto& req : batch) {
      if (!req.illumination.values.same_extent(req.image.width(), req.image.height())) {
        fail(ErrorKind::shape, "illumination map size differs from image for view " + std::to_string(req.view_id));
      }
      const Eigen::Vector3d tint = tint_for_prompt(req.prompt);
      RgbImage img = req.image;
      for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
          const double shade = ambient_ + diffuse_ * req.illumination.at(x, y);
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(img.at(x, y, c) * tint[c] * shade, 0.0, 1.0);
        }
      }
      out.push_back(std::move(img));
    }
    return out;
  }

 private:
  double ambient_;
  double diffuse_;
};

/// Runs `command manifest.json output_dir`; the manifest lists
/// {view_id, image_path, latent_path, prompt} and the command must write
/// output_dir/<stem>.png for each view.
class ExternalRelighter final : public RelighterBackend {
 public:
  ExternalRelighter(std::string command, fs::path work_dir) : command_(std::move(command)), work_dir_(std::move(work_dir)) {}

  std::vector<RgbImage> relight(const std::vector<RelightRequest>& batch) const override {
    const fs::path in_dir = work_dir_ / "relight_in";
    const fs::path out_dir = work_dir_ / "relight_out";
    fs::create_directories(in_dir);
    fs::remove_all(out_dir);
    fs::create_directories(out_dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& req : batch) {
      const fs::path image_path = in_dir / (view_stem(req.view_id) + ".png");
      const fs::path latent_path = in_dir / (view_stem(req.view_id) + ".gsll");
      save_png_rgb(image_path, req.image);
      save_latent(latent_path, req.latent);
      manifest.push_back({{"view_id", req.view_id},
                          {"image_path", fs::absolute(image_path).string()},
                          {"latent_path", fs::absolute(latent_path).string()},
                          {"prompt", req.prompt}});
    }
    const fs::path manifest_path = in_dir / "manifest.json";
    write_text_file(manifest_path, manifest.dump(2) + "\n");
    const auto r = run_process(command_, {fs::absolute(manifest_path).string(), fs::absolute(out_dir).string()});
    if (r.exit_code != 0) fail(ErrorKind::adapter, "relighter exited with code " + std::to_string(r.exit_code));

    std::vector<RgbImage> out;
    for (const auto& req : batch) {
      const fs::path p = out_dir / (view_stem(req.view_id) + ".png");
      if (!fs::exists(p)) fail(ErrorKind::adapter, "relighter produced no output for view " + std::to_string(req.view_id));
      try {
        out.push_back(load_png_rgb(p));
      } catch (const Error& e) {
        fail(ErrorKind::adapter, "view " + std::to_string(req.view_id) + ": " + e.what());
      }
    }
    return out;
  }

 private:
  std::string command_;
  fs::path work_dir_;
};

/// Runs the backend and enforces its contract: one image per request, same
/// size, values in [0,1].
inline std::vector<RgbImage> relight_views(const std::vector<RelightRequest>& batch, const RelighterBackend& backend) {
  auto out = backend.relight(batch);
  if (out.size() != batch.size()) {
    fail(ErrorKind::adapter, "relighter returned " + std::to_string(out.size()) + " images for " +
                                 std::to_string(batch.size()) + " views");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!out[i].same_shape(batch[i].image)) {
      fail(ErrorKind::adapter, "contract violation: relit view " + std::to_string(batch[i].view_id) +
                                   " changed size to " + std::to_string(out[i].width()) + "x" +
                                   std::to_string(out[i].height()));
    }
    for (double& v : out[i].values()) {
      if (!std::isfinite(v)) fail(ErrorKind::adapter, "non-finite pixel in relit view " + std::to_string(batch[i].view_id));
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace gslight
