#pragma once

// Lighting priors from the constrained answer template, and their resolution
// into a 3D light position in reference-camera coordinates.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gslight/camera_geometry.hpp"
#include "gslight/errors.hpp"
#include "gslight/process.hpp"
#include "gslight/scene_io.hpp"

namespace gslight {

enum class LightDirection { left, right, top, bottom };

inline constexpr std::array<LightDirection, 4> kAllDirections = {LightDirection::left, LightDirection::right,
                                                                 LightDirection::top, LightDirection::bottom};

inline const char* to_string(LightDirection d) {
  switch (d) {
    case LightDirection::left: return "left";
    case LightDirection::right: return "right";
    case LightDirection::top: return "top";
    case LightDirection::bottom: return "bottom";
  }
  return "left";
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

inline std::string trim(std::string_view s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(s.front())) s.remove_prefix(1);
  while (!s.empty() && issp(s.back())) s.remove_suffix(1);
  return std::string(s);
}

inline std::optional<LightDirection> direction_from_string(std::string_view word) {
  const std::string w = to_lower(trim(word));
  for (auto d : kAllDirections)
    if (w == to_string(d)) return d;
  return std::nullopt;
}

struct LightingPrior {
  LightDirection direction = LightDirection::left;
  std::string object_prompt;

  friend bool operator==(const LightingPrior&, const LightingPrior&) = default;
};

inline constexpr std::string_view kAnswerTemplate = "Light is on the {DIRECTION} of the {OBJECT}";

inline std::string render_template(const LightingPrior& prior) {
  return std::string("Light is on the ") + to_string(prior.direction) + " of the " + prior.object_prompt;
}

/// Parses "Light is on the {DIRECTION} of the {OBJECT}" case-insensitively.
/// The direction is a single word, so the split happens at the first " of the "
/// after it and any "of the" inside the object phrase survives. One trailing
/// period is dropped.
inline LightingPrior parse_lvlm_answer(std::string_view answer) {
  const std::string raw(answer);
  std::string text = trim(answer);
  if (!text.empty() && text.back() == '.') text = trim(std::string_view(text).substr(0, text.size() - 1));
  const std::string lower = to_lower(text);

  constexpr std::string_view kPrefix = "light is on the ";
  constexpr std::string_view kJoin = " of the ";
  if (!lower.starts_with(kPrefix)) fail(ErrorKind::parse, "answer does not match template: \"" + raw + "\"");
  const std::size_t join = lower.find(kJoin, kPrefix.size());
  if (join == std::string::npos) fail(ErrorKind::parse, "answer does not match template: \"" + raw + "\"");

  const std::string word = text.substr(kPrefix.size(), join - kPrefix.size());
  const std::string object = trim(std::string_view(text).substr(join + kJoin.size()));
  if (trim(word).empty() || object.empty()) {
    fail(ErrorKind::parse, "answer does not match template: \"" + raw + "\"");
  }
  const auto dir = direction_from_string(word);
  if (!dir) fail(ErrorKind::vocabulary, "direction '" + trim(word) + "' is not one of left/right/top/bottom");
  return {*dir, object};
}

/// Mean of the set pixels' centres.
inline Eigen::Vector2d mask_centroid(const ObjectMask& mask) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      sx += x + 0.5;
      sy += y + 0.5;
      ++n;
    }
  }
  if (n == 0) fail(ErrorKind::domain, "object mask is empty");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

struct LightPosition {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Depth at a continuous pixel; invalid samples fall back to the median of the
/// valid depths in the surrounding 5×5 window.
inline double sample_depth(const DepthMap& depth, const Eigen::Vector2d& pixel) {
  const int px = std::clamp(static_cast<int>(std::floor(pixel.x())), 0, depth.width() - 1);
  const int py = std::clamp(static_cast<int>(std::floor(pixel.y())), 0, depth.height() - 1);
  if (depth.valid(px, py)) return depth.at(px, py);
  std::vector<double> window;
  for (int y = py - 2; y <= py + 2; ++y)
    for (int x = px - 2; x <= px + 2; ++x)
      if (x >= 0 && y >= 0 && x < depth.width() && y < depth.height() && depth.valid(x, y))
        window.push_back(depth.at(x, y));
  if (window.empty()) fail(ErrorKind::domain, "no valid depth near the reference object centroid");
  std::sort(window.begin(), window.end());
  const std::size_t m = window.size() / 2;
  return window.size() % 2 ? window[m] : 0.5 * (window[m - 1] + window[m]);
}

/// p_l = unproject(centroid, d_ref) + Δ_init.
inline LightPosition initial_light_position(const Eigen::Vector2d& centroid, const DepthMap& depth_ref,
                                            const CameraView& view, const Eigen::Vector3d& delta_init) {
  const double d_ref = sample_depth(depth_ref, centroid);
  return {unproject(view, centroid, d_ref) + delta_init};
}

/// Unit offset for a direction in OpenCV camera axes (y points down).
inline Eigen::Vector3d direction_vector(LightDirection d) {
  switch (d) {
    case LightDirection::left: return {-1.0, 0.0, 0.0};
    case LightDirection::right: return {1.0, 0.0, 0.0};
    case LightDirection::top: return {0.0, -1.0, 0.0};
    case LightDirection::bottom: return {0.0, 1.0, 0.0};
  }
  return Eigen::Vector3d::Zero();
}

inline LightPosition apply_direction_offset(const LightPosition& p, LightDirection direction, double magnitude) {
  if (!(magnitude > 0.0)) fail(ErrorKind::domain, "direction offset magnitude must be positive");
  return {p.position + magnitude * direction_vector(direction)};
}

/// How Δ_init and |Δp_dir| are chosen: either absolute scene units or
/// multiples of the reference depth d_ref.
struct LightPlacement {
  bool relative_to_depth = true;
  Eigen::Vector3d delta_init{0.0, -0.5, -0.5};
  double direction_magnitude = 1.0;
};

/// Everything resolved for the reference view, in its camera coordinates.
struct LightResolution {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  double d_ref = 0.0;
  Eigen::Vector3d surface_point = Eigen::Vector3d::Zero();
  LightPosition initial;
  LightPosition final;
};

inline LightResolution resolve_light(const LightingPrior& prior, const ObjectMask& mask, const DepthMap& depth_ref,
                                     const CameraView& view, const LightPlacement& placement = {}) {
  if (!depth_ref.raster.same_extent(view.width, view.height) || !mask.raster.same_extent(view.width, view.height)) {
    fail(ErrorKind::shape, "reference mask/depth size does not match view " + std::to_string(view.view_id));
  }
  LightResolution r;
  r.centroid = mask_centroid(mask);
  r.d_ref = sample_depth(depth_ref, r.centroid);
  r.surface_point = unproject(view, r.centroid, r.d_ref);
  const double unit = placement.relative_to_depth ? r.d_ref : 1.0;
  r.initial = {r.surface_point + unit * placement.delta_init};
  r.final = apply_direction_offset(r.initial, prior.direction, unit * placement.direction_magnitude);
  return r;
}

// ---------------------------------------------------------------------------
// External adapters

/// Invokes `command image instruction template`; the answer is the single
/// line printed to stdout.
inline std::string query_lvlm(const std::string& command, const std::string& image_path,
                              const std::string& instruction) {
  const auto r = run_process(command, {image_path, instruction, std::string(kAnswerTemplate)});
  if (r.exit_code != 0) fail(ErrorKind::adapter, "LVLM adapter exited with code " + std::to_string(r.exit_code));
  return trim(r.stdout_text);
}

/// Invokes `command image object_prompt output_png` and loads the mask.
inline ObjectMask query_segmenter(const std::string& command, const std::string& image_path,
                                  const std::string& object_prompt, const fs::path& output_png) {
  const auto r = run_process(command, {image_path, object_prompt, output_png.string()});
  if (r.exit_code != 0) fail(ErrorKind::adapter, "segmenter adapter exited with code " + std::to_string(r.exit_code));
  if (!fs::exists(output_png)) fail(ErrorKind::adapter, "segmenter adapter wrote no mask to " + output_png.string());
  return load_mask_png(output_png);
}

}  // namespace gslight
