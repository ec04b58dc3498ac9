#pragma once

// Run configuration and the composable pipeline stages behind the CLI.
//
// Dataset layout (per view, <stem> = zero-padded 4-digit view_id):
//   images/<stem>.png   depths/<stem>.pfm   normals/<stem>.pfm   masks/<stem>.png
// Output layout:
//   prior.json light.json illum/<stem>.{pfm,png} latents/<stem>.gsll
//   relit/<stem>.png tuned.ply loss.csv metrics.json renders/<stem>.png overflow.json

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gslight/camera_geometry.hpp"
#include "gslight/errors.hpp"
#include "gslight/gaussian_scene.hpp"
#include "gslight/illumination.hpp"
#include "gslight/metrics.hpp"
#include "gslight/mv_attention.hpp"
#include "gslight/parallel.hpp"
#include "gslight/prompt_align.hpp"
#include "gslight/scene_io.hpp"
#include "gslight/synthetic.hpp"

namespace gslight {

struct PipelineConfig {
  fs::path scene;
  fs::path cameras;
  fs::path images;  // optional: renders of `scene` are used when empty
  fs::path depths;
  fs::path normals;
  fs::path masks;   // optional when a segmenter adapter is configured
  fs::path output = "out";

  std::optional<int> reference_view;
  std::string instruction;
  double depth_scale = 1.0;

  double gamma = kDefaultGamma;
  LightModel light_model = LightModel::point;
  LightPlacement placement;

  int key_stride = 4;
  double epipolar_band = kDefaultEpipolarBand;
  PrecisionMode precision = PrecisionMode::full;
  std::vector<int> diagnose_resolutions = {64, 32, 16, 8};

  double noise_level = kDefaultNoiseLevel;
  std::string encoder = "reference";
  std::string relighter = "analytic";  // "analytic", "identity", or an external command
  double relight_ambient = 0.3;
  double relight_diffuse = 0.7;
  std::string lvlm;
  std::string segmenter;

  TuneSchedule schedule;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline LightModel light_model_from(const std::string& s) {
  if (s == "point") return LightModel::point;
  if (s == "directional") return LightModel::directional;
  fail(ErrorKind::validation, "light_model must be 'point' or 'directional'");
}

inline PrecisionMode precision_from(const std::string& s) {
  if (s == "full") return PrecisionMode::full;
  if (s == "reduced") return PrecisionMode::reduced;
  fail(ErrorKind::validation, "precision must be 'full' or 'reduced'");
}

inline Eigen::Vector3d vec3_from(const nlohmann::json& j, const char* key) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) fail(ErrorKind::validation, std::string(key) + " needs 3 numbers");
  return {v[0], v[1], v[2]};
}

inline nlohmann::json vec3_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace detail

/// Parses a config document; relative paths resolve against `base_dir`.
/// Unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  if (!j.is_object()) fail(ErrorKind::format, "config must be a JSON object");
  static const std::set<std::string> kKeys = {
      "scene",         "cameras",        "images",         "depths",           "normals",     "masks",
      "output",        "reference_view", "instruction",    "depth_scale",      "gamma",       "light_model",
      "delta_init_mode", "delta_init",   "direction_magnitude", "key_stride",  "epipolar_band", "precision",
      "diagnose_resolutions", "noise_level", "encoder",    "relighter",        "relighter_ambient",
      "relighter_diffuse", "lvlm",       "segmenter",      "k_int",            "k_reap",      "lambda",
      "lr_color",      "lr_opacity",     "seed",           "threads"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.contains(key)) fail(ErrorKind::validation, "unknown config key '" + key + "'");
  }
  PipelineConfig c;
  auto path = [&](const char* key, fs::path& dst) {
    if (!j.contains(key)) return;
    const fs::path p = j[key].get<std::string>();
    dst = p.empty() || p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  try {
    path("scene", c.scene);
    path("cameras", c.cameras);
    path("images", c.images);
    path("depths", c.depths);
    path("normals", c.normals);
    path("masks", c.masks);
    path("output", c.output);
    if (j.contains("reference_view")) c.reference_view = j["reference_view"].get<int>();
    c.instruction = j.value("instruction", c.instruction);
    c.depth_scale = j.value("depth_scale", c.depth_scale);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("light_model")) c.light_model = detail::light_model_from(j["light_model"].get<std::string>());
    if (j.contains("delta_init_mode")) {
      const auto mode = j["delta_init_mode"].get<std::string>();
      if (mode != "relative" && mode != "absolute") {
        fail(ErrorKind::validation, "delta_init_mode must be 'relative' or 'absolute'");
      }
      c.placement.relative_to_depth = mode == "relative";
    }
    if (j.contains("delta_init")) c.placement.delta_init = detail::vec3_from(j["delta_init"], "delta_init");
    c.placement.direction_magnitude = j.value("direction_magnitude", c.placement.direction_magnitude);
    c.key_stride = j.value("key_stride", c.key_stride);
    c.epipolar_band = j.value("epipolar_band", c.epipolar_band);
    if (j.contains("precision")) c.precision = detail::precision_from(j["precision"].get<std::string>());
    if (j.contains("diagnose_resolutions")) c.diagnose_resolutions = j["diagnose_resolutions"].get<std::vector<int>>();
    c.noise_level = j.value("noise_level", c.noise_level);
    c.encoder = j.value("encoder", c.encoder);
    c.relighter = j.value("relighter", c.relighter);
    c.relight_ambient = j.value("relighter_ambient", c.relight_ambient);
    c.relight_diffuse = j.value("relighter_diffuse", c.relight_diffuse);
    c.lvlm = j.value("lvlm", c.lvlm);
    c.segmenter = j.value("segmenter", c.segmenter);
    c.schedule.k_int = j.value("k_int", c.schedule.k_int);
    c.schedule.k_reap = j.value("k_reap", c.schedule.k_reap);
    c.schedule.lambda = j.value("lambda", c.schedule.lambda);
    c.schedule.lr_color = j.value("lr_color", c.schedule.lr_color);
    c.schedule.lr_opacity = j.value("lr_opacity", c.schedule.lr_opacity);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  return config_from_json(read_json_file(path), path.parent_path());
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["scene"] = c.scene.string();
  j["cameras"] = c.cameras.string();
  j["images"] = c.images.string();
  j["depths"] = c.depths.string();
  j["normals"] = c.normals.string();
  j["masks"] = c.masks.string();
  j["output"] = c.output.string();
  if (c.reference_view) j["reference_view"] = *c.reference_view;
  j["instruction"] = c.instruction;
  j["depth_scale"] = c.depth_scale;
  j["gamma"] = c.gamma;
  j["light_model"] = c.light_model == LightModel::point ? "point" : "directional";
  j["delta_init_mode"] = c.placement.relative_to_depth ? "relative" : "absolute";
  j["delta_init"] = detail::vec3_json(c.placement.delta_init);
  j["direction_magnitude"] = c.placement.direction_magnitude;
  j["key_stride"] = c.key_stride;
  j["epipolar_band"] = c.epipolar_band;
  j["precision"] = to_string(c.precision);
  j["diagnose_resolutions"] = c.diagnose_resolutions;
  j["noise_level"] = c.noise_level;
  j["encoder"] = c.encoder;
  j["relighter"] = c.relighter;
  j["relighter_ambient"] = c.relight_ambient;
  j["relighter_diffuse"] = c.relight_diffuse;
  j["lvlm"] = c.lvlm;
  j["segmenter"] = c.segmenter;
  j["k_int"] = c.schedule.k_int;
  j["k_reap"] = c.schedule.k_reap;
  j["lambda"] = c.schedule.lambda;
  j["lr_color"] = c.schedule.lr_color;
  j["lr_opacity"] = c.schedule.lr_opacity;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

/// Range and path checks; only paths that are set are required to exist.
inline void validate(const PipelineConfig& c) {
  for (const auto& [name, p] : std::map<std::string, fs::path>{{"scene", c.scene},
                                                               {"cameras", c.cameras},
                                                               {"images", c.images},
                                                               {"depths", c.depths},
                                                               {"normals", c.normals},
                                                               {"masks", c.masks}}) {
    if (!p.empty() && !fs::exists(p)) fail(ErrorKind::validation, name + " path does not exist: " + p.string());
  }
  if (c.scene.empty()) fail(ErrorKind::validation, "config needs a scene path");
  if (c.cameras.empty()) fail(ErrorKind::validation, "config needs a cameras path");
  if (!(c.gamma > 0.0)) fail(ErrorKind::validation, "gamma must be positive");
  if (c.key_stride < 1) fail(ErrorKind::validation, "key_stride must be >= 1");
  if (!(c.epipolar_band >= 0.0)) fail(ErrorKind::validation, "epipolar_band must be >= 0");
  if (!(c.noise_level >= 0.0 && c.noise_level <= 1.0)) fail(ErrorKind::validation, "noise_level must lie in [0,1]");
  if (!(c.placement.direction_magnitude > 0.0)) fail(ErrorKind::validation, "direction_magnitude must be positive");
  if (!(c.depth_scale > 0.0)) fail(ErrorKind::validation, "depth_scale must be positive");
  if (c.encoder != "reference") fail(ErrorKind::validation, "encoder must be 'reference'");
  if (c.threads < 0) fail(ErrorKind::validation, "threads must be >= 0");
  for (int r : c.diagnose_resolutions)
    if (r < 1) fail(ErrorKind::validation, "diagnose_resolutions must be positive");
  c.schedule.validate();
}

// ---------------------------------------------------------------------------
// Shared context

/// Loaded scene and cameras plus path helpers.
class PipelineContext {
 public:
  explicit PipelineContext(PipelineConfig config) : config_(std::move(config)) {
    validate(config_);
    scene_ = load_scene(config_.scene);
    views_ = load_cameras(config_.cameras);
    if (views_.empty()) fail(ErrorKind::validation, "camera file lists no views");
    fs::create_directories(config_.output);
  }

  const PipelineConfig& config() const { return config_; }
  const GaussianScene& scene() const { return scene_; }
  const std::vector<CameraView>& views() const { return views_; }
  fs::path out(const fs::path& rel) const { return config_.output / rel; }

  const CameraView& view(int id) const {
    for (const auto& v : views_)
      if (v.view_id == id) return v;
    fail(ErrorKind::validation, "no camera with view_id " + std::to_string(id));
  }

  const CameraView& reference() const {
    return config_.reference_view ? view(*config_.reference_view) : views_.front();
  }

  fs::path per_view(const fs::path& dir, int id, const char* ext) const { return dir / (view_stem(id) + ext); }

  /// Source image for a view: the dataset PNG when configured, else a render.
  RgbImage source_image(const CameraView& v) const {
    if (!config_.images.empty()) {
      RgbImage img = load_png_rgb(per_view(config_.images, v.view_id, ".png"));
      if (!img.same_extent(v.width, v.height)) {
        fail(ErrorKind::shape, "image size does not match camera for view " + std::to_string(v.view_id));
      }
      return img;
    }
    return render(scene_, v, config_.threads).color;
  }

  std::vector<RgbImage> source_images() const {
    std::vector<RgbImage> out;
    for (const auto& v : views_) out.push_back(source_image(v));
    return out;
  }

 private:
  PipelineConfig config_;
  GaussianScene scene_;
  std::vector<CameraView> views_;
};

// ---------------------------------------------------------------------------
// parse-prompt

inline nlohmann::json prior_to_json(const LightingPrior& p, const std::string& instruction) {
  return {{"direction", to_string(p.direction)}, {"object", p.object_prompt}, {"instruction", instruction}};
}

inline LightingPrior prior_from_json(const nlohmann::json& j) {
  const auto dir = direction_from_string(j.at("direction").get<std::string>());
  if (!dir) fail(ErrorKind::vocabulary, "prior direction is not one of left/right/top/bottom");
  return {*dir, j.at("object").get<std::string>()};
}

/// Uses `answer` when given, otherwise asks the LVLM adapter about the
/// reference image. Writes prior.json.
inline LightingPrior cmd_parse_prompt(const PipelineContext& ctx, const std::string& instruction,
                                      const std::optional<std::string>& answer) {
  std::string text;
  if (answer) {
    text = *answer;
  } else {
    if (ctx.config().lvlm.empty()) fail(ErrorKind::validation, "no --answer given and no lvlm adapter configured");
    fs::path image = ctx.config().images.empty() ? ctx.out("reference.png")
                                                 : ctx.per_view(ctx.config().images, ctx.reference().view_id, ".png");
    if (ctx.config().images.empty()) save_png_rgb(image, ctx.source_image(ctx.reference()));
    text = query_lvlm(ctx.config().lvlm, image.string(), instruction);
  }
  const LightingPrior prior = parse_lvlm_answer(text);
  write_text_file(ctx.out("prior.json"), prior_to_json(prior, instruction).dump(2) + "\n");
  return prior;
}

inline std::pair<LightingPrior, std::string> load_prior(const PipelineContext& ctx) {
  const fs::path p = ctx.out("prior.json");
  if (!fs::exists(p)) fail(ErrorKind::validation, "prior.json missing; run parse-prompt first");
  const auto j = read_json_file(p);
  return {prior_from_json(j), j.value("instruction", std::string())};
}

// ---------------------------------------------------------------------------
// light-position

/// Light resolved in the reference view, anchored in world coordinates.
struct WorldLight {
  int reference_view = 0;
  LightResolution reference;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();    // world surface point of the object

  /// The light as seen from `view`.
  ViewLight in_view(const CameraView& view, LightModel model) const {
    ViewLight l;
    l.model = model;
    l.position = view.to_camera(position);
    l.direction = (view.rotation * (anchor - position)).normalized();
    return l;
  }
};

inline nlohmann::json world_light_to_json(const WorldLight& w) {
  return {{"reference_view", w.reference_view},
          {"centroid", {w.reference.centroid.x(), w.reference.centroid.y()}},
          {"d_ref", w.reference.d_ref},
          {"camera",
           {{"surface", detail::vec3_json(w.reference.surface_point)},
            {"initial", detail::vec3_json(w.reference.initial.position)},
            {"final", detail::vec3_json(w.reference.final.position)}}},
          {"world", {{"light", detail::vec3_json(w.position)}, {"anchor", detail::vec3_json(w.anchor)}}}};
}

inline WorldLight world_light_from_json(const nlohmann::json& j) {
  WorldLight w;
  w.reference_view = j.at("reference_view").get<int>();
  const auto c = j.at("centroid").get<std::vector<double>>();
  w.reference.centroid = {c.at(0), c.at(1)};
  w.reference.d_ref = j.at("d_ref").get<double>();
  w.reference.surface_point = detail::vec3_from(j.at("camera").at("surface"), "surface");
  w.reference.initial.position = detail::vec3_from(j.at("camera").at("initial"), "initial");
  w.reference.final.position = detail::vec3_from(j.at("camera").at("final"), "final");
  w.position = detail::vec3_from(j.at("world").at("light"), "light");
  w.anchor = detail::vec3_from(j.at("world").at("anchor"), "anchor");
  return w;
}

inline ObjectMask reference_mask(const PipelineContext& ctx, const LightingPrior& prior) {
  const auto& cfg = ctx.config();
  const int ref = ctx.reference().view_id;
  if (!cfg.masks.empty()) {
    const fs::path p = ctx.per_view(cfg.masks, ref, ".png");
    if (fs::exists(p)) return load_mask_png(p);
  }
  if (cfg.segmenter.empty()) fail(ErrorKind::validation, "no mask for the reference view and no segmenter configured");
  fs::path image = cfg.images.empty() ? ctx.out("reference.png") : ctx.per_view(cfg.images, ref, ".png");
  if (cfg.images.empty()) save_png_rgb(image, ctx.source_image(ctx.reference()));
  return query_segmenter(cfg.segmenter, image.string(), prior.object_prompt, ctx.out("reference_mask.png"));
}

inline WorldLight cmd_light_position(const PipelineContext& ctx) {
  const auto& cfg = ctx.config();
  const auto [prior, instruction] = load_prior(ctx);
  const CameraView& ref = ctx.reference();
  if (cfg.depths.empty()) fail(ErrorKind::validation, "config needs a depths directory");
  const DepthMap depth = load_depth_pfm(ctx.per_view(cfg.depths, ref.view_id, ".pfm"), cfg.depth_scale);
  const ObjectMask mask = reference_mask(ctx, prior);
  WorldLight w;
  w.reference_view = ref.view_id;
  w.reference = resolve_light(prior, mask, depth, ref, cfg.placement);
  w.position = ref.to_world(w.reference.final.position);
  w.anchor = ref.to_world(w.reference.surface_point);
  write_text_file(ctx.out("light.json"), world_light_to_json(w).dump(2) + "\n");
  return w;
}

// ---------------------------------------------------------------------------
// illum-maps

inline std::vector<IlluminationMap> cmd_illum_maps(const PipelineContext& ctx) {
  const auto& cfg = ctx.config();
  if (cfg.depths.empty() || cfg.normals.empty()) fail(ErrorKind::validation, "config needs depths and normals");
  std::vector<std::string> missing;
  for (const auto& v : ctx.views()) {
    for (const auto& [dir, what] : {std::pair{cfg.depths, "depth"}, std::pair{cfg.normals, "normals"}}) {
      if (!fs::exists(ctx.per_view(dir, v.view_id, ".pfm"))) {
        missing.push_back("view " + std::to_string(v.view_id) + " (" + what + ")");
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorKind::validation, "missing per-view geometry: " + list);
  }
  const WorldLight light =
      fs::exists(ctx.out("light.json")) ? world_light_from_json(read_json_file(ctx.out("light.json")))
                                        : cmd_light_position(ctx);

  std::vector<IlluminationMap> maps(ctx.views().size());
  parallel_for(ctx.views().size(), cfg.threads, [&](std::size_t i) {
    const CameraView& v = ctx.views()[i];
    const DepthMap depth = load_depth_pfm(ctx.per_view(cfg.depths, v.view_id, ".pfm"), cfg.depth_scale);
    const NormalMap normals = load_normals_pfm(ctx.per_view(cfg.normals, v.view_id, ".pfm"));
    maps[i] = phong_diffuse(v, depth, normals, light.in_view(v, cfg.light_model), cfg.gamma);
  });
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const int id = ctx.views()[i].view_id;
    Raster<float> r(maps[i].width(), maps[i].height(), 1);
    for (std::size_t k = 0; k < r.size(); ++k) r.values()[k] = static_cast<float>(maps[i].values.values()[k]);
    write_pfm_raster(ctx.per_view(ctx.out("illum"), id, ".pfm"), r);
    save_png_gray(ctx.per_view(ctx.out("illum"), id, ".png"), maps[i].values);
  }
  return maps;
}

inline std::vector<IlluminationMap> load_illum_maps(const PipelineContext& ctx) {
  std::vector<IlluminationMap> maps;
  for (const auto& v : ctx.views()) {
    const fs::path p = ctx.per_view(ctx.out("illum"), v.view_id, ".pfm");
    if (!fs::exists(p)) fail(ErrorKind::validation, "illumination map missing for view " + std::to_string(v.view_id) +
                                                        "; run illum-maps first");
    const Raster<float> r = read_pfm_raster(p);
    if (r.channels() != 1) fail(ErrorKind::format, p.string() + ": expected a 1-channel map");
    IlluminationMap m{Raster<double>(r.width(), r.height(), 1), ctx.config().gamma};
    for (std::size_t k = 0; k < r.size(); ++k) m.values.values()[k] = r.values()[k];
    maps.push_back(std::move(m));
  }
  return maps;
}

// ---------------------------------------------------------------------------
// relight

class IdentityRelighter final : public RelighterBackend {
 public:
  std::vector<RgbImage> relight(const std::vector<RelightRequest>& batch) const override {
    std::vector<RgbImage> out;
    for (const auto& r : batch) out.push_back(r.image);
    return out;
  }
};

inline std::unique_ptr<RelighterBackend> make_relighter(const PipelineContext& ctx) {
  const auto& cfg = ctx.config();
  if (cfg.relighter == "analytic" || cfg.relighter.empty()) {
    return std::make_unique<AnalyticRelighter>(cfg.relight_ambient, cfg.relight_diffuse);
  }
  if (cfg.relighter == "identity") return std::make_unique<IdentityRelighter>();
  return std::make_unique<ExternalRelighter>(cfg.relighter, ctx.out("work"));
}

/// Encodes init latents for `images` and runs the relighter. `update` tags
/// the latent noise so each dataset update draws fresh noise.
inline std::vector<RgbImage> relight_images(const PipelineContext& ctx, const std::vector<RgbImage>& images,
                                            const std::vector<IlluminationMap>& illum, const std::string& prompt,
                                            int update, bool save_latents) {
  const auto& cfg = ctx.config();
  const auto encoder = reference_encoder();
  std::vector<RelightRequest> batch(ctx.views().size());
  parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
    const int id = ctx.views()[i].view_id;
    batch[i] = {id, images[i], illum[i],
                encode_init_latent(illum[i], images[i], *encoder, cfg.noise_level,
                                   cfg.seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(update), id),
                prompt};
  });
  if (save_latents) {
    for (const auto& r : batch) save_latent(ctx.per_view(ctx.out("latents"), r.view_id, ".gsll"), r.latent);
  }
  const auto backend = make_relighter(ctx);
  return relight_views(batch, *backend);
}

inline std::vector<RgbImage> cmd_relight(const PipelineContext& ctx) {
  const auto illum = load_illum_maps(ctx);
  const auto [prior, instruction] = load_prior(ctx);
  const auto relit = relight_images(ctx, ctx.source_images(), illum, instruction, 0, true);
  for (std::size_t i = 0; i < relit.size(); ++i) {
    save_png_rgb(ctx.per_view(ctx.out("relit"), ctx.views()[i].view_id, ".png"), relit[i]);
  }
  return relit;
}

// ---------------------------------------------------------------------------
// finetune / render

struct ViewQuality {
  int view_id = 0;
  ImageQuality vs_target;
  ImageQuality vs_source;
};

struct MetricsReport {
  std::vector<ViewQuality> views;
  std::vector<int> dataset_updates;
  std::optional<nlohmann::json> overflow;

  ImageQuality mean_vs_target() const { return mean(&ViewQuality::vs_target); }
  ImageQuality mean_vs_source() const { return mean(&ViewQuality::vs_source); }

 private:
  ImageQuality mean(ImageQuality ViewQuality::*field) const {
    ImageQuality m;
    for (const auto& v : views) {
      m.psnr += (v.*field).psnr;
      m.ssim += (v.*field).ssim;
    }
    if (!views.empty()) {
      m.psnr /= static_cast<double>(views.size());
      m.ssim /= static_cast<double>(views.size());
    }
    return m;
  }
};

/// PSNR is written as the string "inf" for identical images.
inline nlohmann::json psnr_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

inline nlohmann::json quality_json(const ImageQuality& q) { return {{"psnr", psnr_json(q.psnr)}, {"ssim", q.ssim}}; }

inline nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["per_view"] = nlohmann::json::array();
  for (const auto& v : m.views) {
    j["per_view"].push_back({{"view_id", v.view_id}, {"target", quality_json(v.vs_target)}, {"source", quality_json(v.vs_source)}});
  }
  j["mean"] = {{"target", quality_json(m.mean_vs_target())}, {"source", quality_json(m.mean_vs_source())}};
  j["dataset_updates"] = m.dataset_updates;
  j["overflow"] = m.overflow ? *m.overflow : nlohmann::json(nullptr);
  return j;
}

struct FinetuneRun {
  FinetuneResult result;
  MetricsReport metrics;
};

inline FinetuneRun cmd_finetune(const PipelineContext& ctx) {
  const auto& cfg = ctx.config();
  const auto illum = load_illum_maps(ctx);
  const auto [prior, instruction] = load_prior(ctx);
  const auto sources = ctx.source_images();

  std::vector<RgbImage> targets;
  for (std::size_t i = 0; i < ctx.views().size(); ++i) {
    const fs::path p = ctx.per_view(ctx.out("relit"), ctx.views()[i].view_id, ".png");
    targets.push_back(fs::exists(p) ? load_png_rgb(p) : sources[i]);
  }
  RelightFn relight_fn = [&](const std::vector<RgbImage>& renders, const std::vector<RgbImage>&, int update) {
    return relight_images(ctx, renders, illum, instruction, update + 1, false);
  };
  FinetuneOptions options;
  options.workers = cfg.threads;
  FinetuneRun run;
  run.result = finetune(ctx.scene(), ctx.views(), std::move(targets), cfg.schedule, relight_fn, options);

  save_scene(ctx.out("tuned.ply"), run.result.scene);
  write_text_file(ctx.out("loss.csv"), loss_log_csv(run.result.log));
  const auto renders = render_all(run.result.scene, ctx.views(), cfg.threads);
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const int id = ctx.views()[i].view_id;
    const ImageQuality t = run.result.targets.size() == renders.size() ? compute_psnr_ssim(renders[i], run.result.targets[i])
                                                                       : ImageQuality{};
    run.metrics.views.push_back({id, t, compute_psnr_ssim(renders[i], sources[i])});
  }
  run.metrics.dataset_updates = run.result.dataset_updates;
  if (fs::exists(ctx.out("overflow.json"))) run.metrics.overflow = read_json_file(ctx.out("overflow.json"));
  write_text_file(ctx.out("metrics.json"), to_json(run.metrics).dump(2) + "\n");
  if (run.result.aborted) fail(ErrorKind::adapter, *run.result.aborted + " (partial results written)");
  return run;
}

inline std::vector<RgbImage> cmd_render(const PipelineContext& ctx) {
  const auto renders = render_all(ctx.scene(), ctx.views(), ctx.config().threads);
  for (std::size_t i = 0; i < renders.size(); ++i) {
    save_png_rgb(ctx.per_view(ctx.out("renders"), ctx.views()[i].view_id, ".png"), renders[i]);
  }
  return renders;
}

// ---------------------------------------------------------------------------
// diagnose-epipolar

/// Area-averaged image colours plus luminance, with fixed-seed noise channels.
inline FeatureMap synthesize_features(const RgbImage& image, int view_id, int grid_w, int grid_h,
                                      std::uint64_t seed) {
  constexpr int kNoiseChannels = 4;
  FeatureMap f(view_id, grid_w, grid_h, 4 + kNoiseChannels);
  std::vector<double> count(static_cast<std::size_t>(grid_w) * grid_h, 0.0);
  for (int y = 0; y < image.height(); ++y) {
    const int gy = std::min(grid_h - 1, y * grid_h / image.height());
    for (int x = 0; x < image.width(); ++x) {
      const int gx = std::min(grid_w - 1, x * grid_w / image.width());
      auto cell = f.at(gx, gy);
      for (int c = 0; c < 3; ++c) cell[c] += image.at(x, y, c);
      count[static_cast<std::size_t>(gy) * grid_w + gx] += 1.0;
    }
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(view_id),
                    static_cast<std::uint32_t>(grid_w), static_cast<std::uint32_t>(grid_h)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      auto cell = f.at(x, y);
      const double n = std::max(1.0, count[static_cast<std::size_t>(y) * grid_w + x]);
      for (int c = 0; c < 3; ++c) cell[c] /= n;
      cell[3] = 0.2126 * cell[0] + 0.7152 * cell[1] + 0.0722 * cell[2];
      for (int c = 0; c < 4; ++c) cell[c] += 0.01 * noise(rng);
      for (int c = 4; c < 4 + kNoiseChannels; ++c) cell[c] = noise(rng);
    }
  }
  return f;
}

/// The four precision × normalisation combinations.
struct EpipolarDiagnosis {
  OverflowReport full_normalized;
  OverflowReport full_unnormalized;
  OverflowReport reduced_normalized;
  OverflowReport reduced_unnormalized;
};

inline constexpr double kUnnormalizedFundamentalNorm = 1e6;

inline nlohmann::json to_json(const EpipolarDiagnosis& d) {
  return {{"full_normalized", to_json(d.full_normalized)},
          {"full_unnormalized", to_json(d.full_unnormalized)},
          {"reduced_normalized", to_json(d.reduced_normalized)},
          {"reduced_unnormalized", to_json(d.reduced_unnormalized)}};
}

/// Non-key/key pairs: each non-key view with its nearest key frame, or the
/// first two views when every view is a key.
inline std::vector<std::pair<int, int>> correspondence_pairs(const std::vector<CameraView>& views, int stride) {
  if (views.size() < 2) fail(ErrorKind::validation, "epipolar diagnosis needs at least two views");
  const auto key_ids = select_key_frames(views, stride);
  std::vector<CameraView> keys;
  for (const auto& v : views)
    if (std::find(key_ids.begin(), key_ids.end(), v.view_id) != key_ids.end()) keys.push_back(v);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& v : views) {
    if (std::find(key_ids.begin(), key_ids.end(), v.view_id) != key_ids.end()) continue;
    pairs.emplace_back(v.view_id, nearest_key_frame(v, keys));
  }
  if (pairs.empty()) pairs.emplace_back(views[1].view_id, views[0].view_id);
  return pairs;
}

inline EpipolarDiagnosis diagnose_epipolar(const std::vector<CameraView>& views, const std::vector<RgbImage>& images,
                                           const std::vector<int>& resolutions, int stride, double band,
                                           std::uint64_t seed, int workers = 1) {
  EpipolarDiagnosis diag;
  auto index_of = [&](int id) {
    for (std::size_t i = 0; i < views.size(); ++i)
      if (views[i].view_id == id) return i;
    fail(ErrorKind::validation, "unknown view " + std::to_string(id));
  };
  for (const auto& [src_id, key_id] : correspondence_pairs(views, stride)) {
    const CameraView& src = views[index_of(src_id)];
    const CameraView& key = views[index_of(key_id)];
    const FundamentalMatrix f = fundamental_matrix(src, key);
    for (int r : resolutions) {
      const int sw = r, sh = std::max(1, static_cast<int>(std::lround(static_cast<double>(r) * src.height / src.width)));
      const int kw = r, kh = std::max(1, static_cast<int>(std::lround(static_cast<double>(r) * key.height / key.width)));
      const FeatureMap fs_src = synthesize_features(images[index_of(src_id)], src_id, sw, sh, seed);
      const FeatureMap fs_key = synthesize_features(images[index_of(key_id)], key_id, kw, kh, seed);
      const FundamentalMatrix grid = to_feature_grid(f, src.width, src.height, sw, sh, key.width, key.height, kw, kh);
      const FundamentalMatrix normalized = normalize_fundamental(grid);
      const FundamentalMatrix raw = grid.scaled(kUnnormalizedFundamentalNorm / grid.norm());
      diag.full_normalized.merge(epipolar_correspondence(fs_src, fs_key, normalized, band, PrecisionMode::full, workers).second);
      diag.full_unnormalized.merge(epipolar_correspondence(fs_src, fs_key, raw, band, PrecisionMode::full, workers).second);
      diag.reduced_normalized.merge(epipolar_correspondence(fs_src, fs_key, normalized, band, PrecisionMode::reduced, workers).second);
      diag.reduced_unnormalized.merge(epipolar_correspondence(fs_src, fs_key, raw, band, PrecisionMode::reduced, workers).second);
    }
  }
  return diag;
}

inline std::string overflow_table(const EpipolarDiagnosis& d) {
  std::string out = "resolution  full/norm  full/raw  reduced/norm  reduced/raw\n";
  char buf[160];
  for (const auto& [size, c] : d.reduced_unnormalized.resolutions) {
    std::snprintf(buf, sizeof(buf), "%4dx%-6d %8.2f%% %8.2f%% %12.2f%% %11.2f%%\n", size, size,
                  100.0 * d.full_normalized.resolutions.at(size).rate(),
                  100.0 * d.full_unnormalized.resolutions.at(size).rate(),
                  100.0 * d.reduced_normalized.resolutions.at(size).rate(), 100.0 * c.rate());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "average     %8.2f%% %8.2f%% %12.2f%% %11.2f%%\n", 100.0 * d.full_normalized.avg_rate(),
                100.0 * d.full_unnormalized.avg_rate(), 100.0 * d.reduced_normalized.avg_rate(),
                100.0 * d.reduced_unnormalized.avg_rate());
  return out + buf;
}

inline EpipolarDiagnosis cmd_diagnose_epipolar(const PipelineContext& ctx) {
  const auto& cfg = ctx.config();
  const auto diag = diagnose_epipolar(ctx.views(), ctx.source_images(), cfg.diagnose_resolutions, cfg.key_stride,
                                      cfg.epipolar_band, cfg.seed, cfg.threads);
  write_text_file(ctx.out("overflow.json"), to_json(diag).dump(2) + "\n");
  return diag;
}

// ---------------------------------------------------------------------------
// pipeline

/// parse-prompt → light-position → illum-maps → relight → finetune.
inline FinetuneRun cmd_pipeline(const PipelineContext& ctx, const std::optional<std::string>& answer) {
  cmd_parse_prompt(ctx, ctx.config().instruction, answer);
  cmd_light_position(ctx);
  cmd_illum_maps(ctx);
  cmd_relight(ctx);
  return cmd_finetune(ctx);
}

/// Stable exit-code contract for the CLI.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::adapter: return 3;
    case ErrorKind::numeric:
    case ErrorKind::degenerate: return 4;
    default: return 2;
  }
}

/// Writes a synthetic dataset plus a ready-to-run config.json under `dir`.
inline fs::path write_synthetic_dataset(const fs::path& dir, const SyntheticOptions& opt = {}) {
  const SyntheticDataset ds = make_plane_dataset(opt);
  fs::create_directories(dir);
  save_scene(dir / "scene.ply", ds.scene);
  save_cameras(dir / "cameras.json", ds.views);
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    const std::string stem = view_stem(ds.views[i].view_id);
    save_png_rgb(dir / "images" / (stem + ".png"), ds.images[i]);
    save_depth_pfm(dir / "depths" / (stem + ".pfm"), ds.depths[i]);
    save_normals_pfm(dir / "normals" / (stem + ".pfm"), ds.normals[i]);
  }
  save_mask_png(dir / "masks" / (view_stem(ds.views.front().view_id) + ".png"), ds.reference_mask);
  const nlohmann::json config = {{"scene", "scene.ply"},     {"cameras", "cameras.json"},
                                 {"images", "images"},       {"depths", "depths"},
                                 {"normals", "normals"},     {"masks", "masks"},
                                 {"output", "out"},          {"reference_view", ds.views.front().view_id},
                                 {"instruction", "warm sunlight from the left"},
                                 {"k_int", 50},              {"k_reap", 2},
                                 {"seed", 0}};
  write_text_file(dir / "config.json", config.dump(2) + "\n");
  return dir / "config.json";
}

}  // namespace gslight
