// gslight: command-line front end for text-guided relighting of Gaussian scenes.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "gslight/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<double> gamma;
  std::optional<int> stride;
  std::optional<double> band;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise_level;
  std::optional<std::string> answer;
  std::optional<std::string> scene;
  std::optional<std::string> output;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Path to the JSON run configuration")->required();
  cmd->add_option("--gamma", o.gamma, "Diffuse falloff exponent");
  cmd->add_option("--stride", o.stride, "Key-frame stride");
  cmd->add_option("--band", o.band, "Epipolar band half-width in feature pixels");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--noise-level", o.noise_level, "Init-latent noise level in [0,1]");
  cmd->add_option("--answer", o.answer, "Use this LVLM answer instead of querying the adapter");
  cmd->add_option("--scene", o.scene, "Override the scene PLY");
  cmd->add_option("--output", o.output, "Override the output directory");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
}

gslight::PipelineContext make_context(const Overrides& o) {
  gslight::PipelineConfig c = gslight::load_config(o.config);
  if (o.gamma) c.gamma = *o.gamma;
  if (o.stride) c.key_stride = *o.stride;
  if (o.band) c.epipolar_band = *o.band;
  if (o.seed) c.seed = *o.seed;
  if (o.noise_level) c.noise_level = *o.noise_level;
  if (o.scene) c.scene = *o.scene;
  if (o.output) c.output = *o.output;
  if (o.threads) c.threads = *o.threads;
  return gslight::PipelineContext(std::move(c));
}

void print_metrics(const gslight::MetricsReport& m) {
  const auto t = m.mean_vs_target();
  const auto s = m.mean_vs_source();
  std::printf("mean vs relit targets: PSNR %.3f dB  SSIM %.4f\n", t.psnr, t.ssim);
  std::printf("mean vs source images: PSNR %.3f dB  SSIM %.4f\n", s.psnr, s.ssim);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided relighting of 3D Gaussian scenes"};
  app.require_subcommand(1);
  Overrides o;

  auto* parse = app.add_subcommand("parse-prompt", "Turn an instruction into a lighting prior");
  auto* light = app.add_subcommand("light-position", "Place the light in the reference view");
  auto* illum = app.add_subcommand("illum-maps", "Compute per-view diffuse illumination maps");
  auto* relight = app.add_subcommand("relight", "Relight every view with the configured backend");
  auto* tune = app.add_subcommand("finetune", "Fit Gaussian appearance to the relit views");
  auto* rend = app.add_subcommand("render", "Render every camera of the scene");
  auto* diag = app.add_subcommand("diagnose-epipolar", "Measure reduced-precision overflow in epipolar matching");
  auto* pipe = app.add_subcommand("pipeline", "Run parse-prompt through finetune");
  for (auto* cmd : {parse, light, illum, relight, tune, rend, diag, pipe}) add_common(cmd, o);
  std::string instruction;
  parse->add_option("--instruction", instruction, "Lighting instruction (defaults to the config value)");

  std::string synth_dir;
  int synth_views = 4;
  int synth_size = 64;
  auto* synth = app.add_subcommand("synth", "Write a synthetic demo dataset and config");
  synth->add_option("dir", synth_dir, "Output directory")->required();
  synth->add_option("--views", synth_views, "Number of cameras")->check(CLI::Range(2, 256));
  synth->add_option("--size", synth_size, "Image width and height (multiple of 8)")->check(CLI::Range(8, 4096));

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (synth_size % gslight::kLatentDownsample) {
        gslight::fail(gslight::ErrorKind::validation, "--size must be a multiple of 8");
      }
      gslight::SyntheticOptions opt;
      opt.views = synth_views;
      opt.width = opt.height = synth_size;
      opt.focal = synth_size;
      std::cout << gslight::write_synthetic_dataset(synth_dir, opt).string() << "\n";
      return 0;
    }
    const gslight::PipelineContext ctx = make_context(o);
    if (parse->parsed()) {
      const std::string text = instruction.empty() ? ctx.config().instruction : instruction;
      const auto prior = gslight::cmd_parse_prompt(ctx, text, o.answer);
      std::cout << gslight::prior_to_json(prior, text).dump() << "\n";
    } else if (light->parsed()) {
      std::cout << gslight::world_light_to_json(gslight::cmd_light_position(ctx)).dump(2) << "\n";
    } else if (illum->parsed()) {
      const auto maps = gslight::cmd_illum_maps(ctx);
      std::cout << "wrote " << maps.size() << " illumination maps\n";
    } else if (relight->parsed()) {
      const auto relit = gslight::cmd_relight(ctx);
      std::cout << "relit " << relit.size() << " views\n";
    } else if (tune->parsed()) {
      print_metrics(gslight::cmd_finetune(ctx).metrics);
    } else if (rend->parsed()) {
      const auto renders = gslight::cmd_render(ctx);
      std::cout << "rendered " << renders.size() << " views\n";
    } else if (diag->parsed()) {
      std::cout << gslight::overflow_table(gslight::cmd_diagnose_epipolar(ctx));
    } else if (pipe->parsed()) {
      print_metrics(gslight::cmd_pipeline(ctx, o.answer).metrics);
    }
  } catch (const gslight::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return gslight::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
