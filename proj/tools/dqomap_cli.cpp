// dqomap: simulate datasets, run the mapper, evaluate, export and render.
//
// Exit codes: 0 success, 1 I/O or parse error, 2 configuration error, 3 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "dqomap/pipeline.hpp"
#include "dqomap/scenes.hpp"

using namespace dqo;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kInternal = 3 };

std::vector<CameraModel> dataset_cameras(const fs::path& dir) {
  const Intrinsics k = read_intrinsics(dir);
  std::vector<CameraModel> out;
  for (const auto& [idx, pose] : read_poses(dir)) out.push_back(k.camera(pose.transform()));
  return out;
}

void emit_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) return;
  if (path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  detail::write_text(path, j.dump(2) + "\n");
}

// Config file first, then any --key flags on top.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    for (const auto& k : PipelineConfig::keys()) {
      std::string name = k.name, dashed = name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      std::string opt = "--" + name;
      if (dashed != name) opt += ",--" + dashed;
      app->add_option_function<std::string>(opt, [this, name](const std::string& v) { values[name] = v; }, k.help)
          ->group("Pipeline config");
    }
  }

  PipelineConfig build() const {
    PipelineConfig c = file.empty() ? PipelineConfig{} : PipelineConfig::load(file);
    for (const auto& [k, v] : values) c.set(k, v);
    return c;
  }
};

int cmd_simulate(const std::string& preset, int objects, int seed, int frames, int width, int height,
                 const NoiseSpec& noise, int workers, const std::string& out) {
  SceneSpec spec;
  if (preset == "single_sphere") spec = preset_single_sphere(frames > 0 ? frames : 50, width, height);
  else if (preset == "room4") spec = preset_room4(frames > 0 ? frames : 200, width, height);
  else if (preset == "ablation") spec = preset_ablation(objects, seed, frames > 0 ? frames : 160, width, height);
  else throw ConfigError("unknown preset '" + preset + "' (single_sphere, room4, ablation)");
  spec.seed = static_cast<std::uint64_t>(seed);
  spec.noise = noise;
  generate(spec, out, workers);
  std::printf("wrote %d frames, %zu objects to %s\n", spec.trajectory.frames, spec.objects.size(), out.c_str());
  return kOk;
}

int cmd_run(const fs::path& dataset, const PipelineConfig& cfg, const fs::path& out, const std::string& report) {
  const PipelineRun run = run_pipeline(dataset, cfg);
  save_state(run.state, out);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& l : run.log) log.push_back(l.to_json());
  detail::write_text(out / "log.json", log.dump(1) + "\n");
  detail::write_text(out / "config.txt", cfg.to_text());
  std::size_t failures = 0;
  for (const auto& l : run.log) failures += l.failures.size();
  std::printf("%d frames, %d tracks, %zu Gaussians, %zu optimizer failures, %.2f FPS\n", run.runtime.frames,
              initialized_track_count(run.state.tracks), run.state.gaussians.size(), failures, run.runtime.fps);
  if (!report.empty() || fs::exists(dataset / "gt" / "objects.json")) {
    EvalReport rep = evaluate_dataset(run.state, dataset, run.cameras, cfg.recon_threshold_cm);
    rep.runtime = run.runtime;
    std::printf("%s", rep.to_table().c_str());
    emit_json(rep.to_json(), report);
  }
  return kOk;
}

int cmd_eval(const fs::path& state_dir, const fs::path& dataset, bool pose, double threshold_cm,
             const std::string& json_out) {
  const MapState s = load_state(state_dir);
  EvalReport rep = evaluate_dataset(s, dataset, dataset_cameras(dataset), threshold_cm);
  nlohmann::json j = rep.deterministic_json();
  if (pose) {
    rep.recon.clear();
    j.erase("reconstruction");
    std::printf("%s", rep.to_table().c_str());
  } else {
    j.erase("pose");
    std::printf("  gt   points   Acc(cm)  Comp(cm)  <%gcm(%%)\n", threshold_cm);
    for (const auto& r : rep.recon) {
      if (r.metrics)
        std::printf("%4d %8zu %9.2f %9.2f %9.1f\n", r.gt_instance, r.points, r.metrics->accuracy_cm,
                    r.metrics->completion_cm, r.metrics->completion_ratio);
      else
        std::printf("%4d %8zu         -\n", r.gt_instance, r.points);
    }
  }
  emit_json(j, json_out);
  return kOk;
}

int cmd_render(const fs::path& state_dir, const fs::path& dataset, int frame, const std::string& out,
               const std::string& depth_out, int instance, int workers) {
  const MapState s = load_state(state_dir);
  const Intrinsics k = read_intrinsics(dataset);
  std::optional<CameraModel> cam;
  for (const auto& [idx, pose] : read_poses(dataset))
    if (idx == frame) cam = k.camera(pose.transform());
  if (!cam) throw IoError("frame " + std::to_string(frame) + " not in " + (dataset / "poses.txt").string());
  RenderOptions ro;
  ro.workers = workers;
  if (instance >= 0) ro.instance_id = instance;
  GaussianStore store = s.gaussians;
  if (instance >= 0) store = extract_object(s.gaussians, instance);
  const RenderOutput r = render(store, *cam, ro);
  Image<std::uint8_t> rgb(cam->width, cam->height, 3);
  for (int y = 0; y < cam->height; ++y)
    for (int x = 0; x < cam->width; ++x)
      for (int c = 0; c < 3; ++c)
        rgb(x, y, c) = static_cast<std::uint8_t>(std::lround(255 * std::clamp(r.color(x, y, c), 0.0, 1.0)));
  write_png_rgb8(out, rgb);
  if (!depth_out.empty()) {
    Image<std::uint16_t> d(cam->width, cam->height);
    for (int y = 0; y < cam->height; ++y)
      for (int x = 0; x < cam->width; ++x) d(x, y) = quantize_depth(r.depth(x, y), k.depth_scale);
    write_png_gray16(depth_out, d);
  }
  std::printf("rendered %zu Gaussians at frame %d to %s\n", store.size(), frame, out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-level mapping with dual quadrics and ID-tagged Gaussians"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string preset = "room4", sim_out;
  int objects = 4, seed = 0, frames = 0, width = 320, height = 240, sim_workers = 1;
  NoiseSpec noise;
  sim->add_option("--preset", preset, "single_sphere, room4 or ablation")->capture_default_str();
  sim->add_option("--objects", objects, "object count for the ablation preset (4, 8 or 12)")->capture_default_str();
  sim->add_option("--seed", seed, "scene and noise seed")->capture_default_str();
  sim->add_option("--frames", frames, "frame count (0 = preset default)")->capture_default_str();
  sim->add_option("--width", width)->capture_default_str();
  sim->add_option("--height", height)->capture_default_str();
  sim->add_option("--depth-sigma", noise.depth_sigma, "depth noise in meters")->capture_default_str();
  sim->add_option("--bbox-sigma", noise.bbox_sigma, "detection edge jitter in pixels")->capture_default_str();
  sim->add_option("--dropout", noise.dropout, "detection drop probability")->capture_default_str();
  sim->add_option("--workers", sim_workers)->capture_default_str();
  sim->add_option("--out", sim_out, "output directory")->required();

  auto* run = app.add_subcommand("run", "map a dataset and save the final state");
  std::string run_dataset, run_out, run_report;
  ConfigFlags run_cfg;
  run->add_option("--dataset", run_dataset)->required();
  run->add_option("--out", run_out, "state directory (gaussians.ply, tracks.json, log.json)")->required();
  run->add_option("--report", run_report, "write the evaluation report as JSON (- for stdout)");
  run_cfg.attach(run);

  std::string ev_state, ev_dataset, ev_json;
  double ev_threshold = 5.0;
  auto* ep = app.add_subcommand("eval-pose", "3D IoU, 2D IoU and center distance against ground truth");
  auto* er = app.add_subcommand("eval-recon", "accuracy, completion and completion ratio against ground truth");
  for (auto* c : {ep, er}) {
    c->add_option("--state", ev_state)->required();
    c->add_option("--dataset", ev_dataset)->required();
    c->add_option("--json", ev_json, "write JSON here (- for stdout)");
  }
  er->add_option("--threshold-cm,--recon_threshold_cm", ev_threshold, "completion ratio threshold")
      ->capture_default_str();

  auto* ex = app.add_subcommand("export", "one PLY per object plus manifest.json");
  std::string ex_state, ex_out;
  ex->add_option("--state", ex_state)->required();
  ex->add_option("--out", ex_out)->required();

  auto* rf = app.add_subcommand("render-frame", "render the map from a dataset camera");
  std::string rf_state, rf_dataset, rf_out, rf_depth;
  int rf_frame = 0, rf_instance = -1, rf_workers = 1;
  rf->add_option("--state", rf_state)->required();
  rf->add_option("--dataset", rf_dataset)->required();
  rf->add_option("--frame", rf_frame)->capture_default_str();
  rf->add_option("--out", rf_out, "color PNG")->required();
  rf->add_option("--depth-out", rf_depth, "16-bit depth PNG");
  rf->add_option("--instance", rf_instance, "render only this object id");
  rf->add_option("--workers", rf_workers)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(preset, objects, seed, frames, width, height, noise, sim_workers, sim_out);
    if (*run) return cmd_run(run_dataset, run_cfg.build(), run_out, run_report);
    if (*ep) return cmd_eval(ev_state, ev_dataset, true, ev_threshold, ev_json);
    if (*er) return cmd_eval(ev_state, ev_dataset, false, ev_threshold, ev_json);
    if (*ex) {
      const auto m = export_objects(load_state(ex_state), ex_out);
      std::printf("exported %zu objects to %s\n", m["objects"].size(), ex_out.c_str());
      return kOk;
    }
    if (*rf) return cmd_render(rf_state, rf_dataset, rf_frame, rf_out, rf_depth, rf_instance, rf_workers);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const InvalidParameter& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
