#pragma once

// Per-frame mapping loop: association and pose optimization of object
// quadrics, then mask-driven densification and optimization of the Gaussians.
//
// Gaussians carry the instance-map id of the pixels they came from. A track
// links to them through its instance_id.

#include <json.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dqomap/association.hpp"
#include "dqomap/config.hpp"
#include "dqomap/dataset.hpp"
#include "dqomap/eval.hpp"
#include "dqomap/masks.hpp"
#include "dqomap/parallel.hpp"
#include "dqomap/ply.hpp"
#include "dqomap/quadric_optimizer.hpp"
#include "dqomap/renderer.hpp"

namespace dqo {

struct MapState {
  ObjectMap tracks;
  GaussianStore gaussians;
};

struct FrameLog {
  int index = 0;
  int detections = 0, matches = 0, new_tracks = 0, merges = 0, tracks = 0;
  std::size_t gaussians = 0, geo_pixels = 0, rgb_pixels = 0, densified = 0, trainable = 0;
  int quadric_updates = 0;
  double tracking_s = 0, mapping_s = 0;
  std::vector<std::string> failures;

  nlohmann::json to_json() const {
    return {{"index", index},           {"detections", detections}, {"matches", matches},
            {"new_tracks", new_tracks}, {"merges", merges},         {"tracks", tracks},
            {"gaussians", gaussians},   {"geo_pixels", geo_pixels}, {"rgb_pixels", rgb_pixels},
            {"densified", densified},   {"trainable", trainable},   {"quadric_updates", quadric_updates},
            {"tracking_s", tracking_s}, {"mapping_s", mapping_s},   {"failures", failures}};
  }
};

// Evenly spaced subset of at most `cap` observations, always keeping the newest.
inline std::vector<Observation> subsample_observations(const std::vector<Observation>& obs, int cap) {
  if (cap <= 0 || static_cast<int>(obs.size()) <= cap) return obs;
  std::vector<Observation> out;
  const double step = static_cast<double>(obs.size() - 1) / (cap - 1);
  for (int i = 0; i < cap; ++i) out.push_back(obs[static_cast<std::size_t>(std::llround(i * step))]);
  return out;
}

inline int initialized_track_count(const ObjectMap& map) {
  int n = 0;
  for (const auto& [id, t] : map.tracks()) n += t.quadric.has_value();
  return n;
}

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const MapState& state() const { return state_; }
  MapState& state() { return state_; }
  const std::vector<FrameLog>& log() const { return log_; }
  const PipelineConfig& config() const { return cfg_; }

  const FrameLog& process(const FrameBundle& frame) {
    frame.validate();
    using clock = std::chrono::steady_clock;
    FrameLog fl;
    fl.index = frame.index;
    fl.detections = static_cast<int>(frame.detections.size());
    const auto t0 = clock::now();

    const auto assoc = associate_frame(state_.tracks, frame, cfg_.assoc());
    fl.matches = static_cast<int>(assoc.matches.size());
    fl.new_tracks = static_cast<int>(assoc.new_tracks.size());
    fl.merges = static_cast<int>(assoc.merges.size());
    optimize_dirty_tracks(fl);
    fl.tracks = initialized_track_count(state_.tracks);
    const auto t1 = clock::now();

    if (cfg_.enable_gaussians) update_gaussians(frame, fl);
    fl.gaussians = state_.gaussians.size();
    const auto t2 = clock::now();
    fl.tracking_s = std::chrono::duration<double>(t1 - t0).count();
    fl.mapping_s = std::chrono::duration<double>(t2 - t1).count();
    log_.push_back(std::move(fl));
    return log_.back();
  }

  RuntimeStats runtime() const {
    RuntimeStats r;
    r.frames = static_cast<int>(log_.size());
    if (log_.empty()) return r;
    for (const auto& l : log_) r.mean_tracking_s += l.tracking_s, r.mean_mapping_s += l.mapping_s;
    r.mean_tracking_s /= r.frames;
    r.mean_mapping_s /= r.frames;
    const double per = r.mean_tracking_s + r.mean_mapping_s;
    r.fps = per > 0 ? 1.0 / per : 0.0;
    return r;
  }

 private:
  void optimize_dirty_tracks(FrameLog& fl) {
    std::vector<int> ids;
    for (const auto& [id, t] : state_.tracks.tracks())
      if (t.dirty && t.quadric && static_cast<int>(t.observations.size()) >= cfg_.min_obs) ids.push_back(id);
    const OptimConfig oc = cfg_.quadric();
    std::vector<std::optional<OptimResult>> results(ids.size());
    std::vector<std::string> errors(ids.size());
    parallel_for(static_cast<int>(ids.size()), cfg_.workers, [&](int k) {
      const ObjectTrack& t = *state_.tracks.find(ids[k]);
      try {
        results[k] = optimize_quadric(*t.quadric, subsample_observations(t.observations, cfg_.quadric_max_obs), oc);
      } catch (const Error& e) {
        errors[k] = e.what();
      }
    });
    // commit in id order
    for (std::size_t k = 0; k < ids.size(); ++k) {
      ObjectTrack& t = *state_.tracks.find(ids[k]);
      t.dirty = false;
      if (!results[k]) {
        fl.failures.push_back("track " + std::to_string(ids[k]) + ": " + errors[k]);
        continue;
      }
      if (results[k]->degenerate) continue;
      try {
        t.quadric = results[k]->params.to_quadric();
        t.status = TrackStatus::stable;
        ++fl.quadric_updates;
      } catch (const Error& e) {
        fl.failures.push_back("track " + std::to_string(ids[k]) + ": " + e.what());
      }
    }
  }

  void update_gaussians(const FrameBundle& frame, FrameLog& fl) {
    window_.push_back(frame);
    while (static_cast<int>(window_.size()) > cfg_.frame_window) window_.pop_front();

    RenderOptions ro;
    ro.instance_map = &frame.instance;
    ro.workers = cfg_.workers;
    const RenderOutput rend = render(state_.gaussians, frame.camera, ro);
    UpdateMasks masks = compute_update_masks(frame, rend, cfg_.masks());
    // only instances that some track has claimed get Gaussians
    std::set<int> allowed;
    for (const auto& [id, t] : state_.tracks.tracks())
      if (t.instance_id) allowed.insert(t.instance_id);
    if (cfg_.include_background) allowed.insert(0);
    restrict_masks(masks, allowed);
    fl.geo_pixels = masks.geo_count();
    fl.rgb_pixels = masks.rgb_count();

    auto fresh = densify_from_mask(frame, masks, rend, cfg_.densify());
    fl.densified = fresh.size();
    state_.gaussians.insert(state_.gaussians.end(), fresh.begin(), fresh.end());

    std::vector<int> objects;
    std::vector<std::vector<std::size_t>> trainable;
    if (cfg_.train_all) {
      std::set<int> visible;
      for (auto v : frame.instance.data())
        if (allowed.count(v)) visible.insert(v);
      for (int id : visible) {
        auto idx = object_indices(state_.gaussians, id);
        if (idx.empty()) continue;
        objects.push_back(id);
        trainable.push_back(std::move(idx));
      }
    } else {
      for (const auto& [id, px] : masks.per_object) {
        auto idx = select_trainable(state_.gaussians, masks, id, frame.camera);
        if (idx.empty()) continue;
        objects.push_back(id);
        trainable.push_back(std::move(idx));
      }
    }
    for (const auto& t : trainable) fl.trainable += t.size();
    if (objects.empty() || cfg_.gaussian_iters <= 0) return;

    std::vector<const FrameBundle*> frames;
    for (const auto& f : window_) frames.push_back(&f);
    ObjectOptimConfig oc = cfg_.gaussians();
    // parallelism goes across objects when there are several, inside the renderer otherwise
    oc.workers = objects.size() > 1 ? 1 : cfg_.workers;
    std::vector<ObjectOptimResult> results(objects.size());
    std::vector<std::string> errors(objects.size());
    const GaussianStore& snapshot = state_.gaussians;
    parallel_for(static_cast<int>(objects.size()), objects.size() > 1 ? cfg_.workers : 1, [&](int k) {
      try {
        results[k] = optimize_object(snapshot, objects[k], trainable[k], frames, oc);
      } catch (const Error& e) {
        errors[k] = e.what();
      }
    });
    for (std::size_t k = 0; k < objects.size(); ++k) {
      if (!errors[k].empty()) {
        fl.failures.push_back("object " + std::to_string(objects[k]) + ": " + errors[k]);
        continue;
      }
      for (std::size_t i = 0; i < results[k].indices.size(); ++i)
        state_.gaussians[results[k].indices[i]] = results[k].updated[i];
    }
  }

  PipelineConfig cfg_;
  MapState state_;
  std::vector<FrameLog> log_;
  std::deque<FrameBundle> window_;
};

struct PipelineRun {
  MapState state;
  std::vector<FrameLog> log;
  RuntimeStats runtime;
  std::vector<CameraModel> cameras;
};

// Streams a dataset through the pipeline. Parse errors propagate.
inline PipelineRun run_pipeline(const std::filesystem::path& dataset, const PipelineConfig& cfg) {
  DatasetReader reader(dataset);
  Pipeline p(cfg);
  PipelineRun run;
  while (auto f = reader.next()) {
    run.cameras.push_back(f->camera);
    p.process(*f);
  }
  run.state = p.state();
  run.log = p.log();
  run.runtime = p.runtime();
  return run;
}

inline PipelineRun run_pipeline(const std::vector<FrameBundle>& frames, const PipelineConfig& cfg) {
  Pipeline p(cfg);
  PipelineRun run;
  for (const auto& f : frames) {
    run.cameras.push_back(f.camera);
    p.process(f);
  }
  run.state = p.state();
  run.log = p.log();
  run.runtime = p.runtime();
  return run;
}

// ---- evaluation ----

inline std::vector<EstimatedObject> estimated_objects(const MapState& s) {
  std::vector<EstimatedObject> out;
  for (const auto& [id, t] : s.tracks.tracks())
    if (t.quadric) out.push_back({id, t.class_id, t.instance_id, *t.quadric});
  return out;
}

// Opaque Gaussian centers carrying `instance_id`.
inline std::vector<Vector3d> object_points(const GaussianStore& store, int instance_id) {
  std::vector<Vector3d> out;
  for (const auto& g : store)
    if (g.object_id == instance_id && g.kind == GaussianKind::opaque) out.push_back(g.mean);
  return out;
}

// `gt_points` maps GT instance ids to surface samples; objects without an
// entry get no reconstruction metrics.
inline EvalReport evaluate(const MapState& s, const std::vector<SceneObject>& gt,
                           const std::map<int, std::vector<Vector3d>>& gt_points,
                           const std::vector<CameraModel>& cameras, double threshold_cm) {
  EvalReport r;
  const auto est = estimated_objects(s);
  r.pose = eval_pose(est, gt, cameras);
  r.track_count = static_cast<int>(est.size());
  r.gt_count = static_cast<int>(gt.size());
  r.recon_threshold_cm = threshold_cm;
  for (const auto& o : r.pose.objects) {
    if (!o.object_id || !gt_points.count(o.gt_instance)) continue;
    const auto* t = s.tracks.find(*o.object_id);
    ObjectReconEval rec;
    rec.gt_instance = o.gt_instance;
    const auto pts = object_points(s.gaussians, t->instance_id);
    rec.points = pts.size();
    if (!pts.empty() && !gt_points.at(o.gt_instance).empty())
      rec.metrics = eval_recon(pts, gt_points.at(o.gt_instance), threshold_cm);
    r.recon.push_back(rec);
  }
  return r;
}

inline EvalReport evaluate_dataset(const MapState& s, const std::filesystem::path& dataset,
                                   const std::vector<CameraModel>& cameras, double threshold_cm) {
  const auto gt = read_ground_truth(dataset);
  std::map<int, std::vector<Vector3d>> pts;
  for (const auto& o : gt)
    if (std::filesystem::exists(dataset / "gt" / gt_points_file(o.instance_id)))
      pts[o.instance_id] = read_gt_points(dataset, o.instance_id);
  return evaluate(s, gt, pts, cameras, threshold_cm);
}

// ---- state files ----

namespace detail {

inline nlohmann::json quadric_json(const DualQuadric& q) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(q.rotation()(r, c));
  return {{"center", vec_json(q.center())}, {"rotation", rot}, {"semi_axes", vec_json(q.semi_axes())}};
}

inline DualQuadric json_quadric(const nlohmann::json& j) {
  Matrix3d r;
  const auto& rot = j.at("rotation");
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) r(i, c) = rot.at(3 * i + c).get<double>();
  return DualQuadric(json_vec(j.at("center")), r, json_vec(j.at("semi_axes")));
}

inline nlohmann::json camera_json(const CameraModel& c) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.pose.rotation(r, k));
  return {{"fx", c.fx}, {"fy", c.fy},         {"cx", c.cx},
          {"cy", c.cy}, {"width", c.width},   {"height", c.height},
          {"rotation", rot}, {"translation", vec_json(c.pose.translation)}};
}

inline CameraModel json_camera(const nlohmann::json& j) {
  CameraModel c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.pose.rotation(r, k) = j.at("rotation").at(3 * r + k).get<double>();
  c.pose.translation = json_vec(j.at("translation"));
  return c;
}

inline const char* status_name(TrackStatus s) {
  switch (s) {
    case TrackStatus::candidate: return "candidate";
    case TrackStatus::initialized: return "initialized";
    case TrackStatus::stable: return "stable";
  }
  return "?";
}

inline TrackStatus status_from(const std::string& s) {
  if (s == "candidate") return TrackStatus::candidate;
  if (s == "initialized") return TrackStatus::initialized;
  if (s == "stable") return TrackStatus::stable;
  throw InvalidArgument("unknown track status " + s);
}

}  // namespace detail

inline nlohmann::json tracks_json(const ObjectMap& map) {
  using nlohmann::json;
  json tracks = json::array();
  for (const auto& [id, t] : map.tracks()) {
    json obs = json::array();
    for (const auto& o : t.observations)
      obs.push_back({{"frame_index", o.frame_index},
                     {"bbox", {o.bbox.x_min, o.bbox.y_min, o.bbox.x_max, o.bbox.y_max}},
                     {"depth_hint", o.depth_hint},
                     {"camera", detail::camera_json(o.camera)}});
    tracks.push_back({{"object_id", id},
                      {"class_id", t.class_id},
                      {"instance_id", t.instance_id},
                      {"status", detail::status_name(t.status)},
                      {"last_seen", t.last_seen},
                      {"dirty", t.dirty},
                      {"quadric", t.quadric ? detail::quadric_json(*t.quadric) : json(nullptr)},
                      {"observations", obs}});
  }
  return {{"next_id", map.next_id()}, {"tracks", tracks}};
}

// Writes gaussians.ply (full primitive state) and tracks.json (tracks and id registry).
inline void save_state(const MapState& s, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
  write_ply((dir / "gaussians.ply").string(), s.gaussians, PlyLayout::state);
  detail::write_text(dir / "tracks.json", tracks_json(s.tracks).dump(1) + "\n");
}

inline MapState load_state(const std::filesystem::path& dir) {
  MapState s;
  s.gaussians = read_ply((dir / "gaussians.ply").string());
  const auto path = dir / "tracks.json";
  const auto j = detail::read_json(path);
  try {
    for (const auto& tj : j.at("tracks")) {
      const int id = tj.at("object_id").get<int>();
      s.tracks.set_next_id(id);
      ObjectTrack& t = s.tracks.create(tj.at("class_id").get<int>());
      t.instance_id = tj.at("instance_id").get<int>();
      t.status = detail::status_from(tj.at("status").get<std::string>());
      t.last_seen = tj.at("last_seen").get<int>();
      t.dirty = tj.value("dirty", false);
      if (!tj.at("quadric").is_null()) t.quadric = detail::json_quadric(tj.at("quadric"));
      for (const auto& oj : tj.at("observations")) {
        Observation o;
        o.frame_index = oj.at("frame_index").get<int>();
        const auto& b = oj.at("bbox");
        o.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        o.depth_hint = oj.at("depth_hint").get<double>();
        o.camera = detail::json_camera(oj.at("camera"));
        t.observations.push_back(o);
      }
    }
    s.tracks.set_next_id(j.at("next_id").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), e.what());
  } catch (const Error& e) {
    throw ParseError(path.string(), e.what());
  }
  return s;
}

// ---- export ----

// One points-layout PLY per Gaussian object id plus manifest.json.
inline nlohmann::json export_objects(const MapState& s, const std::filesystem::path& out_dir) {
  using nlohmann::json;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());
  json entries = json::array();
  for (const auto& [id, count] : object_counts(s.gaussians)) {
    char name[32];
    std::snprintf(name, sizeof name, "object_%03d.ply", id);
    const auto pts = extract_object(s.gaussians, id);
    write_ply((out_dir / name).string(), pts);
    json e = {{"object_id", id}, {"file", name}, {"points", pts.size()}};
    e["track_id"] = nullptr;
    e["class_id"] = nullptr;
    e["quadric"] = nullptr;
    for (const auto& [tid, t] : s.tracks.tracks()) {
      if (t.instance_id != id || !t.quadric) continue;
      e["track_id"] = tid;
      e["class_id"] = t.class_id;
      e["quadric"] = detail::quadric_json(*t.quadric);
      break;
    }
    entries.push_back(e);
  }
  const json manifest = {{"objects", entries}};
  detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace dqo
