#pragma once

// On-disk dataset layout:
//   intrinsics.json          fx, fy, cx, cy, width, height, depth_scale
//   poses.txt                "idx tx ty tz qx qy qz qw" per line, world-from-camera
//   rgb/%06d.png             8-bit RGB
//   depth/%06d.png           16-bit, meters * depth_scale, 0 = invalid
//   instance/%06d.png        16-bit instance ids, 0 = background
//   detections/%06d.json     [{class_id, bbox: [x1, y1, x2, y2], score, instance_id?}]
//   gt/objects.json          ground-truth objects
//   gt/points_%03d.ply       ground-truth surface samples per instance id

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dqomap/frame.hpp"
#include "dqomap/ply.hpp"
#include "dqomap/png_io.hpp"
#include "dqomap/scene.hpp"

namespace dqo {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::uint16_t quantize_depth(double meters, double scale) {
  if (!(meters > 0)) return 0;
  return static_cast<std::uint16_t>(std::min(65535.0, std::round(meters * scale)));
}
inline float dequantize_depth(std::uint16_t v, double scale) { return static_cast<float>(v / scale); }

inline std::string frame_file(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.%s", index, ext);
  return buf;
}

inline std::string gt_points_file(int instance_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "points_%03d.ply", instance_id);
  return buf;
}

namespace detail {

inline json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ParseError(p.string(), "cannot open file");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ParseError(p.string(), e.what());
  }
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

inline json vec_json(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vector3d json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

// ---- writing ----

inline void write_intrinsics(const fs::path& dir, const Intrinsics& k) {
  json j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
            {"width", k.width}, {"height", k.height}, {"depth_scale", k.depth_scale}};
  detail::write_text(dir / "intrinsics.json", j.dump(2) + "\n");
}

inline void write_poses(const fs::path& dir, const std::vector<std::pair<int, PoseRecord>>& poses) {
  std::string out;
  char line[512];
  for (const auto& [idx, p] : poses) {
    std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", idx, p.translation.x(),
                  p.translation.y(), p.translation.z(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
                  p.rotation.w());
    out += line;
  }
  detail::write_text(dir / "poses.txt", out);
}

inline json detections_json(const std::vector<Detection2D>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    json o = {{"class_id", d.class_id},
              {"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
              {"score", d.score}};
    if (d.instance_id) o["instance_id"] = *d.instance_id;
    arr.push_back(o);
  }
  return arr;
}

// Depth is written quantized; frames meant to round-trip exactly must already
// hold dequantized values.
inline void write_frame_files(const fs::path& dir, const FrameBundle& f, double depth_scale) {
  for (const char* sub : {"rgb", "depth", "instance", "detections"}) fs::create_directories(dir / sub);
  write_png_rgb8((dir / "rgb" / frame_file(f.index, "png")).string(), f.rgb);
  Image<std::uint16_t> d(f.depth.width(), f.depth.height());
  for (std::size_t i = 0; i < d.data().size(); ++i) d.data()[i] = quantize_depth(f.depth.data()[i], depth_scale);
  write_png_gray16((dir / "depth" / frame_file(f.index, "png")).string(), d);
  write_png_gray16((dir / "instance" / frame_file(f.index, "png")).string(), f.instance);
  detail::write_text(dir / "detections" / frame_file(f.index, "json"), detections_json(f.detections).dump(1) + "\n");
}

inline json object_json(const SceneObject& o) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(o.rotation(r, c));
  return {{"instance_id", o.instance_id}, {"class_id", o.class_id},  {"shape", to_string(o.shape)},
          {"center", detail::vec_json(o.center)}, {"rotation", rot}, {"semi_axes", detail::vec_json(o.semi_axes)},
          {"albedo", detail::vec_json(o.albedo)}, {"exponent", o.exponent}};
}

inline SceneObject object_from_json(const json& j) {
  SceneObject o;
  o.instance_id = j.at("instance_id").get<int>();
  o.class_id = j.at("class_id").get<int>();
  o.shape = shape_from_string(j.at("shape").get<std::string>());
  o.center = detail::json_vec(j.at("center"));
  const auto& rot = j.at("rotation");
  if (!rot.is_array() || rot.size() != 9) throw InvalidArgument("rotation must have 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) o.rotation(r, c) = rot[3 * r + c].get<double>();
  o.semi_axes = detail::json_vec(j.at("semi_axes"));
  o.albedo = detail::json_vec(j.at("albedo"));
  o.exponent = j.value("exponent", 4.0);
  return o;
}

inline void write_ground_truth(const fs::path& dir, const std::vector<SceneObject>& objects,
                               const std::map<int, std::vector<Vector3d>>& points) {
  fs::create_directories(dir / "gt");
  json arr = json::array();
  for (const auto& o : objects) arr.push_back(object_json(o));
  detail::write_text(dir / "gt" / "objects.json", json{{"objects", arr}}.dump(2) + "\n");
  for (const auto& o : objects) {
    const auto it = points.find(o.instance_id);
    if (it == points.end()) continue;
    std::vector<GaussianPrimitive> gs;
    gs.reserve(it->second.size());
    for (const auto& p : it->second) {
      GaussianPrimitive g;
      g.mean = p;
      g.color = o.albedo;
      g.opacity = 1.0;
      g.object_id = o.instance_id;
      gs.push_back(g);
    }
    write_ply((dir / "gt" / gt_points_file(o.instance_id)).string(), gs);
  }
}

// ---- reading ----

inline Intrinsics read_intrinsics(const fs::path& dir) {
  const fs::path p = dir / "intrinsics.json";
  if (!fs::exists(p)) throw ParseError(p.string(), "file not found");
  const json j = detail::read_json(p);
  try {
    Intrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.depth_scale = j.value("depth_scale", 1000.0);
    if (!(k.fx > 0 && k.fy > 0 && k.width > 0 && k.height > 0 && k.depth_scale > 0))
      throw ParseError(p.string(), "non-positive intrinsics");
    return k;
  } catch (const json::exception& e) {
    throw ParseError(p.string(), e.what());
  }
}

inline std::vector<std::pair<int, PoseRecord>> read_poses(const fs::path& dir) {
  const fs::path p = dir / "poses.txt";
  std::ifstream f(p);
  if (!f) throw ParseError(p.string(), "cannot open file");
  std::vector<std::pair<int, PoseRecord>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    int idx;
    double t[3], q[4];
    if (!(ls >> idx >> t[0] >> t[1] >> t[2] >> q[0] >> q[1] >> q[2] >> q[3]))
      throw ParseError(p.string(), "malformed pose on line " + std::to_string(lineno));
    PoseRecord r;
    r.translation = Vector3d(t[0], t[1], t[2]);
    r.rotation = Eigen::Quaterniond(q[3], q[0], q[1], q[2]);
    const double n = r.rotation.norm();
    if (!(std::abs(n - 1.0) < 1e-6)) throw ParseError(p.string(), "non-unit quaternion on line " + std::to_string(lineno));
    if (!out.empty() && idx <= out.back().first)
      throw ParseError(p.string(), "frame indices must increase (line " + std::to_string(lineno) + ")");
    out.emplace_back(idx, r);
  }
  return out;
}

inline std::vector<Detection2D> read_detections(const fs::path& p) {
  const json j = detail::read_json(p);
  if (!j.is_array()) throw ParseError(p.string(), "expected a JSON array");
  std::vector<Detection2D> out;
  try {
    for (const auto& o : j) {
      Detection2D d;
      d.class_id = o.at("class_id").get<int>();
      const auto& b = o.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ParseError(p.string(), "bbox must have 4 numbers");
      d.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      d.score = o.value("score", 1.0);
      if (o.contains("instance_id")) d.instance_id = o["instance_id"].get<int>();
      out.push_back(d);
    }
  } catch (const json::exception& e) {
    throw ParseError(p.string(), e.what());
  }
  return out;
}

// Streams frames in index order. A malformed frame throws ParseError; frames
// already returned stay valid.
class DatasetReader {
 public:
  explicit DatasetReader(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) throw ParseError(dir_.string(), "not a directory");
    intrinsics_ = read_intrinsics(dir_);
    poses_ = read_poses(dir_);
  }

  const Intrinsics& intrinsics() const { return intrinsics_; }
  std::size_t size() const { return poses_.size(); }
  const fs::path& directory() const { return dir_; }

  FrameBundle frame(std::size_t i) const {
    const auto& [idx, pose] = poses_.at(i);
    FrameBundle f;
    f.index = idx;
    f.camera = intrinsics_.camera(pose.transform());
    f.rgb = read_png_rgb8((dir_ / "rgb" / frame_file(idx, "png")).string());
    const fs::path dp = dir_ / "depth" / frame_file(idx, "png");
    const auto d16 = read_png_gray16(dp.string());
    f.depth = Image<float>(d16.width(), d16.height());
    for (std::size_t k = 0; k < d16.data().size(); ++k)
      f.depth.data()[k] = dequantize_depth(d16.data()[k], intrinsics_.depth_scale);
    f.instance = read_png_gray16((dir_ / "instance" / frame_file(idx, "png")).string());
    f.detections = read_detections(dir_ / "detections" / frame_file(idx, "json"));
    try {
      f.validate();
    } catch (const Error& e) {
      throw ParseError((dir_ / "rgb" / frame_file(idx, "png")).string(), e.what());
    }
    return f;
  }

  std::optional<FrameBundle> next() {
    if (cursor_ >= poses_.size()) return std::nullopt;
    FrameBundle f = frame(cursor_);
    ++cursor_;
    return f;
  }

 private:
  fs::path dir_;
  Intrinsics intrinsics_;
  std::vector<std::pair<int, PoseRecord>> poses_;
  std::size_t cursor_ = 0;
};

inline std::vector<SceneObject> read_ground_truth(const fs::path& dir) {
  const fs::path p = dir / "gt" / "objects.json";
  const json j = detail::read_json(p);
  std::vector<SceneObject> out;
  try {
    for (const auto& o : j.at("objects")) out.push_back(object_from_json(o));
  } catch (const json::exception& e) {
    throw ParseError(p.string(), e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(p.string(), e.what());
  }
  return out;
}

inline std::vector<Vector3d> read_gt_points(const fs::path& dir, int instance_id) {
  std::vector<Vector3d> out;
  for (const auto& g : read_ply((dir / "gt" / gt_points_file(instance_id)).string())) out.push_back(g.mean);
  return out;
}

}  // namespace dqo
