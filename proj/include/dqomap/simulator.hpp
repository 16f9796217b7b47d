#pragma once

// Synthetic RGB-D sequences of analytic shapes in a textured room, with exact
// depth and instance ids from ray casting.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "dqomap/dataset.hpp"
#include "dqomap/frame.hpp"
#include "dqomap/parallel.hpp"
#include "dqomap/scene.hpp"

namespace dqo {

struct TrajectorySpec {
  enum class Kind { orbit, waypoints };
  Kind kind = Kind::orbit;
  int frames = 60;
  Vector3d target = Vector3d::Zero();
  // orbit
  double radius = 3.0, height = 1.5, height_amp = 0.0, start_angle = 0.0, sweep = 2.0 * std::numbers::pi;
  // Catmull-Rom spline through the eye positions; one point gives a static camera
  std::vector<Vector3d> waypoints;

  Vector3d eye(int i) const {
    if (kind == Kind::orbit) {
      const double th = start_angle + sweep * i / std::max(1, frames);
      return {target.x() + radius * std::cos(th), target.y() + radius * std::sin(th),
              height + height_amp * std::sin(2 * th)};
    }
    const int n = static_cast<int>(waypoints.size());
    if (n == 1 || frames <= 1) return waypoints.front();
    const double s = static_cast<double>(i) / (frames - 1) * (n - 1);
    const int k = std::min(static_cast<int>(s), n - 2);
    const double u = s - k;
    const Vector3d& p1 = waypoints[k];
    const Vector3d& p2 = waypoints[k + 1];
    const Vector3d& p0 = waypoints[std::max(0, k - 1)];
    const Vector3d& p3 = waypoints[std::min(n - 1, k + 2)];
    return 0.5 * ((2 * p1) + (-p0 + p2) * u + (2 * p0 - 5 * p1 + 4 * p2 - p3) * u * u +
                  (-p0 + 3 * p1 - 3 * p2 + p3) * u * u * u);
  }

  PoseRecord pose(int i) const { return PoseRecord::from(look_at(eye(i), target)); }
};

struct NoiseSpec {
  double depth_sigma = 0.0;  // meters
  double bbox_sigma = 0.0;   // pixels, per edge
  double dropout = 0.0;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  // Rendered like objects but labelled background: never detected, no ground truth.
  std::vector<SceneObject> occluders;
  Intrinsics intrinsics;
  TrajectorySpec trajectory;
  NoiseSpec noise;
  bool background = true;
  double room_half = 4.0, wall_height = 3.0;
  // Objects broken into several visible pieces by occluders get one detection per piece.
  bool split_fragments = false;
  int min_visible_pixels = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (intrinsics.width <= 0 || intrinsics.height <= 0 || !(intrinsics.fx > 0) || !(intrinsics.fy > 0))
      throw InvalidParameter("invalid intrinsics");
    if (trajectory.frames < 0) throw InvalidParameter("negative frame count");
    if (trajectory.kind == TrajectorySpec::Kind::waypoints && trajectory.waypoints.empty())
      throw InvalidParameter("waypoint trajectory without waypoints");
    if (!(noise.dropout >= 0 && noise.dropout <= 1) || noise.depth_sigma < 0 || noise.bbox_sigma < 0)
      throw InvalidParameter("invalid noise parameters");
    std::map<int, int> seen;
    for (const auto& o : objects) {
      o.validate();
      if (seen[o.instance_id]++) throw InvalidParameter("duplicate instance id");
    }
    for (const auto& o : occluders) o.validate();
  }
};

// ---- ray casting ----

// Smallest t > 0 with origin + t * dir on the object's surface.
inline std::optional<double> intersect_object(const SceneObject& o, const Vector3d& origin, const Vector3d& dir) {
  const Vector3d lo = o.rotation.transpose() * (origin - o.center);
  const Vector3d ld = o.rotation.transpose() * dir;
  const Vector3d& a = o.semi_axes;
  switch (o.shape) {
    case ShapeKind::sphere:
    case ShapeKind::ellipsoid: {
      const Vector3d p = lo.cwiseQuotient(a), d = ld.cwiseQuotient(a);
      const double A = d.squaredNorm(), B = p.dot(d), C = p.squaredNorm() - 1.0;
      const double disc = B * B - A * C;
      if (disc < 0) return std::nullopt;
      const double sq = std::sqrt(disc);
      // numerically stable roots
      const double qv = -(B + (B >= 0 ? sq : -sq));
      double t0 = qv / A, t1 = qv != 0 ? C / qv : t0;
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > 0) return t0;
      if (t1 > 0) return t1;
      return std::nullopt;
    }
    case ShapeKind::box:
    case ShapeKind::superellipsoid: {
      double tn = -std::numeric_limits<double>::infinity(), tf = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        if (std::abs(ld[i]) < 1e-15) {
          if (std::abs(lo[i]) > a[i]) return std::nullopt;
          continue;
        }
        double t1 = (-a[i] - lo[i]) / ld[i], t2 = (a[i] - lo[i]) / ld[i];
        if (t1 > t2) std::swap(t1, t2);
        tn = std::max(tn, t1);
        tf = std::min(tf, t2);
      }
      if (tn > tf || tf <= 0) return std::nullopt;
      if (o.shape == ShapeKind::box) return tn > 0 ? tn : tf;
      const auto f = [&](double t) {
        const Vector3d p = (lo + t * ld).cwiseQuotient(a).cwiseAbs();
        return std::pow(p.x(), o.exponent) + std::pow(p.y(), o.exponent) + std::pow(p.z(), o.exponent) - 1.0;
      };
      double t_prev = std::max(tn, 0.0);
      if (f(t_prev) <= 0) return std::nullopt;  // origin inside
      constexpr int kSteps = 256;
      const double dt = (tf - t_prev) / kSteps;
      for (int s = 1; s <= kSteps; ++s) {
        const double t = t_prev + dt;
        if (f(t) <= 0) {
          double lo_t = t_prev, hi_t = t;
          for (int it = 0; it < 100 && hi_t - lo_t > 1e-12; ++it) {
            const double mid = 0.5 * (lo_t + hi_t);
            (f(mid) > 0 ? lo_t : hi_t) = mid;
          }
          return 0.5 * (lo_t + hi_t);
        }
        t_prev = t;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

inline Vector3d object_normal(const SceneObject& o, const Vector3d& world) {
  const Vector3d p = o.rotation.transpose() * (world - o.center);
  const Vector3d& a = o.semi_axes;
  Vector3d n;
  switch (o.shape) {
    case ShapeKind::sphere:
    case ShapeKind::ellipsoid:
      n = p.cwiseQuotient(a.cwiseProduct(a));
      break;
    case ShapeKind::box: {
      const Vector3d r = p.cwiseQuotient(a).cwiseAbs();
      int k;
      r.maxCoeff(&k);
      n = Vector3d::Zero();
      n[k] = p[k] >= 0 ? 1 : -1;
      break;
    }
    case ShapeKind::superellipsoid:
      for (int i = 0; i < 3; ++i) {
        const double r = p[i] / a[i];
        n[i] = (r >= 0 ? 1 : -1) * std::pow(std::abs(r), o.exponent - 1) / a[i];
      }
      break;
  }
  return (o.rotation * n).normalized();
}

struct RayHit {
  double t = 0;  // distance along the unit ray
  int instance = 0;
  Vector3d color = Vector3d::Zero();
};

inline Vector3d shade(const Vector3d& albedo, const Vector3d& normal) {
  static const Vector3d light = Vector3d(0.4, 0.3, 1.0).normalized();
  return albedo * (0.35 + 0.65 * std::max(0.0, normal.dot(light)));
}

inline std::optional<RayHit> cast_ray(const SceneSpec& spec, const Vector3d& origin, const Vector3d& dir) {
  std::optional<RayHit> best;
  for (const auto& o : spec.objects) {
    const auto t = intersect_object(o, origin, dir);
    if (!t || (best && *t >= best->t)) continue;
    best = RayHit{*t, o.instance_id, shade(o.albedo, object_normal(o, origin + *t * dir))};
  }
  for (const auto& o : spec.occluders) {
    const auto t = intersect_object(o, origin, dir);
    if (!t || (best && *t >= best->t)) continue;
    best = RayHit{*t, 0, shade(o.albedo, object_normal(o, origin + *t * dir))};
  }
  if (!spec.background) return best;
  const double R = spec.room_half;
  auto consider = [&](double t, const Vector3d& color) {
    if (t > 1e-9 && (!best || t < best->t)) best = RayHit{t, 0, color};
  };
  if (dir.z() < -1e-12) {
    const double t = -origin.z() / dir.z();
    const Vector3d p = origin + t * dir;
    if (std::abs(p.x()) <= R && std::abs(p.y()) <= R) {
      const bool odd = (static_cast<long>(std::floor(p.x() / 0.5)) + static_cast<long>(std::floor(p.y() / 0.5))) & 1;
      consider(t, odd ? Vector3d(0.62, 0.58, 0.52) : Vector3d(0.42, 0.38, 0.34));
    }
  }
  for (int axis = 0; axis < 2; ++axis) {
    for (double side : {-R, R}) {
      if (std::abs(dir[axis]) < 1e-12) continue;
      const double t = (side - origin[axis]) / dir[axis];
      const Vector3d p = origin + t * dir;
      if (std::abs(p[1 - axis]) > R || p.z() < 0 || p.z() > spec.wall_height) continue;
      const bool band = static_cast<long>(std::floor(p[1 - axis] / 0.4)) & 1;
      const double g = 0.7 + 0.08 * band - 0.05 * p.z() / spec.wall_height;
      consider(t, Vector3d(g, g * 0.97, g * 0.92));
    }
  }
  return best;
}

// ---- frame synthesis ----

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (a + 1) + 0xBF58476D1CE4E5B9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// 4-connected pieces of one instance's visible pixels, as pixel-edge boxes.
inline std::vector<std::pair<BBox2D, int>> visible_pieces(const Image<std::uint16_t>& inst, int id) {
  const int w = inst.width(), h = inst.height();
  Image<std::uint8_t> seen(w, h);
  std::vector<std::pair<BBox2D, int>> out;
  std::vector<int> stack;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (inst(x0, y0) != id || seen(x0, y0)) continue;
      int xmin = x0, xmax = x0, ymin = y0, ymax = y0, count = 0;
      stack.assign(1, y0 * w + x0);
      seen(x0, y0) = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int x = p % w, y = p / w;
        ++count;
        xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[1] < 0 || q[0] >= w || q[1] >= h) continue;
          if (inst(q[0], q[1]) != id || seen(q[0], q[1])) continue;
          seen(q[0], q[1]) = 1;
          stack.push_back(q[1] * w + q[0]);
        }
      }
      out.push_back({BBox2D{xmin - 0.5, ymin - 0.5, xmax + 0.5, ymax + 0.5}, count});
    }
  return out;
}

inline std::vector<Detection2D> simulate_detections(const SceneSpec& spec, const CameraModel& cam,
                                                    const Image<std::uint16_t>& inst, int frame_index) {
  std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(frame_index), 2));
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::map<int, int> visible;
  for (auto v : inst.data())
    if (v) ++visible[v];
  std::vector<Detection2D> out;
  for (const auto& o : spec.objects) {
    if (visible[o.instance_id] < spec.min_visible_pixels) continue;
    BBox2D amodal;
    try {
      amodal = project_bbox_clipped(o.quadric(), cam);
    } catch (const Error&) {
      continue;  // object straddles the camera plane
    }
    std::vector<BBox2D> boxes;
    if (spec.split_fragments) {
      // Pieces are cut to the amodal box: corners of boxes and superellipsoids
      // reach past the ground-truth quadric.
      std::vector<BBox2D> pieces;
      for (const auto& [b, n] : visible_pieces(inst, o.instance_id)) {
        const BBox2D c = intersect(b, amodal);
        if (n < spec.min_visible_pixels || !(c.area() > 0)) continue;
        int inside = 0;
        for (int y = static_cast<int>(std::ceil(c.y_min)); y <= static_cast<int>(std::floor(c.y_max)); ++y)
          for (int x = static_cast<int>(std::ceil(c.x_min)); x <= static_cast<int>(std::floor(c.x_max)); ++x)
            if (x >= 0 && y >= 0 && x < inst.width() && y < inst.height() && inst(x, y) == o.instance_id) ++inside;
        if (inside >= spec.min_visible_pixels) pieces.push_back(c);
      }
      if (pieces.size() > 1) boxes = pieces;
    }
    if (boxes.empty()) boxes.push_back(amodal);
    for (auto b : boxes) {
      // draws happen whether or not noise is enabled, so toggling one noise
      // source leaves the others' samples unchanged
      const double e[4] = {jitter(rng), jitter(rng), jitter(rng), jitter(rng)};
      const bool drop = unit(rng) < spec.noise.dropout;
      if (drop) continue;
      if (spec.noise.bbox_sigma > 0) {
        b = {b.x_min + spec.noise.bbox_sigma * e[0], b.y_min + spec.noise.bbox_sigma * e[1],
             b.x_max + spec.noise.bbox_sigma * e[2], b.y_max + spec.noise.bbox_sigma * e[3]};
        if (b.x_min > b.x_max) std::swap(b.x_min, b.x_max);
        if (b.y_min > b.y_max) std::swap(b.y_min, b.y_max);
        b = intersect(b, cam.image_bounds());
        if (!(b.area() > 0)) continue;
      }
      out.push_back(Detection2D{b, o.class_id, 1.0, o.instance_id});
    }
  }
  return out;
}

// Exact camera-z depth of the first surface, or 0.
inline double analytic_depth(const SceneSpec& spec, const CameraModel& cam, double u, double v, int* instance = nullptr) {
  const Vector3d d = cam.ray_direction(u, v);
  const auto hit = cast_ray(spec, cam.center(), d);
  if (instance) *instance = hit ? hit->instance : 0;
  if (!hit) return 0.0;
  return hit->t * d.dot(cam.pose.rotation.col(2));
}

// Frames hold depth already quantized to the dataset's depth_scale, so the
// in-memory frame and its reloaded copy agree exactly.
inline FrameBundle simulate_frame(const SceneSpec& spec, int i) {
  const auto& k = spec.intrinsics;
  FrameBundle f;
  f.index = i;
  f.camera = k.camera(spec.trajectory.pose(i).transform());
  f.rgb = Image<std::uint8_t>(k.width, k.height, 3);
  f.depth = Image<float>(k.width, k.height);
  f.instance = Image<std::uint16_t>(k.width, k.height);
  std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i), 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vector3d fwd = f.camera.pose.rotation.col(2);
  const Vector3d sky(0.55, 0.65, 0.8);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vector3d d = f.camera.ray_direction(x, y);
      const auto hit = cast_ray(spec, f.camera.center(), d);
      const Vector3d c = hit ? hit->color : sky;
      for (int ch = 0; ch < 3; ++ch)
        f.rgb(x, y, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
      const double n = noise(rng);
      if (!hit) continue;
      f.instance(x, y) = static_cast<std::uint16_t>(hit->instance);
      const double z = hit->t * d.dot(fwd) + spec.noise.depth_sigma * n;
      f.depth(x, y) = dequantize_depth(quantize_depth(z, k.depth_scale), k.depth_scale);
    }
  f.detections = simulate_detections(spec, f.camera, f.instance, i);
  return f;
}

inline std::vector<FrameBundle> simulate(const SceneSpec& spec, int workers = 1) {
  spec.validate();
  std::vector<FrameBundle> frames(spec.trajectory.frames);
  parallel_for(spec.trajectory.frames, workers, [&](int i) { frames[i] = simulate_frame(spec, i); });
  return frames;
}

// Surface samples in world coordinates.
inline std::vector<Vector3d> sample_surface(const SceneObject& o, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  const Vector3d& a = o.semi_axes;
  std::vector<Vector3d> out;
  out.reserve(n);
  const std::array<double, 3> face_area = {a.y() * a.z(), a.x() * a.z(), a.x() * a.y()};
  const double total = face_area[0] + face_area[1] + face_area[2];
  for (int i = 0; i < n; ++i) {
    Vector3d p;
    if (o.shape == ShapeKind::box) {
      const double r = u01(rng) * total;
      const int axis = r < face_area[0] ? 0 : (r < face_area[0] + face_area[1] ? 1 : 2);
      p = Vector3d(u(rng), u(rng), u(rng)).cwiseProduct(a);
      p[axis] = (u01(rng) < 0.5 ? -1 : 1) * a[axis];
    } else {
      Vector3d dir(g(rng), g(rng), g(rng));
      dir.normalize();
      if (o.shape == ShapeKind::superellipsoid) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += std::pow(std::abs(dir[k] / a[k]), o.exponent);
        p = dir * std::pow(s, -1.0 / o.exponent);
      } else {
        p = dir.cwiseProduct(a);
      }
    }
    out.push_back(o.center + o.rotation * p);
  }
  return out;
}

inline constexpr int kGtPointsPerObject = 10000;

// Writes the full dataset layout for `spec` into `out_dir`.
inline void generate(const SceneSpec& spec, const std::filesystem::path& out_dir, int workers = 1) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());
  write_intrinsics(out_dir, spec.intrinsics);
  std::vector<std::pair<int, PoseRecord>> poses;
  for (int i = 0; i < spec.trajectory.frames; ++i) poses.emplace_back(i, spec.trajectory.pose(i));
  write_poses(out_dir, poses);
  for (const char* sub : {"rgb", "depth", "instance", "detections"}) std::filesystem::create_directories(out_dir / sub);
  parallel_for(spec.trajectory.frames, workers,
               [&](int i) { write_frame_files(out_dir, simulate_frame(spec, i), spec.intrinsics.depth_scale); });
  std::map<int, std::vector<Vector3d>> points;
  for (const auto& o : spec.objects)
    points[o.instance_id] = sample_surface(o, kGtPointsPerObject, mix_seed(spec.seed, static_cast<std::uint64_t>(o.instance_id), 3));
  write_ground_truth(out_dir, spec.objects, points);
}

}  // namespace dqo
