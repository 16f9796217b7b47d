#pragma once

// Persistent object map and the coarse-to-fine 3D-2D association:
// IoU gating, quadric-distance (QD) filtering and occlusion merging.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "dqomap/frame.hpp"
#include "dqomap/geometry.hpp"

namespace dqo {

struct Observation {
  int frame_index = 0;
  BBox2D bbox;
  CameraModel camera;
  double depth_hint = 0.0;  // estimated camera-frame depth of the object center, 0 = unknown
};

enum class TrackStatus { candidate, initialized, stable };

struct ObjectTrack {
  int object_id = 0;
  int class_id = 0;
  int instance_id = 0;  // dominant instance-map id under the first observation
  std::optional<DualQuadric> quadric;
  std::vector<Observation> observations;
  TrackStatus status = TrackStatus::candidate;
  int last_seen = -1;
  bool dirty = false;  // has observations not yet seen by the pose optimizer
};

class ObjectMap {
 public:
  ObjectTrack& create(int class_id) {
    const int id = next_id_++;
    ObjectTrack& t = tracks_[id];
    t.object_id = id;
    t.class_id = class_id;
    return t;
  }
  // Popped ids are never reused.
  void erase(int id) { tracks_.erase(id); }
  ObjectTrack* find(int id) {
    auto it = tracks_.find(id);
    return it == tracks_.end() ? nullptr : &it->second;
  }
  const ObjectTrack* find(int id) const {
    auto it = tracks_.find(id);
    return it == tracks_.end() ? nullptr : &it->second;
  }
  std::map<int, ObjectTrack>& tracks() { return tracks_; }
  const std::map<int, ObjectTrack>& tracks() const { return tracks_; }
  std::size_t size() const { return tracks_.size(); }
  int next_id() const { return next_id_; }
  void set_next_id(int id) { next_id_ = id; }

 private:
  std::map<int, ObjectTrack> tracks_;
  int next_id_ = 1;
};

// Median visible depth of an ellipsoid sits 1/sqrt(2) of its depth extent in
// front of the center; depth hints add it back.
inline constexpr double kSurfaceToCenter = 0.70710678118654752;

inline double center_depth_from_surface(double surface_depth, const BBox2D& b, const CameraModel& cam) {
  // Depth extent scales with the center depth z: z = surface + k * s * z.
  const double s = 0.5 * (0.5 * b.width() / cam.fx + 0.5 * b.height() / cam.fy);
  return surface_depth / std::max(0.1, 1.0 - kSurfaceToCenter * s);
}

struct DepthHint {
  double center_depth = 0.0;  // 0 when no valid depth was found
  int instance_id = 0;
};

namespace detail {
inline double median_inplace(std::vector<double>& v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}
}  // namespace detail

// Median depth of the instance that best explains the box, lifted to the
// center. Among instances with valid depth inside the box, the one whose full
// pixel extent overlaps the box most wins, so an occluder in front does not
// take over a partly hidden object.
inline DepthHint estimate_depth_hint(const FrameBundle& frame, const BBox2D& b) {
  const PixelRange r = pixel_range(b, frame.depth.width(), frame.depth.height());
  DepthHint out;
  if (r.empty()) return out;
  std::map<int, int> votes;
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x)
      if (frame.instance(x, y) != 0 && frame.depth(x, y) > 0) ++votes[frame.instance(x, y)];
  std::map<int, BBox2D> extent;
  if (votes.size() > 1) {
    for (int y = 0; y < frame.instance.height(); ++y)
      for (int x = 0; x < frame.instance.width(); ++x) {
        const int id = frame.instance(x, y);
        if (!votes.count(id)) continue;
        auto [it, fresh] = extent.try_emplace(id, BBox2D{x - 0.5, y - 0.5, x + 0.5, y + 0.5});
        if (fresh) continue;
        BBox2D& e = it->second;
        e.x_min = std::min(e.x_min, x - 0.5), e.y_min = std::min(e.y_min, y - 0.5);
        e.x_max = std::max(e.x_max, x + 0.5), e.y_max = std::max(e.y_max, y + 0.5);
      }
  }
  int best = 0, best_count = 0;
  double best_fit = -1;
  for (const auto& [id, n] : votes) {
    const double fit = extent.empty() ? 0.0 : iou_2d(extent.at(id), b);
    if (fit > best_fit || (fit == best_fit && n > best_count)) best = id, best_count = n, best_fit = fit;
  }
  std::vector<double> depths;
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x)
      if (frame.depth(x, y) > 0 && (best == 0 || frame.instance(x, y) == best))
        depths.push_back(frame.depth(x, y));
  if (depths.empty()) return out;
  out.instance_id = best;
  out.center_depth = center_depth_from_surface(detail::median_inplace(depths), b, frame.camera);
  return out;
}

// Camera-frame depth of the first ray/ellipsoid hit through pixel (u, v).
inline std::optional<double> ray_hit_depth(const DualQuadric& q, const CameraModel& cam, double u, double v) {
  const Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  const Matrix3d to_local = q.rotation().transpose();
  const Vector3d inv_axes = q.semi_axes().cwiseInverse();
  const Vector3d o = (to_local * (cam.center() - q.center())).cwiseProduct(inv_axes);
  const Vector3d d = (to_local * (cam.pose.rotation * d_cam)).cwiseProduct(inv_axes);
  const double a = d.squaredNorm(), bq = 2.0 * o.dot(d), c = o.squaredNorm() - 1.0;
  const double disc = bq * bq - 4 * a * c;
  if (disc < 0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t = (-bq - s) / (2 * a);
  if (t <= 0) t = (-bq + s) / (2 * a);
  if (t <= 0) return std::nullopt;
  return t;  // d_cam has unit z, so t is the camera-frame depth
}

// The depth hint the frame estimator would report for this quadric over `region`.
inline std::optional<double> predicted_depth_hint(const DualQuadric& q, const CameraModel& cam,
                                                  const BBox2D& region, int grid = 12) {
  const PixelRange r = pixel_range(region, cam.width, cam.height);
  if (r.empty()) return std::nullopt;
  const int sx = std::max(1, (r.x1 - r.x0 + 1) / grid), sy = std::max(1, (r.y1 - r.y0 + 1) / grid);
  std::vector<double> depths;
  for (int y = r.y0; y <= r.y1; y += sy)
    for (int x = r.x0; x <= r.x1; x += sx)
      if (auto z = ray_hit_depth(q, cam, x, y)) depths.push_back(*z);
  if (depths.empty()) return std::nullopt;
  return center_depth_from_surface(detail::median_inplace(depths), region, cam);
}

// Initial quadric from box observations. One view needs a depth hint; two or
// more well-spread views triangulate the box-center rays instead.
inline DualQuadric initialize_track(std::span<const Observation> views, double min_ray_spread = 5e-3) {
  if (views.empty()) throw CannotInitialize("no observations");
  Matrix3d a = Matrix3d::Zero();
  Vector3d b = Vector3d::Zero();
  Vector3d depth_sum = Vector3d::Zero();
  int with_depth = 0;
  for (const auto& v : views) {
    const Vector2d c = v.bbox.center();
    const Vector3d dir = v.camera.ray_direction(c.x(), c.y());
    const Matrix3d proj = Matrix3d::Identity() - dir * dir.transpose();
    a += proj;
    b += proj * v.camera.center();
    if (v.depth_hint > 0) {
      depth_sum += v.camera.backproject(c.x(), c.y(), v.depth_hint);
      ++with_depth;
    }
  }
  const double n = static_cast<double>(views.size());
  const double spread = views.size() >= 2 ? Eigen::SelfAdjointEigenSolver<Matrix3d>(a / n).eigenvalues()[0] : 0.0;
  Vector3d center;
  if (views.size() >= 2 && (spread >= min_ray_spread || (with_depth == 0 && spread > 1e-12))) {
    center = a.ldlt().solve(b);
  } else if (with_depth > 0) {
    center = depth_sum / with_depth;
  } else {
    throw CannotInitialize("need a depth hint or two non-parallel views");
  }

  std::vector<double> ax[3];
  for (const auto& v : views) {
    const double z = v.camera.to_camera(center).z();
    if (!(z > 0)) continue;
    Vector3d ext(0.5 * v.bbox.width() * z / v.camera.fx, 0.5 * v.bbox.height() * z / v.camera.fy, 0.0);
    ext.z() = 0.5 * (ext.x() + ext.y());
    // Camera-aligned extents expressed on the world axes.
    const Vector3d world = (v.camera.pose.rotation.cwiseAbs2() * ext.cwiseAbs2()).cwiseSqrt();
    for (int k = 0; k < 3; ++k) ax[k].push_back(world[k]);
  }
  if (ax[0].empty()) throw CannotInitialize("center lies behind every observing camera");
  Vector3d axes;
  for (int k = 0; k < 3; ++k) axes[k] = std::max(1e-3, detail::median_inplace(ax[k]));
  if (!center.allFinite()) throw CannotInitialize("non-finite center");
  return DualQuadric(center, Matrix3d::Identity(), axes);
}

inline DualQuadric initialize_track(const BBox2D& bbox, const CameraModel& cam, double depth_hint) {
  const Observation o{0, bbox, cam, depth_hint};
  return initialize_track(std::span<const Observation>(&o, 1));
}

enum class AssociationStrategy { iou_only, qd_only, qd_iou };

struct AssocConfig {
  double iou_gate = 0.3;
  double qd_accept = 0.6;
  double tau = 1.0;
  double t_thre = 0.85;
  double merge_d = 0.1;
  AssociationStrategy strategy = AssociationStrategy::qd_iou;
};

struct AssociationResult {
  std::vector<std::pair<int, int>> matches;  // (object_id, detection index)
  std::vector<int> new_tracks;               // detection indices
  std::vector<int> created_ids;              // object ids created for new_tracks (same order)
  std::vector<std::pair<int, int>> merges;   // (kept id, removed id)
};

// Track quadric seen through the same single-view observation model as a
// detection restricted to `det_box`. Empty when the two do not overlap.
inline std::optional<DualQuadric> predicted_observation(const DualQuadric& q, const CameraModel& cam,
                                                        const BBox2D& det_box) {
  BBox2D proj;
  try {
    proj = project_bbox_clipped(q, cam);
  } catch (const Error&) {
    return std::nullopt;
  }
  const BBox2D region = intersect(proj, det_box);
  if (region.area() <= 0) return std::nullopt;
  const auto hint = predicted_depth_hint(q, cam, region);
  if (!hint) return std::nullopt;
  try {
    return initialize_track(region, cam, *hint);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline double association_similarity(const DualQuadric& track, const DualQuadric& observed,
                                     const CameraModel& cam, const BBox2D& det_box, double tau) {
  const auto pred = predicted_observation(track, cam, det_box);
  return pred ? quadric_distance(observed, *pred, tau) : 0.0;
}

namespace detail {

inline std::optional<BBox2D> visible_box(const ObjectTrack& t, const CameraModel& cam) {
  if (!t.quadric) return std::nullopt;
  try {
    const BBox2D b = project_bbox_clipped(*t.quadric, cam);
    if (b.area() <= 0) return std::nullopt;
    return b;
  } catch (const Error&) {
    return std::nullopt;
  }
}

// The track with more views absorbs the other and keeps its quadric, so an
// optimized estimate is not thrown away when a fresh fragment is folded in.
inline void fold_track(ObjectTrack& keep, ObjectTrack& drop) {
  if (!keep.quadric) keep.quadric = drop.quadric;
  keep.observations.insert(keep.observations.end(), drop.observations.begin(), drop.observations.end());
  std::stable_sort(keep.observations.begin(), keep.observations.end(),
                   [](const Observation& a, const Observation& b) { return a.frame_index < b.frame_index; });
  keep.last_seen = std::max(keep.last_seen, drop.last_seen);
  if (keep.instance_id == 0) keep.instance_id = drop.instance_id;
  if (keep.quadric && keep.status == TrackStatus::candidate) keep.status = TrackStatus::initialized;
  keep.dirty = true;
}

}  // namespace detail

// Pops tracks whose current box lies inside a larger same-class projection
// (t = overlap / smaller area > t_thre) and whose center lies inside the larger
// quadric inflated by merge_d. A track observed in `frame_index` is represented
// by its detection box there; a single-view quadric projects wider than the
// box it came from, which matters for thin fragments.
inline std::vector<std::pair<int, int>> merge_occluded(ObjectMap& map, const CameraModel& cam,
                                                       const AssocConfig& cfg, int frame_index = -1) {
  std::vector<std::pair<int, int>> merges;
  for (bool changed = true; changed;) {
    changed = false;
    // (id, projection, own box)
    std::vector<std::tuple<int, BBox2D, BBox2D>> visible;
    for (const auto& [id, t] : map.tracks()) {
      const auto b = detail::visible_box(t, cam);
      if (!b) continue;
      BBox2D own = *b;
      for (const auto& o : t.observations)
        if (o.frame_index == frame_index && frame_index >= 0) own = o.bbox;
      visible.emplace_back(id, *b, own);
    }
    for (const auto& [i, bi, own_i] : visible) {
      for (const auto& [j, proj_j, bj] : visible) {
        if (i == j) continue;
        const ObjectTrack& ti = *map.find(i);
        const ObjectTrack& tj = *map.find(j);
        if (ti.class_id != tj.class_id || !(bj.area() < bi.area())) continue;
        const double t = intersection_area(bi, bj) / bj.area();
        if (t <= cfg.t_thre) continue;
        if (ti.quadric->mahalanobis(tj.quadric->center()) > 1.0 + cfg.merge_d) continue;
        // The surviving id is the longer-lived track.
        const bool j_older = tj.observations.size() > ti.observations.size() ||
                             (tj.observations.size() == ti.observations.size() && j < i);
        const int k = j_older ? j : i, r = j_older ? i : j;
        detail::fold_track(*map.find(k), *map.find(r));
        map.erase(r);
        merges.emplace_back(k, r);
        changed = true;
        break;
      }
      if (changed) break;
    }
  }
  return merges;
}

// Associates the frame's detections with the map and applies the result:
// matched tracks gain an observation, unmatched detections open new tracks,
// then occlusion fragments are merged. The merge test is stated in quadric
// terms, so the IoU-only strategy skips it.
inline AssociationResult associate_frame(ObjectMap& map, const FrameBundle& frame, const AssocConfig& cfg) {
  AssociationResult res;
  const CameraModel& cam = frame.camera;
  const auto& dets = frame.detections;
  if (dets.empty()) return res;

  std::vector<DepthHint> hints(dets.size());
  std::vector<std::optional<DualQuadric>> observed(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    hints[d] = estimate_depth_hint(frame, dets[d].bbox);
    if (hints[d].center_depth > 0) {
      try {
        observed[d] = initialize_track(dets[d].bbox, cam, hints[d].center_depth);
      } catch (const CannotInitialize&) {
      }
    }
  }

  // (score, object id, detection index)
  std::vector<std::tuple<double, int, int>> candidates;
  for (const auto& [id, track] : map.tracks()) {
    const auto box = detail::visible_box(track, cam);
    if (!box) continue;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (dets[d].class_id != track.class_id) continue;
      if (cfg.strategy == AssociationStrategy::qd_only) {
        if (!observed[d]) continue;
        const double qd = association_similarity(*track.quadric, *observed[d], cam, dets[d].bbox, cfg.tau);
        if (qd >= cfg.qd_accept) candidates.emplace_back(qd, id, static_cast<int>(d));
      } else {
        const double iou = iou_2d(*box, dets[d].bbox);
        if (iou >= cfg.iou_gate && iou > 0) candidates.emplace_back(iou, id, static_cast<int>(d));
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });

  std::vector<bool> det_used(dets.size(), false);
  std::map<int, bool> track_used;
  for (const auto& [score, id, d] : candidates) {
    if (det_used[d] || track_used[id]) continue;
    det_used[d] = true;
    track_used[id] = true;
    res.matches.emplace_back(id, d);
  }

  if (cfg.strategy == AssociationStrategy::qd_iou) {
    std::vector<std::pair<int, int>> kept;
    for (const auto& [id, d] : res.matches) {
      const ObjectTrack& t = *map.find(id);
      // Without a depth hint the fine test cannot be evaluated; keep the coarse match.
      const bool accept = !observed[d] || association_similarity(*t.quadric, *observed[d], cam, dets[d].bbox,
                                                                 cfg.tau) >= cfg.qd_accept;
      if (accept) {
        kept.emplace_back(id, d);
      } else {
        det_used[d] = false;
      }
    }
    res.matches = std::move(kept);
  }

  for (const auto& [id, d] : res.matches) {
    ObjectTrack& t = *map.find(id);
    t.observations.push_back({frame.index, dets[d].bbox, cam, hints[d].center_depth});
    t.last_seen = frame.index;
    t.dirty = true;
    if (t.instance_id == 0) t.instance_id = hints[d].instance_id;
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (det_used[d]) continue;
    ObjectTrack& t = map.create(dets[d].class_id);
    t.observations.push_back({frame.index, dets[d].bbox, cam, hints[d].center_depth});
    t.last_seen = frame.index;
    t.instance_id = hints[d].instance_id;
    t.quadric = observed[d];
    t.status = observed[d] ? TrackStatus::initialized : TrackStatus::candidate;
    t.dirty = true;
    res.new_tracks.push_back(static_cast<int>(d));
    res.created_ids.push_back(t.object_id);
  }

  // Candidates without a quadric retry initialization once they have more views.
  for (auto& [id, t] : map.tracks()) {
    if (t.quadric || t.observations.size() < 2) continue;
    try {
      t.quadric = initialize_track(t.observations);
      t.status = TrackStatus::initialized;
    } catch (const CannotInitialize&) {
    }
  }

  if (cfg.strategy != AssociationStrategy::iou_only) res.merges = merge_occluded(map, cam, cfg, frame.index);
  return res;
}

}  // namespace dqo
