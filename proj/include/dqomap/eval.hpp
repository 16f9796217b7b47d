#pragma once

// Pose and reconstruction metrics against simulator ground truth.

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqomap/iou3d.hpp"
#include "dqomap/kdtree.hpp"
#include "dqomap/scene.hpp"

namespace dqo {

struct EstimatedObject {
  int object_id = 0;
  int class_id = 0;
  int instance_id = 0;
  DualQuadric quadric;
};

struct ObjectPoseEval {
  int gt_instance = 0;
  std::optional<int> object_id;  // empty = miss
  double iou3d = 0, iou2d = 0;
  std::optional<double> cde_cm;
  int frames_2d = 0;
};

struct PoseEval {
  std::vector<ObjectPoseEval> objects;
  double mean_iou3d = 0, mean_iou2d = 0, mean_cde_cm = 0;
  int misses = 0;
};

// Greedy one-to-one matching by 3D IoU, highest first; ties go to the lower ids.
inline std::vector<std::pair<int, int>> match_by_iou3d(const std::vector<EstimatedObject>& est,
                                                       const std::vector<SceneObject>& gt) {
  std::vector<std::tuple<double, int, int>> pairs;
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t e = 0; e < est.size(); ++e) {
      const double v = iou_3d(gt[g].quadric(), est[e].quadric);
      if (v > 0) pairs.emplace_back(v, static_cast<int>(g), static_cast<int>(e));
    }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
  });
  std::vector<bool> gu(gt.size()), eu(est.size());
  std::vector<std::pair<int, int>> out;  // (gt index, est index)
  for (const auto& [v, g, e] : pairs) {
    if (gu[g] || eu[e]) continue;
    gu[g] = eu[e] = true;
    out.emplace_back(g, e);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// 2D IoU is averaged over the cameras in which the ground-truth box projects
// inside the image.
inline PoseEval eval_pose(const std::vector<EstimatedObject>& est, const std::vector<SceneObject>& gt,
                          const std::vector<CameraModel>& cameras = {}) {
  PoseEval r;
  std::map<int, int> match;
  for (const auto& [g, e] : match_by_iou3d(est, gt)) match[g] = e;
  int matched = 0;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    ObjectPoseEval o;
    o.gt_instance = gt[g].instance_id;
    const auto it = match.find(static_cast<int>(g));
    if (it == match.end()) {
      ++r.misses;
      r.objects.push_back(o);
      continue;
    }
    const auto& e = est[it->second];
    const DualQuadric gq = gt[g].quadric();
    o.object_id = e.object_id;
    o.iou3d = iou_3d(gq, e.quadric);
    o.cde_cm = 100.0 * (gq.center() - e.quadric.center()).norm();
    double sum2d = 0;
    for (const auto& cam : cameras) {
      BBox2D gb;
      try {
        gb = project_bbox_clipped(gq, cam);
      } catch (const Error&) {
        continue;
      }
      if (!(gb.area() > 0)) continue;
      double v = 0;
      try {
        v = iou_2d(gb, project_bbox_clipped(e.quadric, cam));
      } catch (const Error&) {
      }
      sum2d += v;
      ++o.frames_2d;
    }
    o.iou2d = o.frames_2d ? sum2d / o.frames_2d : 0.0;
    r.mean_cde_cm += *o.cde_cm;
    ++matched;
    r.objects.push_back(o);
  }
  if (!gt.empty()) {
    for (const auto& o : r.objects) {
      r.mean_iou3d += o.iou3d / gt.size();
      r.mean_iou2d += o.iou2d / gt.size();
    }
  }
  r.mean_cde_cm = matched ? r.mean_cde_cm / matched : 0.0;
  return r;
}

struct ReconEval {
  double accuracy_cm = 0, completion_cm = 0, completion_ratio = 0;  // ratio in percent
};

inline ReconEval eval_recon(const std::vector<Vector3d>& est, const std::vector<Vector3d>& gt, double threshold_cm) {
  if (est.empty() || gt.empty()) throw InvalidArgument("reconstruction metrics need non-empty point sets");
  const KdTree to_gt(gt), to_est(est);
  ReconEval r;
  for (const auto& p : est) r.accuracy_cm += to_gt.nearest(p);
  std::size_t under = 0;
  const double thr = threshold_cm / 100.0;
  for (const auto& p : gt) {
    const double d = to_est.nearest(p);
    r.completion_cm += d;
    if (d < thr) ++under;
  }
  r.accuracy_cm = 100.0 * r.accuracy_cm / est.size();
  r.completion_cm = 100.0 * r.completion_cm / gt.size();
  r.completion_ratio = 100.0 * under / gt.size();
  return r;
}

struct ObjectReconEval {
  int gt_instance = 0;
  std::size_t points = 0;
  std::optional<ReconEval> metrics;  // empty when the object has no reconstructed points
};

struct RuntimeStats {
  double mean_tracking_s = 0, mean_mapping_s = 0, fps = 0;
  int frames = 0;
};

struct EvalReport {
  PoseEval pose;
  std::vector<ObjectReconEval> recon;
  double recon_threshold_cm = 5.0;
  RuntimeStats runtime;
  int track_count = 0, gt_count = 0;

  // Everything except wall-clock figures, which differ between runs.
  nlohmann::json deterministic_json() const {
    using nlohmann::json;
    json objs = json::array();
    for (const auto& o : pose.objects) {
      json j = {{"gt_instance", o.gt_instance}, {"iou3d", o.iou3d}, {"iou2d", o.iou2d}, {"frames_2d", o.frames_2d}};
      j["object_id"] = o.object_id ? json(*o.object_id) : json(nullptr);
      j["cde_cm"] = o.cde_cm ? json(*o.cde_cm) : json(nullptr);
      objs.push_back(j);
    }
    json rec = json::array();
    double acc = 0, comp = 0, ratio = 0;
    int n = 0;
    for (const auto& r : recon) {
      json j = {{"gt_instance", r.gt_instance}, {"points", r.points}};
      if (r.metrics) {
        j["accuracy_cm"] = r.metrics->accuracy_cm;
        j["completion_cm"] = r.metrics->completion_cm;
        j["completion_ratio"] = r.metrics->completion_ratio;
        acc += r.metrics->accuracy_cm, comp += r.metrics->completion_cm, ratio += r.metrics->completion_ratio, ++n;
      }
      rec.push_back(j);
    }
    json out = {{"pose",
                 {{"objects", objs},
                  {"mean_iou3d", pose.mean_iou3d},
                  {"mean_iou2d", pose.mean_iou2d},
                  {"mean_cde_cm", pose.mean_cde_cm},
                  {"misses", pose.misses}}},
                {"reconstruction", {{"threshold_cm", recon_threshold_cm}, {"objects", rec}}},
                {"track_count", track_count},
                {"gt_count", gt_count}};
    if (n) {
      out["reconstruction"]["mean_accuracy_cm"] = acc / n;
      out["reconstruction"]["mean_completion_cm"] = comp / n;
      out["reconstruction"]["mean_completion_ratio"] = ratio / n;
    }
    return out;
  }

  nlohmann::json to_json() const {
    auto j = deterministic_json();
    j["runtime"] = {{"frames", runtime.frames},
                    {"mean_tracking_s", runtime.mean_tracking_s},
                    {"mean_mapping_s", runtime.mean_mapping_s},
                    {"fps", runtime.fps}};
    return j;
  }

  std::string to_table() const {
    std::string s;
    char line[256];
    std::snprintf(line, sizeof line, "tracks %d / gt %d, misses %d\n", track_count, gt_count, pose.misses);
    s += line;
    s += "  gt  obj   3D IoU   2D IoU   CDE(cm)\n";
    for (const auto& o : pose.objects) {
      if (o.object_id)
        std::snprintf(line, sizeof line, "%4d %4d %8.3f %8.3f %9.2f\n", o.gt_instance, *o.object_id, o.iou3d,
                      o.iou2d, *o.cde_cm);
      else
        std::snprintf(line, sizeof line, "%4d    -    miss\n", o.gt_instance);
      s += line;
    }
    std::snprintf(line, sizeof line, "mean      %8.3f %8.3f %9.2f\n", pose.mean_iou3d, pose.mean_iou2d,
                  pose.mean_cde_cm);
    s += line;
    if (!recon.empty()) {
      std::snprintf(line, sizeof line, "  gt   points   Acc(cm)  Comp(cm)  <%.0fcm(%%)\n", recon_threshold_cm);
      s += line;
      for (const auto& r : recon) {
        if (r.metrics)
          std::snprintf(line, sizeof line, "%4d %8zu %9.2f %9.2f %9.1f\n", r.gt_instance, r.points,
                        r.metrics->accuracy_cm, r.metrics->completion_cm, r.metrics->completion_ratio);
        else
          std::snprintf(line, sizeof line, "%4d %8zu         -\n", r.gt_instance, r.points);
        s += line;
      }
    }
    if (runtime.frames) {
      std::snprintf(line, sizeof line, "runtime: %d frames, tracking %.4f s/frame, mapping %.4f s/frame, %.2f FPS\n",
                    runtime.frames, runtime.mean_tracking_s, runtime.mean_mapping_s, runtime.fps);
      s += line;
    }
    return s;
  }
};

}  // namespace dqo
