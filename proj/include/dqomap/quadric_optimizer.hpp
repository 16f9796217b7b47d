#pragma once

// Refines a track's quadric by minimizing the summed box misfit
// sum_i (1 - IoU(projected box_i, observed box_i)) over its observations.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dqomap/association.hpp"
#include "dqomap/geometry.hpp"

namespace dqo {

using Vector9d = Eigen::Matrix<double, 9, 1>;

struct QuadricParams {
  Vector3d center = Vector3d::Zero();
  Vector3d rot_axis_angle = Vector3d::Zero();
  Vector3d log_semi_axes = Vector3d::Zero();

  static QuadricParams from_quadric(const DualQuadric& q) {
    return {q.center(), axis_angle_from_rotation(q.rotation()), q.semi_axes().array().log().matrix()};
  }
  DualQuadric to_quadric() const {
    return DualQuadric(center, rotation_from_axis_angle(rot_axis_angle), log_semi_axes.array().exp().matrix());
  }
  Vector9d vector() const {
    Vector9d v;
    v << center, rot_axis_angle, log_semi_axes;
    return v;
  }
  static QuadricParams from_vector(const Vector9d& v) {
    return {v.segment<3>(0), v.segment<3>(3), v.segment<3>(6)};
  }
};

struct PoseLoss {
  double value = 0.0;
  int skipped = 0;  // observations with the quadric center behind the camera
};

inline PoseLoss evaluate_pose_loss(const DualQuadric& q, std::span<const Observation> obs) {
  if (obs.empty()) throw InvalidArgument("pose loss needs at least one observation");
  PoseLoss out;
  for (const auto& o : obs) {
    try {
      out.value += 1.0 - iou_2d(project_bbox_clipped(q, o.camera), o.bbox);
    } catch (const BehindCamera&) {
      ++out.skipped;
    } catch (const DegenerateConic&) {
      // Camera inside the ellipsoid: no box, worst misfit.
      out.value += 1.0;
    }
  }
  return out;
}

inline double pose_loss(const QuadricParams& p, std::span<const Observation> obs) {
  return evaluate_pose_loss(p.to_quadric(), obs).value;
}

struct OptimConfig {
  int max_iters = 200;
  double rel_tol = 1e-4;
  int window = 5;
  double step_center = 0.01;
  double step_rot = 0.01;
  double step_axes = 0.01;
  bool yaw_only = false;
  int min_obs = 3;
  double min_ray_spread = 1e-4;
};

inline Vector9d parameter_steps(const OptimConfig& cfg) {
  Vector9d s;
  s << Vector3d::Constant(cfg.step_center), Vector3d::Constant(cfg.step_rot), Vector3d::Constant(cfg.step_axes);
  return s;
}

// Central finite-difference gradient with per-parameter steps. Inactive
// parameters get a zero component.
inline Vector9d pose_loss_gradient(const Vector9d& x, std::span<const Observation> obs, const Vector9d& steps,
                                   const Eigen::Array<bool, 9, 1>& active) {
  Vector9d g = Vector9d::Zero();
  for (int k = 0; k < 9; ++k) {
    if (!active[k]) continue;
    Vector9d xp = x, xm = x;
    xp[k] += steps[k];
    xm[k] -= steps[k];
    g[k] = (pose_loss(QuadricParams::from_vector(xp), obs) - pose_loss(QuadricParams::from_vector(xm), obs)) /
           (2 * steps[k]);
  }
  return g;
}

// Smallest eigenvalue of mean(I - d d^T) over box-center rays; 0 for parallel rays.
inline double observation_ray_spread(std::span<const Observation> obs) {
  if (obs.size() < 2) return 0.0;
  Matrix3d a = Matrix3d::Zero();
  for (const auto& o : obs) {
    const Vector3d d = o.camera.ray_direction(o.bbox.center().x(), o.bbox.center().y());
    a += Matrix3d::Identity() - d * d.transpose();
  }
  return Eigen::SelfAdjointEigenSolver<Matrix3d>(a / static_cast<double>(obs.size())).eigenvalues()[0];
}

struct OptimResult {
  QuadricParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
  int skipped = 0;
  bool degenerate = false;  // ray geometry too poor to optimize; params returned unchanged
  std::vector<double> trace;  // loss after each iteration, starting with the initial loss
};

inline OptimResult optimize_quadric(const DualQuadric& init, std::span<const Observation> obs,
                                    const OptimConfig& cfg = {}) {
  if (obs.empty()) throw InvalidArgument("cannot optimize a quadric without observations");
  OptimResult res;
  res.params = QuadricParams::from_quadric(init);
  const PoseLoss l0 = evaluate_pose_loss(init, obs);
  if (l0.skipped == static_cast<int>(obs.size())) throw Unoptimizable("quadric is behind every observing camera");
  res.initial_loss = res.final_loss = l0.value;
  res.skipped = l0.skipped;
  res.trace.push_back(l0.value);
  if (observation_ray_spread(obs) < cfg.min_ray_spread) {
    res.degenerate = true;
    return res;
  }

  Eigen::Array<bool, 9, 1> active = Eigen::Array<bool, 9, 1>::Constant(true);
  if (cfg.yaw_only) active[3] = active[4] = false;
  const Vector9d steps = parameter_steps(cfg);

  Vector9d x = res.params.vector();
  double loss = l0.value;
  double alpha = 4.0;  // in units of the per-parameter steps
  double fd_scale = 1.0;
  for (int it = 0; it < cfg.max_iters && loss > 1e-12; ++it) {
    res.iterations = it + 1;
    const Vector9d h = steps * fd_scale;
    // Descent in coordinates scaled by the steps.
    const Vector9d g = pose_loss_gradient(x, obs, h, active).cwiseProduct(steps);
    const double gn = g.norm();
    bool moved = false;
    if (gn > 0) {
      const Vector9d dir = -(g / gn).cwiseProduct(steps);
      double a = std::min(2.0 * alpha, 64.0);
      for (int bt = 0; bt < 24; ++bt, a *= 0.5) {
        const Vector9d xn = x + a * dir;
        double ln;
        try {
          ln = pose_loss(QuadricParams::from_vector(xn), obs);
        } catch (const InvalidParameter&) {
          continue;
        }
        if (ln < loss - 1e-7 * a * gn) {
          x = xn;
          loss = ln;
          alpha = a;
          moved = true;
          break;
        }
      }
    }
    if (!moved) {
      // Finite differences over the kinks of the box IoU can point uphill; refine them.
      if (fd_scale < 1.0 / 64) break;
      fd_scale *= 0.5;
    }
    res.trace.push_back(loss);
    const int n = static_cast<int>(res.trace.size());
    if (n > cfg.window) {
      const double prev = res.trace[n - 1 - cfg.window];
      if ((prev - loss) / std::max(prev, 1e-12) < cfg.rel_tol) break;
    }
  }
  res.params = QuadricParams::from_vector(x);
  res.final_loss = loss;
  res.skipped = evaluate_pose_loss(res.params.to_quadric(), obs).skipped;
  return res;
}

inline OptimResult optimize_quadric(const ObjectTrack& track, const OptimConfig& cfg = {}) {
  if (track.observations.empty()) throw InvalidArgument("track has no observations");
  if (!track.quadric) throw InvalidArgument("track is not initialized");
  if (static_cast<int>(track.observations.size()) < cfg.min_obs)
    throw InvalidArgument("track has fewer observations than min_obs");
  return optimize_quadric(*track.quadric, track.observations, cfg);
}

}  // namespace dqo
