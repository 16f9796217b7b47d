#pragma once

// Closed-form dual quadric / dual conic algebra.
//
// Conventions:
//  * CameraModel::pose is world-from-camera. The camera looks down +z.
//  * Pixel (u, v) has its center at integer coordinates; the image covers
//    [-0.5, width - 0.5] x [-0.5, height - 0.5].
//  * Dual quadric Q* = T diag(a^2, b^2, c^2, -1) T^T with T = [R c; 0 1].
//  * Dual conics are normalized so that C*(2,2) == -1.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "dqomap/errors.hpp"

namespace dqo {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;
using Matrix34d = Eigen::Matrix<double, 3, 4>;

inline bool is_rotation(const Matrix3d& r, double tol = 1e-9) {
  if (!r.allFinite()) return false;
  return (r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

inline Matrix3d rotation_from_axis_angle(const Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-15) return Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

inline Vector3d axis_angle_from_rotation(const Matrix3d& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

// Rigid transform x_dst = rotation * x_src + translation.
struct RigidTransform {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  Vector3d apply(const Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const {
    return {rotation.transpose(), -rotation.transpose() * translation};
  }
  Matrix4d matrix() const {
    Matrix4d m = Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

// World-from-camera pose for a camera at `eye` looking at `target`
// (camera x right, y down, z forward).
inline RigidTransform look_at(const Vector3d& eye, const Vector3d& target,
                              const Vector3d& up = Vector3d::UnitZ()) {
  const Vector3d z = (target - eye).normalized();
  Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) x = z.unitOrthogonal();
  x.normalize();
  const Vector3d y = z.cross(x);
  RigidTransform t;
  t.rotation.col(0) = x;
  t.rotation.col(1) = y;
  t.rotation.col(2) = z;
  t.translation = eye;
  return t;
}

struct BBox2D {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  Vector2d center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
  }
  bool operator==(const BBox2D&) const = default;
};

inline double intersection_area(const BBox2D& a, const BBox2D& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

// Intersection of two boxes; empty results collapse to a zero-area box.
inline BBox2D intersect(const BBox2D& a, const BBox2D& b) {
  BBox2D r{std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min), std::min(a.x_max, b.x_max),
           std::min(a.y_max, b.y_max)};
  if (r.x_max < r.x_min) r.x_max = r.x_min;
  if (r.y_max < r.y_min) r.y_max = r.y_min;
  return r;
}

inline double iou_2d(const BBox2D& a, const BBox2D& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return (a == b && a.valid()) ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct CameraModel {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  RigidTransform pose;  // world-from-camera

  void validate() const {
    if (!(fx > 0 && fy > 0 && std::isfinite(fx) && std::isfinite(fy)))
      throw InvalidParameter("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidParameter("camera image size must be positive");
    if (!is_rotation(pose.rotation)) throw InvalidParameter("camera pose rotation is not in SO(3)");
  }

  Matrix3d intrinsics() const {
    Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  // P = K [R | t] mapping homogeneous world points to homogeneous pixels.
  Matrix34d projection() const {
    const RigidTransform cw = pose.inverse();
    Matrix34d rt;
    rt.leftCols<3>() = cw.rotation;
    rt.col(3) = cw.translation;
    return intrinsics() * rt;
  }

  Vector3d to_camera(const Vector3d& world) const {
    return pose.rotation.transpose() * (world - pose.translation);
  }
  Vector3d center() const { return pose.translation; }

  // Unit ray direction (world frame) through pixel coordinates.
  Vector3d ray_direction(double u, double v) const {
    return (pose.rotation * Vector3d((u - cx) / fx, (v - cy) / fy, 1.0)).normalized();
  }

  // World point at camera-frame depth z along the ray through (u, v).
  Vector3d backproject(double u, double v, double z) const {
    return pose.apply(Vector3d((u - cx) / fx * z, (v - cy) / fy * z, z));
  }

  BBox2D image_bounds() const { return {-0.5, -0.5, width - 0.5, height - 0.5}; }
};

class DualQuadric {
 public:
  DualQuadric() = default;
  DualQuadric(Vector3d center, Matrix3d rotation, Vector3d semi_axes)
      : center_(std::move(center)), rotation_(std::move(rotation)), semi_axes_(std::move(semi_axes)) {
    validate();
  }

  const Vector3d& center() const { return center_; }
  const Matrix3d& rotation() const { return rotation_; }
  const Vector3d& semi_axes() const { return semi_axes_; }

  void validate() const {
    if (!center_.allFinite()) throw InvalidParameter("quadric center must be finite");
    if (!semi_axes_.allFinite() || (semi_axes_.array() <= 0.0).any())
      throw InvalidParameter("quadric semi-axes must be positive and finite");
    if (!is_rotation(rotation_)) throw InvalidParameter("quadric rotation is not in SO(3)");
  }

  Matrix4d matrix() const {
    Matrix4d t = Matrix4d::Identity();
    t.topLeftCorner<3, 3>() = rotation_;
    t.topRightCorner<3, 1>() = center_;
    Vector4d d(semi_axes_.x() * semi_axes_.x(), semi_axes_.y() * semi_axes_.y(),
               semi_axes_.z() * semi_axes_.z(), -1.0);
    Matrix4d q = t * d.asDiagonal() * t.transpose();
    return 0.5 * (q + q.transpose());
  }

  // Shape matrix S = diag(1/a^2, 1/b^2, 1/c^2).
  Matrix3d shape_matrix() const {
    return semi_axes_.cwiseProduct(semi_axes_).cwiseInverse().asDiagonal();
  }

  // Point-quadric membership: (x - c)^T R diag(1/a^2..) R^T (x - c) <= 1.
  double mahalanobis(const Vector3d& x) const {
    const Vector3d local = rotation_.transpose() * (x - center_);
    return std::sqrt(local.cwiseQuotient(semi_axes_).squaredNorm());
  }

 private:
  Vector3d center_ = Vector3d::Zero();
  Matrix3d rotation_ = Matrix3d::Identity();
  Vector3d semi_axes_ = Vector3d::Ones();
};

inline DualQuadric assemble_dual_quadric(const Vector3d& center, const Matrix3d& rotation,
                                         const Vector3d& semi_axes) {
  return DualQuadric(center, rotation, semi_axes);
}

// Recovers (center, rotation, semi-axes). Eigenvector order and signs are
// chosen so the rotation is as close to identity as possible with det = +1.
inline DualQuadric decompose_dual_quadric(const Matrix4d& matrix) {
  if (!matrix.allFinite()) throw DegenerateQuadric("quadric matrix is not finite");
  if (std::abs(matrix(3, 3)) < 1e-300) throw DegenerateQuadric("homogeneous entry is zero");
  const Matrix4d q = 0.5 * (matrix + matrix.transpose()) / (-matrix(3, 3));
  const Vector3d center = -q.topRightCorner<3, 1>();
  const Matrix3d block = q.topLeftCorner<3, 3>() + center * center.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(block);
  if (eig.info() != Eigen::Success) throw DegenerateQuadric("eigendecomposition failed");
  const Vector3d values = eig.eigenvalues();
  if (!(values.array() > 1e-300).all()) throw DegenerateQuadric("centered block is not positive definite");

  std::array<int, 3> perm{0, 1, 2};
  double best_trace = -std::numeric_limits<double>::infinity();
  Matrix3d best_r;
  Vector3d best_axes;
  do {
    Matrix3d r;
    for (int k = 0; k < 3; ++k) r.col(k) = eig.eigenvectors().col(perm[k]);
    int weakest = 0;
    for (int k = 0; k < 3; ++k) {
      if (r(k, k) < 0) r.col(k) = -r.col(k);
      if (std::abs(r(k, k)) < std::abs(r(weakest, weakest))) weakest = k;
    }
    if (r.determinant() < 0) r.col(weakest) = -r.col(weakest);
    if (r.trace() > best_trace) {
      best_trace = r.trace();
      best_r = r;
      for (int k = 0; k < 3; ++k) best_axes[k] = std::sqrt(values[perm[k]]);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return DualQuadric(center, best_r, best_axes);
}

class DualConic {
 public:
  DualConic() = default;
  explicit DualConic(const Matrix3d& m) : matrix_(0.5 * (m + m.transpose())) {
    // A non-negative (2,2) entry means the camera is inside or on the quadric;
    // the sign is kept so conic_to_bbox rejects it.
    if (std::abs(matrix_(2, 2)) > 1e-300) matrix_ /= std::abs(matrix_(2, 2));
  }
  const Matrix3d& matrix() const { return matrix_; }

 private:
  Matrix3d matrix_ = Matrix3d::Zero();
};

// C* = P Q* P^T. Throws BehindCamera if the quadric center has non-positive depth.
inline DualConic project_to_conic(const DualQuadric& q, const CameraModel& cam) {
  const Vector3d c_cam = cam.to_camera(q.center());
  if (!(c_cam.z() > 0.0)) throw BehindCamera("quadric center is behind the camera");
  const Matrix34d p = cam.projection();
  return DualConic(p * q.matrix() * p.transpose());
}

inline BBox2D conic_to_bbox(const DualConic& conic) {
  const Matrix3d& c = conic.matrix();
  if (!c.allFinite() || !(c(2, 2) < 0.0)) throw DegenerateConic("conic is not a real ellipse");
  const Matrix3d n = c / -c(2, 2);
  const Vector2d center(-n(0, 2), -n(1, 2));
  const Eigen::Matrix2d shape = n.topLeftCorner<2, 2>() + center * center.transpose();
  if (!(shape(0, 0) > 0 && shape(1, 1) > 0 && shape.determinant() > 0))
    throw DegenerateConic("conic is not a real ellipse");
  const double hw = std::sqrt(shape(0, 0));
  const double hh = std::sqrt(shape(1, 1));
  return {center.x() - hw, center.y() - hh, center.x() + hw, center.y() + hh};
}

// Convenience: tight box of the projected quadric (no clipping).
inline BBox2D project_bbox(const DualQuadric& q, const CameraModel& cam) {
  return conic_to_bbox(project_to_conic(q, cam));
}

// Projected box clipped to the image rectangle; the form detections take.
inline BBox2D project_bbox_clipped(const DualQuadric& q, const CameraModel& cam) {
  return intersect(project_bbox(q, cam), cam.image_bounds());
}

// Planes (unit normal, world frame) through the camera center and each box
// edge, ordered left, top, right, bottom.
inline std::array<Vector4d, 4> backproject_bbox_planes(const BBox2D& b, const CameraModel& cam) {
  if (!b.valid()) throw InvalidParameter("invalid bounding box");
  cam.validate();
  const Matrix34d p = cam.projection();
  const std::array<Vector3d, 4> lines{Vector3d(1, 0, -b.x_min), Vector3d(0, 1, -b.y_min),
                                      Vector3d(1, 0, -b.x_max), Vector3d(0, 1, -b.y_max)};
  std::array<Vector4d, 4> planes;
  for (int i = 0; i < 4; ++i) {
    Vector4d pi = p.transpose() * lines[i];
    planes[i] = pi / pi.head<3>().norm();
  }
  return planes;
}

// exp(-tau * (|mu_a - mu_b| + |S_a - S_b|_F)).
inline double quadric_raw_distance(const DualQuadric& a, const DualQuadric& b) {
  return (a.center() - b.center()).norm() + (a.shape_matrix() - b.shape_matrix()).norm();
}

inline double quadric_distance(const DualQuadric& a, const DualQuadric& b, double tau) {
  if (!(tau > 0)) throw InvalidParameter("tau must be positive");
  return std::exp(-tau * quadric_raw_distance(a, b));
}

}  // namespace dqo
