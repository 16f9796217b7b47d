#pragma once

#include <string>

#include "dqomap/errors.hpp"
#include "dqomap/geometry.hpp"

namespace dqo {

enum class ShapeKind { sphere, box, ellipsoid, superellipsoid };

inline std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::superellipsoid: return "superellipsoid";
  }
  return "?";
}

inline ShapeKind shape_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "box") return ShapeKind::box;
  if (s == "ellipsoid") return ShapeKind::ellipsoid;
  if (s == "superellipsoid") return ShapeKind::superellipsoid;
  throw InvalidArgument("unknown shape " + s);
}

// One analytic object. Its ground-truth quadric shares center, rotation and
// semi-axes; for boxes and superellipsoids that is the inscribed ellipsoid.
struct SceneObject {
  int instance_id = 1;
  int class_id = 0;
  ShapeKind shape = ShapeKind::ellipsoid;
  Vector3d center = Vector3d::Zero();
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d semi_axes = Vector3d::Ones();
  Vector3d albedo = Vector3d::Constant(0.5);
  double exponent = 4.0;  // superellipsoid only

  DualQuadric quadric() const { return DualQuadric(center, rotation, semi_axes); }

  void validate() const {
    if (instance_id <= 0 || instance_id > 65535) throw InvalidParameter("instance id must be in [1, 65535]");
    if (!(semi_axes.minCoeff() > 0) || !semi_axes.allFinite()) throw InvalidParameter("semi-axes must be positive");
    if (!is_rotation(rotation, 1e-6)) throw InvalidParameter("object rotation is not orthonormal");
    if (shape == ShapeKind::sphere && semi_axes.maxCoeff() - semi_axes.minCoeff() > 1e-12)
      throw InvalidParameter("sphere needs equal semi-axes");
    if (shape == ShapeKind::superellipsoid && !(exponent >= 1.0)) throw InvalidParameter("exponent must be >= 1");
    if ((albedo.array() < 0).any() || (albedo.array() > 1).any()) throw InvalidParameter("albedo outside [0,1]");
  }
};

struct Intrinsics {
  double fx = 300, fy = 300, cx = 159.5, cy = 119.5;
  int width = 320, height = 240;
  double depth_scale = 1000.0;

  CameraModel camera(const RigidTransform& pose) const {
    CameraModel c;
    c.fx = fx, c.fy = fy, c.cx = cx, c.cy = cy;
    c.width = width, c.height = height;
    c.pose = pose;
    return c;
  }

  bool operator==(const Intrinsics&) const = default;
};

// Camera pose as stored in poses.txt. The rotation is always rebuilt from
// the quaternion, on the writing and the reading side alike, so poses survive
// serialization bit for bit.
struct PoseRecord {
  Vector3d translation = Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  static PoseRecord from(const RigidTransform& pose) {
    return {pose.translation, Eigen::Quaterniond(pose.rotation).normalized()};
  }
  RigidTransform transform() const {
    RigidTransform t;
    t.rotation = rotation.toRotationMatrix();
    t.translation = translation;
    return t;
  }
};

}  // namespace dqo
