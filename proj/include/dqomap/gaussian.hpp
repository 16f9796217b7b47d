#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "dqomap/geometry.hpp"

namespace dqo {


inline constexpr double kOpaqueInit = 0.9;
inline constexpr double kTransparentInit = 0.1;
inline constexpr double kOpacitySplit = 0.5;

enum class GaussianKind { opaque, transparent };

struct GaussianPrimitive {
  Vector3d mean = Vector3d::Zero();
  Vector3d scale = Vector3d::Constant(0.01);
  Vector4d rotation = Vector4d(1, 0, 0, 0);  // unit quaternion (w, x, y, z), body to world
  double opacity = kOpaqueInit;
  Vector3d color = Vector3d::Zero();
  int object_id = 0;  // 0 = background
  GaussianKind kind = GaussianKind::opaque;

  bool operator==(const GaussianPrimitive&) const = default;

  // Keeps opacity inside the class band and scales inside [lo, hi].
  void clamp(double scale_lo = 1e-4, double scale_hi = 1.0) {
    if (kind == GaussianKind::opaque)
      opacity = std::clamp(opacity, kOpacitySplit, 1.0);
    else
      opacity = std::clamp(opacity, 0.0, kOpacitySplit);
    scale = scale.cwiseMax(scale_lo).cwiseMin(scale_hi);
    color = color.cwiseMax(0.0).cwiseMin(1.0);
    const double n = rotation.norm();
    rotation = n > 0 ? Vector4d(rotation / n) : Vector4d(1, 0, 0, 0);
  }
};

inline Matrix3d quaternion_to_rotation(const Vector4d& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

inline Matrix3d gaussian_covariance(const GaussianPrimitive& g) {
  const Matrix3d m = quaternion_to_rotation(g.rotation) * g.scale.asDiagonal();
  return m * m.transpose();
}

inline GaussianPrimitive make_gaussian(const Vector3d& mean, double scale, const Vector3d& color, int object_id,
                                       GaussianKind kind) {
  GaussianPrimitive g;
  g.mean = mean;
  g.scale = Vector3d::Constant(scale);
  g.color = color;
  g.object_id = object_id;
  g.kind = kind;
  g.opacity = kind == GaussianKind::opaque ? kOpaqueInit : kTransparentInit;
  return g;
}

using GaussianStore = std::vector<GaussianPrimitive>;

// All Gaussians of one object in insertion order.
inline std::vector<GaussianPrimitive> extract_object(const GaussianStore& store, int object_id) {
  std::vector<GaussianPrimitive> out;
  for (const auto& g : store)
    if (g.object_id == object_id) out.push_back(g);
  return out;
}

inline std::vector<std::size_t> object_indices(const GaussianStore& store, int object_id) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].object_id == object_id) out.push_back(i);
  return out;
}

inline std::map<int, std::size_t> object_counts(const GaussianStore& store) {
  std::map<int, std::size_t> out;
  for (const auto& g : store) ++out[g.object_id];
  return out;
}

// Rewrites every `from` id to `to` in one pass.
inline std::size_t relabel(GaussianStore& store, int from, int to) {
  std::size_t n = 0;
  for (auto& g : store)
    if (g.object_id == from) g.object_id = to, ++n;
  return n;
}

}  // namespace dqo
