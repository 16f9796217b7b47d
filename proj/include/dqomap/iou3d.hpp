#pragma once

// Exact IoU of the oriented bounding boxes of two quadrics: box A is clipped
// by the six half-spaces of box B and the volume of the resulting convex
// polytope is integrated face by face.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dqomap/geometry.hpp"

namespace dqo {

namespace detail {

using Polygon = std::vector<Vector3d>;

struct Polytope {
  std::vector<Polygon> faces;
};

inline std::array<Vector3d, 8> box_corners(const DualQuadric& q) {
  std::array<Vector3d, 8> c;
  for (int i = 0; i < 8; ++i) {
    const Vector3d s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    c[i] = q.center() + q.rotation() * s.cwiseProduct(q.semi_axes());
  }
  return c;
}

inline Polytope box_polytope(const DualQuadric& q) {
  const auto c = box_corners(q);
  // Corner index bits: x=1, y=2, z=4.
  static constexpr int kFaces[6][4] = {{0, 2, 6, 4}, {1, 5, 7, 3}, {0, 4, 5, 1},
                                       {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 6, 7, 5}};
  Polytope p;
  for (const auto& f : kFaces) p.faces.push_back({c[f[0]], c[f[1]], c[f[2]], c[f[3]]});
  return p;
}

// Half-spaces n.x <= d of the box.
inline std::array<std::pair<Vector3d, double>, 6> box_halfspaces(const DualQuadric& q) {
  std::array<std::pair<Vector3d, double>, 6> hs;
  for (int k = 0; k < 3; ++k) {
    const Vector3d n = q.rotation().col(k);
    const double off = n.dot(q.center());
    hs[2 * k] = {n, off + q.semi_axes()[k]};
    hs[2 * k + 1] = {-n, -off + q.semi_axes()[k]};
  }
  return hs;
}

// Orders coplanar points around their centroid.
inline Polygon order_cap(std::vector<Vector3d> pts, const Vector3d& normal) {
  Polygon unique;
  for (const auto& p : pts) {
    bool dup = false;
    for (const auto& u : unique) dup = dup || (u - p).squaredNorm() < 1e-24;
    if (!dup) unique.push_back(p);
  }
  if (unique.size() < 3) return {};
  Vector3d centroid = Vector3d::Zero();
  for (const auto& p : unique) centroid += p;
  centroid /= static_cast<double>(unique.size());
  const Vector3d e1 = normal.unitOrthogonal();
  const Vector3d e2 = normal.cross(e1);
  std::sort(unique.begin(), unique.end(), [&](const Vector3d& a, const Vector3d& b) {
    const Vector3d da = a - centroid, db = b - centroid;
    return std::atan2(da.dot(e2), da.dot(e1)) < std::atan2(db.dot(e2), db.dot(e1));
  });
  return unique;
}

inline Polytope clip(const Polytope& poly, const Vector3d& n, double d) {
  Polytope out;
  std::vector<Vector3d> cap;
  bool coplanar_face = false;
  for (const auto& face : poly.faces) {
    Polygon kept;
    const std::size_t m = face.size();
    bool on_plane = true;
    for (const auto& p : face) on_plane = on_plane && std::abs(n.dot(p) - d) <= 1e-12;
    if (on_plane) {
      coplanar_face = true;
      out.faces.push_back(face);
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const Vector3d& a = face[i];
      const Vector3d& b = face[(i + 1) % m];
      const double da = n.dot(a) - d;
      const double db = n.dot(b) - d;
      if (da <= 0) kept.push_back(a);
      if ((da < 0 && db > 0) || (da > 0 && db < 0)) {
        const Vector3d x = a + (b - a) * (da / (da - db));
        kept.push_back(x);
        cap.push_back(x);
      } else if (da == 0) {
        cap.push_back(a);
      }
    }
    if (kept.size() >= 3) out.faces.push_back(std::move(kept));
  }
  if (!out.faces.empty() && !coplanar_face) {
    Polygon c = order_cap(std::move(cap), n);
    if (c.size() >= 3) out.faces.push_back(std::move(c));
  }
  return out;
}

inline double volume(const Polytope& poly) {
  std::size_t count = 0;
  Vector3d ref = Vector3d::Zero();
  for (const auto& f : poly.faces) {
    for (const auto& p : f) ref += p;
    count += f.size();
  }
  if (count == 0) return 0.0;
  ref /= static_cast<double>(count);
  double v = 0.0;
  for (const auto& f : poly.faces)
    for (std::size_t i = 1; i + 1 < f.size(); ++i)
      v += std::abs((f[0] - ref).dot((f[i] - ref).cross(f[i + 1] - ref))) / 6.0;
  return v;
}

}  // namespace detail

inline double box_volume(const DualQuadric& q) { return 8.0 * q.semi_axes().prod(); }

inline double box_intersection_volume(const DualQuadric& a, const DualQuadric& b) {
  detail::Polytope p = detail::box_polytope(a);
  for (const auto& [n, d] : detail::box_halfspaces(b)) {
    p = detail::clip(p, n, d);
    if (p.faces.empty()) return 0.0;
  }
  return detail::volume(p);
}

inline double iou_3d(const DualQuadric& a, const DualQuadric& b) {
  // Average both clipping orders so the result is exactly symmetric.
  const double inter = 0.5 * (box_intersection_volume(a, b) + box_intersection_volume(b, a));
  const double uni = box_volume(a) + box_volume(b) - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace dqo
