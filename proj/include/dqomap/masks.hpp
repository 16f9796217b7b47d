#pragma once

// Incremental map updates: unstable-pixel masks from the render/frame
// disagreement, densification of new Gaussians under those masks, and the
// per-object trainable set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "dqomap/frame.hpp"
#include "dqomap/gaussian.hpp"
#include "dqomap/renderer.hpp"

namespace dqo {

struct MaskConfig {
  double theta_alpha = 0.9;
  double theta_d = 0.1;
  double theta_c = 0.1;
  bool include_background = false;
};

struct ObjectMaskPixels {
  std::vector<int> geo, rgb;  // linear pixel indices y * width + x
};

struct UpdateMasks {
  Image<std::uint8_t> geo, rgb;
  std::map<int, ObjectMaskPixels> per_object;

  std::size_t geo_count() const { return static_cast<std::size_t>(std::count(geo.data().begin(), geo.data().end(), 1)); }
  std::size_t rgb_count() const { return static_cast<std::size_t>(std::count(rgb.data().begin(), rgb.data().end(), 1)); }
  bool empty() const { return geo_count() == 0 && rgb_count() == 0; }
};

// `render` must be produced at the frame's camera with the frame's instance
// map as the per-pixel query, so ins is the accumulation of the pixel's own object.
inline UpdateMasks compute_update_masks(const FrameBundle& frame, const RenderOutput& render, const MaskConfig& cfg = {}) {
  const int w = frame.camera.width, h = frame.camera.height;
  if (!render.color.same_shape(w, h) || !render.depth.same_shape(w, h) || !render.instance.same_shape(w, h) ||
      !frame.rgb.same_shape(w, h) || !frame.depth.same_shape(w, h) || !frame.instance.same_shape(w, h))
    throw InvalidArgument("render and frame dimensions differ");
  UpdateMasks m{Image<std::uint8_t>(w, h), Image<std::uint8_t>(w, h), {}};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = frame.instance(x, y);
      if (id == 0 && !cfg.include_background) continue;
      const double d = frame.depth(x, y);
      // Pixels without depth can neither be densified nor checked geometrically.
      const bool geo = d > 0 && (render.instance(x, y) < cfg.theta_alpha || std::abs(d - render.depth(x, y)) > cfg.theta_d);
      double cerr = 0.0;
      for (int c = 0; c < 3; ++c) cerr = std::max(cerr, std::abs(frame.rgb(x, y, c) / 255.0 - render.color(x, y, c)));
      const bool rgb = cerr > cfg.theta_c;
      const int p = y * w + x;
      if (geo) {
        m.geo(x, y) = 1;
        m.per_object[id].geo.push_back(p);
      }
      if (rgb) {
        m.rgb(x, y) = 1;
        m.per_object[id].rgb.push_back(p);
      }
    }
  }
  return m;
}

// Mask pixels at least `stride` apart (Chebyshev), chosen greedily in scanline
// order. On a full block this is the regular stride lattice anchored at its corner.
inline std::vector<int> spaced_pixels(const Image<std::uint8_t>& mask, int stride,
                                      const Image<std::uint8_t>* exclude = nullptr) {
  const int w = mask.width(), h = mask.height();
  Image<std::uint8_t> taken(w, h);
  std::vector<int> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y) || (exclude && (*exclude)(x, y))) continue;
      bool free = true;
      for (int yy = std::max(0, y - stride + 1); yy <= y && free; ++yy)
        for (int xx = std::max(0, x - stride + 1); xx <= std::min(w - 1, x + stride - 1) && free; ++xx)
          if (taken(xx, yy)) free = false;
      if (!free) continue;
      taken(x, y) = 1;
      out.push_back(y * w + x);
    }
  }
  return out;
}

struct DensifyConfig {
  int stride = 4;
  double og_opacity = kOpaqueInit;
  double tg_opacity = kTransparentInit;
};

// Drops mask pixels of every instance id outside `allowed`.
inline void restrict_masks(UpdateMasks& m, const std::set<int>& allowed) {
  for (auto it = m.per_object.begin(); it != m.per_object.end();) {
    if (allowed.count(it->first)) {
      ++it;
      continue;
    }
    for (int p : it->second.geo) m.geo.data()[p] = 0;
    for (int p : it->second.rgb) m.rgb.data()[p] = 0;
    it = m.per_object.erase(it);
  }
}

// Opaque Gaussians at observed depth under the geometric mask; transparent
// ones at the rendered depth where only color disagrees.
inline std::vector<GaussianPrimitive> densify_from_mask(const FrameBundle& frame, const UpdateMasks& masks,
                                                        const RenderOutput& render, const DensifyConfig& cfg = {}) {
  std::vector<GaussianPrimitive> out;
  const CameraModel& cam = frame.camera;
  const int w = cam.width;
  const double half = cfg.stride / 2.0;
  for (int p : spaced_pixels(masks.geo, cfg.stride)) {
    const int x = p % w, y = p / w;
    const double d = frame.depth(x, y);
    if (!(d > 0)) continue;
    out.push_back(make_gaussian(cam.backproject(x, y, d), d / cam.fx * half, frame.color(x, y), frame.instance(x, y),
                                GaussianKind::opaque));
    out.back().opacity = cfg.og_opacity;
  }
  for (int p : spaced_pixels(masks.rgb, cfg.stride, &masks.geo)) {
    const int x = p % w, y = p / w;
    const double d = render.depth(x, y);
    if (!(d > 0)) continue;
    out.push_back(make_gaussian(cam.backproject(x, y, d), d / cam.fx * half, frame.color(x, y), frame.instance(x, y),
                                GaussianKind::transparent));
    out.back().opacity = cfg.tg_opacity;
  }
  return out;
}

// Gaussians of `object_id` whose 3-sigma footprint touches one of the object's masked pixels.
inline std::vector<std::size_t> select_trainable(const GaussianStore& store, const UpdateMasks& masks, int object_id,
                                                 const CameraModel& cam) {
  std::vector<std::size_t> out;
  const auto it = masks.per_object.find(object_id);
  if (it == masks.per_object.end() || (it->second.geo.empty() && it->second.rgb.empty())) return out;
  Image<std::uint8_t> hit(cam.width, cam.height);
  for (int p : it->second.geo) hit.data()[p] = 1;
  for (int p : it->second.rgb) hit.data()[p] = 1;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].object_id != object_id) continue;
    const auto s = detail::project_splat(store[i], i, cam);
    if (!s) continue;
    bool touch = false;
    for (int y = s->y0; y <= s->y1 && !touch; ++y)
      for (int x = s->x0; x <= s->x1 && !touch; ++x) {
        if (!hit(x, y)) continue;
        const Vector2d d(x - s->mean.x(), y - s->mean.y());
        touch = d.dot(s->conic * d) <= kCutoff;
      }
    if (touch) out.push_back(i);
  }
  return out;
}

}  // namespace dqo
