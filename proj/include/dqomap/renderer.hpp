#pragma once

// Tile-based software splatting of 3D Gaussians: front-to-back alpha
// compositing of color, depth and per-object instance accumulation, plus the
// analytic backward pass of the photometric/depth/instance training loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dqomap/frame.hpp"
#include "dqomap/gaussian.hpp"
#include "dqomap/parallel.hpp"

namespace dqo {

inline constexpr int kTileSize = 16;
inline constexpr double kDilation = 0.3;   // px^2 added to every 2D covariance
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kCutoff = 9.0;     // squared Mahalanobis radius (3 sigma)
inline constexpr double kNearPlane = 0.05;
inline constexpr double kMinAccum = 1e-4;  // below this accumulated alpha the depth is 0

struct RenderOutput {
  Image<double> color;     // 3 channels
  Image<double> depth;     // alpha-normalized expected depth
  Image<double> instance;  // accumulation of the queried object's opaque Gaussians
  Image<double> alpha;     // 1 - final transmittance
};

struct RenderOptions {
  std::optional<int> instance_id;                      // query one object
  const Image<std::uint16_t>* instance_map = nullptr;  // or the id stored at each pixel
  std::optional<PixelRange> region;                    // pixels outside are left at 0
  int workers = 1;
};

namespace detail {

struct Splat {
  std::size_t index = 0;
  double z = 0;
  Vector3d pcam;
  Vector2d mean;
  Matrix2d conic;
  Matrix3d cov_cam;
  Eigen::Matrix<double, 2, 3> jac;
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
};

inline std::optional<Splat> project_splat(const GaussianPrimitive& g, std::size_t index, const CameraModel& cam) {
  const Vector3d p = cam.to_camera(g.mean);
  if (!(p.z() > kNearPlane)) return std::nullopt;
  Splat s;
  s.index = index;
  s.z = p.z();
  s.pcam = p;
  const double iz = 1.0 / p.z();
  s.mean = Vector2d(cam.fx * p.x() * iz + cam.cx, cam.fy * p.y() * iz + cam.cy);
  s.jac << cam.fx * iz, 0, -cam.fx * p.x() * iz * iz, 0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  const Matrix3d& rc = cam.pose.rotation;
  s.cov_cam = rc.transpose() * gaussian_covariance(g) * rc;
  Matrix2d cov = s.jac * s.cov_cam * s.jac.transpose() + kDilation * Matrix2d::Identity();
  cov = 0.5 * (cov + cov.transpose());
  if (!(cov.determinant() > 0) || !s.mean.allFinite()) return std::nullopt;
  s.conic = cov.inverse();
  // Axis-aligned half extents of the 3-sigma ellipse.
  const double rx = 3.0 * std::sqrt(cov(0, 0)), ry = 3.0 * std::sqrt(cov(1, 1));
  const double x0 = std::max(0.0, std::ceil(s.mean.x() - rx)), x1 = std::min(cam.width - 1.0, std::floor(s.mean.x() + rx));
  const double y0 = std::max(0.0, std::ceil(s.mean.y() - ry)), y1 = std::min(cam.height - 1.0, std::floor(s.mean.y() + ry));
  if (x1 < x0 || y1 < y0) return std::nullopt;
  s.x0 = static_cast<int>(x0);
  s.x1 = static_cast<int>(x1);
  s.y0 = static_cast<int>(y0);
  s.y1 = static_cast<int>(y1);
  return s;
}

struct Binned {
  std::vector<Splat> splats;            // front to back, ties by store index
  std::vector<std::vector<int>> tiles;  // splat ids per tile, same order
  int tiles_x = 0, tiles_y = 0;
};

inline Binned bin_splats(const GaussianStore& store, const CameraModel& cam) {
  Binned b;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (auto s = project_splat(store[i], i, cam)) b.splats.push_back(*s);
  std::sort(b.splats.begin(), b.splats.end(), [](const Splat& a, const Splat& c) {
    return a.z != c.z ? a.z < c.z : a.index < c.index;
  });
  b.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  b.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  b.tiles.assign(static_cast<std::size_t>(b.tiles_x) * b.tiles_y, {});
  for (int k = 0; k < static_cast<int>(b.splats.size()); ++k) {
    const Splat& s = b.splats[k];
    for (int ty = s.y0 / kTileSize; ty <= s.y1 / kTileSize; ++ty)
      for (int tx = s.x0 / kTileSize; tx <= s.x1 / kTileSize; ++tx) b.tiles[ty * b.tiles_x + tx].push_back(k);
  }
  return b;
}

inline PixelRange tile_pixels(const Binned& b, int t, const PixelRange& region) {
  const int tx = t % b.tiles_x, ty = t / b.tiles_x;
  return {std::max(tx * kTileSize, region.x0), std::max(ty * kTileSize, region.y0),
          std::min(tx * kTileSize + kTileSize - 1, region.x1), std::min(ty * kTileSize + kTileSize - 1, region.y1)};
}

inline PixelRange full_or(const std::optional<PixelRange>& r, const CameraModel& cam) {
  PixelRange out{0, 0, cam.width - 1, cam.height - 1};
  if (r) {
    out.x0 = std::max(out.x0, r->x0);
    out.y0 = std::max(out.y0, r->y0);
    out.x1 = std::min(out.x1, r->x1);
    out.y1 = std::min(out.y1, r->y1);
  }
  return out;
}

inline bool in_query(const GaussianPrimitive& g, const RenderOptions& o, int x, int y) {
  if (g.kind != GaussianKind::opaque) return false;
  if (o.instance_id) return g.object_id == *o.instance_id;
  if (o.instance_map) return g.object_id == (*o.instance_map)(x, y);
  return g.object_id != 0;
}

}  // namespace detail

inline RenderOutput render(const GaussianStore& store, const CameraModel& cam, const RenderOptions& opts = {}) {
  cam.validate();
  const int w = cam.width, h = cam.height;
  RenderOutput out{Image<double>(w, h, 3), Image<double>(w, h), Image<double>(w, h), Image<double>(w, h)};
  const detail::Binned b = detail::bin_splats(store, cam);
  const PixelRange region = detail::full_or(opts.region, cam);
  if (region.empty()) return out;
  parallel_for(static_cast<int>(b.tiles.size()), opts.workers, [&](int t) {
    const auto& list = b.tiles[t];
    const PixelRange r = detail::tile_pixels(b, t, region);
    for (int y = r.y0; y <= r.y1; ++y) {
      for (int x = r.x0; x <= r.x1; ++x) {
        double trans = 1.0, depth = 0.0, ins = 0.0;
        Vector3d color = Vector3d::Zero();
        for (int k : list) {
          const detail::Splat& s = b.splats[k];
          const Vector2d d(x - s.mean.x(), y - s.mean.y());
          const double m2 = d.dot(s.conic * d);
          if (m2 > kCutoff) continue;
          const GaussianPrimitive& g = store[s.index];
          const double alpha = std::min(kMaxAlpha, g.opacity * std::exp(-0.5 * m2));
          const double wgt = alpha * trans;
          color += wgt * g.color;
          depth += wgt * s.z;
          if (detail::in_query(g, opts, x, y)) ins += wgt;
          trans *= 1.0 - alpha;
        }
        const double acc = 1.0 - trans;
        for (int c = 0; c < 3; ++c) out.color(x, y, c) = color[c];
        out.alpha(x, y) = acc;
        out.depth(x, y) = acc > kMinAccum ? depth / acc : 0.0;
        out.instance(x, y) = std::clamp(ins, 0.0, 1.0);
      }
    }
  });
  return out;
}

struct GaussianGrad {
  Vector3d mean = Vector3d::Zero();
  Vector3d scale = Vector3d::Zero();
  Vector4d rotation = Vector4d::Zero();
  double opacity = 0.0;
  Vector3d color = Vector3d::Zero();

  GaussianGrad& operator+=(const GaussianGrad& o) {
    mean += o.mean;
    scale += o.scale;
    rotation += o.rotation;
    opacity += o.opacity;
    color += o.color;
    return *this;
  }
};

struct LossConfig {
  double lambda = 0.5;
  std::optional<PixelRange> region;  // evaluate only these pixels (full image by default)
  std::optional<Image<std::uint8_t>> pixels;  // further restricts region to nonzero pixels
  bool fit_background = true;        // false: color and depth terms skip instance-0 pixels
  int workers = 1;
};

struct LossResult {
  double loss = 0, rgb = 0, depth = 0, ins = 0;
  std::vector<GaussianGrad> grads;  // aligned with the trainable list
};

// Pixel rectangle covered by the 3-sigma footprints of the given Gaussians.
inline std::optional<PixelRange> footprint_region(const GaussianStore& store, std::span<const std::size_t> indices,
                                                  const CameraModel& cam, int margin = 0) {
  std::optional<PixelRange> r;
  for (std::size_t i : indices) {
    const auto s = detail::project_splat(store.at(i), i, cam);
    if (!s) continue;
    if (!r) r = PixelRange{s->x0, s->y0, s->x1, s->y1};
    r->x0 = std::min(r->x0, s->x0);
    r->y0 = std::min(r->y0, s->y0);
    r->x1 = std::max(r->x1, s->x1);
    r->y1 = std::max(r->y1, s->y1);
  }
  if (r) {
    r->x0 = std::max(0, r->x0 - margin);
    r->y0 = std::max(0, r->y0 - margin);
    r->x1 = std::min(cam.width - 1, r->x1 + margin);
    r->y1 = std::min(cam.height - 1, r->y1 + margin);
  }
  return r;
}

// Union of the 3-sigma footprint rectangles, each grown by `margin` pixels.
inline Image<std::uint8_t> footprint_mask(const GaussianStore& store, std::span<const std::size_t> indices,
                                          const CameraModel& cam, int margin = 0) {
  Image<std::uint8_t> m(cam.width, cam.height);
  for (std::size_t i : indices) {
    const auto s = detail::project_splat(store.at(i), i, cam);
    if (!s) continue;
    for (int y = std::max(0, s->y0 - margin); y <= std::min(cam.height - 1, s->y1 + margin); ++y)
      for (int x = std::max(0, s->x0 - margin); x <= std::min(cam.width - 1, s->x1 + margin); ++x) m(x, y) = 1;
  }
  return m;
}

namespace detail {

struct SplatAcc {
  Vector3d color = Vector3d::Zero();
  double z = 0.0;
  double opacity = 0.0;
  Vector2d mean = Vector2d::Zero();
  Matrix2d conic = Matrix2d::Zero();

  void add(const SplatAcc& o) {
    color += o.color;
    z += o.z;
    opacity += o.opacity;
    mean += o.mean;
    conic += o.conic;
  }
};

struct Contribution {
  int splat;
  double alpha, trans, gauss;
  bool saturated, member;
  Vector2d delta;
};

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Chains image-plane gradients back to the 3D parameters of one Gaussian.
inline GaussianGrad chain_splat(const Splat& s, const SplatAcc& a, const GaussianPrimitive& g, const CameraModel& cam) {
  GaussianGrad out;
  out.color = a.color;
  out.opacity = a.opacity;
  const Matrix2d g_cov2 = -s.conic * a.conic * s.conic;
  const Matrix3d g_cov_cam = s.jac.transpose() * g_cov2 * s.jac;
  const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2 * s.jac * s.cov_cam;

  const double x = s.pcam.x(), y = s.pcam.y(), z = s.pcam.z();
  const double iz2 = 1.0 / (z * z), iz3 = iz2 / z;
  Vector3d g_p = s.jac.transpose() * a.mean;
  g_p.z() += a.z;
  g_p.x() += g_jac(0, 2) * (-cam.fx * iz2);
  g_p.y() += g_jac(1, 2) * (-cam.fy * iz2);
  g_p.z() += g_jac(0, 0) * (-cam.fx * iz2) + g_jac(0, 2) * (2 * cam.fx * x * iz3) + g_jac(1, 1) * (-cam.fy * iz2) +
             g_jac(1, 2) * (2 * cam.fy * y * iz3);
  const Matrix3d& rc = cam.pose.rotation;
  out.mean = rc * g_p;

  Matrix3d g_cov3 = rc * g_cov_cam * rc.transpose();
  g_cov3 = 0.5 * (g_cov3 + g_cov3.transpose());
  const Matrix3d rg = quaternion_to_rotation(g.rotation);
  for (int k = 0; k < 3; ++k) out.scale[k] = 2.0 * g.scale[k] * rg.col(k).dot(g_cov3 * rg.col(k));

  // Rotation: analytic up to R(q), whose Jacobian is taken numerically.
  const Matrix3d g_r = 2.0 * g_cov3 * rg * g.scale.cwiseAbs2().asDiagonal();
  constexpr double h = 1e-6;
  for (int k = 0; k < 4; ++k) {
    Vector4d qp = g.rotation, qm = g.rotation;
    qp[k] += h;
    qm[k] -= h;
    const Matrix3d dr = (quaternion_to_rotation(qp) - quaternion_to_rotation(qm)) / (2 * h);
    out.rotation[k] = g_r.cwiseProduct(dr).sum();
  }
  return out;
}

}  // namespace detail

// Loss of one object against one frame and its gradient for the trainable
// Gaussians: sum ||c - c_hat|| + sum |d - d_hat| (valid depth) + lambda sum |ins - mask_k|.
inline LossResult loss_and_gradients(const GaussianStore& store, std::span<const std::size_t> trainable,
                                     int object_id, const FrameBundle& frame, const LossConfig& cfg = {}) {
  const CameraModel& cam = frame.camera;
  std::vector<int> slot(store.size(), -1);
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    if (trainable[i] >= store.size()) throw InvalidArgument("trainable index beyond the Gaussian store");
    slot[trainable[i]] = static_cast<int>(i);
  }
  LossResult res;
  res.grads.assign(trainable.size(), {});
  const detail::Binned b = detail::bin_splats(store, cam);
  const PixelRange region = detail::full_or(cfg.region, cam);
  if (region.empty()) return res;

  struct TilePartial {
    double rgb = 0, depth = 0, ins = 0;
    std::vector<detail::SplatAcc> acc;  // per entry of the tile list
  };
  std::vector<TilePartial> partial(b.tiles.size());
  RenderOptions query;
  query.instance_id = object_id;

  parallel_for(static_cast<int>(b.tiles.size()), cfg.workers, [&](int t) {
    const auto& list = b.tiles[t];
    TilePartial& tp = partial[t];
    const PixelRange r = detail::tile_pixels(b, t, region);
    if (r.empty()) return;
    tp.acc.assign(list.size(), {});
    std::vector<detail::Contribution> contrib;
    std::vector<int> entry;  // tile-list position of each contribution
    for (int y = r.y0; y <= r.y1; ++y) {
      for (int x = r.x0; x <= r.x1; ++x) {
        if (cfg.pixels && !(*cfg.pixels)(x, y)) continue;
        contrib.clear();
        entry.clear();
        double trans = 1.0, depth = 0.0, ins = 0.0;
        Vector3d color = Vector3d::Zero();
        for (int e = 0; e < static_cast<int>(list.size()); ++e) {
          const detail::Splat& s = b.splats[list[e]];
          const Vector2d d(x - s.mean.x(), y - s.mean.y());
          const double m2 = d.dot(s.conic * d);
          if (m2 > kCutoff) continue;
          const GaussianPrimitive& g = store[s.index];
          const double gauss = std::exp(-0.5 * m2);
          const double raw = g.opacity * gauss;
          const double alpha = std::min(kMaxAlpha, raw);
          const double wgt = alpha * trans;
          const bool member = detail::in_query(g, query, x, y);
          color += wgt * g.color;
          depth += wgt * s.z;
          if (member) ins += wgt;
          contrib.push_back({list[e], alpha, trans, gauss, raw >= kMaxAlpha, member, d});
          entry.push_back(e);
          trans *= 1.0 - alpha;
        }
        const double acc = 1.0 - trans;
        const double d_hat = acc > kMinAccum ? depth / acc : 0.0;

        // Unmapped background would otherwise drag edge Gaussians toward floor colors and depths.
        const bool fit = cfg.fit_background || frame.instance(x, y) != 0;
        const Vector3d resid = color - frame.color(x, y);
        const double rn = fit ? resid.norm() : 0.0;
        tp.rgb += rn;
        const Vector3d g_c = rn > 0 ? Vector3d(resid / rn) : Vector3d::Zero();
        double g_d = 0.0;
        const double d_obs = fit ? frame.depth(x, y) : 0.0;
        if (d_obs > 0) {
          tp.depth += std::abs(d_hat - d_obs);
          if (acc > kMinAccum) g_d = detail::sign(d_hat - d_obs);
        }
        const double target = frame.instance(x, y) == object_id ? 1.0 : 0.0;
        tp.ins += std::abs(ins - target);
        const double g_i = cfg.lambda * detail::sign(ins - target);
        if (contrib.empty()) continue;

        Vector3d suffix_c = Vector3d::Zero();
        double suffix_d = 0.0, suffix_i = 0.0;
        for (int i = static_cast<int>(contrib.size()) - 1; i >= 0; --i) {
          const auto& cb = contrib[i];
          const detail::Splat& s = b.splats[cb.splat];
          const GaussianPrimitive& g = store[s.index];
          const double wgt = cb.alpha * cb.trans;
          const int sl = slot[s.index];
          if (sl >= 0) {
            const double one_m = 1.0 - cb.alpha;
            const Vector3d dc = cb.trans * g.color - suffix_c / one_m;
            const double dd = cb.trans * s.z - suffix_d / one_m;
            const double di = cb.trans * (cb.member ? 1.0 : 0.0) - suffix_i / one_m;
            const double da = trans / one_m;
            const double dd_hat = acc > kMinAccum ? (dd * acc - depth * da) / (acc * acc) : 0.0;
            const double g_alpha = g_c.dot(dc) + g_d * dd_hat + g_i * di;
            detail::SplatAcc& a = tp.acc[entry[i]];
            a.color += g_c * wgt;
            if (acc > kMinAccum) a.z += g_d * wgt / acc;
            if (!cb.saturated) {
              a.opacity += g_alpha * cb.gauss;
              // alpha = o exp(-0.5 d^T A d), d = p - mean.
              a.mean += g_alpha * cb.alpha * (s.conic * cb.delta);
              a.conic += (-0.5 * g_alpha * cb.alpha) * (cb.delta * cb.delta.transpose());
            }
          }
          suffix_c += g.color * wgt;
          suffix_d += s.z * wgt;
          if (cb.member) suffix_i += wgt;
        }
      }
    }
  });

  std::vector<detail::SplatAcc> total(b.splats.size());
  for (std::size_t t = 0; t < b.tiles.size(); ++t) {
    res.rgb += partial[t].rgb;
    res.depth += partial[t].depth;
    res.ins += partial[t].ins;
    for (std::size_t e = 0; e < partial[t].acc.size(); ++e) total[b.tiles[t][e]].add(partial[t].acc[e]);
  }
  res.loss = res.rgb + res.depth + cfg.lambda * res.ins;
  for (std::size_t k = 0; k < b.splats.size(); ++k) {
    const int sl = slot[b.splats[k].index];
    if (sl < 0) continue;
    res.grads[sl] = detail::chain_splat(b.splats[k], total[k], store[b.splats[k].index], cam);
  }
  return res;
}

struct ObjectOptimConfig {
  int iters = 30;
  double lr_mean = 1e-4;
  double lr_scale = 5e-4;
  double lr_rotation = 5e-3;
  double lr_opacity = 0.02;
  double lr_color = 0.02;
  double lambda = 0.5;
  bool restrict_to_footprint = true;  // evaluate the loss on the trainable set's footprint only
  bool fit_background = true;
  int workers = 1;
};

struct ObjectOptimResult {
  std::vector<std::size_t> indices;
  std::vector<GaussianPrimitive> updated;  // aligned with indices
  std::vector<double> trace;               // loss at the accepted point after each step
  int accepted = 0;
};

// Adam steps on the trainable Gaussians of one object over a frame window.
// A step that raises the loss is undone and the learning rate halved, so the
// trace never increases. Works on a private copy of the snapshot.
inline ObjectOptimResult optimize_object(const GaussianStore& snapshot, int object_id,
                                         std::span<const std::size_t> trainable,
                                         std::span<const FrameBundle* const> frames,
                                         const ObjectOptimConfig& cfg = {}) {
  ObjectOptimResult res;
  res.indices.assign(trainable.begin(), trainable.end());
  for (std::size_t i : trainable) res.updated.push_back(snapshot.at(i));
  if (trainable.empty() || frames.empty() || cfg.iters <= 0) return res;

  GaussianStore work = snapshot;
  std::vector<LossConfig> lcfg(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    lcfg[f].lambda = cfg.lambda;
    lcfg[f].fit_background = cfg.fit_background;
    lcfg[f].workers = cfg.workers;
    if (cfg.restrict_to_footprint) {
      lcfg[f].region = footprint_region(work, trainable, frames[f]->camera, 2);
      if (!lcfg[f].region) lcfg[f].region = PixelRange{0, 0, -1, -1};
      lcfg[f].pixels = footprint_mask(work, trainable, frames[f]->camera, 2);
    }
  }
  auto evaluate = [&] {
    LossResult total;
    total.grads.assign(trainable.size(), {});
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const LossResult r = loss_and_gradients(work, trainable, object_id, *frames[f], lcfg[f]);
      total.loss += r.loss;
      for (std::size_t i = 0; i < trainable.size(); ++i) total.grads[i] += r.grads[i];
    }
    return total;
  };

  constexpr int kDim = 14;
  using Param = Eigen::Matrix<double, kDim, 1>;
  auto pack = [](const GaussianPrimitive& g) {
    Param p;
    p << g.mean, g.scale, g.rotation, g.opacity, g.color;
    return p;
  };
  auto pack_grad = [](const GaussianGrad& g) {
    Param p;
    p << g.mean, g.scale, g.rotation, g.opacity, g.color;
    return p;
  };
  Param lr;
  lr << Vector3d::Constant(cfg.lr_mean), Vector3d::Constant(cfg.lr_scale), Vector4d::Constant(cfg.lr_rotation),
      cfg.lr_opacity, Vector3d::Constant(cfg.lr_color);
  std::vector<Param> m1(trainable.size(), Param::Zero()), m2(trainable.size(), Param::Zero());
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-12;

  LossResult cur = evaluate();
  res.trace.push_back(cur.loss);
  double lr_mult = 1.0;
  for (int it = 1; it <= cfg.iters; ++it) {
    std::vector<GaussianPrimitive> saved;
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      GaussianPrimitive& g = work[trainable[i]];
      saved.push_back(g);
      const Param grad = pack_grad(cur.grads[i]);
      m1[i] = b1 * m1[i] + (1 - b1) * grad;
      m2[i] = b2 * m2[i] + (1 - b2) * grad.cwiseAbs2();
      const Param mh = m1[i] / (1 - std::pow(b1, it));
      const Param vh = m2[i] / (1 - std::pow(b2, it));
      const Param p = pack(g) - lr_mult * lr.cwiseProduct(mh.cwiseQuotient((vh.cwiseSqrt().array() + eps).matrix()));
      g.mean = p.segment<3>(0);
      g.scale = p.segment<3>(3);
      g.rotation = p.segment<4>(6);
      g.opacity = p[10];
      g.color = p.segment<3>(11);
      g.clamp();
    }
    LossResult next = evaluate();
    if (next.loss <= cur.loss) {
      cur = std::move(next);
      ++res.accepted;
    } else {
      for (std::size_t i = 0; i < trainable.size(); ++i) work[trainable[i]] = saved[i];
      lr_mult *= 0.5;
    }
    res.trace.push_back(cur.loss);
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) res.updated[i] = work[trainable[i]];
  return res;
}

}  // namespace dqo
