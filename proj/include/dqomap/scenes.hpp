#pragma once

// Ready-made simulator scenes used by the tests, the acceptance suite and the CLI.

#include <algorithm>
#include <numbers>
#include <random>
#include <string>

#include "dqomap/simulator.hpp"

namespace dqo {

inline SceneObject scene_object(int id, int cls, ShapeKind shape, const Vector3d& center, const Vector3d& axes,
                                double yaw, const Vector3d& albedo) {
  SceneObject o;
  o.instance_id = id;
  o.class_id = cls;
  o.shape = shape;
  o.center = center;
  o.semi_axes = axes;
  o.rotation = rotation_from_axis_angle(Vector3d(0, 0, yaw));
  o.albedo = albedo;
  return o;
}

// One sphere resting on the floor, circled by the camera.
inline SceneSpec preset_single_sphere(int frames = 50, int width = 320, int height = 240) {
  SceneSpec s;
  s.intrinsics = {width * 0.9, width * 0.9, (width - 1) / 2.0, (height - 1) / 2.0, width, height, 1000};
  s.objects = {scene_object(1, 1, ShapeKind::sphere, Vector3d(0, 0, 0.3), Vector3d::Constant(0.3), 0,
                            Vector3d(0.85, 0.35, 0.25))};
  s.trajectory.frames = frames;
  s.trajectory.target = Vector3d(0, 0, 0.3);
  s.trajectory.radius = 1.6;
  s.trajectory.height = 0.55;
  s.trajectory.height_amp = 0.2;
  return s;
}

// Four separated furniture-sized objects of different classes on a full orbit.
inline SceneSpec preset_room4(int frames = 200, int width = 320, int height = 240) {
  SceneSpec s;
  s.intrinsics = {width * 0.9, width * 0.9, (width - 1) / 2.0, (height - 1) / 2.0, width, height, 1000};
  s.objects = {
      scene_object(1, 1, ShapeKind::ellipsoid, Vector3d(-0.9, -0.7, 0.35), Vector3d(0.45, 0.3, 0.35), 0.4,
                   Vector3d(0.8, 0.3, 0.25)),
      scene_object(2, 2, ShapeKind::sphere, Vector3d(0.9, -0.6, 0.3), Vector3d::Constant(0.3), 0,
                   Vector3d(0.25, 0.6, 0.85)),
      scene_object(3, 3, ShapeKind::superellipsoid, Vector3d(0.8, 0.9, 0.4), Vector3d(0.3, 0.35, 0.4), -0.3,
                   Vector3d(0.3, 0.75, 0.35)),
      scene_object(4, 4, ShapeKind::ellipsoid, Vector3d(-0.8, 0.9, 0.25), Vector3d(0.35, 0.5, 0.25), 1.1,
                   Vector3d(0.85, 0.8, 0.3)),
  };
  s.trajectory.frames = frames;
  s.trajectory.target = Vector3d(0, 0, 0.3);
  s.trajectory.radius = 3.6;
  s.trajectory.height = 1.7;
  s.trajectory.height_amp = 0.3;
  return s;
}

// Association stress scene with n_objects ground-truth objects (a multiple of
// 4). A quarter of the grid slots hold a same-class pair placed almost
// touching; thin poles stand in front of half of the single objects, so the
// orbit sees those objects whole first and split into fragments later.
inline SceneSpec preset_ablation(int n_objects, std::uint64_t seed = 0, int frames = 160, int width = 320,
                                 int height = 240) {
  if (n_objects < 4 || n_objects % 4 || n_objects > 12) throw InvalidParameter("n_objects must be 4, 8 or 12");
  SceneSpec s;
  s.seed = seed;
  s.split_fragments = true;
  s.intrinsics = {width * 0.9, width * 0.9, (width - 1) / 2.0, (height - 1) / 2.0, width, height, 1000};
  s.trajectory.frames = frames;
  s.trajectory.target = Vector3d(0, 0, 0.3);
  s.trajectory.radius = 4.6;
  s.trajectory.height = 1.9;
  s.trajectory.height_amp = 0.2;
  s.room_half = 6.0;

  std::mt19937_64 rng(mix_seed(seed, 0x5ce4e, 7));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double grid[4] = {-1.95, -0.65, 0.65, 1.95};
  std::vector<Vector2d> slots;
  for (double x : grid)
    for (double y : grid)
      if (std::abs(x) + std::abs(y) < 3.5) slots.emplace_back(x, y);  // corners pass too close to the orbit
  std::shuffle(slots.begin(), slots.end(), rng);

  const int pairs = n_objects / 4, singles = n_objects - 2 * pairs;
  const ShapeKind shapes[4] = {ShapeKind::sphere, ShapeKind::ellipsoid, ShapeKind::superellipsoid, ShapeKind::box};
  auto albedo = [&] { return Vector3d(0.2 + 0.7 * u(rng), 0.2 + 0.7 * u(rng), 0.2 + 0.7 * u(rng)); };
  int id = 1, cls = 1;
  std::size_t slot = 0;
  for (int p = 0; p < pairs; ++p, ++cls) {
    const Vector2d c = slots[slot++];
    const double r = 0.17 + 0.04 * u(rng), yaw = 2 * std::numbers::pi * u(rng);
    const Vector2d d(std::cos(yaw), std::sin(yaw));
    const Vector3d col = albedo();
    for (double side : {-1.0, 1.0}) {
      const Vector2d xy = c + side * (r + 0.04) * d;
      s.objects.push_back(scene_object(id++, cls, ShapeKind::sphere, Vector3d(xy.x(), xy.y(), r),
                                       Vector3d::Constant(r), 0, col));
    }
  }
  for (int k = 0; k < singles; ++k, ++cls) {
    const Vector2d c = slots[slot++];
    const ShapeKind shape = shapes[k % 4];
    Vector3d axes(0.2 + 0.12 * u(rng), 0.2 + 0.12 * u(rng), 0.2 + 0.15 * u(rng));
    if (shape == ShapeKind::sphere) axes = Vector3d::Constant(axes.x());
    SceneObject o = scene_object(id++, cls, shape, Vector3d(c.x(), c.y(), axes.z()), axes,
                                 shape == ShapeKind::sphere ? 0.0 : std::numbers::pi * u(rng), albedo());
    s.objects.push_back(o);
    if (k % 2) continue;
    // A pole between the object and the camera position at a late orbit angle.
    const double theta = 2 * std::numbers::pi * (0.45 + 0.35 * u(rng));
    const Vector2d eye(s.trajectory.radius * std::cos(theta), s.trajectory.radius * std::sin(theta));
    const Vector2d pole = c + (0.45 + axes.head<2>().maxCoeff()) * (eye - c).normalized();
    s.occluders.push_back(scene_object(1, 0, ShapeKind::box, Vector3d(pole.x(), pole.y(), 0.75),
                                       Vector3d(0.035, 0.035, 0.75), theta, Vector3d(0.3, 0.3, 0.32)));
  }
  return s;
}

}  // namespace dqo
