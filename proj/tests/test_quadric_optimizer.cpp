#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dqomap/iou3d.hpp"
#include "dqomap/quadric_optimizer.hpp"
#include "oracles.hpp"

using namespace dqo;

namespace {

CameraModel ring_camera(const Vector3d& target, double radius, double angle, double height = 1.0) {
  CameraModel cam;
  cam.fx = cam.fy = 300;
  cam.cx = 160;
  cam.cy = 120;
  cam.width = 320;
  cam.height = 240;
  const Vector3d eye = target + Vector3d(radius * std::cos(angle), radius * std::sin(angle), height);
  cam.pose = look_at(eye, target);
  return cam;
}

std::vector<Observation> ring_observations(const DualQuadric& gt, int n, double radius = 4.0) {
  std::vector<Observation> obs;
  for (int i = 0; i < n; ++i) {
    const CameraModel cam = ring_camera(gt.center(), radius, 2 * std::numbers::pi * i / n, 0.8 * std::sin(i));
    obs.push_back({i, project_bbox_clipped(gt, cam), cam, 0.0});
  }
  return obs;
}

double oracle_iou(const BBox2D& a, const BBox2D& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

const DualQuadric kChair(Vector3d(0.5, -0.3, 0.6), rotation_from_axis_angle(Vector3d(0, 0, 0.4)),
                         Vector3d(0.45, 0.35, 0.6));

}  // namespace

TEST(PoseLoss, ZeroAtGroundTruth) {
  const auto obs = ring_observations(kChair, 12);
  EXPECT_LE(pose_loss(QuadricParams::from_quadric(kChair), obs), 1e-6);
}

TEST(PoseLoss, DisjointProjectionsCostOneEach) {
  const auto obs = ring_observations(kChair, 8);
  // Shrink the quadric and lift it far above every view's box.
  QuadricParams p = QuadricParams::from_quadric(kChair);
  p.center.z() += 1.5;
  p.log_semi_axes = Vector3d::Constant(std::log(0.1));
  for (const auto& o : obs) ASSERT_EQ(iou_2d(project_bbox_clipped(p.to_quadric(), o.camera), o.bbox), 0.0);
  EXPECT_DOUBLE_EQ(pose_loss(p, obs), 8.0);
}

TEST(PoseLoss, MatchesSampledProjectionOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto obs = ring_observations(kChair, 6);
  for (int trial = 0; trial < 5; ++trial) {
    QuadricParams p = QuadricParams::from_quadric(kChair);
    p.center += 0.1 * Vector3d(n(rng), n(rng), n(rng));
    p.rot_axis_angle += 0.1 * Vector3d(n(rng), n(rng), n(rng));
    p.log_semi_axes += 0.1 * Vector3d(n(rng), n(rng), n(rng));
    const DualQuadric q = p.to_quadric();
    double expected = 0.0;
    for (const auto& o : obs) {
      BBox2D s = oracle::sampled_projection_bbox(q, o.camera, 400000, 31 + trial);
      s.x_min = std::max(s.x_min, -0.5);
      s.y_min = std::max(s.y_min, -0.5);
      s.x_max = std::min(s.x_max, o.camera.width - 0.5);
      s.y_max = std::min(s.y_max, o.camera.height - 0.5);
      expected += 1.0 - oracle_iou(s, o.bbox);
    }
    EXPECT_NEAR(pose_loss(p, obs), expected, 1e-3);
  }
}

TEST(PoseLoss, InvariantUnderObservationPermutation) {
  std::mt19937_64 rng(9);
  auto obs = ring_observations(kChair, 10);
  QuadricParams p = QuadricParams::from_quadric(kChair);
  p.center += Vector3d(0.07, -0.05, 0.02);
  const double l = pose_loss(p, obs);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(obs.begin(), obs.end(), rng);
    EXPECT_NEAR(pose_loss(p, obs), l, 1e-12);
  }
}

TEST(PoseLoss, EmptyObservationsRejected) {
  EXPECT_THROW(pose_loss(QuadricParams::from_quadric(kChair), {}), InvalidArgument);
}

TEST(PoseLoss, SecantSlopesConvergeToGradient) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto obs = ring_observations(kChair, 6);
  QuadricParams base = QuadricParams::from_quadric(kChair);
  base.center += Vector3d(0.06, 0.04, -0.03);
  base.log_semi_axes += Vector3d(0.05, -0.04, 0.03);
  const Vector9d x = base.vector();
  const Vector9d g = pose_loss_gradient(x, obs, Vector9d::Constant(1e-6), Eigen::Array<bool, 9, 1>::Constant(true));
  auto secant = [&](const Vector9d& d, double h) {
    return (pose_loss(QuadricParams::from_vector(x + h * d), obs) -
            pose_loss(QuadricParams::from_vector(x - h * d), obs)) / (2 * h);
  };
  for (int k = 0; k < 10; ++k) {
    Vector9d d;
    for (int i = 0; i < 9; ++i) d[i] = n(rng);
    d.normalize();
    const double s1 = secant(d, 1e-3), s2 = secant(d, 5e-4), s3 = secant(d, 2.5e-4);
    ASSERT_GT(std::abs(s3), 1e-6);
    EXPECT_NEAR(s2 / s3, 1.0, 0.05);
    EXPECT_NEAR(s1 / s3, 1.0, 0.05);
    EXPECT_NEAR(g.dot(d) / s3, 1.0, 0.05);
  }
}

TEST(OptimizeQuadric, GroundTruthIsFixedPoint) {
  const auto obs = ring_observations(kChair, 10);
  const OptimResult r = optimize_quadric(kChair, obs);
  EXPECT_LE(r.final_loss, 1e-6);
  EXPECT_LE((r.params.to_quadric().center() - kChair.center()).norm(), 1e-6);
  EXPECT_LE((r.params.to_quadric().semi_axes() - kChair.semi_axes()).norm(), 1e-6);
}

TEST(OptimizeQuadric, RecoversOffsetCenter) {
  const DualQuadric gt(Vector3d(0, 0, 0.5), Matrix3d::Identity(), Vector3d(0.5, 0.45, 0.4));
  const auto obs = ring_observations(gt, 20);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const Vector3d offset = 0.2 * oracle::random_unit(rng);
    const DualQuadric init(gt.center() + offset, Matrix3d::Identity(), gt.semi_axes());
    const OptimResult r = optimize_quadric(init, obs);
    EXPECT_LE(r.final_loss, r.initial_loss);
    EXPECT_LE((r.params.center - gt.center()).norm(), 0.03) << "trial " << trial;
    EXPECT_GE(iou_3d(r.params.to_quadric(), gt), 0.5);
  }
}

TEST(OptimizeQuadric, LossTraceNeverIncreases) {
  const auto obs = ring_observations(kChair, 12);
  const DualQuadric init(kChair.center() + Vector3d(0.15, -0.1, 0.05), Matrix3d::Identity(),
                         Vector3d(0.3, 0.3, 0.3));
  const OptimResult r = optimize_quadric(init, obs);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
  EXPECT_LT(r.final_loss, r.initial_loss);
  EXPECT_LE(r.iterations, 200);
}

TEST(OptimizeQuadric, YawOnlyKeepsTiltFixed) {
  const auto obs = ring_observations(kChair, 12);
  const DualQuadric init(kChair.center() + Vector3d(0.1, 0, 0), rotation_from_axis_angle(Vector3d(0, 0, 0.1)),
                         kChair.semi_axes());
  OptimConfig cfg;
  cfg.yaw_only = true;
  const OptimResult r = optimize_quadric(init, obs, cfg);
  EXPECT_EQ(r.params.rot_axis_angle.x(), 0.0);
  EXPECT_EQ(r.params.rot_axis_angle.y(), 0.0);
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(OptimizeQuadric, ErrorsAndDegenerateGeometry) {
  EXPECT_THROW(optimize_quadric(kChair, {}), InvalidArgument);

  // Every camera looks away from the quadric.
  std::vector<Observation> behind;
  for (int i = 0; i < 3; ++i) {
    CameraModel cam = ring_camera(kChair.center(), 4, i);
    cam.pose = look_at(cam.center(), 2 * cam.center() - kChair.center());
    behind.push_back({i, BBox2D{10, 10, 50, 50}, cam, 0.0});
  }
  EXPECT_THROW(optimize_quadric(kChair, behind), Unoptimizable);

  // Cameras on one line through the object see it along a single ray.
  std::vector<Observation> collinear;
  for (int i = 0; i < 4; ++i) {
    CameraModel cam = ring_camera(kChair.center(), 3.0 + i, 0.0, 0.0);
    collinear.push_back({i, project_bbox_clipped(kChair, cam), cam, 0.0});
  }
  const DualQuadric off(kChair.center() + Vector3d(0, 0.1, 0), kChair.rotation(), kChair.semi_axes());
  const OptimResult r = optimize_quadric(off, collinear);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.iterations, 0);

  ObjectTrack t;
  t.quadric = kChair;
  t.observations.assign(collinear.begin(), collinear.begin() + 2);
  EXPECT_THROW(optimize_quadric(t), InvalidArgument);
}
