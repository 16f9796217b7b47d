#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dqomap/geometry.hpp"
#include "dqomap/iou3d.hpp"
#include "oracles.hpp"

using namespace dqo;

namespace {

CameraModel unit_sphere_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 100;
  cam.width = cam.height = 200;
  return cam;
}

DualQuadric unit_sphere_at(const Vector3d& c) {
  return DualQuadric(c, Matrix3d::Identity(), Vector3d::Ones());
}

}  // namespace

TEST(Assemble, UnitSphereAtOrigin) {
  const Matrix4d q = assemble_dual_quadric(Vector3d::Zero(), Matrix3d::Identity(), Vector3d::Ones()).matrix();
  EXPECT_TRUE(q.isApprox(Vector4d(1, 1, 1, -1).asDiagonal().toDenseMatrix()));
}

TEST(Assemble, TranslatedSphereMatchesExplicitProduct) {
  const Matrix4d q = unit_sphere_at({1, 0, 0}).matrix();
  // Oracle: T diag(1,1,1,-1) T^T by hand.
  Matrix4d t = Matrix4d::Identity();
  t(0, 3) = 1;
  const Matrix4d expected = t * Vector4d(1, 1, 1, -1).asDiagonal() * t.transpose();
  EXPECT_LE((q - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(q(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(std::abs(q(0, 3)), 1.0);
  EXPECT_DOUBLE_EQ(q(0, 3), q(3, 0));
}

TEST(Assemble, RejectsNonPositiveAxes) {
  EXPECT_THROW(assemble_dual_quadric(Vector3d::Zero(), Matrix3d::Identity(), Vector3d(1, 0, 1)),
               InvalidParameter);
  EXPECT_THROW(assemble_dual_quadric(Vector3d::Zero(), Matrix3d::Identity(), Vector3d(1, -2, 1)),
               InvalidParameter);
  Matrix3d not_rot = Matrix3d::Identity();
  not_rot(0, 0) = -1;
  EXPECT_THROW(assemble_dual_quadric(Vector3d::Zero(), not_rot, Vector3d::Ones()), InvalidParameter);
}

TEST(Decompose, DiagonalCase) {
  const DualQuadric q = decompose_dual_quadric(Vector4d(4, 1, 1, -1).asDiagonal());
  EXPECT_LE(q.center().norm(), 1e-15);
  EXPECT_NEAR(q.semi_axes().x(), 2.0, 1e-12);
  EXPECT_NEAR(q.semi_axes().y(), 1.0, 1e-12);
  EXPECT_NEAR(q.semi_axes().z(), 1.0, 1e-12);
  EXPECT_TRUE(q.rotation().isApprox(Matrix3d::Identity(), 1e-12));
}

TEST(Decompose, NonPositiveDefiniteBlockThrows) {
  EXPECT_THROW(decompose_dual_quadric(Vector4d(1, -1, 1, -1).asDiagonal()), DegenerateQuadric);
  EXPECT_THROW(decompose_dual_quadric(Vector4d(1, 1, 1, 0).asDiagonal()), DegenerateQuadric);
}

TEST(Decompose, RandomRoundTrip) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const DualQuadric in = oracle::random_quadric(rng);
    const DualQuadric out = decompose_dual_quadric(in.matrix());
    EXPECT_LE((out.center() - in.center()).norm(), 1e-9);
    // Same ellipsoid: equal shape tensor R diag(a^2) R^T (axis order/sign free).
    const Matrix3d si = in.rotation() * in.semi_axes().cwiseAbs2().asDiagonal() * in.rotation().transpose();
    const Matrix3d so = out.rotation() * out.semi_axes().cwiseAbs2().asDiagonal() * out.rotation().transpose();
    EXPECT_LE((si - so).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((out.matrix() - in.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(is_rotation(out.rotation()));
    // Axes as a multiset.
    Vector3d a = in.semi_axes(), b = out.semi_axes();
    std::sort(a.data(), a.data() + 3);
    std::sort(b.data(), b.data() + 3);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Project, UnitSphereBBoxMatchesSamplingOracle) {
  const CameraModel cam = unit_sphere_camera();
  const DualQuadric q = unit_sphere_at({0, 0, 4});
  const BBox2D b = conic_to_bbox(project_to_conic(q, cam));
  const BBox2D o = oracle::sampled_projection_bbox(q, cam, 1'000'000);
  const double half = 100.0 / std::sqrt(15.0);  // 25.8199 px
  EXPECT_NEAR(b.x_min, 100 - half, 1e-9);
  EXPECT_NEAR(b.x_max, 100 + half, 1e-9);
  EXPECT_NEAR(b.y_min, 100 - half, 1e-9);
  EXPECT_NEAR(b.y_max, 100 + half, 1e-9);
  EXPECT_NEAR(b.x_min, o.x_min, 0.05);
  EXPECT_NEAR(b.x_max, o.x_max, 0.05);
  EXPECT_NEAR(b.y_min, o.y_min, 0.05);
  EXPECT_NEAR(b.y_max, o.y_max, 0.05);
  EXPECT_NEAR(b.x_min, 74.18, 0.005);
  EXPECT_NEAR(b.x_max, 125.82, 0.005);
}

TEST(Project, BehindCameraThrows) {
  CameraModel cam = unit_sphere_camera();
  cam.pose.translation = Vector3d(0, 0, 10);
  EXPECT_THROW(project_to_conic(unit_sphere_at({0, 0, 4}), cam), BehindCamera);
}

TEST(Project, OutputSymmetricAndNormalized) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const DualQuadric q = oracle::random_quadric(rng);
    const CameraModel cam = oracle::random_camera_for(q, rng);
    const Matrix3d c = project_to_conic(q, cam).matrix();
    EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_DOUBLE_EQ(c(2, 2), -1.0);
  }
}

TEST(ConicBBox, AnalyticEllipse) {
  // Ellipse with semi-axes (10, 20) px centered at (50, 60): C* = H diag(100, 400, -1) H^T.
  Matrix3d h = Matrix3d::Identity();
  h(0, 2) = 50;
  h(1, 2) = 60;
  const DualConic c(h * Vector3d(100, 400, -1).asDiagonal() * h.transpose());
  const BBox2D b = conic_to_bbox(c);
  EXPECT_NEAR(b.x_min, 40, 1e-9);
  EXPECT_NEAR(b.y_min, 40, 1e-9);
  EXPECT_NEAR(b.x_max, 60, 1e-9);
  EXPECT_NEAR(b.y_max, 80, 1e-9);
}

TEST(ConicBBox, HyperbolaThrows) {
  EXPECT_THROW(conic_to_bbox(DualConic(Vector3d(1, -1, -1).asDiagonal())), DegenerateConic);
  EXPECT_THROW(conic_to_bbox(DualConic(Vector3d(1, 1, 1).asDiagonal())), DegenerateConic);
}

TEST(ConicBBox, CameraInsideQuadricIsDegenerate) {
  CameraModel cam = unit_sphere_camera();
  const DualQuadric q(Vector3d(0, 0, 0.5), Matrix3d::Identity(), Vector3d(2, 2, 2));
  EXPECT_THROW(conic_to_bbox(project_to_conic(q, cam)), DegenerateConic);
}

TEST(Backproject, FullImagePlanesContainEdgeRays) {
  const CameraModel cam = unit_sphere_camera();
  const BBox2D b = cam.image_bounds();
  const auto planes = backproject_bbox_planes(b, cam);
  const Vector3d origin = cam.center();
  // Three pixels on each edge, back-projected at several depths.
  const double ts[3] = {0.1, 0.5, 0.9};
  for (double t : ts) {
    const double u = b.x_min + t * b.width();
    const double v = b.y_min + t * b.height();
    const Vector3d pts[4] = {cam.backproject(b.x_min, v, 2.0), cam.backproject(u, b.y_min, 3.0),
                             cam.backproject(b.x_max, v, 4.0), cam.backproject(u, b.y_max, 5.0)};
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(planes[k].dot(pts[k].homogeneous()), 0.0, 1e-9);
      EXPECT_NEAR(planes[k].dot(origin.homogeneous()), 0.0, 1e-9);
    }
  }
  // Normals come from the rows of K for the identity pose.
  EXPECT_TRUE(planes[0].head<3>().normalized().isApprox(Vector3d(100, 0, 100 - b.x_min).normalized(), 1e-12));
}

TEST(Backproject, TangencyClosesTheLoop) {
  const CameraModel cam = unit_sphere_camera();
  const DualQuadric q = unit_sphere_at({0, 0, 4});
  const auto planes = backproject_bbox_planes(project_bbox(q, cam), cam);
  for (const auto& p : planes) EXPECT_LE(std::abs(p.dot(q.matrix() * p)), 1e-6);
}

TEST(Backproject, ZeroAreaBoxGivesPairedPlanes) {
  const CameraModel cam = unit_sphere_camera();
  const auto planes = backproject_bbox_planes({50, 60, 50, 60}, cam);
  EXPECT_TRUE(planes[0].isApprox(planes[2]));
  EXPECT_TRUE(planes[1].isApprox(planes[3]));
}

TEST(Iou2d, Basics) {
  EXPECT_DOUBLE_EQ(iou_2d({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou_2d({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(iou_2d({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
}

TEST(Iou3d, IdenticalAndHalfOffset) {
  const DualQuadric a(Vector3d::Zero(), Matrix3d::Identity(), Vector3d::Constant(0.5));
  EXPECT_NEAR(iou_3d(a, a), 1.0, 1e-12);
  const DualQuadric b(Vector3d(0.5, 0, 0), Matrix3d::Identity(), Vector3d::Constant(0.5));
  EXPECT_NEAR(iou_3d(a, b), 1.0 / 3.0, 1e-12);
  const DualQuadric far(Vector3d(5, 0, 0), Matrix3d::Identity(), Vector3d::Constant(0.5));
  EXPECT_DOUBLE_EQ(iou_3d(a, far), 0.0);
}

TEST(Iou3d, MatchesMonteCarloAndIsSymmetric) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> off(-0.6, 0.6), ax(0.2, 0.8);
  for (int i = 0; i < 25; ++i) {
    const DualQuadric a(Vector3d::Zero(), oracle::random_rotation(rng), Vector3d(ax(rng), ax(rng), ax(rng)));
    const DualQuadric b(Vector3d(off(rng), off(rng), off(rng)), oracle::random_rotation(rng),
                        Vector3d(ax(rng), ax(rng), ax(rng)));
    const double exact = iou_3d(a, b);
    EXPECT_NEAR(exact, oracle::monte_carlo_iou(a, b, 200'000, i), 0.01);
    EXPECT_EQ(exact, iou_3d(b, a));
  }
}

TEST(QuadricDistance, ClosedForms) {
  const DualQuadric a = unit_sphere_at({0, 0, 0});
  EXPECT_DOUBLE_EQ(quadric_distance(a, a, 1.0), 1.0);
  EXPECT_NEAR(quadric_distance(a, unit_sphere_at({1, 0, 0}), 1.0), std::exp(-1.0), 1e-15);
  EXPECT_THROW(quadric_distance(a, a, 0.0), InvalidParameter);
}

TEST(QuadricDistance, MatchesScalarRecomputationAndProperties) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const DualQuadric a = oracle::random_quadric(rng), b = oracle::random_quadric(rng);
    double frob = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = 1.0 / (a.semi_axes()[k] * a.semi_axes()[k]) - 1.0 / (b.semi_axes()[k] * b.semi_axes()[k]);
      frob += d * d;
    }
    const double expected = std::exp(-0.7 * ((a.center() - b.center()).norm() + std::sqrt(frob)));
    EXPECT_NEAR(quadric_distance(a, b, 0.7), expected, 1e-14);
    EXPECT_EQ(quadric_distance(a, b, 0.7), quadric_distance(b, a, 0.7));
    const double qd = quadric_distance(a, b, 0.7);
    EXPECT_GT(qd, 0.0);
    EXPECT_LE(qd, 1.0);
  }
  // Monotone in center separation with S fixed.
  const DualQuadric a = unit_sphere_at({0, 0, 0});
  double prev = 1.0;
  for (double d = 0.1; d < 3; d += 0.1) {
    const double qd = quadric_distance(a, unit_sphere_at({d, 0, 0}), 1.0);
    EXPECT_LT(qd, prev);
    prev = qd;
  }
}
