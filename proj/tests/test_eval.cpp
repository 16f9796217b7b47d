#include <gtest/gtest.h>

#include <random>

#include "dqomap/eval.hpp"
#include "oracles.hpp"

using namespace dqo;

namespace {

std::vector<Vector3d> random_points(std::mt19937_64& rng, int n, double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<Vector3d> out;
  for (int i = 0; i < n; ++i) out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

// 1k points on a 5 cm grid in the z = 0 plane.
std::vector<Vector3d> plane_points() {
  std::vector<Vector3d> out;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 25; ++j) out.emplace_back(0.05 * i, 0.05 * j, 0.0);
  return out;
}

SceneObject gt_object(int id, const DualQuadric& q) {
  SceneObject o;
  o.instance_id = id;
  o.center = q.center();
  o.rotation = q.rotation();
  o.semi_axes = q.semi_axes();
  return o;
}

}  // namespace

TEST(KdTree, MatchesBruteForceExactly) {
  std::mt19937_64 rng(1);
  const auto pts = random_points(rng, 3000);
  const KdTree tree(pts);
  for (const auto& q : random_points(rng, 500, 1.5)) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, (p - q).squaredNorm());
    EXPECT_EQ(tree.nearest_sq(q), best);
  }
}

TEST(KdTree, HandlesDuplicatesAndSinglePoint) {
  const KdTree one({Vector3d(1, 2, 3)});
  EXPECT_DOUBLE_EQ(one.nearest(Vector3d(1, 2, 5)), 2.0);
  std::vector<Vector3d> dup(100, Vector3d(0.5, 0.5, 0.5));
  dup.push_back(Vector3d(2, 2, 2));
  const KdTree t(dup);
  EXPECT_EQ(t.nearest_sq(Vector3d(2, 2, 2)), 0.0);
  EXPECT_THROW(KdTree({}), InvalidArgument);
}

TEST(EvalRecon, IdenticalSets) {
  std::mt19937_64 rng(2);
  const auto pts = random_points(rng, 800);
  const auto r = eval_recon(pts, pts, 1.0);
  EXPECT_EQ(r.accuracy_cm, 0.0);
  EXPECT_EQ(r.completion_cm, 0.0);
  EXPECT_EQ(r.completion_ratio, 100.0);
}

TEST(EvalRecon, TranslatedPlaneMatchesBruteForce) {
  const auto gt = plane_points();
  auto est = gt;
  for (auto& p : est) p.z() += 0.02;
  const auto r = eval_recon(est, gt, 1.0);
  double ratio = 0;
  const double comp = oracle::brute_mean_nn(gt, est, 0.01, &ratio);
  const double acc = oracle::brute_mean_nn(est, gt, 0.01);
  EXPECT_NEAR(r.accuracy_cm, 100 * acc, 1e-9);
  EXPECT_NEAR(r.completion_cm, 100 * comp, 1e-9);
  EXPECT_NEAR(r.completion_ratio, ratio, 1e-9);
  EXPECT_NEAR(r.accuracy_cm, 2.0, 1e-9);
  EXPECT_NEAR(r.completion_cm, 2.0, 1e-9);
  EXPECT_EQ(r.completion_ratio, 0.0);
}

TEST(EvalRecon, RandomSetsMatchBruteForce) {
  std::mt19937_64 rng(3);
  const auto a = random_points(rng, 1000), b = random_points(rng, 700);
  const auto r = eval_recon(a, b, 5.0);
  double ratio = 0;
  EXPECT_NEAR(r.accuracy_cm, 100 * oracle::brute_mean_nn(a, b, 0.05), 1e-9);
  EXPECT_NEAR(r.completion_cm, 100 * oracle::brute_mean_nn(b, a, 0.05, &ratio), 1e-9);
  EXPECT_NEAR(r.completion_ratio, ratio, 1e-9);
}

TEST(EvalRecon, GtSubsetOfEstimate) {
  std::mt19937_64 rng(4);
  auto est = random_points(rng, 600);
  const std::vector<Vector3d> gt(est.begin(), est.begin() + 200);
  const auto r = eval_recon(est, gt, 1.0);
  EXPECT_EQ(r.completion_cm, 0.0);
  EXPECT_EQ(r.completion_ratio, 100.0);
  EXPECT_GE(r.accuracy_cm, 0.0);
}

TEST(EvalRecon, EmptyInputRejected) {
  EXPECT_THROW(eval_recon({}, {Vector3d::Zero()}, 1.0), InvalidArgument);
  EXPECT_THROW(eval_recon({Vector3d::Zero()}, {}, 1.0), InvalidArgument);
}

TEST(EvalPose, PerfectEstimate) {
  std::mt19937_64 rng(5);
  std::vector<SceneObject> gt;
  std::vector<EstimatedObject> est;
  for (int i = 0; i < 4; ++i) {
    auto q = oracle::random_quadric(rng);
    q = DualQuadric(q.center() + Vector3d(6.0 * i, 0, 0), q.rotation(), q.semi_axes());
    gt.push_back(gt_object(i + 1, q));
    est.push_back({10 + i, 0, i + 1, q});
  }
  std::vector<CameraModel> cams;
  for (int i = 0; i < 5; ++i) cams.push_back(oracle::random_camera_for(gt[1].quadric(), rng));
  const auto r = eval_pose(est, gt, cams);
  EXPECT_EQ(r.misses, 0);
  for (const auto& o : r.objects) {
    EXPECT_NEAR(o.iou3d, 1.0, 1e-9);
    EXPECT_EQ(*o.cde_cm, 0.0);
    EXPECT_EQ(*o.object_id, 10 + o.gt_instance - 1);
  }
  EXPECT_NEAR(r.objects[1].iou2d, 1.0, 1e-9);
  EXPECT_EQ(r.objects[1].frames_2d, 5);
}

TEST(EvalPose, OneCentimeterOffset) {
  const DualQuadric q(Vector3d(1, 2, 0.5), Matrix3d::Identity(), Vector3d(0.4, 0.3, 0.5));
  const DualQuadric moved(q.center() + Vector3d(0.006, 0, 0.008), q.rotation(), q.semi_axes());
  const auto r = eval_pose({{1, 0, 1, moved}}, {gt_object(1, q)});
  EXPECT_NEAR(*r.objects[0].cde_cm, 1.0, 1e-9);
  EXPECT_NEAR(r.mean_cde_cm, 1.0, 1e-9);
}

TEST(EvalPose, IouMatchesMonteCarloOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    const auto g = oracle::random_quadric(rng);
    std::uniform_real_distribution<double> off(-0.4, 0.4);
    const DualQuadric e(g.center() + Vector3d(off(rng), off(rng), off(rng)), oracle::random_rotation(rng),
                        g.semi_axes() * 1.1);
    const auto r = eval_pose({{1, 0, 1, e}}, {gt_object(1, g)});
    if (!r.objects[0].object_id) {
      EXPECT_NEAR(oracle::monte_carlo_iou(g, e, 1000000), 0.0, 0.01);
      continue;
    }
    EXPECT_NEAR(r.objects[0].iou3d, oracle::monte_carlo_iou(g, e, 1000000), 0.01);
  }
}

TEST(EvalPose, UnmatchedGtIsMiss) {
  const DualQuadric a(Vector3d(0, 0, 0), Matrix3d::Identity(), Vector3d(0.3, 0.3, 0.3));
  const DualQuadric b(Vector3d(5, 0, 0), Matrix3d::Identity(), Vector3d(0.3, 0.3, 0.3));
  const auto r = eval_pose({{7, 0, 1, a}}, {gt_object(1, a), gt_object(2, b)});
  EXPECT_EQ(r.misses, 1);
  EXPECT_FALSE(r.objects[1].object_id.has_value());
  EXPECT_EQ(r.objects[1].iou3d, 0.0);
  EXPECT_NEAR(r.mean_iou3d, 0.5, 1e-9);
}

TEST(EvalPose, GreedyPrefersBestOverlap) {
  const DualQuadric g1(Vector3d(0, 0, 0), Matrix3d::Identity(), Vector3d(0.5, 0.5, 0.5));
  const DualQuadric g2(Vector3d(0.6, 0, 0), Matrix3d::Identity(), Vector3d(0.5, 0.5, 0.5));
  const DualQuadric e1(Vector3d(0.55, 0, 0), Matrix3d::Identity(), Vector3d(0.5, 0.5, 0.5));
  const DualQuadric e2(Vector3d(0.05, 0, 0), Matrix3d::Identity(), Vector3d(0.5, 0.5, 0.5));
  const auto r = eval_pose({{1, 0, 0, e1}, {2, 0, 0, e2}}, {gt_object(1, g1), gt_object(2, g2)});
  EXPECT_EQ(*r.objects[0].object_id, 2);
  EXPECT_EQ(*r.objects[1].object_id, 1);
}

TEST(EvalReport, JsonAndTable) {
  EvalReport rep;
  const DualQuadric q(Vector3d(0, 0, 0), Matrix3d::Identity(), Vector3d(0.5, 0.5, 0.5));
  rep.pose = eval_pose({{3, 0, 1, q}}, {gt_object(1, q)});
  rep.recon.push_back({1, 10, ReconEval{1.0, 2.0, 95.0}});
  rep.track_count = 1;
  rep.gt_count = 1;
  rep.runtime = {0.01, 0.02, 33.3, 5};
  const auto j = rep.to_json();
  EXPECT_EQ(j["track_count"], 1);
  EXPECT_EQ(j["reconstruction"]["objects"][0]["accuracy_cm"], 1.0);
  EXPECT_TRUE(j.contains("runtime"));
  EXPECT_FALSE(rep.deterministic_json().contains("runtime"));
  EXPECT_NE(rep.to_table().find("FPS"), std::string::npos);
}
