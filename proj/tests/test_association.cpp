#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dqomap/association.hpp"
#include "oracles.hpp"

using namespace dqo;

namespace {

CameraModel identity_camera(int w = 200, int h = 200) {
  CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 100;
  cam.width = w;
  cam.height = h;
  return cam;
}

struct SceneObject {
  DualQuadric q;
  int instance;
};

// Depth and instance maps by intersecting each pixel ray with the point
// quadric Q = (Q*)^-1 in homogeneous world coordinates.
FrameBundle render_frame(const std::vector<SceneObject>& objs, const CameraModel& cam, int index = 0) {
  FrameBundle f;
  f.index = index;
  f.camera = cam;
  f.rgb = Image<std::uint8_t>(cam.width, cam.height, 3, 0);
  f.depth = Image<float>(cam.width, cam.height, 1, 0.f);
  f.instance = Image<std::uint16_t>(cam.width, cam.height, 1, 0);
  std::vector<Matrix4d> point_q;
  for (const auto& o : objs) point_q.push_back(o.q.matrix().inverse());
  const Vector4d origin(cam.pose.translation.x(), cam.pose.translation.y(), cam.pose.translation.z(), 1.0);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vector3d dw = cam.pose.rotation * Vector3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const Vector4d d(dw.x(), dw.y(), dw.z(), 0.0);
      double best = 1e30;
      int id = 0;
      for (std::size_t k = 0; k < objs.size(); ++k) {
        const Matrix4d& m = point_q[k];
        const double a = d.dot(m * d), b = 2 * origin.dot(m * d), c = origin.dot(m * origin);
        const double disc = b * b - 4 * a * c;
        if (disc < 0) continue;
        const double r1 = (-b - std::sqrt(disc)) / (2 * a), r2 = (-b + std::sqrt(disc)) / (2 * a);
        const double t = std::min(r1, r2) > 0 ? std::min(r1, r2) : std::max(r1, r2);
        if (t > 0 && t < best) best = t, id = objs[k].instance;
      }
      if (id) {
        f.depth(x, y) = static_cast<float>(best);
        f.instance(x, y) = static_cast<std::uint16_t>(id);
      }
    }
  }
  return f;
}

DualQuadric sphere(const Vector3d& c, double r) { return DualQuadric(c, Matrix3d::Identity(), Vector3d::Constant(r)); }

}  // namespace

TEST(InitializeTrack, SingleViewWithDepth) {
  const DualQuadric q = initialize_track(BBox2D{74.18, 74.18, 125.82, 125.82}, identity_camera(), 4.0);
  EXPECT_NEAR((q.center() - Vector3d(0, 0, 4)).norm(), 0.0, 1e-9);
  // Inverse of the half-width relation: a = (w/2) z / f.
  EXPECT_NEAR(q.semi_axes().x(), 25.82 * 4 / 100, 1e-9);
  EXPECT_NEAR(q.semi_axes().y(), 1.0328, 1e-9);
  EXPECT_NEAR(q.semi_axes().z(), 1.0328, 1e-9);
  EXPECT_TRUE(q.rotation().isIdentity());
}

TEST(InitializeTrack, NoDepthOneViewFails) {
  EXPECT_THROW(initialize_track(BBox2D{10, 10, 50, 50}, identity_camera(), 0.0), CannotInitialize);
  EXPECT_THROW(initialize_track(std::span<const Observation>{}), CannotInitialize);
}

TEST(InitializeTrack, TwoViewRaysMeetAtCenter) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const DualQuadric gt = oracle::random_quadric(rng);
    std::vector<Observation> obs;
    for (int v = 0; v < 2; ++v) {
      CameraModel cam = oracle::random_camera_for(gt, rng);
      cam.pose = look_at(cam.center(), gt.center(), oracle::random_unit(rng));
      // Box centered on the projection of the GT center so the center rays meet there.
      const Vector3d c = cam.to_camera(gt.center());
      const double u = cam.fx * c.x() / c.z() + cam.cx, w = cam.fy * c.y() / c.z() + cam.cy;
      obs.push_back({v, BBox2D{u - 20, w - 15, u + 20, w + 15}, cam, 0.0});
    }
    const Vector3d d0 = obs[0].camera.ray_direction(obs[0].bbox.center().x(), obs[0].bbox.center().y());
    const Vector3d d1 = obs[1].camera.ray_direction(obs[1].bbox.center().x(), obs[1].bbox.center().y());
    if (std::abs(d0.dot(d1)) > 0.999) continue;
    const DualQuadric q = initialize_track(obs);
    EXPECT_LE((q.center() - gt.center()).norm(), 1e-6);
  }
}

TEST(InitializeTrack, TwoSkewRaysGiveClosestApproachMidpoint) {
  CameraModel a = identity_camera(), b = identity_camera();
  a.pose = look_at({0, -5, 0}, {0, 0, 0});
  b.pose = look_at({5, 0, 1}, {0, 0, 1});
  // Rays: a along +y through the origin, b along -x at height 1. Closest points (0,0,0),(0,0,1).
  std::vector<Observation> obs{{0, BBox2D{90, 90, 110, 110}, a, 0.0}, {1, BBox2D{90, 90, 110, 110}, b, 0.0}};
  const DualQuadric q = initialize_track(obs);
  EXPECT_LE((q.center() - Vector3d(0, 0, 0.5)).norm(), 1e-9);
}

TEST(DepthHint, RecoversSphereCenterDepth) {
  const CameraModel cam = identity_camera();
  const DualQuadric s = sphere({0, 0, 4}, 0.8);
  const FrameBundle f = render_frame({{s, 5}}, cam);
  const DepthHint h = estimate_depth_hint(f, project_bbox_clipped(s, cam));
  EXPECT_EQ(h.instance_id, 5);
  EXPECT_NEAR(h.center_depth, 4.0, 0.1);
  const auto pred = predicted_depth_hint(s, cam, project_bbox_clipped(s, cam));
  ASSERT_TRUE(pred.has_value());
  EXPECT_NEAR(*pred, h.center_depth, 0.05);
}

TEST(RayHitDepth, MatchesHomogeneousIntersection) {
  const CameraModel cam = identity_camera();
  const DualQuadric e(Vector3d(0.3, -0.2, 5), rotation_from_axis_angle(Vector3d(0.2, 0.5, 0.1)), Vector3d(0.9, 0.5, 0.7));
  const FrameBundle f = render_frame({{e, 1}}, cam);
  int checked = 0;
  for (int y = 0; y < cam.height; y += 3)
    for (int x = 0; x < cam.width; x += 3) {
      const auto z = ray_hit_depth(e, cam, x, y);
      EXPECT_EQ(z.has_value(), f.instance(x, y) != 0) << x << "," << y;
      if (z && f.instance(x, y)) {
        EXPECT_NEAR(*z, f.depth(x, y), 1e-5);
        ++checked;
      }
    }
  EXPECT_GT(checked, 20);
}

TEST(AssociateFrame, PerfectOverlapMatches) {
  const CameraModel cam = identity_camera();
  const DualQuadric s = sphere({0, 0, 4}, 0.8);
  FrameBundle f = render_frame({{s, 1}}, cam, 1);
  f.detections.push_back({project_bbox_clipped(s, cam), 2, 1.0, 1});
  ObjectMap map;
  ObjectTrack& t = map.create(2);
  t.quadric = s;
  t.status = TrackStatus::initialized;
  const int id = t.object_id;
  const AssociationResult r = associate_frame(map, f, AssocConfig{});
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0], std::make_pair(id, 0));
  EXPECT_TRUE(r.new_tracks.empty());
  EXPECT_EQ(map.find(id)->observations.size(), 1u);
}

TEST(AssociateFrame, ZeroIouCreatesTrack) {
  const CameraModel cam = identity_camera();
  const DualQuadric s = sphere({-1.2, 0, 4}, 0.4), other = sphere({1.2, 0, 4}, 0.4);
  FrameBundle f = render_frame({{other, 2}}, cam, 1);
  f.detections.push_back({project_bbox_clipped(other, cam), 0, 1.0, 2});
  ObjectMap map;
  map.create(0).quadric = s;
  ASSERT_EQ(iou_2d(project_bbox_clipped(s, cam), f.detections[0].bbox), 0.0);
  const AssociationResult r = associate_frame(map, f, AssocConfig{});
  EXPECT_TRUE(r.matches.empty());
  EXPECT_EQ(r.new_tracks, std::vector<int>{0});
  EXPECT_EQ(map.size(), 2u);
  EXPECT_EQ(map.find(r.created_ids[0])->instance_id, 2);
}

TEST(AssociateFrame, ClassMismatchNeverMatches) {
  const CameraModel cam = identity_camera();
  const DualQuadric s = sphere({0, 0, 4}, 0.8);
  FrameBundle f = render_frame({{s, 1}}, cam, 1);
  f.detections.push_back({project_bbox_clipped(s, cam), 1, 1.0, 1});
  ObjectMap map;
  map.create(0).quadric = s;
  EXPECT_TRUE(associate_frame(map, f, AssocConfig{}).matches.empty());
}

TEST(AssociateFrame, FineStageRejectsDepthInconsistentMatch) {
  // Same image box, but the observed object is a larger sphere 2 m further away.
  const CameraModel cam = identity_camera();
  const DualQuadric track = sphere({0, 0, 4}, 0.8), far = sphere({0, 0, 6}, 1.2);
  FrameBundle f = render_frame({{far, 1}}, cam, 1);
  f.detections.push_back({project_bbox_clipped(far, cam), 0, 1.0, 1});
  ASSERT_GT(iou_2d(project_bbox_clipped(track, cam), f.detections[0].bbox), 0.9);

  for (auto strategy : {AssociationStrategy::qd_iou, AssociationStrategy::iou_only}) {
    ObjectMap map;
    map.create(0).quadric = track;
    AssocConfig cfg;
    cfg.strategy = strategy;
    const AssociationResult r = associate_frame(map, f, cfg);
    if (strategy == AssociationStrategy::qd_iou) {
      EXPECT_TRUE(r.matches.empty());
      EXPECT_EQ(r.new_tracks, std::vector<int>{0});
    } else {
      EXPECT_EQ(r.matches.size(), 1u);
    }
  }
}

TEST(AssociateFrame, QdOnlyMatchesWithoutIouGate) {
  const CameraModel cam = identity_camera();
  const DualQuadric s = sphere({0, 0, 4}, 0.8);
  FrameBundle f = render_frame({{s, 1}}, cam, 1);
  f.detections.push_back({project_bbox_clipped(s, cam), 0, 1.0, 1});
  ObjectMap map;
  map.create(0).quadric = sphere({0.1, 0, 4}, 0.8);
  AssocConfig cfg;
  cfg.strategy = AssociationStrategy::qd_only;
  EXPECT_EQ(associate_frame(map, f, cfg).matches.size(), 1u);
}

TEST(AssociateFrame, EmptyFrameIsNoop) {
  ObjectMap map;
  map.create(0).quadric = sphere({0, 0, 4}, 1);
  FrameBundle f = render_frame({}, identity_camera());
  const AssociationResult r = associate_frame(map, f, AssocConfig{});
  EXPECT_TRUE(r.matches.empty() && r.new_tracks.empty() && r.merges.empty());
  EXPECT_EQ(map.size(), 1u);
}

TEST(AssociateFrame, AssignmentIsOneToOne) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos(-1.5, 1.5), rad(0.2, 0.6), depth(3.5, 7);
  const CameraModel cam = identity_camera(160, 120);
  for (int trial = 0; trial < 15; ++trial) {
    std::vector<SceneObject> objs;
    ObjectMap map;
    for (int k = 0; k < 4; ++k) {
      const DualQuadric q = sphere({pos(rng), 0.5 * pos(rng), depth(rng)}, rad(rng));
      objs.push_back({q, k + 1});
      ObjectTrack& t = map.create(0);
      t.quadric = sphere(q.center() + Vector3d(0.05 * pos(rng), 0, 0), q.semi_axes().x());
    }
    FrameBundle f = render_frame(objs, cam, 1);
    for (const auto& o : objs) {
      try {
        const BBox2D b = project_bbox_clipped(o.q, cam);
        if (b.area() > 0) f.detections.push_back({b, 0, 1.0, o.instance});
      } catch (const Error&) {
      }
    }
    // Duplicate detections compete for the same track.
    if (!f.detections.empty()) f.detections.push_back(f.detections.front());
    const auto r = associate_frame(map, f, AssocConfig{});
    std::set<int> dets, tracks;
    for (const auto& [id, d] : r.matches) {
      EXPECT_TRUE(dets.insert(d).second);
      EXPECT_TRUE(tracks.insert(id).second);
    }
    for (int d : r.new_tracks) EXPECT_TRUE(dets.insert(d).second);
    EXPECT_EQ(dets.size(), f.detections.size());
    for (const auto& [keep, gone] : r.merges) EXPECT_NE(keep, gone);
  }
}

TEST(MergeOccluded, FragmentInsideLargerTrackIsMerged) {
  const CameraModel cam = identity_camera();
  ObjectMap map;
  ObjectTrack& big = map.create(0);
  big.quadric = sphere({0, 0, 4}, 0.5);
  big.observations.push_back({0, project_bbox_clipped(*big.quadric, cam), cam, 4.0});
  ObjectTrack& frag = map.create(0);
  frag.quadric = sphere({0.1, 0, 4}, 0.3);
  frag.observations.push_back({1, project_bbox_clipped(*frag.quadric, cam), cam, 4.0});
  const int big_id = big.object_id, frag_id = frag.object_id;

  const BBox2D bi = project_bbox_clipped(*map.find(big_id)->quadric, cam);
  const BBox2D bj = project_bbox_clipped(*map.find(frag_id)->quadric, cam);
  ASSERT_GT(intersection_area(bi, bj) / bj.area(), 0.85);

  const auto merges = merge_occluded(map, cam, AssocConfig{});
  ASSERT_EQ(merges.size(), 1u);
  EXPECT_EQ(merges[0], std::make_pair(big_id, frag_id));
  EXPECT_EQ(map.size(), 1u);
  EXPECT_EQ(map.find(big_id)->observations.size(), 2u);
  EXPECT_EQ(map.find(frag_id), nullptr);
  // Popped ids are not handed out again.
  EXPECT_GT(map.create(0).object_id, frag_id);
}

TEST(MergeOccluded, AdjacentObjectsWithSmallOverlapStay) {
  const CameraModel cam = identity_camera();
  ObjectMap map;
  map.create(0).quadric = sphere({0, 0, 4}, 0.6);
  map.create(0).quadric = sphere({0.75, 0, 4}, 0.4);
  const BBox2D b1 = project_bbox_clipped(*map.find(1)->quadric, cam);
  const BBox2D b2 = project_bbox_clipped(*map.find(2)->quadric, cam);
  const double t = intersection_area(b1, b2) / std::min(b1.area(), b2.area());
  ASSERT_GT(t, 0.1);
  ASSERT_LT(t, 0.5);
  EXPECT_TRUE(merge_occluded(map, cam, AssocConfig{}).empty());
  EXPECT_EQ(map.size(), 2u);
}

TEST(MergeOccluded, ContainedButDistinctDepthStays) {
  // A small object far behind a large one projects inside it but lies outside its ellipsoid.
  const CameraModel cam = identity_camera();
  ObjectMap map;
  map.create(0).quadric = sphere({0, 0, 3}, 0.8);
  map.create(0).quadric = sphere({0, 0, 8}, 0.5);
  EXPECT_TRUE(merge_occluded(map, cam, AssocConfig{}).empty());
}

TEST(MergeOccluded, LongerLivedFragmentSurvivesWithItsQuadric) {
  const CameraModel cam = identity_camera();
  ObjectMap map;
  ObjectTrack& big = map.create(0);
  big.quadric = sphere({0, 0, 4}, 0.5);
  big.observations.push_back({5, project_bbox_clipped(*big.quadric, cam), cam, 4.0});
  big.last_seen = 5;
  ObjectTrack& frag = map.create(0);
  frag.quadric = sphere({0.1, 0, 4}, 0.3);
  for (int k = 0; k < 3; ++k) frag.observations.push_back({k, project_bbox_clipped(*frag.quadric, cam), cam, 4.0});
  const int big_id = big.object_id, frag_id = frag.object_id;
  const DualQuadric kept = *frag.quadric;

  const auto merges = merge_occluded(map, cam, AssocConfig{});
  ASSERT_EQ(merges.size(), 1u);
  EXPECT_EQ(merges[0], std::make_pair(frag_id, big_id));
  const ObjectTrack* t = map.find(frag_id);
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(t->observations.size(), 4u);
  EXPECT_EQ(t->last_seen, 5);
  EXPECT_TRUE(t->dirty);
  EXPECT_EQ(t->quadric->center(), kept.center());
  EXPECT_EQ(map.find(big_id), nullptr);
}
