#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <random>

#include "nvist/camera.h"

using namespace nvist;

namespace {

CameraPose pose_at(const Eigen::Matrix3d& r, const Eigen::Vector3d& c) {
  CameraPose p;
  p.rotation = r;
  p.center = c;
  p.focal = 1.2;
  p.width = 64;
  p.height = 48;
  p.principal = {32.0, 24.0};
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

Eigen::Vector3d random_vector(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST(NormalizeScene, BoundingBoxRule) {
  std::vector<Eigen::Vector3d> cloud{{0, 0, 0}, {2, 1, 1}, {1, 0.5, 0.2}};
  std::vector<CameraPose> poses{pose_at(Eigen::Matrix3d::Identity(), {1, 0.5, -3.5}),
                                pose_at(Eigen::Matrix3d::Identity(), {1, 0.5, -5})};
  NormalizedScene ns = normalize_scene(cloud, poses, 0);
  EXPECT_DOUBLE_EQ(ns.normalization.scale, 0.5);
  const Eigen::Vector3d lo = ns.normalization.apply(Eigen::Vector3d(0, 0, 0));
  const Eigen::Vector3d hi = ns.normalization.apply(Eigen::Vector3d(2, 1, 1));
  EXPECT_NEAR(lo.x(), -0.5, 1e-12);
  EXPECT_NEAR(lo.y(), -0.25, 1e-12);
  EXPECT_NEAR(lo.z(), -0.25, 1e-12);
  EXPECT_NEAR(hi.x(), 0.5, 1e-12);
  EXPECT_NEAR(hi.y(), 0.25, 1e-12);
  EXPECT_NEAR(hi.z(), 0.25, 1e-12);
  // Input camera was 4 units from the centroid (1, 0.5, 0.5).
  EXPECT_NEAR(ns.normalization.z, 2.0, 1e-12);
}

TEST(NormalizeScene, UnitCenteredCloudIsIdentity) {
  std::vector<Eigen::Vector3d> cloud{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  std::vector<CameraPose> poses{pose_at(Eigen::Matrix3d::Identity(), {0, 0, -2}),
                                pose_at(Eigen::Matrix3d::Identity(), {0, 0, -3})};
  NormalizedScene ns = normalize_scene(cloud, poses, 0);
  EXPECT_DOUBLE_EQ(ns.normalization.scale, 1.0);
  EXPECT_EQ(ns.normalization.translation, Eigen::Vector3d::Zero());
}

TEST(NormalizeScene, InputDistanceScalesWithCloud) {
  std::vector<Eigen::Vector3d> cloud{{-1, -1, -1}, {1, 1, 1}};
  std::vector<CameraPose> poses{pose_at(Eigen::Matrix3d::Identity(), {0, 0, -2}),
                                pose_at(Eigen::Matrix3d::Identity(), {0, 0, -3})};
  EXPECT_NEAR(normalize_scene(cloud, poses, 0).normalization.z, 1.0, 1e-12);
}

TEST(NormalizeScene, DegenerateCloudRejected) {
  std::vector<Eigen::Vector3d> flat{{0, 0, 0}, {1, 1, 0}};
  std::vector<CameraPose> poses{pose_at(Eigen::Matrix3d::Identity(), {0, 0, -2}),
                                pose_at(Eigen::Matrix3d::Identity(), {0, 0, -3})};
  EXPECT_THROW(normalize_scene(flat, poses, 0), GeometryError);
  EXPECT_THROW(normalize_scene({{0, 0, 0}, {1, 1, 1}}, {poses[0]}, 0), GeometryError);
}

TEST(NormalizeScene, Idempotent) {
  std::mt19937_64 rng(3);
  std::vector<Eigen::Vector3d> cloud;
  for (int i = 0; i < 50; ++i) cloud.push_back(random_vector(rng, 3.0) + Eigen::Vector3d(4, -2, 7));
  std::vector<CameraPose> poses;
  for (int i = 0; i < 4; ++i) poses.push_back(pose_at(random_rotation(rng), random_vector(rng, 10.0)));
  NormalizedScene once = normalize_scene(cloud, poses, 1);
  std::vector<Eigen::Vector3d> moved;
  for (const auto& p : cloud) moved.push_back(once.normalization.apply(p));
  NormalizedScene twice = normalize_scene(moved, once.poses, 1);
  EXPECT_NEAR(twice.normalization.scale, 1.0, 1e-6);
  EXPECT_LE(twice.normalization.translation.norm(), 1e-6);
  EXPECT_NEAR(twice.normalization.z, once.normalization.z, 1e-6);
  for (std::size_t i = 0; i < poses.size(); ++i) EXPECT_LE((twice.poses[i].center - once.poses[i].center).norm(), 1e-6);
}

TEST(RelativizePose, SelfCaseIsIdentityAtConditionedCenter) {
  std::mt19937_64 rng(4);
  CameraPose in = pose_at(random_rotation(rng), random_vector(rng, 3.0));
  CameraPose rel = relativize_pose(in, in, 1.7);
  EXPECT_EQ(rel.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(rel.center, Eigen::Vector3d(0, 0, -1.7));
}

TEST(RelativizePose, QuarterTurnAboutY) {
  const Eigen::Matrix3d ry = rotation_about_axis(Eigen::Vector3d::UnitY(), std::numbers::pi / 2);
  CameraPose in = pose_at(Eigen::Matrix3d::Identity(), conditioned_input_center(1.0));
  CameraPose tgt = pose_at(ry, ry * conditioned_input_center(1.0));
  CameraPose rel = relativize_pose(in, tgt, 1.0);
  EXPECT_LE((rel.rotation - ry).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((rel.center - Eigen::Vector3d(-1, 0, 0)).norm(), 1e-12);
}

TEST(RelativizePose, InvariantUnderCommonRigidTransform) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    CameraPose in = pose_at(random_rotation(rng), random_vector(rng, 3.0));
    CameraPose tgt = pose_at(random_rotation(rng), random_vector(rng, 3.0));
    const Eigen::Matrix3d q = random_rotation(rng);
    const Eigen::Vector3d t = random_vector(rng, 5.0);
    CameraPose in2 = pose_at(q * in.rotation, q * in.center + t);
    CameraPose tgt2 = pose_at(q * tgt.rotation, q * tgt.center + t);
    CameraPose a = relativize_pose(in, tgt, 2.0);
    CameraPose b = relativize_pose(in2, tgt2, 2.0);
    EXPECT_LE((a.rotation - b.rotation).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((a.center - b.center).norm(), 1e-6);
    // Closure: the relative rotation stays a proper rotation.
    EXPECT_NO_THROW(a.validate());
  }
}

TEST(RelativizePose, RejectsBadRotationAndDistance) {
  CameraPose good = pose_at(Eigen::Matrix3d::Identity(), {0, 0, -2});
  CameraPose bad = good;
  bad.rotation(0, 0) = 2.0;
  EXPECT_THROW(relativize_pose(good, bad, 1.0), GeometryError);
  CameraPose mirrored = good;
  mirrored.rotation(0, 0) = -1.0;
  EXPECT_THROW(relativize_pose(mirrored, good, 1.0), GeometryError);
  EXPECT_THROW(relativize_pose(good, good, 0.0), GeometryError);
}

TEST(RelativizePose, PointsFollowCameras) {
  std::mt19937_64 rng(6);
  CameraPose in = pose_at(random_rotation(rng), random_vector(rng, 3.0));
  CameraPose tgt = pose_at(random_rotation(rng), random_vector(rng, 3.0));
  const Eigen::Vector3d p = random_vector(rng, 1.0);
  CameraPose rel = relativize_pose(in, tgt, 1.5);
  // The point projects to the same pixel in world and relative frames.
  EXPECT_LE((project_point(tgt, p) - project_point(rel, relativize_point(in, p, 1.5))).norm(), 1e-9);
}

TEST(Conditioning, ZeroCase) {
  ConditioningVector c = conditioning_features(0.0, 0.0);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(c[2 + 4 * k], 0.0);
    EXPECT_EQ(c[3 + 4 * k], 1.0);
    EXPECT_EQ(c[4 + 4 * k], 0.0);
    EXPECT_EQ(c[5 + 4 * k], 1.0);
  }
}

TEST(Conditioning, HalfPi) {
  ConditioningVector c = encode_conditioning(std::numbers::pi / 2, std::numbers::pi / 2);
  EXPECT_NEAR(c[2], 0.0, 1e-12);
  EXPECT_NEAR(c[3], -1.0, 1e-12);
  EXPECT_EQ(c.size(), 18u);
}

TEST(Conditioning, LayoutAndRange) {
  ConditioningVector c = encode_conditioning(1.3, 2.1);
  EXPECT_EQ(c[0], 1.3);
  EXPECT_EQ(c[1], 2.1);
  EXPECT_DOUBLE_EQ(c[2 + 4 * 3 + 3], std::cos(16 * 2.1));
  EXPECT_DOUBLE_EQ(c[2 + 4 * 1 + 0], std::sin(4 * 1.3));
  for (std::size_t i = 2; i < c.size(); ++i) {
    EXPECT_GE(c[i], -1.0);
    EXPECT_LE(c[i], 1.0);
  }
  EXPECT_THROW(encode_conditioning(0.0, 1.0), GeometryError);
  EXPECT_THROW(encode_conditioning(1.0, -1.0), GeometryError);
}

TEST(GenerateRays, PrincipalAxis) {
  CameraPose p = pose_at(Eigen::Matrix3d::Identity(), {0, 0, 0});
  p.principal = {10.5, 7.5};
  Ray r = generate_ray(p, 10, 7);
  EXPECT_LE((r.direction - Eigen::Vector3d::UnitZ()).norm(), 1e-15);
}

TEST(GenerateRays, OneFocalLengthRight) {
  CameraPose p = pose_at(Eigen::Matrix3d::Identity(), {0, 0, 0});
  p.width = 100;
  p.focal = 0.2;  // 20 px
  p.principal = {40.5, 30.5};
  Ray r = generate_ray(p, 60, 30);
  EXPECT_LE((r.direction - Eigen::Vector3d(1, 0, 1) / std::sqrt(2.0)).norm(), 1e-12);
}

TEST(GenerateRays, UnitDirectionsAndRoundTrip) {
  std::mt19937_64 rng(7);
  CameraPose p = pose_at(random_rotation(rng), random_vector(rng, 2.0));
  std::vector<Pixel> px;
  for (int v = 0; v < p.height; v += 5)
    for (int u = 0; u < p.width; u += 7) px.push_back({u, v});
  std::vector<Ray> rays = generate_rays(p, px);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    EXPECT_NEAR(rays[i].direction.norm(), 1.0, 1e-6);
    const Eigen::Vector3d x = rays[i].origin + 2.37 * rays[i].direction;
    const Eigen::Vector2d back = project_point(p, x);
    EXPECT_NEAR(back.x(), px[i].u, 1e-4);
    EXPECT_NEAR(back.y(), px[i].v, 1e-4);
  }
  EXPECT_THROW(generate_rays(p, {{p.width, 0}}), GeometryError);
}

TEST(RayBox, SlabHandComputation) {
  Ray r;
  r.origin = {0, 0, -2};
  r.direction = {0, 0, 1};
  auto hit = ray_box_intersect(r, Box{});
  ASSERT_TRUE(hit);
  EXPECT_DOUBLE_EQ(hit->first, 1.0);
  EXPECT_DOUBLE_EQ(hit->second, 3.0);
}

TEST(RayBox, ParallelOutsideMisses) {
  Ray r;
  r.origin = {0, 2, -2};
  r.direction = {0, 0, 1};
  EXPECT_FALSE(ray_box_intersect(r, Box{}));
}

TEST(RayBox, InsideClampsToZero) {
  Ray r;
  r.origin = {0.2, -0.1, 0.3};
  r.direction = Eigen::Vector3d(1, 1, 0).normalized();
  auto hit = ray_box_intersect(r, Box{});
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->first, 0.0);
  EXPECT_GT(hit->second, 0.0);
}

TEST(RayBox, BoxBehindMisses) {
  Ray r;
  r.origin = {0, 0, 3};
  r.direction = {0, 0, 1};
  EXPECT_FALSE(ray_box_intersect(r, Box{}));
}

TEST(LookAt, ProperRotationFacingTarget) {
  const Eigen::Vector3d eye(1.0, 0.8, -1.5);
  const Eigen::Matrix3d r = look_at_rotation(eye, Eigen::Vector3d::Zero());
  CameraPose p = pose_at(r, eye);
  EXPECT_NO_THROW(p.validate());
  EXPECT_LE((r.col(2) - (-eye).normalized()).norm(), 1e-12);
  // World up appears toward the top of the image.
  EXPECT_LT(r.col(1).dot(Eigen::Vector3d::UnitY()), 0.0);
}
