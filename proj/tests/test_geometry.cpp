#include <gtest/gtest.h>

#include "pmap/geometry.hpp"
#include "test_helpers.hpp"

using namespace pmap;
using pmap::testing::random_depth;
using pmap::testing::random_intrinsics;
using pmap::testing::random_pose;

TEST(Unproject, IdentityLikeIntrinsics) {
  CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 5, 4};
  DepthMap d(5, 4);
  d.values(3, 2) = 1.0;
  d.mask(3, 2) = 1;
  const PointMap pm = unproject(d, k);
  EXPECT_TRUE(pm.valid(3, 2));
  EXPECT_EQ(pm.points(3, 2), Vec3(3, 2, 1));
  EXPECT_FALSE(pm.valid(0, 0));
  EXPECT_EQ(pm.points(0, 0), Vec3::Zero());
  EXPECT_EQ(pm.frame, pm.subject);
}

TEST(Unproject, PrincipalPointRay) {
  CameraIntrinsics k{100.0, 100.0, 0.0, 0.0, 2, 2};
  DepthMap d(2, 2);
  d.values(0, 0) = 5.0;
  d.mask(0, 0) = 1;
  EXPECT_EQ(unproject(d, k).points(0, 0), Vec3(0, 0, 5));
}

TEST(Unproject, RejectsBadInput) {
  CameraIntrinsics k{100.0, 100.0, 0.0, 0.0, 4, 4};
  EXPECT_THROW(unproject(DepthMap(3, 4), k), InvalidInput);
  DepthMap d(4, 4);
  d.mask(1, 1) = 1;  // valid with zero depth
  EXPECT_THROW(unproject(d, k), InvalidInput);
  d.values(1, 1) = -2.0;
  EXPECT_THROW(unproject(d, k), InvalidInput);
  CameraIntrinsics bad{0.0, 1.0, 0.0, 0.0, 4, 4};
  d.values(1, 1) = 2.0;
  EXPECT_THROW(unproject(d, bad), InvalidInput);
}

TEST(Project, LinearPinhole) {
  PointMap pm(2, 1);
  pm.set(0, 0, {0, 0, 2});
  pm.set(1, 0, {1, 0, 1});
  const auto a = project(pm, CameraIntrinsics{50.0, 50.0, 0.0, 0.0, 2, 1});
  EXPECT_EQ(a.pixels(0, 0), Vec2(0, 0));
  EXPECT_EQ(a.depth.values(0, 0), 2.0);
  const auto b = project(pm, CameraIntrinsics{50.0, 50.0, 10.0, 0.0, 2, 1});
  EXPECT_DOUBLE_EQ(b.pixels(1, 0).x(), 60.0);
}

TEST(Project, BehindCameraIsInvalid) {
  PointMap pm(2, 1);
  pm.set(0, 0, {0, 0, -1});
  pm.set(1, 0, {0, 0, 0});
  const auto p = project(pm, CameraIntrinsics{1, 1, 0, 0, 2, 1});
  EXPECT_EQ(p.depth.valid_count(), 0u);
}

// Brute-force per-pixel round trip over random K and D.
TEST(Unproject, ProjectRoundTripRandom) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 3 + static_cast<int>(rng.index(30)), h = 3 + static_cast<int>(rng.index(30));
    const auto k = random_intrinsics(rng, w, h);
    const auto d = random_depth(rng, w, h);
    const auto proj = project(unproject(d, k), k);
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        ASSERT_EQ(proj.depth.mask(i, j), d.mask(i, j));
        if (!d.mask(i, j)) continue;
        EXPECT_NEAR(proj.depth.values(i, j), d.values(i, j), 1e-9 * d.values(i, j));
        EXPECT_NEAR(proj.pixels(i, j).x(), i, 1e-9 * std::max(1.0, std::abs(double(i))));
        EXPECT_NEAR(proj.pixels(i, j).y(), j, 1e-9 * std::max(1.0, std::abs(double(j))));
      }
  }
}

TEST(Unproject, DepthIsZComponent) {
  Rng rng(3);
  const auto k = random_intrinsics(rng, 16, 12);
  const auto d = random_depth(rng, 16, 12);
  const auto back = unproject(d, k).depth();
  EXPECT_EQ(back.mask, d.mask);
  for (std::size_t n = 0; n < d.mask.size(); ++n) EXPECT_EQ(back.values[n], d.values[n]);
}

TEST(SwapFrame, IdentityAndTranslation) {
  PointMap pm(1, 1, 2, 1);
  pm.set(0, 0, Vec3::Zero());
  const auto same = swap_frame(pm, RigidPose::identity(), 1, 2);
  EXPECT_EQ(same.points(0, 0), Vec3::Zero());
  EXPECT_EQ(same.frame, 2);
  EXPECT_EQ(same.subject, 2);
  RigidPose t;
  t.translation = {0, 0, 1};
  EXPECT_EQ(swap_frame(pm, t, 1, 2).points(0, 0), Vec3(0, 0, 1));
}

TEST(SwapFrame, RejectsFrameMismatch) {
  PointMap pm(1, 1, 1, 1);
  EXPECT_THROW(swap_frame(pm, RigidPose::identity(), 2, 1), InvalidInput);
}

TEST(SwapFrame, InverseRestores) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pm = pmap::testing::random_pointmap(rng, 8, 6, 0.7, 2, 2);
    const auto p = random_pose(rng);
    const auto there = swap_frame(pm, p, 2, 1);
    const auto back = swap_frame(there, p.inverse(), 1, 2);
    EXPECT_EQ(back.valid, pm.valid);
    for (std::size_t n = 0; n < pm.points.size(); ++n)
      EXPECT_LE((back.points[n] - pm.points[n]).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(back.frame, 2);
  }
}

TEST(ComposeRelative, Cases) {
  Rng rng(5);
  const auto pk = random_pose(rng);
  const auto same = compose_relative(pk, pk);
  EXPECT_LE((same.rotation - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LE(same.translation.norm(), 1e-12);
  const auto from_identity = compose_relative(RigidPose::identity(), pk);
  EXPECT_LE((from_identity.rotation - pk.rotation).norm(), 1e-15);
  EXPECT_LE((from_identity.translation - pk.translation).norm(), 1e-15);
}

// Applying P_{m,k} equals camera m -> world -> camera k.
TEST(ComposeRelative, PointwiseOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pm = random_pose(rng), pk = random_pose(rng);
    const Vec3 x(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const Mat3 rm_inv = pm.rotation.transpose();
    const Vec3 world = rm_inv * (x - pm.translation);
    const Vec3 expect = pk.rotation * world + pk.translation;
    EXPECT_LE((compose_relative(pm, pk).apply(x) - expect).norm(), 1e-12);
  }
}

TEST(RigidPose, GroupLaws) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const auto l = (a * b) * c, r = a * (b * c);
    EXPECT_LE((l.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(((a * a.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(((a.inverse() * a).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE((a * b).is_orthonormal());
  }
}

TEST(RigidPose, QuaternionBoundary) {
  Rng rng(17);
  const auto p = random_pose(rng);
  const auto q = RigidPose::from_quaternion(p.quaternion(), p.translation);
  EXPECT_LE((q.rotation - p.rotation).norm(), 1e-12);
}

TEST(RotationAngle, SmallAnglesAreAccurate) {
  const Mat3 a = rotation_exp(Vec3(0, 0, 1e-10));
  EXPECT_NEAR(rotation_angle(a, Mat3::Identity()), 1e-10, 1e-16);
  EXPECT_NEAR(rotation_angle(rotation_exp(Vec3(0, 0.5, 0)), Mat3::Identity()), 0.5, 1e-14);
}
