#include <gtest/gtest.h>

#include "pmap/synth.hpp"

using namespace pmap;

namespace {
double max_diff(const PointMap& a, const PointMap& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.points.size(); ++k) {
    EXPECT_EQ(a.valid[k], b.valid[k]);
    if (a.valid[k]) m = std::max(m, (a.points[k] - b.points[k]).norm());
  }
  return m;
}
}  // namespace

TEST(Synth, GroundTruthIsConsistent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = gen_synthetic_pair(seed);
    EXPECT_EQ(max_diff(unproject(s.d1, s.k1, 1), s.x11), 0.0);
    EXPECT_EQ(max_diff(unproject(s.d2, s.k2, 2), s.x22), 0.0);
    EXPECT_LT(max_diff(swap_frame(s.x22, s.p12.inverse(), 2, 1), s.x21), 1e-9);
    EXPECT_LT(max_diff(swap_frame(s.x21, s.p12, 1, 2), s.x22), 1e-9);
    EXPECT_TRUE(s.p12.is_orthonormal(1e-12));
    EXPECT_EQ(s.x21.subject, 2);
    EXPECT_EQ(s.x21.frame, 1);
  }
}

TEST(Synth, SameSeedIsBitIdentical) {
  const auto a = gen_synthetic_pair(42), b = gen_synthetic_pair(42);
  EXPECT_TRUE(a.img1 == b.img1);
  EXPECT_TRUE(a.img2 == b.img2);
  EXPECT_TRUE(a.d1.values == b.d1.values);
  EXPECT_TRUE(a.d2.mask == b.d2.mask);
  EXPECT_TRUE(a.x21.points == b.x21.points);
  EXPECT_EQ(a.k1, b.k1);
  EXPECT_EQ(a.p12.matrix(), b.p12.matrix());
  const auto c = gen_synthetic_pair(43);
  EXPECT_FALSE(a.img1 == c.img1);
}

TEST(Synth, OverlapAndCoverage) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = gen_synthetic_pair(seed);
    EXPECT_GE(view_overlap(s.x21, s.k1), 0.2);
    EXPECT_GT(s.d1.density(), 0.5);
    for (std::size_t k = 0; k < s.img1.size(); ++k) {
      EXPECT_GE(s.img1[k].minCoeff(), 0.0);
      EXPECT_LE(s.img1[k].maxCoeff(), 1.0);
    }
  }
}

// Splatted depth agrees with ray casting against the heightfield.
TEST(Synth, SplattedDepthMatchesSurface) {
  Rng rng(5);
  const auto scene = HeightfieldScene::random(rng);
  const CameraIntrinsics k{50, 50, 15.5, 15.5, 32, 32};
  const auto v = render_view(scene, k, RigidPose::identity(), lateral_extent(scene, k), 0.0, rng);
  int checked = 0;
  for (int j = 0; j < 32; ++j)
    for (int i = 0; i < 32; ++i) {
      if (!v.depth.mask(i, j)) continue;
      // the splatted sample lies within half a pixel of the ray through (i, j)
      const Vec3 p = k.ray(i, j) * v.depth.values(i, j);
      const double h = scene.height(p.x(), p.y());
      EXPECT_LT(std::abs(h - p.z()) / p.z(), 0.05);
      ++checked;
    }
  EXPECT_GT(checked, 900);
}

TEST(Synth, CropKeepsConsistency) {
  const auto s = gen_synthetic_pair(7);
  const auto c = s.crop(3, 5, 10, 2, 32, 32);
  EXPECT_LT(max_diff(unproject(c.d1, c.k1, 1), c.x11), 1e-12);
  EXPECT_LT(max_diff(swap_frame(c.x22, c.p12.inverse(), 2, 1), c.x21), 1e-9);
  EXPECT_EQ(c.img1(0, 0), s.img1(3, 5));
  EXPECT_EQ(c.img2(0, 0), s.img2(10, 2));
}

TEST(Synth, MultiViewPairsAreExact) {
  SynthOptions opt{32, 32};
  opt.principal_jitter = 0.0;
  const auto mv = gen_multiview_scene(3, 4, opt);
  ASSERT_EQ(mv.images.size(), 4u);
  EXPECT_TRUE(mv.poses[0].matrix().isIdentity());
  const auto p = mv.pair(1, 3);
  EXPECT_EQ(p.x21.subject, 3);
  EXPECT_EQ(p.x21.frame, 1);
  const auto back = swap_frame(p.x21, compose_relative(mv.poses[1], mv.poses[3]), 1, 3);
  EXPECT_LT(max_diff(back, p.x22), 1e-9);
  const auto scaled = mv.pair(1, 3, 2.5);
  EXPECT_LT(max_diff(scaled.x21, p.x21.scaled(2.5)), 1e-12);
}
