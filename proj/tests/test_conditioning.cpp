#include <gtest/gtest.h>

#include "pmap/conditioning.hpp"
#include "test_helpers.hpp"

using namespace pmap;

TEST(Rays, PrincipalPointAndFortyFiveDegrees) {
  CameraIntrinsics k{50.0, 50.0, 10.0, 8.0, 80, 40};
  const auto rays = rays_from_intrinsics(k);
  EXPECT_EQ(rays(10, 8), Vec3(0, 0, 1));
  EXPECT_EQ(rays(60, 8), Vec3(1, 0, 1));
  for (const auto& r : rays.data()) EXPECT_EQ(r.z(), 1.0);
}

TEST(Rays, CropUsesParentCoordinates) {
  CameraIntrinsics k{120.0, 120.0, 160.0, 120.0, 320, 240};
  const auto full = rays_from_intrinsics(k);
  CropSpec crop{100, 0, 64, 48, k};
  const auto part = rays_from_intrinsics(k, crop);
  ASSERT_EQ(part.width(), 64);
  for (int j = 0; j < 48; ++j)
    for (int i = 0; i < 64; ++i) EXPECT_EQ(part(i, j), full(100 + i, j));
  // Same thing through the crop's own intrinsics.
  const auto via_k = rays_from_intrinsics(crop.intrinsics());
  for (std::size_t n = 0; n < part.size(); ++n) EXPECT_LE((via_k[n] - part[n]).norm(), 1e-15);
}

TEST(Rays, CropOutOfBounds) {
  CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 10, 10};
  EXPECT_THROW(rays_from_intrinsics(k, CropSpec{5, 0, 6, 4, k}), InvalidInput);
  EXPECT_THROW(rays_from_intrinsics(k, CropSpec{-1, 0, 4, 4, k}), InvalidInput);
}

// Scaling focal and pixel offsets together leaves physical rays unchanged.
TEST(Rays, ResolutionConsistency) {
  CameraIntrinsics lo{40.0, 40.0, 16.0, 16.0, 32, 32};
  CameraIntrinsics hi{80.0, 80.0, 32.0, 32.0, 64, 64};
  const auto a = rays_from_intrinsics(lo), b = rays_from_intrinsics(hi);
  for (int j = 0; j < 32; ++j)
    for (int i = 0; i < 32; ++i) EXPECT_LE((a(i, j) - b(2 * i, 2 * j)).norm(), 1e-15);
}

TEST(NormalizeDepth, ConstantAndSinglePixel) {
  DepthMap d(4, 4);
  for (std::size_t k = 0; k < d.mask.size(); ++k) {
    d.values[k] = 5.0;
    d.mask[k] = 1;
  }
  const auto n = normalize_depth_input(d);
  EXPECT_EQ(n.scale, 5.0);
  for (double v : n.dprime.data()) EXPECT_EQ(v, 1.0);

  DepthMap s(3, 3);
  s.values(1, 2) = 2.0;
  s.mask(1, 2) = 1;
  const auto m = normalize_depth_input(s);
  EXPECT_EQ(m.dprime(1, 2), 1.0);
  EXPECT_EQ(m.dprime(0, 0), 0.0);
  EXPECT_THROW(normalize_depth_input(DepthMap(3, 3)), InvalidInput);
}

TEST(NormalizeDepth, RecomputationOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = pmap::testing::random_depth(rng, 17, 11, 0.3);
    const auto n = normalize_depth_input(d);
    double sum_d = 0.0, sum_dp = 0.0;
    int cnt = 0;
    for (std::size_t k = 0; k < d.mask.size(); ++k) {
      if (!d.mask[k]) {
        EXPECT_EQ(n.dprime[k], 0.0);
        continue;
      }
      sum_d += d.values[k];
      sum_dp += n.dprime[k];
      ++cnt;
      EXPECT_NEAR(n.dprime[k] * n.scale, d.values[k], 1e-12 * d.values[k]);
    }
    EXPECT_NEAR(n.scale, sum_d / cnt, 1e-12 * n.scale);
    EXPECT_NEAR(sum_dp / cnt, (sum_d / cnt) / n.scale, 1e-12);
  }
}

TEST(Sparsify, CountsAndDeterminism) {
  DepthMap d(40, 25);
  for (std::size_t k = 0; k < d.mask.size(); ++k) {
    d.values[k] = 1.0 + static_cast<double>(k);
    d.mask[k] = 1;
  }
  ASSERT_EQ(d.valid_count(), 1000u);
  EXPECT_EQ(sparsify(d, 1.0, 3).mask, d.mask);
  const auto a = sparsify(d, 0.25, 42);
  EXPECT_EQ(a.valid_count(), 250u);
  for (std::size_t k = 0; k < d.mask.size(); ++k)
    if (a.mask[k]) {
      EXPECT_EQ(a.values[k], d.values[k]);
    }
  EXPECT_EQ(sparsify(d, 0.25, 42).mask, a.mask);
  EXPECT_NE(sparsify(d, 0.25, 43).mask, a.mask);
  EXPECT_THROW(sparsify(d, 0.0, 1), InvalidInput);
  EXPECT_THROW(sparsify(DepthMap(4, 4), 0.5, 1), InvalidInput);
}

TEST(EncodePose, Cases) {
  const auto id = encode_pose(RigidPose::identity());
  EXPECT_TRUE(id.degenerate);
  EXPECT_EQ(id.tnorm, Vec3::Zero());
  EXPECT_EQ(id.rotation, Mat3::Identity());
  RigidPose p;
  p.translation = {0, 0, 7};
  EXPECT_EQ(encode_pose(p).tnorm, Vec3(0, 0, 1));
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = pmap::testing::random_pose(rng);
    const auto tok = encode_pose(q);
    EXPECT_FALSE(tok.degenerate);
    EXPECT_NEAR(tok.tnorm.norm(), 1.0, 1e-12);
    EXPECT_EQ(tok.rotation, q.rotation);
    const auto f = tok.features();
    EXPECT_EQ(f[1], q.rotation(0, 1));
    EXPECT_EQ(f[11], tok.tnorm.z());
  }
}

TEST(ModalitySubset, MonteCarloFrequencies) {
  constexpr int kTrials = 60000;
  std::array<int, 6> by_size{};
  std::array<int, 5> by_slot{};
  for (int s = 0; s < kTrials; ++s) {
    const auto m = sample_modality_subset(static_cast<std::uint64_t>(s));
    by_size[m.count()]++;
    for (int k = 0; k < 5; ++k) by_slot[k] += m.has(static_cast<Modality>(k));
  }
  for (int k = 0; k <= 5; ++k) EXPECT_NEAR(by_size[k] / double(kTrials), 1.0 / 6.0, 0.01) << "m=" << k;
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(by_slot[k] / double(kTrials), 0.5, 0.01) << "slot " << k;
  EXPECT_EQ(sample_modality_subset(99), sample_modality_subset(99));
}

TEST(ModalitySubset, ExtremesAndRestriction) {
  AuxiliaryBundle b;
  b.k1 = CameraIntrinsics{1, 1, 0, 0, 4, 4};
  b.k2 = b.k1;
  b.d1 = DepthMap(4, 4);
  b.d2 = DepthMap(4, 4);
  b.p12 = RigidPose::identity();
  EXPECT_EQ(b.present(), ModalitySet::all());
  EXPECT_EQ(b.restricted(ModalitySet::none()).present(), ModalitySet::none());
  EXPECT_EQ(b.restricted(ModalitySet::all()).present().count(), 5);
  EXPECT_EQ((ModalitySet{Modality::D1, Modality::P12}).to_string(), "D1+P12");
  bool seen_empty = false, seen_full = false;
  for (std::uint64_t s = 0; s < 200 && !(seen_empty && seen_full); ++s) {
    const auto m = sample_modality_subset(s);
    seen_empty |= m.count() == 0;
    seen_full |= m == ModalitySet::all();
  }
  EXPECT_TRUE(seen_empty);
  EXPECT_TRUE(seen_full);
}

// RGB, ray and depth tokens share one patch grid.
TEST(Patchify, SharedTokenGrid) {
  CameraIntrinsics k{30, 30, 16, 12, 32, 24};
  RgbImage img(32, 24, Vec3(0.5, 0.25, 1.0));
  DepthMap d(32, 24);
  d.values(3, 3) = 2.0;
  d.mask(3, 3) = 1;
  const auto rgb = patchify(img, 8);
  const auto rays = patchify(rays_from_intrinsics(k), 8);
  const auto dep = patchify(normalize_depth_input(d), 8);
  EXPECT_EQ(rgb.rows(), 12);
  EXPECT_EQ(rays.rows(), 12);
  EXPECT_EQ(dep.rows(), 12);
  EXPECT_EQ(rgb.cols(), 192);
  EXPECT_EQ(dep.cols(), 128);
  // pixel (3,3) in patch 0 -> column (3*8+3)*2
  EXPECT_EQ(dep(0, (3 * 8 + 3) * 2), 1.0);
  EXPECT_EQ(dep(0, (3 * 8 + 3) * 2 + 1), 1.0);
  EXPECT_THROW(patchify(RgbImage(30, 24), 8), InvalidInput);
}
