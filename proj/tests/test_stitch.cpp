#include <gtest/gtest.h>

#include "pmap/stitch.hpp"
#include "pmap/synth.hpp"
#include "test_helpers.hpp"

using namespace pmap;

namespace {

CameraIntrinsics parent_k(int w, int h) { return {0.8 * w, 0.8 * w, (w - 1) / 2.0, (h - 1) / 2.0, w, h}; }

// Brute-force check of coverage, overlap between neighbours and border snapping.
void check_schedule(const std::vector<CropSpec>& crops, int pw, int ph, int tw, int th, int overlap) {
  Grid<int> cover(pw, ph, 0);
  for (const auto& c : crops) {
    ASSERT_TRUE(c.inside_parent());
    EXPECT_EQ(c.w, tw);
    EXPECT_EQ(c.h, th);
    for (int y = c.y0; y < c.y0 + c.h; ++y)
      for (int x = c.x0; x < c.x0 + c.w; ++x) ++cover(x, y);
  }
  for (std::size_t k = 0; k < cover.size(); ++k) ASSERT_GE(cover[k], 1);
  std::vector<int> xs, ys;
  for (const auto& c : crops) {
    if (c.y0 == crops.front().y0) xs.push_back(c.x0);
    if (c.x0 == crops.front().x0) ys.push_back(c.y0);
  }
  EXPECT_EQ(xs.size() * ys.size(), crops.size());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    EXPECT_GT(xs[k], xs[k - 1]);
    EXPECT_GE(tw - (xs[k] - xs[k - 1]), overlap);
  }
  for (std::size_t k = 1; k < ys.size(); ++k) EXPECT_GE(th - (ys[k] - ys[k - 1]), overlap);
  EXPECT_EQ(xs.back() + tw, pw);
  EXPECT_EQ(ys.back() + th, ph);
  // row-major order
  for (std::size_t k = 1; k < crops.size(); ++k)
    EXPECT_TRUE(crops[k].y0 > crops[k - 1].y0 || (crops[k].y0 == crops[k - 1].y0 && crops[k].x0 > crops[k - 1].x0));
}

// Tiles cut from an oracle pointmap, each multiplied by its own scale.
std::vector<TilePrediction> oracle_tiles(const PointMap& full, const std::vector<CropSpec>& crops, Rng& rng,
                                         std::vector<double>* applied = nullptr) {
  std::vector<TilePrediction> tiles;
  for (const auto& c : crops) {
    const double s = rng.uniform(0.2, 5.0);
    if (applied) applied->push_back(s);
    ConfidenceMap conf(c.w, c.h);
    for (std::size_t k = 0; k < conf.size(); ++k) conf[k] = rng.uniform(1.0, 4.0);
    tiles.push_back({c, full.crop(c.x0, c.y0, c.w, c.h).scaled(s), conf, std::nullopt});
  }
  return tiles;
}

}  // namespace

TEST(Schedule, ParentEqualsTile) {
  const auto crops = schedule_crops(parent_k(64, 48), 64, 48, 8);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].x0, 0);
  EXPECT_EQ(crops[0].y0, 0);
}

TEST(Schedule, WideParent) {
  const auto crops = schedule_crops(parent_k(1024, 512), 512, 512, 64);
  ASSERT_EQ(crops.size(), 3u);
  EXPECT_EQ(crops[0].x0, 0);
  EXPECT_LE(crops[1].x0, 448);
  EXPECT_EQ(crops[2].x0, 512);
  check_schedule(crops, 1024, 512, 512, 512, 64);
}

TEST(Schedule, RandomGeometriesCoverEverything) {
  Rng rng(1);
  for (int n = 0; n < 100; ++n) {
    const int tw = 8 + static_cast<int>(rng.index(40)), th = 8 + static_cast<int>(rng.index(40));
    const int pw = tw + static_cast<int>(rng.index(120)), ph = th + static_cast<int>(rng.index(120));
    const int overlap = static_cast<int>(rng.index(static_cast<std::uint64_t>(std::min(tw, th))));
    const auto crops = schedule_crops(parent_k(pw, ph), tw, th, overlap);
    check_schedule(crops, pw, ph, tw, th, overlap);
    for (const auto& c : crops) {
      EXPECT_EQ(c.intrinsics().cx, c.parent_k.cx - c.x0);
      EXPECT_EQ(c.intrinsics().fx, c.parent_k.fx);
    }
  }
}

TEST(Schedule, RejectsImpossible) {
  EXPECT_THROW(schedule_crops(parent_k(32, 32), 64, 16, 0), InvalidInput);
  EXPECT_THROW(schedule_crops(parent_k(64, 32), 16, 16, 16), InvalidInput);
  EXPECT_THROW(schedule_crops(parent_k(64, 32), 16, 16, -1), InvalidInput);
}

TEST(ResolveScales, ConsistentTilesGiveOne) {
  const auto s = gen_synthetic_pair(1);
  const auto crops = schedule_crops(s.k1, 32, 32, 8);
  std::vector<TilePrediction> tiles;
  for (const auto& c : crops) tiles.push_back({c, s.x11.crop(c.x0, c.y0, c.w, c.h), ConfidenceMap(32, 32, 1.0), {}});
  for (double v : resolve_scales(tiles, 2)) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(ResolveScales, HalvedTile) {
  const auto s = gen_synthetic_pair(2);
  const auto crops = schedule_crops(s.k1, 40, 64, 16);
  ASSERT_EQ(crops.size(), 2u);
  std::vector<TilePrediction> tiles{{crops[0], s.x11.crop(0, 0, 40, 64), ConfidenceMap(40, 64, 1.0), {}},
                                    {crops[1], s.x11.crop(crops[1].x0, 0, 40, 64).scaled(0.5), ConfidenceMap(40, 64, 1.0), {}}};
  const auto sc = resolve_scales(tiles, 0);
  EXPECT_EQ(sc[0], 1.0);
  EXPECT_NEAR(sc[1], 2.0, 1e-12);
}

TEST(ResolveScales, RecoversRandomScalesAndIsReferenceIndependent) {
  Rng rng(3);
  for (int n = 0; n < 20; ++n) {
    const auto s = gen_synthetic_pair(100 + n);
    const auto crops = schedule_crops(s.k1, 24, 20, 6);
    std::vector<double> applied;
    const auto tiles = oracle_tiles(s.x11, crops, rng, &applied);
    const auto a = resolve_scales(tiles, 0);
    const std::size_t ref = rng.index(tiles.size());
    const auto b = resolve_scales(tiles, ref);
    for (std::size_t k = 0; k < tiles.size(); ++k) {
      EXPECT_NEAR(a[k] * applied[k] / applied[0], 1.0, 1e-9);
      EXPECT_NEAR((a[k] / a[0]) / (b[k] / b[0]), 1.0, 1e-9);
    }
    EXPECT_EQ(b[ref], 1.0);
  }
}

TEST(ResolveScales, Rejections) {
  const auto s = gen_synthetic_pair(4);
  const CropSpec a{0, 0, 16, 16, s.k1}, b{40, 40, 16, 16, s.k1};
  std::vector<TilePrediction> tiles{{a, s.x11.crop(0, 0, 16, 16), ConfidenceMap(16, 16, 1.0), {}},
                                    {b, s.x11.crop(40, 40, 16, 16), ConfidenceMap(16, 16, 1.0), {}}};
  EXPECT_THROW(resolve_scales(tiles, 0), InvalidInput);
  tiles[1].crop = CropSpec{8, 0, 16, 16, s.k1};
  tiles[1].pointmap = PointMap(16, 16, 1, 1);  // no valid pixels
  EXPECT_THROW(resolve_scales(tiles, 0), InvalidInput);
  EXPECT_THROW(resolve_scales(tiles, 5), InvalidInput);
}

TEST(Blend, SingleTilePassthrough) {
  const auto s = gen_synthetic_pair(5);
  const CropSpec c{0, 0, s.k1.width, s.k1.height, s.k1};
  ConfidenceMap conf(c.w, c.h, 2.5);
  const auto out = blend({{c, s.x11, conf, 1.0}}, c.w, c.h);
  EXPECT_TRUE(out.points.points == s.x11.points);
  EXPECT_TRUE(out.points.valid == s.x11.valid);
}

TEST(Blend, IdenticalPointsKeepMaxConfidence) {
  PointMap p(1, 1, 1, 1);
  p.set(0, 0, Vec3(0.3, -0.2, 2.0));
  const CropSpec c{0, 0, 1, 1, CameraIntrinsics{1, 1, 0, 0, 1, 1}};
  const auto out = blend({{c, p, ConfidenceMap(1, 1, 1.0), 1.0}, {c, p, ConfidenceMap(1, 1, 3.0), 1.0}}, 1, 1);
  EXPECT_NEAR((out.points.points(0, 0) - p.points(0, 0)).norm(), 0.0, 1e-15);
  EXPECT_EQ(out.confidence(0, 0), 3.0);
}

TEST(Blend, WeightedMeanAndWinnerTakeAll) {
  PointMap a(1, 1, 1, 1), b(1, 1, 1, 1);
  a.set(0, 0, Vec3(0, 0, 1));
  b.set(0, 0, Vec3(0, 0, 3));
  const CropSpec c{0, 0, 1, 1, CameraIntrinsics{1, 1, 0, 0, 1, 1}};
  const std::vector<TilePrediction> tiles{{c, a, ConfidenceMap(1, 1, 1.0), 1.0}, {c, b, ConfidenceMap(1, 1, 3.0), 1.0}};
  EXPECT_NEAR(blend(tiles, 1, 1).points.points(0, 0).z(), 2.5, 1e-15);
  EXPECT_EQ(blend(tiles, 1, 1, true).points.points(0, 0).z(), 3.0);
}

TEST(Blend, UncoveredPixelsInvalidAndUnresolvedRejected) {
  PointMap a(2, 1, 1, 1);
  a.set(0, 0, Vec3(0, 0, 1));
  const CropSpec c{0, 0, 2, 1, CameraIntrinsics{1, 1, 0, 0, 2, 1}};
  const auto out = blend({{c, a, ConfidenceMap(2, 1, 1.0), 2.0}}, 2, 1);
  EXPECT_TRUE(out.points.valid(0, 0));
  EXPECT_EQ(out.points.points(0, 0).z(), 2.0);
  EXPECT_FALSE(out.points.valid(1, 0));
  EXPECT_THROW(blend({{c, a, ConfidenceMap(2, 1, 1.0), std::nullopt}}, 2, 1), InvalidInput);
}

TEST(Stitch, EndToEndOracle) {
  Rng rng(6);
  for (int n = 0; n < 10; ++n) {
    const auto s = gen_synthetic_pair(200 + n, {80, 64});
    const auto crops = schedule_crops(s.k1, 48, 48, 12);
    ASSERT_EQ(crops.size(), 4u);
    auto tiles = oracle_tiles(s.x11, crops, rng);
    const auto scales = resolve_scales(tiles, rng.index(tiles.size()));
    for (std::size_t k = 0; k < tiles.size(); ++k) tiles[k].scale = scales[k];
    const auto out = blend(tiles, 80, 64);
    // one global factor relates the result to the oracle
    std::vector<double> ratios;
    for (std::size_t k = 0; k < out.points.points.size(); ++k)
      if (out.points.valid[k]) ratios.push_back(s.x11.points[k].z() / out.points.points[k].z());
    const double g = median_of(ratios);
    double worst = 0.0;
    for (std::size_t k = 0; k < out.points.points.size(); ++k) {
      ASSERT_EQ(out.points.valid[k], s.x11.valid[k]);
      if (out.points.valid[k])
        worst = std::max(worst, std::abs(g * out.points.points[k].z() - s.x11.points[k].z()) / s.x11.points[k].z());
    }
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(Downsample, IntrinsicsMatchPixelCenters) {
  const CameraIntrinsics k{100, 100, 31.5, 31.5, 64, 64};
  const auto d = downsampled(k, 2);
  EXPECT_EQ(d.width, 32);
  EXPECT_DOUBLE_EQ(d.cx, 15.5);
  EXPECT_DOUBLE_EQ(d.fx, 50);
  RgbImage img(4, 2, Vec3::Ones());
  img(0, 0) = Vec3::Zero();
  const auto small = downsample(img, 2);
  EXPECT_EQ(small.width(), 2);
  EXPECT_NEAR(small(0, 0).x(), 0.75, 1e-15);
  EXPECT_THROW(downsample(img, 3), InvalidInput);
}
