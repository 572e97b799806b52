#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "pmap/conditioning.hpp"
#include "pmap/loss.hpp"

namespace pmap {

// Smooth heightfield z = h(x, y) in the world (camera 1) frame, facing -z,
// with a procedural albedo.
struct HeightfieldScene {
  struct Bump {
    double x, y, amplitude, sigma;
  };
  struct Stripe {
    Vec2 direction;
    double frequency, phase;
    Vec3 amplitude;
  };

  double base = 4.0;
  double tilt_x = 0.0, tilt_y = 0.0;
  std::vector<Bump> bumps;
  Vec3 base_color = Vec3::Constant(0.5);
  std::vector<Stripe> stripes;
  std::uint64_t noise_key = 0;
  Vec3 light = Vec3(-0.3, -0.5, -1.0).normalized();

  double height(double x, double y) const {
    double h = base + tilt_x * x + tilt_y * y;
    for (const auto& b : bumps) {
      const double dx = x - b.x, dy = y - b.y;
      h += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
    }
    return h;
  }

  Vec2 gradient(double x, double y) const {
    Vec2 g(tilt_x, tilt_y);
    for (const auto& b : bumps) {
      const double dx = x - b.x, dy = y - b.y, s2 = b.sigma * b.sigma;
      const double e = b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
      g += Vec2(-dx / s2 * e, -dy / s2 * e);
    }
    return g;
  }

  Vec3 albedo(double x, double y) const {
    Vec3 c = base_color;
    for (const auto& s : stripes) c += s.amplitude * std::sin(s.frequency * s.direction.dot(Vec2(x, y)) + s.phase);
    // cell noise, identical from every viewpoint
    const auto cx = static_cast<std::int64_t>(std::floor(x / 0.12)), cy = static_cast<std::int64_t>(std::floor(y / 0.12));
    const std::uint64_t hsh = mix_seed(noise_key, static_cast<std::uint64_t>(cx * 73856093LL ^ cy * 19349663LL));
    c += Vec3::Constant(((hsh >> 11) * 0x1.0p-53 - 0.5) * 0.3);
    return c.cwiseMax(0.0).cwiseMin(1.0);
  }

  Vec3 color(double x, double y) const {
    const Vec2 g = gradient(x, y);
    const Vec3 n = Vec3(g.x(), g.y(), -1.0).normalized();
    const double shade = 0.35 + 0.65 * std::max(0.0, n.dot(-light));
    return albedo(x, y) * shade;
  }

  static HeightfieldScene random(Rng& rng) {
    HeightfieldScene s;
    s.base = rng.uniform(3.5, 5.5);
    s.tilt_x = rng.uniform(-0.25, 0.25);
    s.tilt_y = rng.uniform(-0.25, 0.25);
    for (int k = 0; k < 6; ++k)
      s.bumps.push_back({rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-0.8, 0.8), rng.uniform(0.4, 1.2)});
    s.base_color = Vec3(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7));
    for (int k = 0; k < 3; ++k) {
      const double a = rng.uniform(0.0, 2.0 * M_PI);
      s.stripes.push_back({Vec2(std::cos(a), std::sin(a)), rng.uniform(1.0, 4.0), rng.uniform(0.0, 2.0 * M_PI),
                           Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2))});
    }
    s.noise_key = rng.next();
    s.light = Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), -1.0).normalized();
    return s;
  }
};

struct RenderedView {
  RgbImage rgb;
  DepthMap depth;
};

// Point splatting with z-buffering: the surface is sampled on a lateral grid
// fine enough that neighbours land less than half a pixel apart, every
// sample is projected to its nearest pixel and the closest one wins.
// Pixels that receive no sample are invalid.
inline RenderedView render_view(const HeightfieldScene& scene, const CameraIntrinsics& k, const RigidPose& world_to_cam,
                                double extent, double noise_sigma, Rng& rng) {
  const Mat3& r = world_to_cam.rotation;
  const Vec3& t = world_to_cam.translation;
  // a coarse scan bounds the visible footprint and the nearest depth
  double near = std::numeric_limits<double>::infinity();
  double x0 = extent, x1 = -extent, y0 = extent, y1 = -extent;
  const double cell = extent / 32.0;
  for (int b = 0; b <= 64; ++b)
    for (int a = 0; a <= 64; ++a) {
      const double x = -extent + a * cell, y = -extent + b * cell;
      const Vec3 pc = r * Vec3(x, y, scene.height(x, y)) + t;
      if (pc.z() <= 1e-3) continue;
      const double u = k.fx * pc.x() / pc.z() + k.cx, w = k.fy * pc.y() / pc.z() + k.cy;
      if (u < -0.5 || w < -0.5 || u > k.width - 0.5 || w > k.height - 0.5) continue;
      near = std::min(near, pc.z());
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(near)) return {RgbImage(k.width, k.height, Vec3::Constant(0.05)), DepthMap(k.width, k.height)};
  x0 = std::max(-extent, x0 - 2 * cell), x1 = std::min(extent, x1 + 2 * cell);
  y0 = std::max(-extent, y0 - 2 * cell), y1 = std::min(extent, y1 + 2 * cell);
  const double spacing = 0.4 * near / std::max(k.fx, k.fy);
  const int nx = static_cast<int>(std::ceil((x1 - x0) / spacing)) + 1;
  const int ny = static_cast<int>(std::ceil((y1 - y0) / spacing)) + 1;
  RenderedView v{RgbImage(k.width, k.height, Vec3::Zero()), DepthMap(k.width, k.height)};
  Grid<double> zbuf(k.width, k.height, std::numeric_limits<double>::infinity());
  Grid<Vec2> where(k.width, k.height, Vec2::Zero());
  for (int b = 0; b < ny; ++b) {
    const double y = y0 + b * spacing;
    for (int a = 0; a < nx; ++a) {
      const double x = x0 + a * spacing;
      const Vec3 pc = r * Vec3(x, y, scene.height(x, y)) + t;
      if (pc.z() <= 1e-3) continue;
      const long i = std::lround(k.fx * pc.x() / pc.z() + k.cx);
      const long j = std::lround(k.fy * pc.y() / pc.z() + k.cy);
      if (i < 0 || j < 0 || i >= k.width || j >= k.height) continue;
      double& z = zbuf(static_cast<int>(i), static_cast<int>(j));
      if (pc.z() < z) {
        z = pc.z();
        where(static_cast<int>(i), static_cast<int>(j)) = Vec2(x, y);
      }
    }
  }
  Grid<Vec3> color(k.width, k.height, Vec3::Zero());
  for (std::size_t p = 0; p < zbuf.size(); ++p)
    if (std::isfinite(zbuf[p])) color[p] = scene.color(where[p].x(), where[p].y());
  for (std::size_t p = 0; p < zbuf.size(); ++p) {
    if (std::isfinite(zbuf[p])) {
      v.depth.values[p] = zbuf[p];
      v.depth.mask[p] = 1;
      v.rgb[p] = color[p];
    } else {
      v.rgb[p] = Vec3::Constant(0.05);
    }
    if (noise_sigma > 0.0)
      v.rgb[p] = (v.rgb[p] + noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal())).cwiseMax(0.0).cwiseMin(1.0);
  }
  return v;
}

struct SynthOptions {
  int width = 64;
  int height = 64;
  double min_overlap = 0.2;
  double focal_min = 0.7;  // relative to width
  double focal_max = 1.3;
  double noise_sigma = 0.02;
  double principal_jitter = 2.0;  // pixels
};

// A rendered pair with every ground-truth quantity. World = camera 1 frame;
// p12 maps frame 1 coordinates into frame 2.
struct SyntheticPair {
  RgbImage img1, img2;
  PointMap x11, x21, x22;
  CameraIntrinsics k1, k2;
  RigidPose p12;
  DepthMap d1, d2;

  PairTarget target() const { return {x11, x21, x22}; }
  AuxiliaryBundle aux() const { return {k1, k2, d1, d2, p12}; }

  // Same window applied to both images (the pair stays token-aligned).
  SyntheticPair crop(int x1, int y1, int x2, int y2, int w, int h) const {
    SyntheticPair c;
    c.img1 = img1.crop(x1, y1, w, h);
    c.img2 = img2.crop(x2, y2, w, h);
    c.x11 = x11.crop(x1, y1, w, h);
    c.x21 = x21.crop(x2, y2, w, h);
    c.x22 = x22.crop(x2, y2, w, h);
    c.k1 = k1.cropped(x1, y1, w, h);
    c.k2 = k2.cropped(x2, y2, w, h);
    c.p12 = p12;
    c.d1 = d1.crop(x1, y1, w, h);
    c.d2 = d2.crop(x2, y2, w, h);
    return c;
  }
};

inline CameraIntrinsics random_camera(Rng& rng, const SynthOptions& opt) {
  const double f = rng.uniform(opt.focal_min, opt.focal_max) * opt.width;
  const double jx = opt.principal_jitter > 0 ? rng.uniform(-opt.principal_jitter, opt.principal_jitter) : 0.0;
  const double jy = opt.principal_jitter > 0 ? rng.uniform(-opt.principal_jitter, opt.principal_jitter) : 0.0;
  return {f, f, (opt.width - 1) / 2.0 + jx, (opt.height - 1) / 2.0 + jy, opt.width, opt.height};
}

// World-to-camera pose of a camera at `center` looking at `target`, rolled by `roll`.
inline RigidPose look_at(const Vec3& center, const Vec3& target, double roll) {
  const Vec3 z = (target - center).normalized();
  Vec3 x = Vec3::UnitX() - z * z.x();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  r = rotation_exp(Vec3(0, 0, roll)) * r;
  return {r, -r * center};
}

inline double lateral_extent(const HeightfieldScene& scene, const CameraIntrinsics& k) {
  const double zmax = scene.base + 2.5;
  const double half = std::max({std::abs(k.cx), std::abs(k.width - k.cx), std::abs(k.cy), std::abs(k.height - k.cy)}) / k.fx;
  return 1.1 * half * zmax + 0.5;
}

// Fraction of valid pixels of view 2 whose frame-1 point projects inside image 1.
inline double view_overlap(const PointMap& x21, const CameraIntrinsics& k1) {
  std::size_t valid = 0, inside = 0;
  for (std::size_t p = 0; p < x21.points.size(); ++p) {
    if (!x21.valid[p]) continue;
    ++valid;
    const Vec3& q = x21.points[p];
    if (q.z() <= 0.0) continue;
    const double u = k1.fx * q.x() / q.z() + k1.cx, v = k1.fy * q.y() / q.z() + k1.cy;
    inside += u >= -0.5 && v >= -0.5 && u < k1.width - 0.5 && v < k1.height - 0.5;
  }
  return valid ? static_cast<double>(inside) / static_cast<double>(valid) : 0.0;
}

inline SyntheticPair gen_synthetic_pair(std::uint64_t seed, const SynthOptions& opt = {}) {
  Rng rng(mix_seed(seed, 0x5ce4e));
  for (int attempt = 0;; ++attempt) {
    const auto scene = HeightfieldScene::random(rng);
    SyntheticPair s;
    s.k1 = random_camera(rng, opt);
    s.k2 = random_camera(rng, opt);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Vec3 center(side * rng.uniform(0.3, 1.2), rng.uniform(-0.4, 0.4), rng.uniform(-0.5, 0.5));
    const Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), scene.base);
    s.p12 = look_at(center, target, rng.uniform(-5.0, 5.0) * M_PI / 180.0);

    const double extent = lateral_extent(scene, s.k1) + center.norm();
    const auto v1 = render_view(scene, s.k1, RigidPose::identity(), extent, opt.noise_sigma, rng);
    const auto v2 = render_view(scene, s.k2, s.p12, extent, opt.noise_sigma, rng);
    if (v1.depth.valid_count() < 16 || v2.depth.valid_count() < 16) continue;
    s.img1 = v1.rgb;
    s.img2 = v2.rgb;
    s.d1 = v1.depth;
    s.d2 = v2.depth;
    s.x11 = unproject(s.d1, s.k1, 1);
    s.x22 = unproject(s.d2, s.k2, 2);
    s.x21 = swap_frame(s.x22, s.p12.inverse(), 2, 1);
    if (view_overlap(s.x21, s.k1) < opt.min_overlap && attempt < 100) continue;
    return s;
  }
}

// Several cameras around one heightfield; camera 0 defines the world frame.
struct MultiViewScene {
  std::vector<RgbImage> images;
  std::vector<DepthMap> depths;
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<RigidPose> poses;  // world to camera

  // Self-frame pointmap of view v.
  PointMap self_points(int v) const { return unproject(depths[v], intrinsics[v], v); }

  // Exact pair prediction for the ordered pair (i, j), uniformly scaled by `scale`.
  PairPrediction pair(int i, int j, double scale = 1.0) const {
    PairPrediction p;
    p.x11 = self_points(i).scaled(scale);
    p.x22 = self_points(j).scaled(scale);
    p.x21 = swap_frame(self_points(j), compose_relative(poses[j], poses[i]), j, i).scaled(scale);
    p.c11 = ConfidenceMap(p.x11.width(), p.x11.height(), 1.0);
    p.c21 = ConfidenceMap(p.x21.width(), p.x21.height(), 1.0);
    p.c22 = ConfidenceMap(p.x22.width(), p.x22.height(), 1.0);
    return p;
  }
};

inline MultiViewScene gen_multiview_scene(std::uint64_t seed, int views, const SynthOptions& opt = {}) {
  require(views >= 1, "gen_multiview_scene: need at least one view");
  Rng rng(mix_seed(seed, 0x3a11));
  for (;;) {
    const auto scene = HeightfieldScene::random(rng);
    MultiViewScene mv;
    bool ok = true;
    for (int v = 0; v < views && ok; ++v) {
      const auto k = random_camera(rng, opt);
      RigidPose pose = RigidPose::identity();
      if (v > 0) {
        const double a = 2.0 * M_PI * (v - 1) / std::max(1, views - 1) + rng.uniform(-0.3, 0.3);
        const double r = rng.uniform(0.4, 1.0);
        const Vec3 center(r * std::cos(a), r * std::sin(a), rng.uniform(-0.4, 0.4));
        const Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), scene.base);
        pose = look_at(center, target, rng.uniform(-5.0, 5.0) * M_PI / 180.0);
      }
      const double extent = lateral_extent(scene, k) + 1.5;
      const auto view = render_view(scene, k, pose, extent, opt.noise_sigma, rng);
      ok = view.depth.density() > 0.5;
      mv.images.push_back(view.rgb);
      mv.depths.push_back(view.depth);
      mv.intrinsics.push_back(k);
      mv.poses.push_back(pose);
    }
    if (ok) return mv;
  }
}

}  // namespace pmap
