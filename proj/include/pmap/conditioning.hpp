#pragma once

#include <array>
#include <bit>
#include <string>
#include <cmath>
#include <optional>

#include "pmap/loss.hpp"

namespace pmap {

// Window [x0, x0+w) x [y0, y0+h) of a parent image with intrinsics parent_k.
struct CropSpec {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;
  CameraIntrinsics parent_k;

  bool inside_parent() const {
    return x0 >= 0 && y0 >= 0 && w > 0 && h > 0 && x0 + w <= parent_k.width && y0 + h <= parent_k.height;
  }
  CameraIntrinsics intrinsics() const { return parent_k.cropped(x0, y0, w, h); }
  bool operator==(const CropSpec&) const = default;
};

// Per-pixel K^-1 (i, j, 1); z is always 1.
using RayMap = Grid<Vec3>;

inline RayMap rays_from_intrinsics(const CameraIntrinsics& k) {
  k.validate();
  RayMap rays(k.width, k.height);
  for (int j = 0; j < k.height; ++j)
    for (int i = 0; i < k.width; ++i) rays(i, j) = k.ray(i, j);
  return rays;
}

// Rays of a crop, evaluated at parent-frame pixel coordinates, so that a
// non-centered window yields off-axis rays.
inline RayMap rays_from_intrinsics(const CameraIntrinsics& k, const CropSpec& crop) {
  k.validate();
  require(crop.x0 >= 0 && crop.y0 >= 0 && crop.w > 0 && crop.h > 0 && crop.x0 + crop.w <= k.width &&
              crop.y0 + crop.h <= k.height,
          "rays_from_intrinsics: crop lies outside the parent image");
  RayMap rays(crop.w, crop.h);
  for (int j = 0; j < crop.h; ++j)
    for (int i = 0; i < crop.w; ++i) rays(i, j) = k.ray(crop.x0 + i, crop.y0 + j);
  return rays;
}

// [D', M] with D' = D / Z(D) at valid pixels and 0 elsewhere.
struct NormalizedDepthInput {
  Grid<double> dprime;
  Mask mask;
  double scale = 1.0;
};

inline NormalizedDepthInput normalize_depth_input(const DepthMap& d) {
  d.validate();
  require(d.valid_count() > 0, "normalize_depth_input: empty depth mask, drop the modality instead");
  NormalizedDepthInput out{Grid<double>(d.width(), d.height(), 0.0), d.mask, znorm(d)};
  for (std::size_t k = 0; k < d.mask.size(); ++k)
    if (d.mask[k]) out.dprime[k] = d.values[k] / out.scale;
  return out;
}

// Keeps round(keep_ratio * valid) pixels chosen uniformly without replacement.
inline DepthMap sparsify(const DepthMap& d, double keep_ratio, std::uint64_t seed) {
  require(keep_ratio > 0.0 && keep_ratio <= 1.0, "sparsify: keep_ratio must lie in (0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < d.mask.size(); ++k)
    if (d.mask[k]) idx.push_back(k);
  require(!idx.empty(), "sparsify: source has no valid pixels");
  const auto keep = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(idx.size())));
  Rng rng(seed);
  // partial Fisher-Yates: the first `keep` slots are the sample
  for (std::size_t a = 0; a < keep; ++a) std::swap(idx[a], idx[a + rng.index(idx.size() - a)]);
  DepthMap out(d.width(), d.height());
  for (std::size_t a = 0; a < keep; ++a) {
    out.values[idx[a]] = d.values[idx[a]];
    out.mask[idx[a]] = 1;
  }
  return out;
}

struct PoseToken {
  Mat3 rotation = Mat3::Identity();
  Vec3 tnorm = Vec3::Zero();
  bool degenerate = false;  // zero translation, tnorm left at 0

  // 9 row-major rotation entries followed by the unit translation.
  std::array<double, 12> features() const {
    std::array<double, 12> f{};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) f[3 * a + b] = rotation(a, b);
    for (int a = 0; a < 3; ++a) f[9 + a] = tnorm(a);
    return f;
  }
};

inline PoseToken encode_pose(const RigidPose& p) {
  PoseToken tok;
  tok.rotation = p.rotation;
  const double n = p.translation.norm();
  if (n == 0.0) {
    tok.degenerate = true;
  } else {
    tok.tnorm = p.translation / n;
  }
  return tok;
}

enum class Modality : int { K1 = 0, K2 = 1, D1 = 2, D2 = 3, P12 = 4 };
inline constexpr int kModalityCount = 5;
inline constexpr std::array<const char*, kModalityCount> kModalityNames = {"K1", "K2", "D1", "D2", "P12"};

// Subset of the five auxiliary slots.
class ModalitySet {
 public:
  constexpr ModalitySet() = default;
  constexpr explicit ModalitySet(unsigned bits) : bits_(bits & 0x1fu) {}
  constexpr ModalitySet(std::initializer_list<Modality> ms) {
    for (auto m : ms) set(m);
  }

  static constexpr ModalitySet none() { return ModalitySet(0u); }
  static constexpr ModalitySet all() { return ModalitySet(0x1fu); }

  constexpr bool has(Modality m) const { return bits_ & (1u << static_cast<int>(m)); }
  constexpr void set(Modality m, bool on = true) {
    if (on) bits_ |= 1u << static_cast<int>(m);
    else bits_ &= ~(1u << static_cast<int>(m));
  }
  constexpr unsigned bits() const { return bits_; }
  constexpr int count() const { return std::popcount(bits_); }
  constexpr bool operator==(const ModalitySet&) const = default;

  std::string to_string() const {
    if (bits_ == 0) return "none";
    std::string s;
    for (int k = 0; k < kModalityCount; ++k) {
      if (!(bits_ & (1u << k))) continue;
      if (!s.empty()) s += "+";
      s += kModalityNames[k];
    }
    return s;
  }

 private:
  unsigned bits_ = 0;
};

// Omega: any subset of {K1, K2, D1, D2, P12}.
struct AuxiliaryBundle {
  std::optional<CameraIntrinsics> k1, k2;
  std::optional<DepthMap> d1, d2;
  std::optional<RigidPose> p12;

  ModalitySet present() const {
    ModalitySet s;
    s.set(Modality::K1, k1.has_value());
    s.set(Modality::K2, k2.has_value());
    s.set(Modality::D1, d1.has_value());
    s.set(Modality::D2, d2.has_value());
    s.set(Modality::P12, p12.has_value());
    return s;
  }

  AuxiliaryBundle restricted(ModalitySet keep) const {
    AuxiliaryBundle out;
    if (keep.has(Modality::K1)) out.k1 = k1;
    if (keep.has(Modality::K2)) out.k2 = k2;
    if (keep.has(Modality::D1)) out.d1 = d1;
    if (keep.has(Modality::D2)) out.d2 = d2;
    if (keep.has(Modality::P12)) out.p12 = p12;
    return out;
  }
};

// m ~ U{0..5}, then a uniformly random m-subset of the five slots.
inline ModalitySet sample_modality_subset(std::uint64_t seed) {
  Rng rng(seed);
  const auto m = static_cast<int>(rng.index(kModalityCount + 1));
  std::array<int, kModalityCount> slots = {0, 1, 2, 3, 4};
  ModalitySet out;
  for (int a = 0; a < m; ++a) {
    std::swap(slots[a], slots[a + rng.index(kModalityCount - a)]);
    out.set(static_cast<Modality>(slots[a]));
  }
  return out;
}

// Patch tokens, one row per patch (row-major patch grid); columns are the
// patch pixels row-major, channels innermost.
template <typename PixelFn>
Eigen::MatrixXd patchify(int width, int height, int patch, int channels, PixelFn&& pixel) {
  require(patch > 0 && width % patch == 0 && height % patch == 0, "patchify: dimensions must be divisible by the patch size");
  const int gw = width / patch, gh = height / patch;
  Eigen::MatrixXd tokens(gw * gh, patch * patch * channels);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const int t = py * gw + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < channels; ++c) tokens(t, col++) = pixel(px * patch + x, py * patch + y, c);
    }
  return tokens;
}

inline Eigen::MatrixXd patchify(const Grid<Vec3>& g, int patch) {
  return patchify(g.width(), g.height(), patch, 3, [&](int i, int j, int c) { return g(i, j)(c); });
}

inline Eigen::MatrixXd patchify(const NormalizedDepthInput& d, int patch) {
  return patchify(d.dprime.width(), d.dprime.height(), patch, 2,
                  [&](int i, int j, int c) { return c == 0 ? d.dprime(i, j) : static_cast<double>(d.mask(i, j)); });
}

}  // namespace pmap
