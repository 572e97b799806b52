#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "pmap/conditioning.hpp"
#include "pmap/metrics.hpp"

namespace pmap {

struct TilePrediction {
  CropSpec crop;
  PointMap pointmap;
  ConfidenceMap confidence;
  std::optional<double> scale;
};

namespace detail {

inline std::vector<int> tile_offsets(int parent, int tile, int overlap) {
  if (tile == parent) return {0};
  const int step = tile - overlap;
  const int n = (parent - tile + step - 1) / step + 1;
  std::vector<int> off;
  for (int k = 0; k + 1 < n; ++k) off.push_back(k * step);
  off.push_back(parent - tile);
  return off;
}

}  // namespace detail

// Row-major grid of tiles covering the parent image; neighbours share at
// least min_overlap pixels and the last row and column touch the border.
inline std::vector<CropSpec> schedule_crops(const CameraIntrinsics& parent, int tile_w, int tile_h, int min_overlap) {
  require(parent.width > 0 && parent.height > 0, "schedule_crops: empty parent image");
  require(tile_w > 0 && tile_h > 0 && tile_w <= parent.width && tile_h <= parent.height,
          "schedule_crops: tile must fit inside the parent image");
  require(min_overlap >= 0, "schedule_crops: overlap must be nonnegative");
  require((tile_w == parent.width || min_overlap < tile_w) && (tile_h == parent.height || min_overlap < tile_h),
          "schedule_crops: overlap must be smaller than the tile");
  std::vector<CropSpec> out;
  for (int y : detail::tile_offsets(parent.height, tile_h, min_overlap))
    for (int x : detail::tile_offsets(parent.width, tile_w, min_overlap)) out.push_back({x, y, tile_w, tile_h, parent});
  return out;
}

namespace detail {

struct Overlap {
  int x0, y0, x1, y1;  // parent pixel box, exclusive upper bounds
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

inline Overlap overlap_box(const CropSpec& a, const CropSpec& b) {
  return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x0 + a.w, b.x0 + b.w), std::min(a.y0 + a.h, b.y0 + b.h)};
}

// Depth ratios z_a / z_b over parent pixels valid in both tiles.
inline std::vector<double> overlap_ratios(const TilePrediction& a, const TilePrediction& b) {
  std::vector<double> r;
  const auto box = overlap_box(a.crop, b.crop);
  if (box.empty()) return r;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) {
      const int ia = x - a.crop.x0, ja = y - a.crop.y0, ib = x - b.crop.x0, jb = y - b.crop.y0;
      if (!a.pointmap.valid(ia, ja) || !b.pointmap.valid(ib, jb)) continue;
      const double za = a.pointmap.points(ia, ja).z(), zb = b.pointmap.points(ib, jb).z();
      if (za > 0.0 && zb > 0.0) r.push_back(za / zb);
    }
  return r;
}

}  // namespace detail

// Scale per tile relative to `reference`, propagated breadth-first along
// the overlap graph, larger overlaps first.
inline std::vector<double> resolve_scales(const std::vector<TilePrediction>& tiles, std::size_t reference) {
  require(reference < tiles.size(), "resolve_scales: reference tile out of range");
  for (const auto& t : tiles)
    require(t.pointmap.points.width() == t.crop.w && t.pointmap.points.height() == t.crop.h &&
                t.confidence.same_shape(t.pointmap.points),
            "resolve_scales: tile prediction does not match its crop");
  const std::size_t n = tiles.size();
  std::vector<std::vector<std::pair<long, std::size_t>>> adj(n);  // (overlap area, neighbour)
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const auto box = detail::overlap_box(tiles[a].crop, tiles[b].crop);
      if (!box.empty()) adj[a].push_back({static_cast<long>(box.x1 - box.x0) * (box.y1 - box.y0), b});
    }
  for (auto& v : adj)
    std::stable_sort(v.begin(), v.end(), [](const auto& l, const auto& r) { return l.first > r.first; });

  std::vector<double> scale(n, 0.0);
  std::vector<bool> seen(n, false);
  std::deque<std::size_t> queue{reference};
  seen[reference] = true;
  scale[reference] = 1.0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (const auto& [area, v] : adj[u]) {
      if (seen[v]) continue;
      const auto ratios = detail::overlap_ratios(tiles[u], tiles[v]);
      require(!ratios.empty(), "resolve_scales: tiles " + std::to_string(u) + " and " + std::to_string(v) +
                                   " share no valid pixels");
      scale[v] = scale[u] * median_of(ratios);
      seen[v] = true;
      queue.push_back(v);
    }
  }
  require(std::all_of(seen.begin(), seen.end(), [](bool s) { return s; }), "resolve_scales: overlap graph is disconnected");
  return scale;
}

struct BlendResult {
  PointMap points;
  ConfidenceMap confidence;
};

// Confidence-weighted mean of the scaled tile points per parent pixel;
// output confidence is the max over covering tiles.
inline BlendResult blend(const std::vector<TilePrediction>& tiles, int width, int height, bool winner_take_all = false) {
  require(!tiles.empty(), "blend: no tiles");
  BlendResult out{PointMap(width, height, tiles[0].pointmap.subject, tiles[0].pointmap.frame),
                  ConfidenceMap(width, height, 0.0)};
  Grid<Vec3> acc(width, height, Vec3::Zero()), first(width, height, Vec3::Zero());
  Grid<double> wsum(width, height, 0.0);
  Grid<int> count(width, height, 0);
  for (const auto& t : tiles) {
    require(t.scale.has_value(), "blend: tile scale not resolved");
    require(t.crop.x0 >= 0 && t.crop.y0 >= 0 && t.crop.x0 + t.crop.w <= width && t.crop.y0 + t.crop.h <= height,
            "blend: tile outside the parent image");
    for (int j = 0; j < t.crop.h; ++j)
      for (int i = 0; i < t.crop.w; ++i) {
        if (!t.pointmap.valid(i, j)) continue;
        const int x = t.crop.x0 + i, y = t.crop.y0 + j;
        const Vec3 p = *t.scale * t.pointmap.points(i, j);
        const double c = t.confidence(i, j);
        if (count(x, y) == 0 || (winner_take_all && c > out.confidence(x, y))) first(x, y) = p;
        ++count(x, y);
        acc(x, y) += c * p;
        wsum(x, y) += c;
        out.confidence(x, y) = std::max(out.confidence(x, y), c);
      }
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (count(x, y) == 0) continue;
      const bool single = count(x, y) == 1 || winner_take_all;
      out.points.set(x, y, single || wsum(x, y) <= 0.0 ? first(x, y) : Vec3(acc(x, y) / wsum(x, y)));
    }
  return out;
}

// Box-filter resize by an integer factor.
inline RgbImage downsample(const RgbImage& img, int factor) {
  require(factor >= 1 && img.width() % factor == 0 && img.height() % factor == 0,
          "downsample: image dimensions must be divisible by the factor");
  RgbImage out(img.width() / factor, img.height() / factor, Vec3::Zero());
  for (int j = 0; j < img.height(); ++j)
    for (int i = 0; i < img.width(); ++i) out(i / factor, j / factor) += img(i, j) / double(factor * factor);
  return out;
}

// Intrinsics of an image downsampled by `factor` with pixel centers at integer coordinates.
inline CameraIntrinsics downsampled(const CameraIntrinsics& k, int factor) {
  const double f = factor;
  return {k.fx / f, k.fy / f, (k.cx - (f - 1) / 2.0) / f, (k.cy - (f - 1) / 2.0) / f, k.width / factor,
          k.height / factor};
}

}  // namespace pmap
