#pragma once

#include <optional>
#include <vector>

#include "pmap/net.hpp"
#include "pmap/stitch.hpp"

namespace pmap {

struct HighresOptions {
  int tile_w = 32;
  int tile_h = 32;
  int overlap = 8;
  std::size_t reference = 0;
  bool winner_take_all = false;
};

struct HighresResult {
  BlendResult blended;
  std::vector<TilePrediction> tiles;
  std::vector<double> scales;
};

// Sliding-window inference: every tile is view 1 with its crop
// intrinsics, view 2 is the whole image downsampled to the tile size.
// A coarse depth of the full image, when given, conditions each tile.
template <typename Scalar>
HighresResult infer_highres(ToyNet<Scalar>& net, const RgbImage& img, const CameraIntrinsics& k,
                            const HighresOptions& opt, const std::optional<DepthMap>& coarse = std::nullopt) {
  require(img.width() == k.width && img.height() == k.height, "infer_highres: intrinsics do not match the image");
  require(opt.tile_w > 0 && opt.tile_h > 0 && img.width() % opt.tile_w == 0 && img.height() % opt.tile_h == 0 &&
              img.width() / opt.tile_w == img.height() / opt.tile_h,
          "infer_highres: image must be an integer multiple of the tile size, same factor on both axes");
  require(!coarse || coarse->values.same_shape(img), "infer_highres: coarse depth does not match the image");
  const int factor = img.width() / opt.tile_w;
  const RgbImage low = downsample(img, factor);
  const CameraIntrinsics k_low = downsampled(k, factor);
  HighresResult out;
  const auto crops = schedule_crops(k, opt.tile_w, opt.tile_h, opt.overlap);
  require(opt.reference < crops.size(), "infer_highres: reference tile out of range");
  out.tiles.resize(crops.size());
  parallel_for(crops.size(), [&](std::size_t n) {
    const auto& c = crops[n];
    AuxiliaryBundle aux;
    aux.k1 = c.intrinsics();
    aux.k2 = k_low;
    if (coarse) {
      const auto d = coarse->crop(c.x0, c.y0, c.w, c.h);
      if (d.valid_count() > 0) aux.d1 = d;
    }
    const auto pred = net.predict(make_inputs(img.crop(c.x0, c.y0, c.w, c.h), low, aux));
    out.tiles[n] = {c, pred.x11, pred.c11, std::nullopt};
  });
  out.scales = resolve_scales(out.tiles, opt.reference);
  for (std::size_t n = 0; n < out.tiles.size(); ++n) out.tiles[n].scale = out.scales[n];
  out.blended = blend(out.tiles, img.width(), img.height(), opt.winner_take_all);
  return out;
}

}  // namespace pmap
