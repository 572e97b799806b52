// Global alignment of noisy pairwise pointmaps over a 5-camera ring.
#include <cstdio>

#include "pmap/align.hpp"
#include "pmap/synth.hpp"

using namespace pmap;

int main() {
  SynthOptions so{32, 32};
  so.principal_jitter = 0.0;
  const int views = 5;
  const auto mv = gen_multiview_scene(7, views, so);
  Rng rng(8);
  std::vector<PairEdge> edges;
  for (int i = 0; i < views; ++i)
    for (int j = 0; j < views; ++j) {
      if (i == j) continue;
      // each pair lives at its own arbitrary scale, with 0.5% noise
      auto p = mv.pair(i, j, rng.uniform(0.5, 2.0));
      for (auto* pm : {&p.x11, &p.x21, &p.x22})
        for (auto& x : pm->points.data()) x += 0.005 * x.norm() * Vec3(rng.normal(), rng.normal(), rng.normal());
      edges.push_back({i, j, std::move(p)});
    }
  const auto g = build_graph(views, std::move(edges));
  const auto scene = align(g, AlignOptions{300});
  std::printf("energy %.4g -> %.4g in %d iterations\n", scene.trace.front(), scene.energy, scene.iterations);
  for (int v = 0; v < views; ++v) {
    const auto gt = compose_relative(mv.poses[0], mv.poses[v]);
    const double rot = rotation_angle(scene.poses[v].rotation, gt.rotation) * 180.0 / M_PI;
    const double dir = v == 0 ? 0.0
                              : std::acos(std::clamp(scene.poses[v].translation.normalized().dot(gt.translation.normalized()),
                                                     -1.0, 1.0)) * 180.0 / M_PI;
    std::printf("camera %d: rot err %.3f deg, trans dir err %.3f deg, focal %.2f (gt %.2f)\n", v, rot, dir,
                scene.focals[v], mv.intrinsics[v].fx);
  }
  return 0;
}
