#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pmap/loss.hpp"
#include "pmap/solvers.hpp"

namespace pmap {

// Frame tag of pointmaps expressed in the shared world frame.
inline constexpr int kWorldFrame = -1;

// Ordered pair (i, j): prediction.x11 = X^{i,i}, x21 = X^{j,i} (both in
// frame i) and x22 = X^{j,j}.
struct PairEdge {
  int i = 0;
  int j = 0;
  PairPrediction prediction;
};

struct PairGraph {
  int images = 0;
  std::vector<PairEdge> edges;
  std::vector<std::pair<int, int>> dims;  // per image (width, height)
};

// Validates indices and shapes and checks connectivity. Edge order is the
// input order, which makes every downstream step deterministic.
inline PairGraph build_graph(int images, std::vector<PairEdge> edges) {
  require(images >= 2, "build_graph: need at least two images");
  require(!edges.empty(), "build_graph: no edges");
  PairGraph g;
  g.images = images;
  g.dims.assign(static_cast<std::size_t>(images), {0, 0});
  std::vector<int> parent(static_cast<std::size_t>(images));
  for (int k = 0; k < images; ++k) parent[k] = k;
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto claim = [&](int v, const PointMap& pm) {
    auto& d = g.dims[static_cast<std::size_t>(v)];
    const std::pair<int, int> wh{pm.width(), pm.height()};
    require(d == std::pair<int, int>{0, 0} || d == wh, "build_graph: inconsistent dimensions for image " + std::to_string(v));
    d = wh;
  };
  for (const auto& e : edges) {
    require(e.i >= 0 && e.j >= 0 && e.i < images && e.j < images && e.i != e.j, "build_graph: invalid edge indices");
    const auto& p = e.prediction;
    require(p.x11.points.same_shape(p.c11) && p.x21.points.same_shape(p.c21) && p.x22.points.same_shape(p.c22) &&
                p.x21.points.same_shape(p.x22.points),
            "build_graph: prediction and confidence shapes differ");
    claim(e.i, p.x11);
    claim(e.j, p.x21);
    parent[find(e.i)] = find(e.j);
  }
  for (int k = 1; k < images; ++k) require(find(k) == find(0), "build_graph: pair graph is disconnected");
  g.edges = std::move(edges);
  return g;
}

// Edge similarity y = sigma R x + tau, sigma = exp(log_scale).
struct EdgeTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double log_scale = 0.0;

  Vec3 apply(const Vec3& x) const { return std::exp(log_scale) * (rotation * x) + translation; }
};

// Free variables of the alignment energy.
struct AlignState {
  std::vector<PointMap> world;  // per image, frame kWorldFrame
  std::vector<EdgeTransform> edges;
};

struct GlobalScene {
  AlignState state;
  std::vector<ConfidenceMap> confidence;  // per image
  std::vector<RigidPose> poses;           // world to camera
  std::vector<double> focals;
  double energy = 0.0;
  std::vector<double> trace;  // energy after every accepted iteration, starting with the initial value
  int iterations = 0;
};

struct AlignOptions {
  int iters = 300;
  double lr = 0.1;
  int max_halvings = 40;
  std::size_t anchor = 0;  // edge whose pose stays fixed
};

namespace detail {

struct View {
  const PointMap* points;
  const ConfidenceMap* conf;
  int image;
};

inline std::array<View, 2> edge_views(const PairEdge& e) {
  return {View{&e.prediction.x11, &e.prediction.c11, e.i}, View{&e.prediction.x21, &e.prediction.c21, e.j}};
}

inline double mean_confidence(const PointMap& pm, const ConfidenceMap& c) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < c.size(); ++k)
    if (pm.valid[k]) s += c[k], ++n;
  return n ? s / static_cast<double>(n) : 0.0;
}

// Edge transform from the views of e whose world maps are known.
inline EdgeTransform fit_edge(const PairEdge& e, const std::vector<PointMap>& world, const std::vector<bool>& placed) {
  std::vector<Vec3> src, dst;
  std::vector<double> w;
  for (const auto& v : edge_views(e)) {
    if (!placed[static_cast<std::size_t>(v.image)]) continue;
    const auto& wm = world[static_cast<std::size_t>(v.image)];
    for (std::size_t k = 0; k < v.points->points.size(); ++k) {
      if (!v.points->valid[k] || !wm.valid[k]) continue;
      src.push_back(v.points->points[k]);
      dst.push_back(wm.points[k]);
      w.push_back((*v.conf)[k]);
    }
  }
  const auto s = weighted_similarity(src, dst, w);
  return {s.rotation, s.scale * s.translation, std::log(s.scale)};
}

}  // namespace detail

// Energy sum_e sum_{v in e} sum_p C ||chi_v(p) - (sigma_e R_e X^{v,e}(p) + tau_e)||.
inline double align_energy(const PairGraph& g, const AlignState& s) {
  std::vector<double> per_edge(g.edges.size());
  parallel_for(g.edges.size(), [&](std::size_t n) {
    std::vector<double> terms;
    const auto& t = s.edges[n];
    for (const auto& v : detail::edge_views(g.edges[n])) {
      const auto& wm = s.world[static_cast<std::size_t>(v.image)];
      for (std::size_t k = 0; k < v.points->points.size(); ++k)
        if (v.points->valid[k]) terms.push_back((*v.conf)[k] * (wm.points[k] - t.apply(v.points->points[k])).norm());
    }
    per_edge[n] = pairwise_sum(terms);
  });
  return pairwise_sum(per_edge);
}

// Spanning-tree chaining of pairwise similarities from the anchor edge,
// then world maps from each image's most confident edge. Scales are
// normalized so that their product is 1.
inline AlignState initialize_alignment(const PairGraph& g, std::size_t anchor = 0) {
  require(anchor < g.edges.size(), "align: anchor edge out of range");
  const std::size_t n_img = static_cast<std::size_t>(g.images);
  AlignState s;
  s.edges.assign(g.edges.size(), EdgeTransform{});
  for (std::size_t v = 0; v < n_img; ++v)
    s.world.emplace_back(g.dims[v].first, g.dims[v].second, static_cast<int>(v), kWorldFrame);
  std::vector<bool> placed(n_img, false), edge_done(g.edges.size(), false);
  auto place_views = [&](std::size_t n) {
    for (const auto& v : detail::edge_views(g.edges[n])) {
      if (placed[static_cast<std::size_t>(v.image)]) continue;
      auto& wm = s.world[static_cast<std::size_t>(v.image)];
      for (std::size_t k = 0; k < v.points->points.size(); ++k)
        if (v.points->valid[k]) {
          wm.points[k] = s.edges[n].apply(v.points->points[k]);
          wm.valid[k] = 1;
        }
      placed[static_cast<std::size_t>(v.image)] = true;
    }
  };
  std::vector<double> edge_conf;
  for (const auto& e : g.edges)
    edge_conf.push_back(detail::mean_confidence(e.prediction.x11, e.prediction.c11) +
                        detail::mean_confidence(e.prediction.x21, e.prediction.c21));
  edge_done[anchor] = true;
  place_views(anchor);
  for (;;) {
    std::optional<std::size_t> best;
    for (std::size_t n = 0; n < g.edges.size(); ++n) {
      if (edge_done[n]) continue;
      if (!placed[static_cast<std::size_t>(g.edges[n].i)] && !placed[static_cast<std::size_t>(g.edges[n].j)]) continue;
      if (!best || edge_conf[n] > edge_conf[*best]) best = n;
    }
    if (!best) break;
    s.edges[*best] = detail::fit_edge(g.edges[*best], s.world, placed);
    edge_done[*best] = true;
    place_views(*best);
  }
  // world maps from the most confident edge of each image
  std::vector<double> best_conf(n_img, -1.0);
  for (std::size_t n = 0; n < g.edges.size(); ++n)
    for (const auto& v : detail::edge_views(g.edges[n])) {
      const auto vi = static_cast<std::size_t>(v.image);
      const double c = detail::mean_confidence(*v.points, *v.conf);
      if (c <= best_conf[vi]) continue;
      best_conf[vi] = c;
      auto& wm = s.world[vi];
      wm.valid.fill(0);
      for (std::size_t k = 0; k < v.points->points.size(); ++k)
        if (v.points->valid[k]) {
          wm.points[k] = s.edges[n].apply(v.points->points[k]);
          wm.valid[k] = 1;
        }
    }
  // pixels seen by other edges only
  for (std::size_t n = 0; n < g.edges.size(); ++n)
    for (const auto& v : detail::edge_views(g.edges[n])) {
      auto& wm = s.world[static_cast<std::size_t>(v.image)];
      for (std::size_t k = 0; k < v.points->points.size(); ++k)
        if (v.points->valid[k] && !wm.valid[k]) {
          wm.points[k] = s.edges[n].apply(v.points->points[k]);
          wm.valid[k] = 1;
        }
    }
  double mean_log = 0.0;
  for (const auto& e : s.edges) mean_log += e.log_scale;
  mean_log /= static_cast<double>(s.edges.size());
  const double g_scale = std::exp(-mean_log);
  for (auto& e : s.edges) {
    e.log_scale -= mean_log;
    e.translation *= g_scale;
  }
  for (auto& wm : s.world)
    for (std::size_t k = 0; k < wm.points.size(); ++k) wm.points[k] *= g_scale;
  return s;
}

namespace detail {

struct AlignGradient {
  std::vector<Grid<Vec3>> world;
  std::vector<Grid<double>> world_weight;
  std::vector<Vec3> rot, trans;
  std::vector<double> scale, edge_weight, edge_sq;
};

inline AlignGradient align_gradient(const PairGraph& g, const AlignState& s) {
  const std::size_t ne = g.edges.size();
  struct EdgePart {
    std::array<Grid<Vec3>, 2> dworld;
    std::array<Grid<double>, 2> weight;
    Vec3 rot = Vec3::Zero(), trans = Vec3::Zero();
    double scale = 0.0, w = 0.0, sq = 0.0;
  };
  std::vector<EdgePart> parts(ne);
  parallel_for(ne, [&](std::size_t n) {
    const auto& t = s.edges[n];
    const double sigma = std::exp(t.log_scale);
    auto& part = parts[n];
    const auto views = edge_views(g.edges[n]);
    for (int vi = 0; vi < 2; ++vi) {
      const auto& v = views[static_cast<std::size_t>(vi)];
      const auto& wm = s.world[static_cast<std::size_t>(v.image)];
      part.dworld[vi] = Grid<Vec3>(wm.width(), wm.height(), Vec3::Zero());
      part.weight[vi] = Grid<double>(wm.width(), wm.height(), 0.0);
      std::vector<Vec3> rot_terms, trans_terms;
      std::vector<double> scale_terms, w_terms, sq_terms;
      for (std::size_t k = 0; k < v.points->points.size(); ++k) {
        if (!v.points->valid[k]) continue;
        const double c = (*v.conf)[k];
        const Vec3 a = sigma * (t.rotation * v.points->points[k]);
        const Vec3 r = wm.points[k] - (a + t.translation);
        const double len = r.norm();
        const Vec3 u = len > 0.0 ? Vec3(r / len) : Vec3::Zero();
        part.dworld[vi][k] = c * u;
        part.weight[vi][k] = c;
        rot_terms.push_back(c * u.cross(a));
        trans_terms.push_back(-c * u);
        scale_terms.push_back(-c * u.dot(a));
        w_terms.push_back(c);
        sq_terms.push_back(c * a.squaredNorm());
      }
      for (int d = 0; d < 3; ++d) {
        part.rot(d) += pairwise_sum(rot_terms.begin(), rot_terms.size(), [d](const Vec3& x) { return x(d); });
        part.trans(d) += pairwise_sum(trans_terms.begin(), trans_terms.size(), [d](const Vec3& x) { return x(d); });
      }
      part.scale += pairwise_sum(scale_terms);
      part.w += pairwise_sum(w_terms);
      part.sq += pairwise_sum(sq_terms);
    }
  });
  AlignGradient out;
  for (const auto& wm : s.world) {
    out.world.emplace_back(wm.width(), wm.height(), Vec3::Zero());
    out.world_weight.emplace_back(wm.width(), wm.height(), 0.0);
  }
  for (std::size_t n = 0; n < ne; ++n) {
    const auto views = edge_views(g.edges[n]);
    for (int vi = 0; vi < 2; ++vi) {
      const auto img = static_cast<std::size_t>(views[static_cast<std::size_t>(vi)].image);
      for (std::size_t k = 0; k < out.world[img].size(); ++k) {
        out.world[img][k] += parts[n].dworld[vi][k];
        out.world_weight[img][k] += parts[n].weight[vi][k];
      }
    }
    out.rot.push_back(parts[n].rot);
    out.trans.push_back(parts[n].trans);
    out.scale.push_back(parts[n].scale);
    out.edge_weight.push_back(parts[n].w);
    out.edge_sq.push_back(parts[n].sq);
  }
  return out;
}

// Preconditioned step of size lr: each block is divided by the total
// confidence of its terms (times the squared lever arm for rotation and scale).
inline AlignState align_step(const AlignState& s, const AlignGradient& g, double lr, std::size_t anchor) {
  AlignState out = s;
  for (std::size_t v = 0; v < out.world.size(); ++v)
    for (std::size_t k = 0; k < out.world[v].points.size(); ++k)
      if (g.world_weight[v][k] > 0.0) out.world[v].points[k] -= lr * g.world[v][k] / g.world_weight[v][k];
  double mean_log = 0.0;
  for (std::size_t n = 0; n < out.edges.size(); ++n) {
    auto& e = out.edges[n];
    if (g.edge_weight[n] > 0.0 && g.edge_sq[n] > 0.0) {
      e.log_scale -= lr * g.scale[n] / std::sqrt(g.edge_sq[n] * g.edge_weight[n]);
      if (n != anchor) {
        e.rotation = rotation_exp(-lr * g.rot[n] / std::sqrt(g.edge_sq[n] * g.edge_weight[n])) * e.rotation;
        e.translation -= lr * g.trans[n] / g.edge_weight[n];
      }
    }
    mean_log += e.log_scale;
  }
  mean_log /= static_cast<double>(out.edges.size());
  for (auto& e : out.edges) e.log_scale -= mean_log;
  return out;
}

}  // namespace detail

// World-to-camera pose and focal of image v from its most confident
// self-frame map (x11 for the first view of an edge, x22 for the second).
inline std::pair<RigidPose, double> camera_from_world(const PairGraph& g, const AlignState& s, int v,
                                                      std::optional<Vec2> principal = std::nullopt) {
  const PointMap* self = nullptr;
  const ConfidenceMap* conf = nullptr;
  double best = -1.0;
  for (const auto& e : g.edges) {
    const PointMap* pm = e.i == v ? &e.prediction.x11 : e.j == v ? &e.prediction.x22 : nullptr;
    const ConfidenceMap* c = e.i == v ? &e.prediction.c11 : &e.prediction.c22;
    if (!pm) continue;
    const double mc = detail::mean_confidence(*pm, *c);
    if (mc > best) best = mc, self = pm, conf = c;
  }
  require(self != nullptr, "align: image " + std::to_string(v) + " has no edge");
  const auto& wm = s.world[static_cast<std::size_t>(v)];
  std::vector<Vec3> src, dst;
  std::vector<double> w;
  for (std::size_t k = 0; k < wm.points.size(); ++k)
    if (wm.valid[k] && self->valid[k]) {
      src.push_back(self->points[k]);
      dst.push_back(wm.points[k]);
      w.push_back((*conf)[k]);
    }
  const auto sim = weighted_similarity(src, dst, w);
  const Vec3 center = sim.scale * sim.translation;
  const RigidPose pose{sim.rotation.transpose(), -sim.rotation.transpose() * center};
  const Vec2 pp = principal.value_or(Vec2((wm.width() - 1) / 2.0, (wm.height() - 1) / 2.0));
  return {pose, weiszfeld_focal(*self, pp).focal};
}

// Gradient descent on align_energy with halving-on-increase steps, then
// per-camera pose and focal extraction. Image 0 ends at the identity pose.
inline GlobalScene align(const PairGraph& g, const AlignOptions& opt = {},
                         std::optional<AlignState> init = std::nullopt) {
  require(opt.iters >= 0 && opt.lr > 0.0, "align: invalid options");
  AlignState s = init ? std::move(*init) : initialize_alignment(g, opt.anchor);
  require(s.world.size() == static_cast<std::size_t>(g.images) && s.edges.size() == g.edges.size(),
          "align: initial state does not match the graph");
  GlobalScene out;
  double energy = align_energy(g, s);
  if (!std::isfinite(energy)) throw NumericDivergence("align: non-finite initial energy");
  out.trace.push_back(energy);
  double lr = opt.lr;
  int it = 0;
  for (; it < opt.iters && energy > 0.0; ++it) {
    const auto grad = detail::align_gradient(g, s);
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, lr *= 0.5) {
      auto cand = detail::align_step(s, grad, lr, opt.anchor);
      const double e = align_energy(g, cand);
      if (std::isfinite(e) && e <= energy) {
        s = std::move(cand);
        energy = e;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    out.trace.push_back(energy);
  }
  out.iterations = it;
  out.energy = energy;

  std::vector<RigidPose> cams;
  for (int v = 0; v < g.images; ++v) {
    auto [pose, focal] = camera_from_world(g, s, v);
    cams.push_back(pose);
    out.focals.push_back(focal);
  }
  // gauge: world frame = camera 0
  const RigidPose p0 = cams[0];
  for (auto& wm : s.world)
    for (std::size_t k = 0; k < wm.points.size(); ++k) wm.points[k] = p0 * wm.points[k];
  for (auto& e : s.edges) {
    e.rotation = p0.rotation * e.rotation;
    e.translation = p0 * e.translation;
  }
  for (auto& c : cams) out.poses.push_back(c * p0.inverse());
  out.poses[0] = RigidPose::identity();
  for (std::size_t v = 0; v < s.world.size(); ++v) {
    ConfidenceMap c(s.world[v].width(), s.world[v].height(), 0.0);
    for (const auto& e : g.edges)
      for (const auto& view : detail::edge_views(e))
        if (static_cast<std::size_t>(view.image) == v)
          for (std::size_t k = 0; k < c.size(); ++k)
            if (view.points->valid[k]) c[k] = std::max(c[k], (*view.conf)[k]);
    out.confidence.push_back(std::move(c));
  }
  out.state = std::move(s);
  return out;
}

// Depth of image v: z of its world pointmap in camera v's frame.
inline DepthMap extract_depth(const GlobalScene& scene, int v) {
  require(v >= 0 && static_cast<std::size_t>(v) < scene.state.world.size() && static_cast<std::size_t>(v) < scene.poses.size(),
          "extract_depth: image index out of range");
  const auto& wm = scene.state.world[static_cast<std::size_t>(v)];
  DepthMap d(wm.width(), wm.height());
  for (std::size_t k = 0; k < wm.points.size(); ++k) {
    if (!wm.valid[k]) continue;
    const double z = (scene.poses[static_cast<std::size_t>(v)] * wm.points[k]).z();
    if (z > 0.0) {
      d.values[k] = z;
      d.mask[k] = 1;
    }
  }
  return d;
}

}  // namespace pmap
