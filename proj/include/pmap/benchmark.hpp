#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmap/align.hpp"
#include "pmap/guiding.hpp"
#include "pmap/highres.hpp"
#include "pmap/io.hpp"
#include "pmap/train.hpp"

namespace pmap {

inline const std::vector<std::string>& benchmark_suites() {
  static const std::vector<std::string> names{"guiding-trend", "stitch", "pose", "align"};
  return names;
}

struct BenchmarkOptions {
  std::string suite;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: no artifacts
  std::optional<std::string> checkpoint;
  int samples = 0;  // 0: suite default
};

struct BenchmarkResult {
  std::string suite;
  std::vector<MetricReport> rows;
  nlohmann::ordered_json report;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size()); }

// Horizontal bars, one group per row, for the percentage metrics that are present.
inline std::string svg_bars(const std::string& title, const std::vector<MetricReport>& rows) {
  struct Series {
    const char* name;
    std::optional<double> MetricReport::*field;
    const char* color;
  };
  const Series series[] = {{"depth tau", &MetricReport::depth_tau, "#4c72b0"},
                           {"focal acc", &MetricReport::focal_acc, "#55a868"},
                           {"RRA", &MetricReport::rra_at, "#c44e52"},
                           {"mAA30", &MetricReport::maa30, "#8172b2"}};
  const int bar = 7, label_w = 150, plot_w = 400;
  int y = 40;
  std::ostringstream body;
  for (const auto& r : rows) {
    body << "<text x=\"4\" y=\"" << y + 10 << "\" font-size=\"11\">" << r.label << "</text>\n";
    for (const auto& s : series) {
      if (!(r.*(s.field))) continue;
      const double v = *(r.*(s.field));
      body << "<rect x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << v / 100.0 * plot_w << "\" height=\"" << bar
           << "\" fill=\"" << s.color << "\"/>\n";
      y += bar + 1;
    }
    y += 8;
  }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + plot_w + 20 << "\" height=\"" << y + 30
      << "\">\n<text x=\"4\" y=\"16\" font-size=\"13\">" << title << " (bars: % of 100)</text>\n";
  int lx = 4;
  for (const auto& s : series) {
    svg << "<rect x=\"" << lx << "\" y=\"" << y + 10 << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>"
        << "<text x=\"" << lx + 14 << "\" y=\"" << y + 19 << "\" font-size=\"11\">" << s.name << "</text>\n";
    lx += 100;
  }
  svg << body.str() << "</svg>\n";
  return svg.str();
}

inline std::vector<MetricReport> suite_guiding(const BenchmarkOptions& opt) {
  if (!opt.checkpoint) throw InvalidInput("guiding-trend needs a checkpoint: run `pmap train-toy --out CKPT` and pass --ckpt CKPT");
  auto net = checkpoint::load<float>(*opt.checkpoint);
  GuidanceOptions g;
  if (opt.samples > 0) g.pairs = opt.samples;
  return evaluate_guidance(net, opt.seed, g);
}

// Pose from ground-truth pointmaps: closed-form Procrustes against PnP-RANSAC.
inline std::vector<MetricReport> suite_pose(const BenchmarkOptions& opt) {
  const int n = opt.samples > 0 ? opt.samples : 50;
  std::vector<AngularError> proc(static_cast<std::size_t>(n)), pnp(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const auto s = gen_synthetic_pair(mix_seed(mix_seed(opt.seed, 0x9053), k), SynthOptions{64, 64});
    const ConfidenceMap ones(s.x22.width(), s.x22.height(), 1.0);
    const auto p = procrustes_pose(s.x22, s.x21, ones, ones);
    const auto e = pose_metrics(p, s.p12.inverse());
    proc[k] = {e.rra_deg, e.rta_defined ? e.rta_deg : 180.0};
    Grid<Vec2> px(s.x21.width(), s.x21.height(), Vec2::Zero());
    for (int j = 0; j < px.height(); ++j)
      for (int i = 0; i < px.width(); ++i) px(i, j) = Vec2(i, j);
    PnpOptions po;
    po.seed = mix_seed(opt.seed, k);
    const auto q = pnp_ransac_pose(s.x21, px, s.k2, po);
    if (q) {
      const auto f = pose_metrics(*q, s.p12);
      pnp[k] = {f.rra_deg, f.rta_defined ? f.rta_deg : 180.0};
    } else {
      pnp[k] = {180.0, 180.0};
    }
  });
  auto row = [&](const std::string& label, const std::vector<AngularError>& v) {
    std::vector<double> rot, trans;
    for (const auto& e : v) rot.push_back(e.rot_deg), trans.push_back(e.trans_deg);
    MetricReport r;
    r.label = label;
    r.samples = v.size();
    r.rra_at = accuracy_at(rot, 2.0);
    r.rta_at = accuracy_at(trans, 2.0);
    r.maa30 = maa(v);
    return r;
  };
  return {row("procrustes", proc), row("pnp-ransac", pnp)};
}

// Stitching: oracle tiles with random scales and, given a checkpoint,
// network tiles against single low-resolution inference.
inline std::vector<MetricReport> suite_stitch(const BenchmarkOptions& opt) {
  const int n = opt.samples > 0 ? opt.samples : 20;
  std::vector<DepthErrors> oracle(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    Rng rng(mix_seed(opt.seed, 0x5717 + k));
    const auto s = gen_synthetic_pair(mix_seed(mix_seed(opt.seed, 0x5717), k), SynthOptions{80, 64});
    const auto crops = schedule_crops(s.k1, 48, 48, 12);
    std::vector<TilePrediction> tiles;
    for (const auto& c : crops)
      tiles.push_back({c, s.x11.crop(c.x0, c.y0, c.w, c.h).scaled(rng.uniform(0.2, 5.0)), ConfidenceMap(c.w, c.h, 1.0), {}});
    const auto scales = resolve_scales(tiles, rng.index(tiles.size()));
    for (std::size_t t = 0; t < tiles.size(); ++t) tiles[t].scale = scales[t];
    oracle[k] = depth_metrics(blend(tiles, 80, 64).points.depth(), s.d1, DepthAlign::Median);
  });
  auto row = [](const std::string& label, const std::vector<DepthErrors>& v) {
    std::vector<double> rel, tau;
    for (const auto& e : v) rel.push_back(e.rel), tau.push_back(e.tau);
    MetricReport r;
    r.label = label;
    r.samples = v.size();
    r.depth_rel = mean_of(rel);
    r.depth_tau = mean_of(tau);
    return r;
  };
  std::vector<MetricReport> rows{row("oracle", oracle)};
  if (!opt.checkpoint) return rows;
  auto net = checkpoint::load<float>(*opt.checkpoint);
  std::vector<DepthErrors> tiled(static_cast<std::size_t>(n)), low(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    const auto s = gen_synthetic_pair(mix_seed(mix_seed(opt.seed, 0x5718), k), SynthOptions{64, 64});
    const auto hr = infer_highres(net, s.img1, s.k1, HighresOptions{32, 32, 8, 0, false});
    tiled[k] = depth_metrics(hr.blended.points.depth(), s.d1, DepthAlign::Median);
    // whole image at tile resolution, nearest-neighbour upsampled
    const auto small = downsample(s.img1, 2);
    const auto kl = downsampled(s.k1, 2);
    AuxiliaryBundle aux;
    aux.k1 = kl;
    aux.k2 = kl;
    const auto pred = net.predict(make_inputs(small, small, aux));
    const auto dl = pred.x11.depth();
    DepthMap up(64, 64);
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) {
        up.values(i, j) = dl.values(i / 2, j / 2);
        up.mask(i, j) = dl.mask(i / 2, j / 2);
      }
    low[k] = depth_metrics(up, s.d1, DepthAlign::Median);
  }
  rows.push_back(row("network-tiles", tiled));
  rows.push_back(row("network-lowres", low));
  return rows;
}

// Global alignment of noisy pairwise maps over 5-camera scenes.
inline std::vector<MetricReport> suite_align(const BenchmarkOptions& opt) {
  const int n = opt.samples > 0 ? opt.samples : 4;
  const int views = 5;
  std::vector<AngularError> errs;
  std::vector<double> rel, tau, fp, fg;
  for (int s = 0; s < n; ++s) {
    SynthOptions so{32, 32};
    so.principal_jitter = 0.0;
    const auto mv = gen_multiview_scene(mix_seed(mix_seed(opt.seed, 0xa119), s), views, so);
    Rng rng(mix_seed(opt.seed, 0xa11a + s));
    std::vector<PairEdge> edges;
    for (int i = 0; i < views; ++i)
      for (int j = 0; j < views; ++j) {
        if (i == j) continue;
        auto p = mv.pair(i, j, rng.uniform(0.5, 2.0));
        for (auto* pm : {&p.x11, &p.x21, &p.x22})
          for (std::size_t k = 0; k < pm->points.size(); ++k)
            pm->points[k] += 0.003 * pm->points[k].norm() * Vec3(rng.normal(), rng.normal(), rng.normal());
        edges.push_back({i, j, std::move(p)});
      }
    const auto scene = align(build_graph(views, std::move(edges)), AlignOptions{200});
    for (int v = 1; v < views; ++v) {
      // scene.poses[0] is the identity after the gauge fix
      const auto e = pose_metrics(ScaledPose{scene.poses[v].rotation, scene.poses[v].translation, 1.0},
                                  compose_relative(mv.poses[0], mv.poses[v]));
      errs.push_back({e.rra_deg, e.rta_defined ? e.rta_deg : 180.0});
    }
    for (int v = 0; v < views; ++v) {
      const auto d = depth_metrics(extract_depth(scene, v), mv.depths[v], DepthAlign::Median);
      rel.push_back(d.rel);
      tau.push_back(d.tau);
      fp.push_back(scene.focals[v] > 0 ? scene.focals[v] : 1e-12);
      fg.push_back(mv.intrinsics[v].fx);
    }
  }
  std::vector<double> rot, trans;
  for (const auto& e : errs) rot.push_back(e.rot_deg), trans.push_back(e.trans_deg);
  MetricReport r;
  r.label = "align-5view";
  r.samples = static_cast<std::size_t>(n);
  r.depth_rel = mean_of(rel);
  r.depth_tau = mean_of(tau);
  r.focal_acc = focal_accuracy(fp, fg);
  r.rra_at = accuracy_at(rot, 2.0);
  r.rta_at = accuracy_at(trans, 2.0);
  r.maa30 = maa(errs);
  return {r};
}

}  // namespace detail

// Runs one suite; with out_dir set, writes <suite>.json and <suite>.svg there.
inline BenchmarkResult run_benchmark(const BenchmarkOptions& opt) {
  BenchmarkResult res;
  res.suite = opt.suite;
  if (opt.suite == "guiding-trend") res.rows = detail::suite_guiding(opt);
  else if (opt.suite == "pose") res.rows = detail::suite_pose(opt);
  else if (opt.suite == "stitch") res.rows = detail::suite_stitch(opt);
  else if (opt.suite == "align") res.rows = detail::suite_align(opt);
  else throw InvalidInput("unknown suite '" + opt.suite + "' (guiding-trend, stitch, pose, align)");
  res.report["suite"] = opt.suite;
  res.report["seed"] = opt.seed;
  res.report["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : res.rows) res.report["rows"].push_back(to_json(r));
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    io::write_json(opt.out_dir / (opt.suite + ".json"), res.report);
    std::ofstream svg(opt.out_dir / (opt.suite + ".svg"));
    svg << detail::svg_bars(opt.suite, res.rows);
  }
  return res;
}

}  // namespace pmap
