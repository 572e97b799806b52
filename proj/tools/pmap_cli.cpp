#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pmap/align.hpp"
#include "pmap/benchmark.hpp"
#include "pmap/highres.hpp"
#include "pmap/io.hpp"
#include "pmap/train.hpp"

namespace fs = std::filesystem;
using namespace pmap;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

std::pair<int, int> parse_size(const std::string& s) {
  int w = 0, h = 0;
  char x = 0, tail = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &tail) != 3 || (x != 'x' && x != 'X') || w <= 0 || h <= 0)
    throw InvalidInput("expected WxH, got '" + s + "'");
  return {w, h};
}

void write_prediction(const fs::path& dir, const PairPrediction& p) {
  fs::create_directories(dir);
  io::write_ply(dir / "x11.ply", p.x11, &p.c11);
  io::write_ply(dir / "x21.ply", p.x21, &p.c21);
  io::write_ply(dir / "x22.ply", p.x22, &p.c22);
}

void check_finite(const PointMap& pm, const std::string& what) {
  for (std::size_t k = 0; k < pm.points.size(); ++k)
    if (pm.valid[k] && !pm.points[k].allFinite()) throw NumericDivergence(what + ": non-finite output");
}

// --- gen-scenes -----------------------------------------------------------

struct GenArgs {
  fs::path out;
  int count = 4;
  std::uint64_t seed = 0;
  std::string size = "64x64";
  int views = 0;
  double noise = 0.0;
};

void gen_pairs(const GenArgs& a, const SynthOptions& so) {
  for (int n = 0; n < a.count; ++n) {
    const auto s = gen_synthetic_pair(mix_seed(a.seed, static_cast<std::uint64_t>(n)), so);
    char name[32];
    std::snprintf(name, sizeof name, "pair_%03d", n);
    const fs::path d = a.out / name;
    fs::create_directories(d);
    io::write_ppm(d / "img1.ppm", s.img1);
    io::write_ppm(d / "img2.ppm", s.img2);
    io::write_json(d / "k1.json", io::to_json(s.k1));
    io::write_json(d / "k2.json", io::to_json(s.k2));
    io::write_json(d / "pose.json", io::to_json(s.p12));
    io::write_depth_with_mask(d / "depth1.raw", s.d1);
    io::write_depth_with_mask(d / "depth2.raw", s.d2);
    io::write_ply(d / "x11.ply", s.x11);
    io::write_ply(d / "x21.ply", s.x21);
    io::write_ply(d / "x22.ply", s.x22);
  }
  std::cout << "wrote " << a.count << " pairs to " << a.out << "\n";
}

// Multi-view scenes with ground-truth pairwise maps on every ordered pair,
// each at a random scale, plus a manifest for `align`.
void gen_multiview(const GenArgs& a, const SynthOptions& so) {
  for (int n = 0; n < a.count; ++n) {
    const auto mv = gen_multiview_scene(mix_seed(a.seed, static_cast<std::uint64_t>(n)), a.views, so);
    Rng rng(mix_seed(a.seed ^ 0x6e5, static_cast<std::uint64_t>(n)));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", n);
    const fs::path d = a.out / name;
    fs::create_directories(d / "pairs");
    nlohmann::ordered_json manifest{{"images", a.views}, {"pairs", nlohmann::ordered_json::array()}};
    for (int v = 0; v < a.views; ++v) {
      const std::string s = std::to_string(v);
      io::write_ppm(d / ("view" + s + ".ppm"), mv.images[v]);
      io::write_json(d / ("k" + s + ".json"), io::to_json(mv.intrinsics[v]));
      io::write_json(d / ("pose" + s + ".json"), io::to_json(mv.poses[v]));
      io::write_depth_with_mask(d / ("depth" + s + ".raw"), mv.depths[v]);
    }
    for (int i = 0; i < a.views; ++i)
      for (int j = 0; j < a.views; ++j) {
        if (i == j) continue;
        auto p = mv.pair(i, j, rng.uniform(0.5, 2.0));
        if (a.noise > 0.0)
          for (auto* pm : {&p.x11, &p.x21, &p.x22})
            for (std::size_t k = 0; k < pm->points.size(); ++k)
              pm->points[k] += a.noise * pm->points[k].norm() * Vec3(rng.normal(), rng.normal(), rng.normal());
        const std::string stem = "pairs/" + std::to_string(i) + "_" + std::to_string(j);
        write_prediction(d / stem, p);
        manifest["pairs"].push_back({{"i", i}, {"j", j}, {"dir", stem}});
      }
    io::write_json(d / "manifest.json", manifest);
  }
  std::cout << "wrote " << a.count << " scenes of " << a.views << " views to " << a.out << "\n";
}

int run_gen(const GenArgs& a) {
  require(a.count > 0, "--count must be positive");
  require(a.views == 0 || a.views >= 2, "--views must be 0 (pairs) or at least 2");
  const auto [w, h] = parse_size(a.size);
  SynthOptions so{w, h};
  if (a.views == 0) gen_pairs(a, so);
  else gen_multiview(a, so);
  return 0;
}

// --- train-toy ------------------------------------------------------------

struct TrainArgs {
  int steps = TrainConfig{}.steps;
  std::string variant = "inject1";
  std::uint64_t seed = 0;
  std::string out;
  int batch = TrainConfig{}.batch;
  double lr = TrainConfig{}.lr;
  int pool = TrainConfig{}.pool_size;
  int log_every = 100;
};

int run_train(const TrainArgs& a) {
  require(a.steps > 0, "--steps must be positive");
  NetConfig nc;
  nc.set_variant(a.variant);
  nc.seed = a.seed;
  nc.validate();
  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  tc.pool_size = a.pool;
  ToyNet<float> net(nc);
  Trainer<float> trainer(net, tc);
  double recent = 0.0;
  trainer.run([&](int step, const LossBreakdown& l) {
    recent += l.total;
    if (a.log_every > 0 && (step + 1) % a.log_every == 0) {
      std::cout << "step " << step + 1 << "/" << a.steps << "  loss " << recent / a.log_every << "  lr "
                << trainer.lr_at(step) << std::endl;
      recent = 0.0;
    }
  });
  checkpoint::save(a.out, net, {{"steps", a.steps}, {"batch", a.batch}, {"lr", a.lr}, {"pool", a.pool}, {"seed", a.seed}});
  std::cout << "saved " << a.out << "\n";
  return 0;
}

// --- infer ----------------------------------------------------------------

struct InferArgs {
  std::string ckpt, img1, img2, k1, k2, d1, d2, pose;
  fs::path out = "infer_out";
};

int run_infer(const InferArgs& a) {
  auto net = checkpoint::load<float>(a.ckpt);
  const auto img1 = io::read_ppm(a.img1), img2 = io::read_ppm(a.img2);
  AuxiliaryBundle aux;
  if (!a.k1.empty()) aux.k1 = io::intrinsics_from_json(io::read_json(a.k1));
  if (!a.k2.empty()) aux.k2 = io::intrinsics_from_json(io::read_json(a.k2));
  if (!a.d1.empty()) aux.d1 = io::read_depth(a.d1);
  if (!a.d2.empty()) aux.d2 = io::read_depth(a.d2);
  if (!a.pose.empty()) aux.p12 = io::pose_from_json(io::read_json(a.pose));
  const auto pred = net.predict(make_inputs(img1, img2, aux));
  check_finite(pred.x11, "infer");
  check_finite(pred.x21, "infer");
  check_finite(pred.x22, "infer");
  write_prediction(a.out, pred);
  io::write_depth_with_mask(a.out / "depth1.raw", pred.x11.depth());
  io::write_depth_with_mask(a.out / "depth2.raw", pred.x22.depth());

  // focal at the image center, pose by Procrustes (maps view-2 points into view 1)
  const Vec2 c1((img1.width() - 1) / 2.0, (img1.height() - 1) / 2.0), c2((img2.width() - 1) / 2.0, (img2.height() - 1) / 2.0);
  nlohmann::ordered_json summary;
  summary["modalities"] = aux.present().to_string();
  summary["focal1"] = weiszfeld_focal(pred.x11, c1).focal;
  summary["focal2"] = weiszfeld_focal(pred.x22, c2).focal;
  const auto p21 = procrustes_pose(pred.x22, pred.x21, pred.c22, pred.c21);
  const auto p12 = p21.rigid().inverse();
  summary["p12"] = io::to_json(p12);
  summary["scale_21"] = p21.scale;
  io::write_json(a.out / "summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// --- stitch ---------------------------------------------------------------

struct StitchArgs {
  std::string ckpt, img, k, depth;
  std::string tile = "32x32";
  int overlap = 8;
  std::size_t ref_tile = 0;
  bool winner_take_all = false;
  fs::path out = "stitch_out";
};

int run_stitch(const StitchArgs& a) {
  auto net = checkpoint::load<float>(a.ckpt);
  const auto img = io::read_ppm(a.img);
  const auto k = io::intrinsics_from_json(io::read_json(a.k));
  const auto [tw, th] = parse_size(a.tile);
  std::optional<DepthMap> coarse;
  if (!a.depth.empty()) coarse = io::read_depth(a.depth);
  const auto r = infer_highres(net, img, k, HighresOptions{tw, th, a.overlap, a.ref_tile, a.winner_take_all}, coarse);
  check_finite(r.blended.points, "stitch");
  fs::create_directories(a.out);
  io::write_ply(a.out / "points.ply", r.blended.points, &r.blended.confidence);
  io::write_depth_with_mask(a.out / "depth.raw", r.blended.points.depth());
  nlohmann::ordered_json tiles = nlohmann::ordered_json::array();
  for (const auto& t : r.tiles)
    tiles.push_back({{"x0", t.crop.x0}, {"y0", t.crop.y0}, {"w", t.crop.w}, {"h", t.crop.h}, {"scale", *t.scale}});
  io::write_json(a.out / "tiles.json", {{"reference", a.ref_tile}, {"tiles", tiles}});
  std::cout << r.tiles.size() << " tiles stitched into " << img.width() << "x" << img.height() << ", wrote " << a.out
            << "\n";
  return 0;
}

// --- align ----------------------------------------------------------------

struct AlignArgs {
  std::string pairs;
  int iters = AlignOptions{}.iters;
  double lr = AlignOptions{}.lr;
  fs::path out = "align_out";
};

int run_align(const AlignArgs& a) {
  const fs::path manifest(a.pairs);
  const auto j = io::read_json(manifest);
  std::vector<PairEdge> edges;
  int images = 0;
  try {
    images = j.at("images").get<int>();
    for (const auto& e : j.at("pairs")) {
      const fs::path d = manifest.parent_path() / e.at("dir").get<std::string>();
      const auto x11 = io::read_ply(d / "x11.ply"), x21 = io::read_ply(d / "x21.ply"), x22 = io::read_ply(d / "x22.ply");
      edges.push_back({e.at("i").get<int>(), e.at("j").get<int>(),
                       PairPrediction{x11.points, x21.points, x22.points, x11.confidence, x21.confidence, x22.confidence}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("manifest: ") + e.what());
  }
  require(a.iters >= 0, "--iters must be nonnegative");
  AlignOptions opt;
  opt.iters = a.iters;
  opt.lr = a.lr;
  const auto scene = align(build_graph(images, std::move(edges)), opt);
  if (!std::isfinite(scene.energy)) throw NumericDivergence("align: energy is not finite");
  fs::create_directories(a.out);
  nlohmann::ordered_json r;
  r["energy"] = scene.energy;
  r["iterations"] = scene.iterations;
  r["poses"] = nlohmann::ordered_json::array();
  for (const auto& p : scene.poses) r["poses"].push_back(io::to_json(p));
  r["focals"] = scene.focals;
  r["trace"] = scene.trace;
  io::write_json(a.out / "scene.json", r);
  for (int v = 0; v < images; ++v) {
    const std::string s = std::to_string(v);
    io::write_ply(a.out / ("world" + s + ".ply"), scene.state.world[v], &scene.confidence[v]);
    io::write_depth_with_mask(a.out / ("depth" + s + ".raw"), extract_depth(scene, v));
  }
  std::cout << "aligned " << images << " images, energy " << scene.energy << " after " << scene.iterations
            << " iterations, wrote " << a.out << "\n";
  return 0;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string suite;
  std::uint64_t seed = 0;
  std::string ckpt;
  int samples = 0;
  fs::path out = "eval_out";
};

std::string cell(const std::optional<double>& v) {
  if (!v) return "      -";
  char b[16];
  std::snprintf(b, sizeof b, "%7.2f", *v);
  return b;
}

int run_eval(const EvalArgs& a) {
  BenchmarkOptions o{a.suite, a.seed, a.out, std::nullopt, a.samples};
  if (!a.ckpt.empty()) o.checkpoint = a.ckpt;
  const auto r = run_benchmark(o);
  std::printf("%-18s %7s %7s %7s %7s %7s %7s\n", "row", "rel", "tau", "focal", "RRA", "RTA", "mAA30");
  for (const auto& row : r.rows)
    std::printf("%-18s %s %s %s %s %s %s\n", row.label.c_str(), cell(row.depth_rel).c_str(), cell(row.depth_tau).c_str(),
                cell(row.focal_acc).c_str(), cell(row.rra_at).c_str(), cell(row.rta_at).c_str(), cell(row.maa30).c_str());
  std::cout << "wrote " << (a.out / (a.suite + ".json")) << " and " << (a.out / (a.suite + ".svg")) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pmap: pointmap regression with auxiliary guidance"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-scenes", "write synthetic pairs or multi-view scenes with ground truth");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--count", gen.count, "number of pairs or scenes");
  g->add_option("--seed", gen.seed);
  g->add_option("--size", gen.size, "image size WxH");
  g->add_option("--views", gen.views, "views per scene; 0 writes pairs");
  g->add_option("--noise", gen.noise, "relative noise on multi-view pair maps");

  TrainArgs tr;
  auto* t = app.add_subcommand("train-toy", "train the toy network on synthetic pairs");
  t->add_option("--steps", tr.steps);
  t->add_option("--variant", tr.variant, "embed or injectN");
  t->add_option("--seed", tr.seed);
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--batch", tr.batch);
  t->add_option("--lr", tr.lr);
  t->add_option("--pool", tr.pool, "distinct training pairs, 0 draws a fresh pair per sample");
  t->add_option("--log-every", tr.log_every);

  InferArgs in;
  auto* i = app.add_subcommand("infer", "predict pointmaps for an image pair");
  i->add_option("--ckpt", in.ckpt)->required();
  i->add_option("--img1", in.img1)->required();
  i->add_option("--img2", in.img2)->required();
  i->add_option("--k1", in.k1, "intrinsics json, view 1");
  i->add_option("--k2", in.k2, "intrinsics json, view 2");
  i->add_option("--d1", in.d1, "depth raw, view 1");
  i->add_option("--d2", in.d2, "depth raw, view 2");
  i->add_option("--pose", in.pose, "relative pose json, view 1 to view 2");
  i->add_option("--out", in.out);

  StitchArgs st;
  auto* s = app.add_subcommand("stitch", "sliding-window inference on a larger image");
  s->add_option("--ckpt", st.ckpt)->required();
  s->add_option("--img", st.img)->required();
  s->add_option("--k", st.k, "intrinsics json of the full image")->required();
  s->add_option("--depth", st.depth, "coarse depth of the full image");
  s->add_option("--tile", st.tile, "tile size WxH");
  s->add_option("--overlap", st.overlap, "minimum overlap in pixels");
  s->add_option("--ref-tile", st.ref_tile, "tile that keeps scale 1");
  s->add_flag("--winner-take-all", st.winner_take_all);
  s->add_option("--out", st.out);

  AlignArgs al;
  auto* a = app.add_subcommand("align", "global alignment of pairwise pointmaps");
  a->add_option("--pairs", al.pairs, "manifest json")->required();
  a->add_option("--iters", al.iters);
  a->add_option("--lr", al.lr);
  a->add_option("--out", al.out);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "run a benchmark suite");
  e->add_option("--suite", ev.suite, "guiding-trend, stitch, pose or align")->required();
  e->add_option("--seed", ev.seed);
  e->add_option("--ckpt", ev.ckpt);
  e->add_option("--samples", ev.samples, "0 for the suite default");
  e->add_option("--out", ev.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitValidation;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*i) return run_infer(in);
    if (*s) return run_stitch(st);
    if (*a) return run_align(al);
    if (*e) return run_eval(ev);
  } catch (const NumericDivergence& err) {
    std::cerr << "numeric divergence: " << err.what() << "\n";
    return kExitDivergence;
  } catch (const InvalidInput& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
