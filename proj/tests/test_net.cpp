#include <gtest/gtest.h>

#include "pmap/net.hpp"

using namespace pmap;
using NetD = ToyNet<double>;
using Mat = ad::Matrix<double>;

namespace {

RgbImage random_image(Rng& rng, int w, int h) {
  RgbImage img(w, h);
  for (std::size_t k = 0; k < img.size(); ++k) img[k] = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  return img;
}

AuxiliaryBundle random_aux(Rng& rng, int w, int h, ModalitySet set) {
  AuxiliaryBundle aux;
  const CameraIntrinsics k{rng.uniform(30, 60), rng.uniform(30, 60), w / 2.0, h / 2.0, w, h};
  DepthMap d(w, h);
  for (std::size_t p = 0; p < d.values.size(); ++p)
    if (rng.uniform() < 0.5) {
      d.values[p] = rng.uniform(1, 5);
      d.mask[p] = 1;
    }
  aux.k1 = k;
  aux.k2 = k;
  aux.d1 = d;
  aux.d2 = d;
  aux.p12 = RigidPose{rotation_exp(Vec3(0.1, -0.2, 0.05)), Vec3(0.4, 0.1, -0.2)};
  return aux.restricted(set);
}

NetConfig small_config(std::uint64_t seed = 1) {
  NetConfig cfg;
  cfg.patch_size = 4;
  cfg.dim = 16;
  cfg.enc_blocks = 2;
  cfg.dec_blocks = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.seed = seed;
  return cfg;
}

// Heads and confidence biases randomized so every path carries signal.
void perturb(NetD& net, Rng& rng, double s = 0.05) {
  for (auto& p : net.params())
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] += s * rng.normal();
}

PairTarget synthetic_target(Rng& rng, int w, int h) {
  PairTarget gt{PointMap(w, h, 1, 1), PointMap(w, h, 2, 1), PointMap(w, h, 2, 2)};
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      gt.x11.set(i, j, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4)));
      gt.x21.set(i, j, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4)));
      if (rng.uniform() < 0.9) gt.x22.set(i, j, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4)));
    }
  return gt;
}

// Loss and backward pass; returns the loss and leaves gradients in the store.
double loss_and_grad(NetD& net, const PairInputs& in, const PairTarget& gt, bool backward) {
  ad::Tape<double> t(backward);
  const auto f = net.forward(t, in);
  const auto pred = net.prediction(t, f);
  LossGradient g;
  const auto l = total_loss(pred, gt, LossOptions{}, g);
  if (backward) {
    net.seed_gradient(t, f, pred, g);
    t.backward();
  }
  return l.total;
}

bool is_modality_param(const std::string& name, Modality m) {
  switch (m) {
    case Modality::K1:
    case Modality::K2:
      return name.rfind("cond.ray.", 0) == 0;
    case Modality::D1:
    case Modality::D2:
      return name.rfind("cond.depth.", 0) == 0;
    case Modality::P12:
      return name.rfind("cond.pose.", 0) == 0;
  }
  return false;
}

}  // namespace

TEST(NetConfig, Validation) {
  NetConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 5;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = NetConfig{};
  c.set_variant("inject2");
  EXPECT_EQ(c.inject_blocks, 2);
  EXPECT_EQ(c.variant_name(), "inject2");
  c.set_variant("embed");
  EXPECT_EQ(c.variant_name(), "embed");
  EXPECT_THROW(c.set_variant("inject"), InvalidInput);
  EXPECT_THROW(c.set_variant("concat"), InvalidInput);
  c.set_variant("inject9");
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(ToyNet, EncoderTokenCount) {
  NetConfig cfg;
  NetD net(cfg);
  Rng rng(1);
  ad::Tape<double> t(false);
  const auto f = net.encode(t, random_image(rng, 32, 32), nullptr, nullptr);
  EXPECT_EQ(t.value(f).rows(), 16);
  EXPECT_EQ(t.value(f).cols(), cfg.dim);
}

TEST(ToyNet, RejectsBadShapes) {
  NetD net(NetConfig{});
  Rng rng(2);
  ad::Tape<double> t(false);
  EXPECT_THROW(net.encode(t, random_image(rng, 30, 32), nullptr, nullptr), InvalidInput);
  const RayMap rays(16, 16);
  EXPECT_THROW(net.encode(t, random_image(rng, 32, 32), &rays, nullptr), InvalidInput);
}

TEST(ToyNet, DecoderHasOneClsToken) {
  NetD net(small_config());
  Rng rng(3);
  ad::Tape<double> t(false);
  const auto f1 = net.encode(t, random_image(rng, 16, 12), nullptr, nullptr);
  const auto f2 = net.encode(t, random_image(rng, 16, 12), nullptr, nullptr);
  const auto [g1, g2] = net.decode(t, f1, f2, nullptr, {4, 3}, {4, 3});
  EXPECT_EQ(t.value(g1).rows(), 13);
  EXPECT_EQ(t.value(g2).rows(), 13);
}

TEST(ToyNet, OutputShapesAndFrames) {
  NetD net(small_config());
  Rng rng(4);
  const auto pred = net.predict(make_inputs(random_image(rng, 16, 12), random_image(rng, 16, 12), {}));
  for (const auto* pm : {&pred.x11, &pred.x21, &pred.x22}) {
    EXPECT_EQ(pm->points.width(), 16);
    EXPECT_EQ(pm->points.height(), 12);
  }
  EXPECT_EQ(pred.x11.subject, 1);
  EXPECT_EQ(pred.x11.frame, 1);
  EXPECT_EQ(pred.x21.subject, 2);
  EXPECT_EQ(pred.x21.frame, 1);
  EXPECT_EQ(pred.x22.frame, 2);
  for (const auto* c : {&pred.c11, &pred.c21, &pred.c22})
    for (std::size_t k = 0; k < c->size(); ++k) EXPECT_GE((*c)[k], 1.0);
}

TEST(ToyNet, ZeroHeadsGiveOriginAndConfidenceTwo) {
  NetD net(small_config());
  for (const char* n : {"head1.w", "head1.b", "head2.w", "head2.b"}) net.params().get(n).value.setZero();
  Rng rng(5);
  const auto pred = net.predict(make_inputs(random_image(rng, 8, 8), random_image(rng, 8, 8), {}));
  for (const auto* pm : {&pred.x11, &pred.x21, &pred.x22})
    for (std::size_t k = 0; k < pm->points.size(); ++k) EXPECT_EQ(pm->points[k], Vec3::Zero());
  for (const auto* c : {&pred.c11, &pred.c21, &pred.c22})
    for (std::size_t k = 0; k < c->size(); ++k) EXPECT_EQ((*c)[k], 2.0);
}

TEST(ToyNet, EmbedAndInjectDiffer) {
  Rng rng(6);
  const auto img1 = random_image(rng, 16, 16), img2 = random_image(rng, 16, 16);
  const auto in = make_inputs(img1, img2, random_aux(rng, 16, 16, ModalitySet::all()));
  NetConfig a = small_config(7), b = small_config(7);
  a.set_variant("inject1");
  b.set_variant("embed");
  NetD na(a), nb(b);
  // identical values for every shared name, same values for the modality MLPs
  Rng pr(8);
  perturb(na, pr, 0.2);
  for (auto& p : nb.params()) {
    std::string src = p.name;
    for (const std::string slot : {".embed."})
      if (auto pos = src.find(slot); pos != std::string::npos) src.replace(pos, slot.size(), ".block0.");
    ASSERT_TRUE(na.params().contains(src)) << src;
    p.value = na.params().get(src).value;
  }
  const auto pa = na.predict(in), pb = nb.predict(in);
  double diff = 0;
  for (std::size_t k = 0; k < pa.x11.points.size(); ++k) diff = std::max(diff, (pa.x11.points[k] - pb.x11.points[k]).norm());
  EXPECT_GT(diff, 1e-6);
}

TEST(ToyNet, TiedDecoderSwapSymmetry) {
  NetConfig cfg = small_config(9);
  cfg.tie_decoders = true;
  NetD net(cfg);
  Rng rng(10);
  perturb(net, rng, 0.1);
  const auto img1 = random_image(rng, 12, 8), img2 = random_image(rng, 12, 8);
  ad::Tape<double> t(false);
  const auto f1 = net.encode(t, img1, nullptr, nullptr);
  const auto f2 = net.encode(t, img2, nullptr, nullptr);
  const auto [g1, g2] = net.decode(t, f1, f2, nullptr, {3, 2}, {3, 2});
  const auto [s1, s2] = net.decode(t, f2, f1, nullptr, {3, 2}, {3, 2});
  EXPECT_LT((t.value(g1) - t.value(s2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((t.value(g2) - t.value(s1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((t.value(g1) - t.value(g2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ToyNet, PositionalEncodingDistinct) {
  NetD net(small_config());
  const Mat pe = net.positional_encoding(4, 4);
  for (int a = 0; a < 16; ++a)
    for (int b = a + 1; b < 16; ++b) EXPECT_GT((pe.row(a) - pe.row(b)).norm(), 1e-3);
}

TEST(ToyNet, DeadPathGradientsAreExactlyZero) {
  for (const char* variant : {"embed", "inject1", "inject2"}) {
    NetConfig cfg = small_config(11);
    cfg.set_variant(variant);
    NetD net(cfg);
    Rng rng(12);
    perturb(net, rng);
    const auto img1 = random_image(rng, 8, 8), img2 = random_image(rng, 8, 8);
    const auto gt = synthetic_target(rng, 8, 8);
    for (const ModalitySet set : {ModalitySet::none(), ModalitySet{Modality::K1}, ModalitySet{Modality::D2, Modality::P12},
                                  ModalitySet{Modality::K1, Modality::K2, Modality::D1, Modality::D2}}) {
      net.params().zero_grad();
      loss_and_grad(net, make_inputs(img1, img2, random_aux(rng, 8, 8, set)), gt, true);
      for (const auto& p : net.params()) {
        bool live = false;
        bool modality_param = false;
        for (const Modality m : {Modality::K1, Modality::K2, Modality::D1, Modality::D2, Modality::P12}) {
          if (!is_modality_param(p.name, m)) continue;
          modality_param = true;
          live = live || set.has(m);
        }
        if (!modality_param) continue;
        // the CLS token of the last decoder block feeds nothing
        const bool last_pose = p.name.rfind("cond.pose.block" + std::to_string(cfg.dec_blocks - 1), 0) == 0;
        if (live && !last_pose)
          EXPECT_GT(p.grad.cwiseAbs().maxCoeff(), 0.0) << variant << " " << set.to_string() << " " << p.name;
        else
          EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << variant << " " << set.to_string() << " " << p.name;
      }
    }
  }
}

TEST(ToyNet, HeadWeightJacobianMatchesFiniteDifference) {
  NetD net(small_config(13));
  Rng rng(14);
  perturb(net, rng);
  const auto in = make_inputs(random_image(rng, 8, 8), random_image(rng, 8, 8), {});
  // d x22(3,5).z / d head2.w(r, c)
  const int i = 3, j = 5, ps = 4;
  const Eigen::Index col = ((j % ps) * ps + i % ps) * 8 + 5;
  auto eval = [&]() { return net.predict(in).x22.points(i, j).z(); };
  ad::Tape<double> t;
  const auto f = net.forward(t, in);
  Mat seed = Mat::Zero(t.value(f.head2).rows(), t.value(f.head2).cols());
  seed((j / ps) * 2 + i / ps, col) = 1.0;
  net.params().zero_grad();
  t.seed(f.head2, seed);
  t.backward();
  auto& w = net.params().get("head2.w");
  for (Eigen::Index r = 0; r < w.value.rows(); ++r) {
    const double v0 = w.value(r, col), h = 1e-6;
    w.value(r, col) = v0 + h;
    const double fp = eval();
    w.value(r, col) = v0 - h;
    const double fm = eval();
    w.value(r, col) = v0;
    const double fd = (fp - fm) / (2 * h);
    EXPECT_NEAR(w.grad(r, col), fd, 1e-4 * std::max(1e-3, std::abs(fd)));
  }
}

// Every scalar of a 2-block net against central differences of the full loss.
TEST(ToyNet, FullParameterGradientCheck) {
  for (const char* variant : {"inject1", "embed"}) {
    NetConfig cfg = small_config(15);
    cfg.set_variant(variant);
    NetD net(cfg);
    Rng rng(16);
    perturb(net, rng);
    const auto in = make_inputs(random_image(rng, 16, 16), random_image(rng, 16, 16),
                                random_aux(rng, 16, 16, ModalitySet::all()));
    const auto gt = synthetic_target(rng, 16, 16);
    net.params().zero_grad();
    const double loss = loss_and_grad(net, in, gt, true);
    // central differences cannot resolve gradients below the roundoff of the loss
    const double floor = 1e-5 * std::abs(loss);
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    for (auto& p : net.params()) {
      // every entry of small tensors, a deterministic subset of the large ones
      const Eigen::Index n = p.value.size();
      const Eigen::Index stride = std::max<Eigen::Index>(1, n / 24);
      for (Eigen::Index k = 0; k < n; k += stride) {
        const double v0 = p.value.data()[k], h = 1e-5;
        p.value.data()[k] = v0 + h;
        const double fp = loss_and_grad(net, in, gt, false);
        p.value.data()[k] = v0 - h;
        const double fm = loss_and_grad(net, in, gt, false);
        p.value.data()[k] = v0;
        const double fd = (fp - fm) / (2 * h), an = p.grad.data()[k];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
        if (rel > worst) {
          worst = rel;
          worst_name = p.name;
        }
        ++checked;
      }
    }
    EXPECT_LT(worst, 1e-3) << variant << " worst at " << worst_name;
    EXPECT_GT(checked, 500u);
  }
}
