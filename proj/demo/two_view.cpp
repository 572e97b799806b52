// Two-view walkthrough: synthetic pair, optional network inference, then
// focal, relative pose and depth metrics from the pointmaps.
//   demo_two_view [checkpoint]
#include <cstdio>

#include "pmap/guiding.hpp"
#include "pmap/train.hpp"

using namespace pmap;

namespace {

void report(const char* what, const PairPrediction& p, const SyntheticPair& s) {
  const Vec2 c1((s.k1.width - 1) / 2.0, (s.k1.height - 1) / 2.0);
  const double f = weiszfeld_focal(p.x11, c1).focal;
  const auto pose = procrustes_pose(p.x22, p.x21, p.c22, p.c21);
  const auto err = pose_metrics(pose, s.p12.inverse());
  const auto d = depth_metrics(p.x11.depth(), s.d1, DepthAlign::Median);
  std::printf("%-22s focal %7.2f (gt %7.2f)  rot err %6.2f deg  trans dir err %6.2f deg  depth rel %5.2f%%  tau %6.2f%%\n",
              what, f, s.k1.fx, err.rra_deg, err.rta_deg, d.rel, d.tau);
}

}  // namespace

int main(int argc, char** argv) {
  const auto s = gen_synthetic_pair(2024, SynthOptions{32, 32});
  std::printf("pair: %dx%d, %zu/%zu valid pixels, baseline %.3f\n", s.img1.width(), s.img1.height(), s.d1.valid_count(),
              s.d1.values.size(), s.p12.translation.norm());

  // ground-truth pointmaps through the same solvers
  const ConfidenceMap ones(32, 32, 1.0);
  report("ground truth", PairPrediction{s.x11, s.x21, s.x22, ones, ones, ones}, s);

  if (argc < 2) {
    std::printf("pass a checkpoint from `pmap train-toy` to add network rows\n");
    return 0;
  }
  auto net = checkpoint::load<float>(argv[1]);
  auto aux = s.aux();
  report("network, no priors", net.predict(make_inputs(s.img1, s.img2, AuxiliaryBundle{})), s);
  report("network, K1 K2", net.predict(make_inputs(s.img1, s.img2, aux.restricted({Modality::K1, Modality::K2}))), s);
  report("network, P12", net.predict(make_inputs(s.img1, s.img2, aux.restricted({Modality::P12}))), s);
  aux.d1 = sparsify(*aux.d1, 0.5, 1);
  aux.d2 = sparsify(*aux.d2, 0.5, 2);
  report("network, all priors", net.predict(make_inputs(s.img1, s.img2, aux)), s);
  return 0;
}
