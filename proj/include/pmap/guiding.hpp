#pragma once

#include <vector>

#include "pmap/metrics.hpp"
#include "pmap/net.hpp"
#include "pmap/solvers.hpp"
#include "pmap/synth.hpp"
#include "pmap/train.hpp"

namespace pmap {

// The twelve modality subsets of the guidance study, in table order.
inline std::vector<ModalitySet> guidance_subsets() {
  using M = Modality;
  return {ModalitySet::none(),
          {M::K1},
          {M::K2},
          {M::K1, M::K2},
          {M::D1},
          {M::D2},
          {M::D1, M::D2},
          {M::P12},
          {M::K1, M::K2, M::D1, M::D2},
          {M::K1, M::K2, M::P12},
          {M::D1, M::D2, M::P12},
          ModalitySet::all()};
}

struct GuidanceOptions {
  int pairs = 200;
  SynthOptions synth{48, 48};
  int crop_size = 32;
  double depth_keep = 0.5;  // fraction of depth prior pixels kept
  double pose_threshold_deg = 2.0;
};

// Per-pair errors for one subset.
struct GuidanceSample {
  double depth_rel = 0.0, depth_tau = 0.0;
  double focal1 = 0.0, focal2 = 0.0, gt_focal1 = 0.0, gt_focal2 = 0.0;
  AngularError pose;
};

// Held-out evaluation pair k: centered crops, sparsified depth priors.
inline PreparedSample guidance_pair(std::uint64_t seed, int k, const GuidanceOptions& opt) {
  const auto full = gen_synthetic_pair(mix_seed(mix_seed(seed, 0xe7a1), static_cast<std::uint64_t>(k)), opt.synth);
  const int c = opt.crop_size;
  const int x1 = (full.img1.width() - c) / 2, y1 = (full.img1.height() - c) / 2;
  const int x2 = (full.img2.width() - c) / 2, y2 = (full.img2.height() - c) / 2;
  PreparedSample s{full.crop(x1, y1, x2, y2, c, c), ModalitySet::all(), {}};
  s.aux = s.pair.aux();
  if (s.aux.d1->valid_count() > 0) s.aux.d1 = sparsify(*s.aux.d1, opt.depth_keep, mix_seed(seed, 2 * k));
  if (s.aux.d2->valid_count() > 0) s.aux.d2 = sparsify(*s.aux.d2, opt.depth_keep, mix_seed(seed, 2 * k + 1));
  return s;
}

template <typename Scalar>
GuidanceSample evaluate_pair(ToyNet<Scalar>& net, const PreparedSample& s, ModalitySet subset) {
  const auto& p = s.pair;
  const auto pred = net.predict(make_inputs(p.img1, p.img2, s.aux.restricted(subset)));
  GuidanceSample r;
  const auto e1 = depth_metrics(pred.x11.depth(), p.d1, DepthAlign::Median);
  const auto e2 = depth_metrics(pred.x22.depth(), p.d2, DepthAlign::Median);
  r.depth_rel = 0.5 * (e1.rel + e2.rel);
  r.depth_tau = 0.5 * (e1.tau + e2.tau);
  const Vec2 c1((p.k1.width - 1) / 2.0, (p.k1.height - 1) / 2.0), c2((p.k2.width - 1) / 2.0, (p.k2.height - 1) / 2.0);
  r.focal1 = weiszfeld_focal(pred.x11, c1).focal;
  r.focal2 = weiszfeld_focal(pred.x22, c2).focal;
  r.gt_focal1 = p.k1.fx;
  r.gt_focal2 = p.k2.fx;
  const auto pose = procrustes_pose(pred.x22, pred.x21, pred.c22, pred.c21);
  const auto err = pose_metrics(pose, p.p12.inverse());
  r.pose = {err.rra_deg, err.rta_defined ? err.rta_deg : 180.0};
  return r;
}

inline MetricReport summarize(const std::string& label, const std::vector<GuidanceSample>& v, double threshold_deg) {
  MetricReport r;
  r.label = label;
  r.samples = v.size();
  r.threshold_deg = threshold_deg;
  std::vector<double> rel, tau, rot, trans, fp, fg;
  std::vector<AngularError> ang;
  for (const auto& s : v) {
    rel.push_back(s.depth_rel);
    tau.push_back(s.depth_tau);
    rot.push_back(s.pose.rot_deg);
    trans.push_back(s.pose.trans_deg);
    ang.push_back(s.pose);
    // a non-positive focal estimate can never be accurate
    fp.push_back(s.focal1 > 0 ? s.focal1 : 1e-12);
    fp.push_back(s.focal2 > 0 ? s.focal2 : 1e-12);
    fg.push_back(s.gt_focal1);
    fg.push_back(s.gt_focal2);
  }
  const double n = static_cast<double>(v.size());
  r.depth_rel = pairwise_sum(rel) / n;
  r.depth_tau = pairwise_sum(tau) / n;
  r.focal_acc = focal_accuracy(fp, fg);
  r.rra_at = accuracy_at(rot, threshold_deg);
  r.rta_at = accuracy_at(trans, threshold_deg);
  r.maa30 = maa(ang);
  return r;
}

// One report row per subset, evaluated on the same held-out pairs.
template <typename Scalar>
std::vector<MetricReport> evaluate_guidance(ToyNet<Scalar>& net, std::uint64_t seed, const GuidanceOptions& opt,
                                            const std::vector<ModalitySet>& subsets = guidance_subsets()) {
  require(opt.pairs > 0, "evaluate_guidance: need at least one pair");
  std::vector<PreparedSample> pairs(static_cast<std::size_t>(opt.pairs));
  parallel_for(pairs.size(), [&](std::size_t k) { pairs[k] = guidance_pair(seed, static_cast<int>(k), opt); });
  std::vector<std::vector<GuidanceSample>> results(subsets.size(), std::vector<GuidanceSample>(pairs.size()));
  parallel_for(subsets.size() * pairs.size(), [&](std::size_t idx) {
    const std::size_t s = idx / pairs.size(), k = idx % pairs.size();
    results[s][k] = evaluate_pair(net, pairs[k], subsets[s]);
  });
  std::vector<MetricReport> out;
  for (std::size_t s = 0; s < subsets.size(); ++s)
    out.push_back(summarize(subsets[s].to_string(), results[s], opt.pose_threshold_deg));
  return out;
}

}  // namespace pmap
