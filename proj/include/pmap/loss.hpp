#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pmap/geometry.hpp"

namespace pmap {

// The three pointmaps of a pair: X^{1,1}, X^{2,1}, X^{2,2} and confidences.
struct PairPrediction {
  PointMap x11, x21, x22;
  ConfidenceMap c11, c21, c22;
};

// Ground-truth counterpart of PairPrediction.
struct PairTarget {
  PointMap x11, x21, x22;
};

namespace detail {

struct MaskedPoints {
  const Grid<Vec3>* points;
  const Mask* mask;
};

inline double mean_norm(std::initializer_list<MaskedPoints> sets) {
  std::vector<double> norms;
  for (const auto& s : sets) {
    require(s.points->same_shape(*s.mask), "znorm: mask shape mismatch");
    for (std::size_t k = 0; k < s.points->size(); ++k)
      if ((*s.mask)[k]) norms.push_back((*s.points)[k].norm());
  }
  require(!norms.empty(), "znorm: no valid points");
  return pairwise_sum(norms) / static_cast<double>(norms.size());
}

}  // namespace detail

// Z(X): mean Euclidean norm over the valid points of every input map.
inline double znorm(const PointMap& a) { return detail::mean_norm({{&a.points, &a.valid}}); }
inline double znorm(const PointMap& a, const PointMap& b) {
  return detail::mean_norm({{&a.points, &a.valid}, {&b.points, &b.valid}});
}

// Z over `pm`'s points restricted to an external validity mask.
inline double znorm_masked(const PointMap& pm, const Mask& valid) { return detail::mean_norm({{&pm.points, &valid}}); }
inline double znorm_masked(const PointMap& a, const Mask& va, const PointMap& b, const Mask& vb) {
  return detail::mean_norm({{&a.points, &va}, {&b.points, &vb}});
}

// Z for a depthmap: the mean valid depth (norm of a scalar).
inline double znorm(const DepthMap& d) {
  std::vector<double> vals;
  for (std::size_t k = 0; k < d.mask.size(); ++k)
    if (d.mask[k]) vals.push_back(std::abs(d.values[k]));
  require(!vals.empty(), "znorm: no valid depth");
  return pairwise_sum(vals) / static_cast<double>(vals.size());
}

// Per-pixel ||X/z - Xgt/zgt||, defined on the gt-valid set.
struct RegressionResidual {
  Grid<double> values;
  Mask valid;
};

inline RegressionResidual regression_loss(const PointMap& pred, const PointMap& gt, double z_pred, double z_gt) {
  require(pred.points.same_shape(gt.points), "regression_loss: dimension mismatch");
  require(z_pred > 0.0 && z_gt > 0.0 && std::isfinite(z_pred) && std::isfinite(z_gt),
          "regression_loss: normalizers must be positive");
  RegressionResidual r{Grid<double>(gt.width(), gt.height(), 0.0), gt.valid};
  for (std::size_t k = 0; k < gt.points.size(); ++k)
    if (gt.valid[k]) r.values[k] = (pred.points[k] / z_pred - gt.points[k] / z_gt).norm();
  return r;
}

// sum_{V} C * lreg - alpha * log C
inline double confidence_loss(const RegressionResidual& lreg, const ConfidenceMap& conf, double alpha) {
  require(conf.same_shape(lreg.values), "confidence_loss: dimension mismatch");
  std::vector<double> terms;
  terms.reserve(lreg.values.size());
  for (std::size_t k = 0; k < lreg.values.size(); ++k)
    if (lreg.valid[k]) terms.push_back(conf[k] * lreg.values[k] - alpha * std::log(conf[k]));
  return pairwise_sum(terms);
}

struct LossOptions {
  double alpha = 0.2;
  double beta = 1.0;
  // Divide each confidence loss by its valid-pixel count. Off reproduces the plain sum.
  bool mean_normalized = false;
};

struct LossBreakdown {
  double l11 = 0.0, l21 = 0.0, l22 = 0.0;
  double total = 0.0;
  double alpha = 0.2, beta = 1.0;
};

struct LossGradient {
  Grid<Vec3> d_x11, d_x21, d_x22;
  Grid<double> d_c11, d_c21, d_c22;
};

namespace detail {

struct GroupTerm {
  const PointMap* pred;
  const PointMap* gt;
  const ConfidenceMap* conf;
  double weight;  // beta and/or 1/|V|
  double* value;  // unweighted sum
  Grid<Vec3>* d_points;
  Grid<double>* d_conf;
};

// Terms sharing one normalizer pair (z, zgt). Fills values and, when the
// gradient pointers are set, d/dX including the path through z.
inline void accumulate_group(std::initializer_list<GroupTerm> terms, double alpha) {
  std::vector<double> pred_norms, gt_norms;
  for (const auto& t : terms) {
    require(t.pred->points.same_shape(t.gt->points) && t.conf->same_shape(t.gt->points),
            "total_loss: prediction, target and confidence shapes differ");
    for (std::size_t k = 0; k < t.gt->points.size(); ++k) {
      if (!t.gt->valid[k]) continue;
      pred_norms.push_back(t.pred->points[k].norm());
      gt_norms.push_back(t.gt->points[k].norm());
    }
  }
  require(!gt_norms.empty(), "total_loss: no valid ground-truth points");
  const double n = static_cast<double>(gt_norms.size());
  const double z = pairwise_sum(pred_norms) / n;
  const double zgt = pairwise_sum(gt_norms) / n;
  if (!(z > 0.0) || !std::isfinite(z)) throw NumericDivergence("total_loss: degenerate prediction normalizer");

  std::vector<double> dz_terms;
  for (const auto& t : terms) {
    const auto lreg = regression_loss(*t.pred, *t.gt, z, zgt);
    *t.value = confidence_loss(lreg, *t.conf, alpha);
    if (!t.d_points) continue;
    const int w = t.gt->width(), h = t.gt->height();
    *t.d_points = Grid<Vec3>(w, h, Vec3::Zero());
    *t.d_conf = Grid<double>(w, h, 0.0);
    for (std::size_t k = 0; k < lreg.values.size(); ++k) {
      if (!lreg.valid[k]) continue;
      const double c = (*t.conf)[k];
      const double l = lreg.values[k];
      (*t.d_conf)[k] = t.weight * (l - alpha / c);
      if (l <= 0.0) continue;
      const Vec3& x = t.pred->points[k];
      const Vec3 u = (x / z - t.gt->points[k] / zgt) / l;
      (*t.d_points)[k] = t.weight * c * u / z;
      dz_terms.push_back(-t.weight * c * u.dot(x) / (z * z));
    }
  }
  bool any_grad = false;
  for (const auto& t : terms) any_grad |= t.d_points != nullptr;
  if (!any_grad) return;
  const double dl_dz = pairwise_sum(dz_terms);
  for (const auto& t : terms) {
    for (std::size_t k = 0; k < t.gt->points.size(); ++k) {
      if (!t.gt->valid[k]) continue;
      const Vec3& x = t.pred->points[k];
      const double nx = x.norm();
      if (nx > 0.0) (*t.d_points)[k] += dl_dz * x / (n * nx);
    }
  }
}

inline LossBreakdown total_loss_impl(const PairPrediction& pred, const PairTarget& gt, const LossOptions& opt,
                                     LossGradient* grad) {
  LossBreakdown out;
  out.alpha = opt.alpha;
  out.beta = opt.beta;
  auto weight = [&](const PointMap& g, double w) {
    if (!opt.mean_normalized) return w;
    return w / std::max<double>(1.0, static_cast<double>(g.valid_count()));
  };
  const double w11 = weight(gt.x11, 1.0), w21 = weight(gt.x21, 1.0), w22 = weight(gt.x22, opt.beta);
  double v11 = 0.0, v21 = 0.0, v22 = 0.0;
  accumulate_group({{&pred.x11, &gt.x11, &pred.c11, w11, &v11, grad ? &grad->d_x11 : nullptr, grad ? &grad->d_c11 : nullptr},
                    {&pred.x21, &gt.x21, &pred.c21, w21, &v21, grad ? &grad->d_x21 : nullptr, grad ? &grad->d_c21 : nullptr}},
                   opt.alpha);
  accumulate_group({{&pred.x22, &gt.x22, &pred.c22, w22, &v22, grad ? &grad->d_x22 : nullptr, grad ? &grad->d_c22 : nullptr}},
                   opt.alpha);
  if (opt.mean_normalized) {
    v11 /= std::max<double>(1.0, static_cast<double>(gt.x11.valid_count()));
    v21 /= std::max<double>(1.0, static_cast<double>(gt.x21.valid_count()));
    v22 /= std::max<double>(1.0, static_cast<double>(gt.x22.valid_count()));
  }
  out.l11 = v11;
  out.l21 = v21;
  out.l22 = v22;
  out.total = out.l11 + out.l21 + opt.beta * out.l22;
  if (!std::isfinite(out.total)) throw NumericDivergence("total_loss: non-finite loss");
  return out;
}

}  // namespace detail

// L = lconf(1,1) + lconf(2,1) + beta * lconf(2,2), with z1 shared by X^{1,1}
// and X^{2,1} and z2 from X^{2,2}. Normalizers are computed on gt-valid pixels.
inline LossBreakdown total_loss(const PairPrediction& pred, const PairTarget& gt, const LossOptions& opt = {}) {
  return detail::total_loss_impl(pred, gt, opt, nullptr);
}

// Same value plus the analytic gradient with respect to predicted points and confidences.
inline LossBreakdown total_loss(const PairPrediction& pred, const PairTarget& gt, const LossOptions& opt,
                                LossGradient& grad) {
  return detail::total_loss_impl(pred, gt, opt, &grad);
}

// Minimizer over C >= 1 of C * lreg - alpha * log C.
inline double optimal_confidence(double lreg, double alpha) {
  if (lreg <= 0.0) return std::numeric_limits<double>::infinity();
  return std::max(1.0, alpha / lreg);
}

}  // namespace pmap
