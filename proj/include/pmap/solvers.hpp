#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pmap/geometry.hpp"

namespace pmap {

struct FocalEstimate {
  double focal = 0.0;
  int iterations = 0;
  bool converged = false;
};

// x -> scale * (R x + t)
struct ScaledPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x + translation); }
  // Rotation and translation direction; the magnitude is only defined up to scale.
  RigidPose rigid() const { return {rotation, translation}; }
};

struct WeiszfeldOptions {
  int max_iter = 100;
  double tol = 1e-10;
  double min_residual = 1e-8;
};

// Robust focal from a self-frame pointmap: minimizes
//   sum_p || (i - cx, j - cy) - f * (x/z, y/z) ||
// by Weiszfeld reweighting (w = 1 / residual), starting from least squares.
inline FocalEstimate weiszfeld_focal(const PointMap& pm, Vec2 principal, const WeiszfeldOptions& opt = {}) {
  std::vector<Vec2> obs, dir;
  for (int j = 0; j < pm.height(); ++j)
    for (int i = 0; i < pm.width(); ++i) {
      if (!pm.valid(i, j)) continue;
      const Vec3& p = pm.points(i, j);
      if (!(p.z() > 0.0) || !p.allFinite()) continue;
      obs.emplace_back(i - principal.x(), j - principal.y());
      dir.emplace_back(p.x() / p.z(), p.y() / p.z());
    }
  require(obs.size() >= 10, "weiszfeld_focal: needs at least 10 valid pixels in front of the camera");

  FocalEstimate est;
  auto solve = [&](const std::vector<double>* w) {
    std::vector<double> num(obs.size()), den(obs.size());
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const double wk = w ? (*w)[k] : 1.0;
      num[k] = wk * obs[k].dot(dir[k]);
      den[k] = wk * dir[k].squaredNorm();
    }
    const double d = pairwise_sum(den);
    return d > 0.0 ? pairwise_sum(num) / d : std::numeric_limits<double>::quiet_NaN();
  };

  double f = solve(nullptr);
  if (!std::isfinite(f) || f <= 0.0) return est;  // every ray on the principal axis
  std::vector<double> w(obs.size());
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (std::size_t k = 0; k < obs.size(); ++k)
      w[k] = 1.0 / std::max(opt.min_residual, (obs[k] - f * dir[k]).norm());
    const double next = solve(&w);
    est.iterations = it;
    if (!std::isfinite(next) || next <= 0.0) return est;
    const double change = std::abs(next - f) / std::abs(f);
    f = next;
    if (change < opt.tol) {
      est.converged = true;
      break;
    }
  }
  est.focal = f;
  return est;
}

// Closed-form least-squares focal (no reweighting); baseline for robustness checks.
inline double least_squares_focal(const PointMap& pm, Vec2 principal) {
  double num = 0.0, den = 0.0;
  for (int j = 0; j < pm.height(); ++j)
    for (int i = 0; i < pm.width(); ++i) {
      const Vec3& p = pm.points(i, j);
      if (!pm.valid(i, j) || !(p.z() > 0.0)) continue;
      const Vec2 d(p.x() / p.z(), p.y() / p.z());
      num += Vec2(i - principal.x(), j - principal.y()).dot(d);
      den += d.squaredNorm();
    }
  return num / den;
}

// Weighted similarity fit: argmin sum w ||s (R x + t) - y||^2.
inline ScaledPose weighted_similarity(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                      const std::vector<double>& weight) {
  require(src.size() == dst.size() && src.size() == weight.size(), "similarity: size mismatch");
  require(src.size() >= 3, "similarity: needs at least 3 points");
  double wsum = 0.0;
  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    wsum += weight[k];
    ms += weight[k] * src[k];
    md += weight[k] * dst[k];
  }
  require(wsum > 0.0, "similarity: weights sum to zero");
  ms /= wsum;
  md /= wsum;
  Mat3 cov = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Vec3 a = src[k] - ms, b = dst[k] - md;
    cov += weight[k] * b * a.transpose();
    var_src += weight[k] * a.squaredNorm();
  }
  cov /= wsum;
  var_src /= wsum;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0) || var_src <= 0.0)
    throw DegenerateInput("similarity: rank-deficient cross-covariance (collinear points)");
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  ScaledPose out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (sv.asDiagonal() * s).trace() / var_src;
  require(out.scale > 0.0, "similarity: nonpositive scale");
  // s R ms + tau = md, and tau = s t
  out.translation = (md - out.scale * out.rotation * ms) / out.scale;
  return out;
}

// Maps X^{2,2} onto X^{2,1}: returns (s, R, t) minimizing
//   sum sqrt(C22 C21) || s (R X22 + t) - X21 ||^2
// over the intersection of both valid sets. That is the pose of camera 2 in
// frame 1 (P_{2,1}) plus the scale between the two maps.
inline ScaledPose procrustes_pose(const PointMap& x22, const PointMap& x21, const ConfidenceMap& c22,
                                  const ConfidenceMap& c21) {
  require(x22.points.same_shape(x21.points) && c22.same_shape(x22.points) && c21.same_shape(x21.points),
          "procrustes_pose: dimension mismatch");
  std::vector<Vec3> src, dst;
  std::vector<double> w;
  for (std::size_t k = 0; k < x22.points.size(); ++k) {
    if (!x22.valid[k] || !x21.valid[k]) continue;
    src.push_back(x22.points[k]);
    dst.push_back(x21.points[k]);
    w.push_back(std::sqrt(c22[k] * c21[k]));
  }
  if (src.size() < 3) throw DegenerateInput("procrustes_pose: fewer than 3 jointly valid pixels");
  return weighted_similarity(src, dst, w);
}

inline double procrustes_objective(const ScaledPose& p, const PointMap& x22, const PointMap& x21,
                                   const ConfidenceMap& c22, const ConfidenceMap& c21) {
  std::vector<double> terms;
  for (std::size_t k = 0; k < x22.points.size(); ++k) {
    if (!x22.valid[k] || !x21.valid[k]) continue;
    terms.push_back(std::sqrt(c22[k] * c21[k]) * (p.apply(x22.points[k]) - x21.points[k]).squaredNorm());
  }
  return pairwise_sum(terms);
}

namespace detail {

// DLT on normalized image coordinates; returns x_cam = R X + t.
inline std::optional<RigidPose> dlt_pose(const std::vector<Vec3>& pts, const std::vector<Vec2>& norm_px,
                                         const std::vector<std::size_t>& idx) {
  const std::size_t n = idx.size();
  if (n < 6) return std::nullopt;
  Vec3 c = Vec3::Zero();
  for (auto k : idx) c += pts[k];
  c /= static_cast<double>(n);
  double spread = 0.0;
  for (auto k : idx) spread += (pts[k] - c).norm();
  spread /= static_cast<double>(n);
  if (!(spread > 0.0)) return std::nullopt;
  const double inv = 1.0 / spread;

  Eigen::MatrixXd a(2 * n, 12);
  a.setZero();
  for (std::size_t r = 0; r < n; ++r) {
    const Vec3 x = (pts[idx[r]] - c) * inv;
    const Vec2& u = norm_px[idx[r]];
    Eigen::Matrix<double, 1, 4> xh(x.x(), x.y(), x.z(), 1.0);
    a.block<1, 4>(2 * r, 0) = xh;
    a.block<1, 4>(2 * r, 8) = -u.x() * xh;
    a.block<1, 4>(2 * r + 1, 4) = xh;
    a.block<1, 4>(2 * r + 1, 8) = -u.y() * xh;
  }
  Eigen::VectorXd sol;
  if (n == 6) {
    // 12x12 square system; the null vector is the last right singular vector
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    sol = svd.matrixV().col(11);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(a.transpose() * a);
    sol = es.eigenvectors().col(0);
  }
  Eigen::Matrix<double, 3, 4> p;
  for (int r = 0; r < 3; ++r)
    for (int q = 0; q < 4; ++q) p(r, q) = sol(4 * r + q);
  // undo the 3D normalization: X' = (X - c) * inv
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() *= inv;
  t.topRightCorner<3, 1>() = -c * inv;
  p = p * t;

  Mat3 m = p.leftCols<3>();
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  double lambda = svd.singularValues().mean();
  if (!(lambda > 0.0)) return std::nullopt;
  if (m.determinant() < 0.0) {
    p = -p;
    m = -m;
  }
  RigidPose pose;
  pose.rotation = project_to_rotation(m);
  pose.translation = p.col(3) / lambda;
  // cheirality: most sample points must be in front of the camera
  int front = 0;
  for (auto k : idx) front += pose.apply(pts[k]).z() > 0.0;
  if (2 * front < static_cast<int>(n)) return std::nullopt;
  return pose;
}

// Gauss-Newton on the pixel reprojection error over `idx`.
inline RigidPose refine_pose(RigidPose pose, const std::vector<Vec3>& pts, const std::vector<Vec2>& px,
                             const std::vector<std::size_t>& idx, const CameraIntrinsics& k, int iters = 10) {
  for (int it = 0; it < iters; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (auto n : idx) {
      const Vec3 xc = pose.apply(pts[n]);
      if (xc.z() <= 0.0) continue;
      const double iz = 1.0 / xc.z();
      const Vec2 r(k.fx * xc.x() * iz + k.cx - px[n].x(), k.fy * xc.y() * iz + k.cy - px[n].y());
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * xc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * xc.y() * iz * iz;
      // left perturbation: xc' = exp(w) xc + dt
      Eigen::Matrix<double, 3, 6> dx;
      dx.leftCols<3>() << 0.0, xc.z(), -xc.y(), -xc.z(), 0.0, xc.x(), xc.y(), -xc.x(), 0.0;
      dx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dx;
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    const Eigen::Matrix<double, 6, 1> step = -h.ldlt().solve(g);
    if (!step.allFinite()) break;
    const Mat3 dr = rotation_exp(step.head<3>());
    pose.rotation = project_to_rotation(dr * pose.rotation);
    pose.translation = dr * pose.translation + step.tail<3>();
    if (step.norm() < 1e-14) break;
  }
  return pose;
}

}  // namespace detail

struct PnpOptions {
  int iterations = 1000;
  double threshold_px = 2.0;
  std::uint64_t seed = 0;
};

// RANSAC over 6-point DLT solves, inliers by pixel reprojection error,
// refit + refinement on the final inlier set. Returns x_cam = R X + t with
// scale fixed to 1, or nullopt when no model reaches 6 inliers.
inline std::optional<ScaledPose> pnp_ransac_pose(const PointMap& pm_3d, const Grid<Vec2>& pixels,
                                                 const CameraIntrinsics& k, const PnpOptions& opt = {}) {
  require(pixels.same_shape(pm_3d.points), "pnp_ransac_pose: dimension mismatch");
  k.validate();
  std::vector<Vec3> pts;
  std::vector<Vec2> px, npx;
  for (std::size_t n = 0; n < pm_3d.points.size(); ++n) {
    if (!pm_3d.valid[n]) continue;
    pts.push_back(pm_3d.points[n]);
    px.push_back(pixels[n]);
    npx.emplace_back((pixels[n].x() - k.cx) / k.fx, (pixels[n].y() - k.cy) / k.fy);
  }
  const std::size_t n = pts.size();
  if (n < 6) return std::nullopt;

  const double thr2 = opt.threshold_px * opt.threshold_px;
  auto inliers_of = [&](const RigidPose& pose, std::vector<std::size_t>* out) {
    std::size_t count = 0;
    const Mat3& r = pose.rotation;
    const Vec3& t = pose.translation;
    for (std::size_t q = 0; q < n; ++q) {
      const Vec3 xc = r * pts[q] + t;
      if (xc.z() <= 0.0) continue;
      const double du = k.fx * xc.x() / xc.z() + k.cx - px[q].x();
      const double dv = k.fy * xc.y() / xc.z() + k.cy - px[q].y();
      if (du * du + dv * dv < thr2) {
        ++count;
        if (out) out->push_back(q);
      }
    }
    return count;
  };

  Rng rng(opt.seed);
  std::optional<RigidPose> best;
  std::size_t best_count = 0;
  std::vector<std::size_t> sample(6);
  for (int it = 0; it < opt.iterations; ++it) {
    for (std::size_t a = 0; a < 6; ++a) {
      bool fresh;
      do {
        sample[a] = rng.index(n);
        fresh = std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(a), sample[a]) ==
                sample.begin() + static_cast<std::ptrdiff_t>(a);
      } while (!fresh);
    }
    const auto pose = detail::dlt_pose(pts, npx, sample);
    if (!pose) continue;
    const std::size_t c = inliers_of(*pose, nullptr);
    if (c > best_count) {  // strict: earliest iteration wins ties
      best_count = c;
      best = pose;
    }
  }
  if (!best || best_count < 6) return std::nullopt;

  std::vector<std::size_t> inl;
  inliers_of(*best, &inl);
  RigidPose pose = *best;
  if (auto refit = detail::dlt_pose(pts, npx, inl)) pose = *refit;
  pose = detail::refine_pose(pose, pts, px, inl, k);
  inl.clear();
  inliers_of(pose, &inl);
  if (inl.size() >= 6) pose = detail::refine_pose(pose, pts, px, inl, k);
  return ScaledPose{pose.rotation, pose.translation, 1.0};
}

struct PoseErrors {
  double rra_deg = 0.0;
  double rta_deg = 0.0;
  bool rta_defined = true;
};

// Rotation geodesic and angle between translation directions, in degrees.
inline PoseErrors pose_metrics(const ScaledPose& pred, const RigidPose& gt) {
  constexpr double kDeg = 180.0 / std::numbers::pi;
  PoseErrors e;
  e.rra_deg = rotation_angle(pred.rotation, gt.rotation) * kDeg;
  const double a = pred.translation.norm(), b = gt.translation.norm();
  if (a == 0.0 || b == 0.0) {
    e.rta_defined = false;
    e.rta_deg = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  e.rta_deg = std::acos(std::clamp(pred.translation.dot(gt.translation) / (a * b), -1.0, 1.0)) * kDeg;
  return e;
}

}  // namespace pmap
