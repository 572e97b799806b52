#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "pmap/common.hpp"

namespace pmap {

// Zero-skew pinhole intrinsics. Pixel (i, j) is the pixel center at
// continuous coordinate (i, j), i = column.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    require(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0,
            "intrinsics: focal lengths must be positive");
    require(std::isfinite(cx) && std::isfinite(cy), "intrinsics: principal point must be finite");
    require(width > 0 && height > 0, "intrinsics: image size must be positive");
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  // K^-1 (u, v, 1)
  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

  // Intrinsics of the window [x0, x0+w) x [y0, y0+h).
  CameraIntrinsics cropped(int x0, int y0, int w, int h) const {
    return {fx, fy, cx - x0, cy - y0, w, h};
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

// Rigid transform p -> R p + t.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  RigidPose operator*(const RigidPose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }

  RigidPose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -rt * translation};
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  bool is_orthonormal(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           rotation.determinant() > 0.0;
  }

  static RigidPose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
    return {q.normalized().toRotationMatrix(), t};
  }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }
};

// Nearest rotation matrix (polar decomposition through SVD).
inline Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

inline Mat3 rotation_exp(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

// Geodesic distance between rotations, radians. Uses ||A - B||_F = 2 sqrt(2) sin(theta / 2),
// which stays accurate for tiny angles where the trace formula does not.
inline double rotation_angle(const Mat3& a, const Mat3& b) {
  const double s = (a - b).norm() / (2.0 * std::sqrt(2.0));
  return 2.0 * std::asin(std::clamp(s, 0.0, 1.0));
}

struct DepthMap {
  Grid<double> values;
  Mask mask;

  DepthMap() = default;
  DepthMap(int w, int h) : values(w, h, 0.0), mask(w, h, 0) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask.data()) n += m != 0;
    return n;
  }
  double density() const {
    return mask.size() == 0 ? 0.0 : static_cast<double>(valid_count()) / static_cast<double>(mask.size());
  }

  void validate() const {
    require(values.same_shape(mask), "depth: mask shape mismatch");
    for (std::size_t k = 0; k < mask.size(); ++k)
      if (mask[k]) require(std::isfinite(values[k]) && values[k] > 0.0, "depth: nonpositive or non-finite depth at a valid pixel");
  }

  DepthMap crop(int x0, int y0, int w, int h) const {
    DepthMap out;
    out.values = values.crop(x0, y0, w, h);
    out.mask = mask.crop(x0, y0, w, h);
    return out;
  }
};

// X^{n,m}: image `subject` expressed in the frame of camera `frame`.
// Invalid pixels hold (0,0,0).
struct PointMap {
  Grid<Vec3> points;
  Mask valid;
  int subject = 1;
  int frame = 1;

  PointMap() = default;
  PointMap(int w, int h, int subject_ = 1, int frame_ = 1)
      : points(w, h, Vec3::Zero()), valid(w, h, 0), subject(subject_), frame(frame_) {}

  int width() const { return points.width(); }
  int height() const { return points.height(); }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : valid.data()) n += m != 0;
    return n;
  }

  void set(int i, int j, const Vec3& p) {
    points(i, j) = p;
    valid(i, j) = 1;
  }
  void invalidate(int i, int j) {
    points(i, j) = Vec3::Zero();
    valid(i, j) = 0;
  }

  PointMap crop(int x0, int y0, int w, int h) const {
    PointMap out;
    out.points = points.crop(x0, y0, w, h);
    out.valid = valid.crop(x0, y0, w, h);
    out.subject = subject;
    out.frame = frame;
    return out;
  }

  PointMap scaled(double s) const {
    PointMap out = *this;
    for (auto& p : out.points.data()) p *= s;
    return out;
  }

  DepthMap depth() const {
    DepthMap d(width(), height());
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (valid[k] && points[k].z() > 0.0) {
        d.values[k] = points[k].z();
        d.mask[k] = 1;
      }
    }
    return d;
  }
};

// Confidence values, each >= 1.
using ConfidenceMap = Grid<double>;

// Linear RGB in [0, 1].
using RgbImage = Grid<Vec3>;

inline PointMap unproject(const DepthMap& depth, const CameraIntrinsics& k, int subject = 1) {
  k.validate();
  require(depth.values.same_shape(k.width, k.height), "unproject: depth dimensions do not match intrinsics");
  depth.validate();
  PointMap pm(k.width, k.height, subject, subject);
  for (int j = 0; j < k.height; ++j) {
    for (int i = 0; i < k.width; ++i) {
      if (!depth.mask(i, j)) continue;
      const double d = depth.values(i, j);
      pm.set(i, j, {(i * d - k.cx * d) / k.fx, (j * d - k.cy * d) / k.fy, d});
    }
  }
  return pm;
}

struct Projection {
  DepthMap depth;
  Grid<Vec2> pixels;  // (u, v) for valid pixels, zero otherwise
};

inline Projection project(const PointMap& pm, const CameraIntrinsics& k) {
  k.validate();
  Projection out{DepthMap(pm.width(), pm.height()), Grid<Vec2>(pm.width(), pm.height(), Vec2::Zero())};
  for (std::size_t n = 0; n < pm.points.size(); ++n) {
    if (!pm.valid[n]) continue;
    const Vec3& p = pm.points[n];
    if (!(p.z() > 0.0) || !p.allFinite()) continue;
    out.depth.values[n] = p.z();
    out.depth.mask[n] = 1;
    out.pixels[n] = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  }
  return out;
}

// X^{n,k} = P_{m,k} X^{n,m}. `to_frame` tags the result.
inline PointMap swap_frame(const PointMap& pm, const RigidPose& p_mk, int from_frame, int to_frame) {
  require(pm.frame == from_frame, "swap_frame: pointmap is not expressed in the source frame");
  PointMap out = pm;
  out.frame = to_frame;
  for (std::size_t n = 0; n < out.points.size(); ++n)
    if (out.valid[n]) out.points[n] = p_mk.apply(pm.points[n]);
  return out;
}

// P_{m,k} = P_k P_m^-1 for world-to-camera extrinsics P_m, P_k.
inline RigidPose compose_relative(const RigidPose& p_m, const RigidPose& p_k) { return p_k * p_m.inverse(); }

}  // namespace pmap
