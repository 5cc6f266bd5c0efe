#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "mvq/core.hpp"
#include "mvq/ellipse.hpp"
#include "mvq/quadric.hpp"
#include "mvq/random.hpp"

namespace mvq {

/// Monte Carlo estimate with its binomial standard error.
struct IouEstimate {
  double value = 0.0;
  double stderr_value = 0.0;
};

namespace detail {

/// Membership test (p - c)^T A (p - c) <= 1 precomputed as
/// v = diag(1/s) R^T (p - c), level = |v|^2.
struct EllipsoidTester {
  Eigen::Matrix3d world_to_unit;
  Eigen::Vector3d center;

  explicit EllipsoidTester(const EllipsoidParams& q)
      : world_to_unit(q.semi_axes.cwiseInverse().asDiagonal() *
                      rotation_zyx(q.angles).transpose()),
        center(q.center) {
    if (!(q.semi_axes.minCoeff() > 0.0)) {
      throw std::invalid_argument("ellipsoid semi-axes must be positive");
    }
  }

  bool contains(const Eigen::Vector3d& p) const {
    return (world_to_unit * (p - center)).squaredNorm() <= 1.0;
  }
};

/// Half-extents of the tight axis-aligned bounding box: row norms of
/// R diag(s).
inline Eigen::Vector3d aabb_half_extents(const EllipsoidParams& q) {
  const Eigen::Matrix3d m = rotation_zyx(q.angles) * q.semi_axes.asDiagonal();
  return m.rowwise().norm();
}

}  // namespace detail

/// 3D intersection-over-union of two ellipsoids, estimated by uniform
/// sampling of the union of their bounding boxes. The standard error is
/// the binomial error sqrt(p (1-p) / n_union) over samples that landed
/// in the union. Deterministic for a fixed seed.
inline IouEstimate o3d(const EllipsoidParams& qa, const EllipsoidParams& qb,
                       int n_samples = 100000, std::uint64_t seed = 0) {
  if (n_samples < 1) {
    throw std::invalid_argument("o3d: sample count must be positive");
  }
  const detail::EllipsoidTester ta(qa), tb(qb);
  const Eigen::Vector3d ha = detail::aabb_half_extents(qa);
  const Eigen::Vector3d hb = detail::aabb_half_extents(qb);
  const Eigen::Vector3d lo =
      (qa.center - ha).cwiseMin(qb.center - hb);
  const Eigen::Vector3d hi =
      (qa.center + ha).cwiseMax(qb.center + hb);

  Rng rng(Rng::derive(seed, 0x03d));
  long long in_union = 0, in_both = 0;
  for (int i = 0; i < n_samples; ++i) {
    const Eigen::Vector3d p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                            rng.uniform(lo.z(), hi.z()));
    const bool a = ta.contains(p);
    const bool b = tb.contains(p);
    if (a || b) ++in_union;
    if (a && b) ++in_both;
  }
  if (in_union == 0) {
    return {0.0, 0.0};
  }
  const double p = static_cast<double>(in_both) / static_cast<double>(in_union);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(in_union))};
}

/// Angle in degrees between the major axes of two ellipsoids, in
/// [0, 90] (axes are undirected). When either ellipsoid's two largest
/// semi-axes coincide to within 1e-9 relative, the major direction is
/// undefined: `ambiguous` is set and the angle reported as 0.
struct AxisAngleResult {
  double degrees = 0.0;
  bool ambiguous = false;
};

inline AxisAngleResult axis_angle_error(const EllipsoidParams& qa,
                                        const EllipsoidParams& qb) {
  auto major_axis = [](const EllipsoidParams& q, bool* ambiguous) {
    int imax = 0;
    q.semi_axes.maxCoeff(&imax);
    double second = -1.0;
    for (int i = 0; i < 3; ++i) {
      if (i != imax) second = std::max(second, q.semi_axes(i));
    }
    if (q.semi_axes(imax) - second <= 1e-9 * q.semi_axes(imax)) {
      *ambiguous = true;
    }
    return Eigen::Vector3d(rotation_zyx(q.angles).col(imax));
  };

  AxisAngleResult out;
  const Eigen::Vector3d ua = major_axis(qa, &out.ambiguous);
  const Eigen::Vector3d ub = major_axis(qb, &out.ambiguous);
  if (out.ambiguous) {
    return out;
  }
  const double c = std::min(1.0, std::abs(ua.dot(ub)));
  out.degrees = std::acos(c) * 180.0 / kPi;
  return out;
}

/// Euclidean distance between ellipsoid centers.
inline double position_error(const EllipsoidParams& qa, const EllipsoidParams& qb) {
  return (qa.center - qb.center).norm();
}

/// 2D intersection-over-union of two ellipses, same estimator as o3d.
inline IouEstimate ellipse_iou_2d(const Ellipse& ea, const Ellipse& eb,
                                  int n_samples = 100000, std::uint64_t seed = 0) {
  if (n_samples < 1) {
    throw std::invalid_argument("ellipse_iou_2d: sample count must be positive");
  }
  auto half_extents = [](const Ellipse& e) {
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    return Eigen::Vector2d(std::sqrt(sq(e.a * c) + sq(e.b * s)),
                           std::sqrt(sq(e.a * s) + sq(e.b * c)));
  };
  auto unit_map = [](const Ellipse& e) {
    const Eigen::Matrix2d rot = Eigen::Rotation2Dd(e.theta).toRotationMatrix();
    return Eigen::Matrix2d(Eigen::Vector2d(1.0 / e.a, 1.0 / e.b).asDiagonal() *
                           rot.transpose());
  };
  const Eigen::Matrix2d ma = unit_map(ea), mb = unit_map(eb);
  const Eigen::Vector2d ca(ea.x, ea.y), cb(eb.x, eb.y);
  const Eigen::Vector2d hx = half_extents(ea), hy = half_extents(eb);
  const Eigen::Vector2d lo = (ca - hx).cwiseMin(cb - hy);
  const Eigen::Vector2d hi = (ca + hx).cwiseMax(cb + hy);

  Rng rng(Rng::derive(seed, 0x102d));
  long long in_union = 0, in_both = 0;
  for (int i = 0; i < n_samples; ++i) {
    const Eigen::Vector2d p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()));
    const bool a = (ma * (p - ca)).squaredNorm() <= 1.0;
    const bool b = (mb * (p - cb)).squaredNorm() <= 1.0;
    if (a || b) ++in_union;
    if (a && b) ++in_both;
  }
  if (in_union == 0) {
    return {0.0, 0.0};
  }
  const double p = static_cast<double>(in_both) / static_cast<double>(in_union);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(in_union))};
}

}  // namespace mvq
