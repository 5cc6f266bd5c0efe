#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "mvq/core.hpp"
#include "mvq/errors.hpp"

namespace mvq {

/// Nine-parameter ellipsoid: intrinsic Z-Y-X Euler angles, center, and
/// semi-axes. This is the minimal state vector used by the estimator;
/// semi-axes must be positive but no ordering is enforced (the
/// canonical descending order is produced by decompose_dual_quadric).
struct EllipsoidParams {
  Eigen::Vector3d angles = Eigen::Vector3d::Zero();     ///< (z, y, x) radians
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d semi_axes = Eigen::Vector3d::Ones();  ///< > 0
};

/// Rotation matrix for intrinsic Z-Y-X Euler angles:
/// R = Rz(angles[0]) * Ry(angles[1]) * Rx(angles[2]).
inline Eigen::Matrix3d rotation_zyx(const Eigen::Vector3d& angles) {
  return (Eigen::AngleAxisd(angles(0), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(angles(1), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(angles(2), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

/// Inverse of rotation_zyx. At the gimbal singularity (|cos(y)| ~ 0) the
/// x angle is pinned to 0 and the z angle absorbs the remaining freedom,
/// so the returned triple always reproduces R through rotation_zyx.
inline Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& r) {
  const double sy = -r(2, 0);
  const double cy = std::sqrt(std::max(0.0, 1.0 - sy * sy));
  if (cy < 1e-9) {
    const double y = (sy > 0.0) ? kPi / 2.0 : -kPi / 2.0;
    // With y = +-pi/2 the z and x rotations share an axis; pin x = 0 and
    // read the combined angle off the second column.
    const double z = std::atan2(-r(0, 1), r(1, 1));
    return {z, y, 0.0};
  }
  const double z = std::atan2(r(1, 0), r(0, 0));
  const double y = std::asin(sy);
  const double x = std::atan2(r(2, 1), r(2, 2));
  return {z, y, x};
}

/// Symmetric 4x4 matrix of an ellipsoid in dual (tangent-plane) form,
/// defined up to scale; (3,3) = -1 when normalized.
class DualQuadric {
 public:
  explicit DualQuadric(const Eigen::Matrix4d& m) : m_(0.5 * (m + m.transpose())) {
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > 1e-12 * scale) {
      throw std::invalid_argument("DualQuadric: matrix is not symmetric");
    }
  }

  const Eigen::Matrix4d& matrix() const { return m_; }

 private:
  Eigen::Matrix4d m_;
};

/// Dual quadric of an ellipsoid, normalized with (3,3) = -1. With
/// B = R diag(s^2) R^T and center t:
///   [ B - t t^T   -t ]
///   [   -t^T      -1 ]
/// which equals Z diag(s^2, -1) Z^T for the pose Z = [R t; 0 1].
inline DualQuadric compose_dual_quadric(const EllipsoidParams& q) {
  if (!(q.semi_axes.minCoeff() > 0.0)) {
    throw std::invalid_argument("compose_dual_quadric: semi-axes must be positive");
  }
  const Eigen::Matrix3d r = rotation_zyx(q.angles);
  const Eigen::Matrix3d b =
      r * q.semi_axes.cwiseProduct(q.semi_axes).asDiagonal() * r.transpose();
  Eigen::Matrix4d m;
  m.topLeftCorner<3, 3>() = b - q.center * q.center.transpose();
  m.topRightCorner<3, 1>() = -q.center;
  m.bottomLeftCorner<1, 3>() = -q.center.transpose();
  m(3, 3) = -1.0;
  return DualQuadric(m);
}

namespace detail {

/// Deterministic orthonormal frame from eigenvectors sorted by descending
/// eigenvalue: the first two columns get a sign convention (first entry
/// with magnitude above 1e-12 made positive), the third is their cross
/// product so det(R) = +1 always.
inline Eigen::Matrix3d frame_from_sorted_eigenvectors(const Eigen::Vector3d& v0,
                                                      const Eigen::Vector3d& v1) {
  auto fix_sign = [](Eigen::Vector3d v) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0.0) v = -v;
        break;
      }
    }
    return v;
  };
  Eigen::Matrix3d r;
  r.col(0) = fix_sign(v0);
  r.col(1) = fix_sign(v1);
  r.col(2) = r.col(0).cross(r.col(1));
  return r;
}

}  // namespace detail

/// Inverse of compose_dual_quadric, accepting any scale multiple.
/// Returns the canonical parameterization: semi-axes sorted descending
/// and a right-handed frame with the sign convention from
/// frame_from_sorted_eigenvectors. Throws NotAnEllipsoid when the matrix
/// does not describe a real bounded ellipsoid.
inline EllipsoidParams decompose_dual_quadric(const DualQuadric& quadric) {
  const Eigen::Matrix4d& m = quadric.matrix();
  const double scale = m.norm();
  if (!(scale > 0.0) || std::abs(m(3, 3)) < 1e-12 * scale) {
    throw NotAnEllipsoid("dual quadric has (3,3) entry too close to zero");
  }
  const Eigen::Matrix4d n = m / (-m(3, 3));
  const Eigen::Vector3d t = -n.topRightCorner<3, 1>();
  const Eigen::Matrix3d b = n.topLeftCorner<3, 3>() + t * t.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(b);
  if (eig.info() != Eigen::Success) {
    throw NotAnEllipsoid("dual quadric eigendecomposition failed");
  }
  const Eigen::Vector3d lam = eig.eigenvalues();  // ascending
  if (!(lam(0) > 0.0)) {
    throw NotAnEllipsoid("dual quadric is not a real bounded ellipsoid");
  }
  const Eigen::Matrix3d r = detail::frame_from_sorted_eigenvectors(
      eig.eigenvectors().col(2), eig.eigenvectors().col(1));

  EllipsoidParams q;
  q.center = t;
  q.semi_axes = Eigen::Vector3d(std::sqrt(lam(2)), std::sqrt(lam(1)), std::sqrt(lam(0)));
  q.angles = euler_zyx(r);
  return q;
}

}  // namespace mvq
