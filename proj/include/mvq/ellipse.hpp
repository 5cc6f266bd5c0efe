#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "mvq/core.hpp"
#include "mvq/errors.hpp"

namespace mvq {

/// Five-parameter 2D ellipse in pixel coordinates, canonical form:
/// a >= b > 0 and theta in (-pi/2, pi/2]. Construction normalizes any
/// positive-axes input into this form (swapping axes rotates theta by
/// pi/2), so two parameterizations of the same point set compare equal.
struct Ellipse {
  double x = 0.0;      ///< center
  double y = 0.0;
  double a = 1.0;      ///< major semi-axis
  double b = 1.0;      ///< minor semi-axis
  double theta = 0.0;  ///< orientation of the a-axis, radians

  Ellipse() = default;

  Ellipse(double x_, double y_, double a_, double b_, double theta_)
      : x(x_), y(y_), a(a_), b(b_), theta(theta_) {
    if (!(a > 0.0) || !(b > 0.0)) {
      throw std::invalid_argument("Ellipse: semi-axes must be positive");
    }
    if (a < b) {
      std::swap(a, b);
      theta += kPi / 2.0;
    }
    theta = fold_half_pi(theta);
  }

  /// Reference side length 2*sqrt(a^2+b^2): twice the bounding-box
  /// half-diagonal, so a centered square of this side contains the
  /// ellipse at every orientation.
  double enclosing_side() const { return 2.0 * std::sqrt(a * a + b * b); }
};

/// Symmetric 3x3 matrix of an ellipse in dual (tangent-line) form.
/// The matrix is defined up to scale; when (2,2) is nonzero we keep the
/// normalization with (2,2) = -1.
class DualConic {
 public:
  explicit DualConic(const Eigen::Matrix3d& m) : m_(0.5 * (m + m.transpose())) {
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > 1e-12 * scale) {
      throw std::invalid_argument("DualConic: matrix is not symmetric");
    }
  }

  const Eigen::Matrix3d& matrix() const { return m_; }

 private:
  Eigen::Matrix3d m_;
};

/// Dual conic of an ellipse, normalized with (2,2) = -1. With
/// S = R(theta) diag(a^2, b^2) R(theta)^T and center c, the dual form is
///   [ S - c c^T   -c ]
///   [   -c^T      -1 ]
/// (adjoint of the point conic, rescaled).
inline DualConic ellipse_to_dual_conic(const Ellipse& e) {
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(e.theta).toRotationMatrix();
  const Eigen::Matrix2d shape =
      rot * Eigen::Vector2d(e.a * e.a, e.b * e.b).asDiagonal() * rot.transpose();
  const Eigen::Vector2d c(e.x, e.y);
  Eigen::Matrix3d m;
  m.topLeftCorner<2, 2>() = shape - c * c.transpose();
  m.topRightCorner<2, 1>() = -c;
  m.bottomLeftCorner<1, 2>() = -c.transpose();
  m(2, 2) = -1.0;
  return DualConic(m);
}

/// Inverse of ellipse_to_dual_conic, accepting any scale multiple.
/// Throws DegenerateConic when the matrix does not describe a real,
/// bounded, nondegenerate ellipse (rank deficiency, zero (2,2) entry, or
/// wrong eigenvalue signature).
inline Ellipse dual_conic_to_ellipse(const DualConic& conic) {
  const Eigen::Matrix3d& m = conic.matrix();
  const double scale = m.norm();
  if (!(scale > 0.0) || std::abs(m(2, 2)) < 1e-12 * scale) {
    throw DegenerateConic("dual conic has (2,2) entry too close to zero");
  }
  if (std::abs(m.determinant()) < 1e-12 * scale * scale * scale) {
    throw DegenerateConic("dual conic is rank deficient");
  }

  const Eigen::Matrix3d n = m / (-m(2, 2));
  const Eigen::Vector2d c = -n.topRightCorner<2, 1>();
  const Eigen::Matrix2d shape = n.topLeftCorner<2, 2>() + c * c.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(shape);
  if (eig.info() != Eigen::Success) {
    throw DegenerateConic("dual conic eigendecomposition failed");
  }
  const Eigen::Vector2d lam = eig.eigenvalues();  // ascending
  if (!(lam(0) > 0.0)) {
    throw DegenerateConic("dual conic is not a real bounded ellipse");
  }
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  const double theta = std::atan2(major.y(), major.x());
  return Ellipse(c.x(), c.y(), std::sqrt(lam(1)), std::sqrt(lam(0)), theta);
}

}  // namespace mvq
