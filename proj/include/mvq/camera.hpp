#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "mvq/ellipse.hpp"
#include "mvq/errors.hpp"
#include "mvq/quadric.hpp"

namespace mvq {

/// Pinhole camera: intrinsics K and world-to-camera rigid transform
/// x_cam = R x_world + t. Construction validates fx, fy > 0 and that R is
/// a proper rotation to 1e-9.
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Camera() = default;

  Camera(double fx, double fy, double cx, double cy, const Eigen::Matrix3d& r,
         const Eigen::Vector3d& t_)
      : R(r), t(t_) {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw std::invalid_argument("Camera: focal lengths must be positive");
    }
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-9 ||
        std::abs(r.determinant() - 1.0) > 1e-9) {
      throw std::invalid_argument("Camera: R is not a proper rotation");
    }
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  }

  /// 3x4 projection matrix K [R | t].
  Eigen::Matrix<double, 3, 4> projection() const {
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = K * R;
    p.col(3) = K * t;
    return p;
  }

  /// Camera center in world coordinates, -R^T t.
  Eigen::Vector3d center() const { return -R.transpose() * t; }
};

/// Camera at `position` looking at `target`. The optical axis is
/// target - position; the image x-axis is made orthogonal to `up`
/// (world +z by default, with +y fallback when the axis is vertical).
inline Camera look_at_camera(double fx, double fy, double cx, double cy,
                             const Eigen::Vector3d& position,
                             const Eigen::Vector3d& target,
                             const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ()) {
  const Eigen::Vector3d forward = target - position;
  if (forward.norm() < 1e-12) {
    throw std::invalid_argument("look_at_camera: position equals target");
  }
  const Eigen::Vector3d z = forward.normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) {
    x = z.cross(Eigen::Vector3d::UnitY());
  }
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return Camera(fx, fy, cx, cy, r, -r * position);
}

/// Projects a dual quadric to the dual conic of its image outline:
/// C = P Q P^T, returned normalized with (2,2) = -1. Throws BehindCamera
/// when the ellipsoid centroid has non-positive camera depth and
/// DegenerateConic when the image is not a real bounded ellipse.
inline DualConic project_dual_quadric(const DualQuadric& quadric, const Camera& cam) {
  const Eigen::Matrix4d& m = quadric.matrix();
  const double scale = m.norm();
  if (!(scale > 0.0) || std::abs(m(3, 3)) < 1e-12 * scale) {
    throw NotAnEllipsoid("project_dual_quadric: quadric centroid at infinity");
  }
  const Eigen::Vector3d centroid = -(m / (-m(3, 3))).topRightCorner<3, 1>();
  const double depth = (cam.R * centroid + cam.t).z();
  if (!(depth > 0.0)) {
    throw BehindCamera("ellipsoid centroid is behind the camera");
  }

  const Eigen::Matrix<double, 3, 4> p = cam.projection();
  Eigen::Matrix3d c = p * m * p.transpose();
  c = 0.5 * (c + c.transpose());
  const double cscale = c.norm();
  if (!(cscale > 0.0) || std::abs(c(2, 2)) < 1e-12 * cscale) {
    throw DegenerateConic("projected conic has (2,2) entry too close to zero");
  }
  const DualConic conic(Eigen::Matrix3d(c / (-c(2, 2))));
  dual_conic_to_ellipse(conic);  // validates signature and rank
  return conic;
}

}  // namespace mvq
