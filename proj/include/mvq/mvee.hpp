#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mvq/errors.hpp"
#include "mvq/quadric.hpp"

namespace mvq {

/// Minimum-volume enclosing ellipsoid of a 3D point set, used to seed
/// box-like object priors and as a reference shape oracle in tests.
///
/// Khachiyan's barycentric coordinate ascent on the lifted points
/// q_i = [p_i; 1]: repeatedly move weight toward the point with the
/// largest Mahalanobis level k_i = q_i^T M(u)^{-1} q_i until the dual
/// gap max_i k_i - 4 drops below `tol` (the optimum has k_i = 4 for all
/// support points). The returned ellipsoid is inflated by the final
/// worst level, so every input point is contained exactly.
///
/// Throws DegenerateInput when fewer than 4 points are given or the
/// points are affinely dependent (all near one plane).
inline EllipsoidParams min_volume_enclosing_ellipsoid(
    const std::vector<Eigen::Vector3d>& points, double tol = 1e-7,
    int max_iters = 10000) {
  const int n = static_cast<int>(points.size());
  if (n < 4) {
    throw DegenerateInput("minimum enclosing ellipsoid needs at least 4 points");
  }

  Eigen::Matrix<double, 4, Eigen::Dynamic> q(4, n);
  for (int i = 0; i < n; ++i) {
    q.col(i) << points[i], 1.0;
  }

  // Affine-dependence check on centered coordinates.
  {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : points) mean += p;
    mean /= n;
    Eigen::Matrix<double, 3, Eigen::Dynamic> centered(3, n);
    for (int i = 0; i < n; ++i) centered.col(i) = points[i] - mean;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const Eigen::VectorXd sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(2) < 1e-10 * sv(0)) {
      throw DegenerateInput("points are affinely dependent");
    }
  }

  Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0 / n);
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  for (int i = 0; i < n; ++i) {
    m += u(i) * q.col(i) * q.col(i).transpose();
  }

  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::Matrix4d minv = m.inverse();
    int j = 0;
    double kappa = -1.0;
    for (int i = 0; i < n; ++i) {
      const double k = q.col(i).dot(minv * q.col(i));
      if (k > kappa) {
        kappa = k;
        j = i;
      }
    }
    if (kappa - 4.0 <= tol) break;
    const double step = (kappa - 4.0) / (4.0 * (kappa - 1.0));
    u *= (1.0 - step);
    u(j) += step;
    m = (1.0 - step) * m + step * q.col(j) * q.col(j).transpose();
  }

  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) c += u(i) * points[i];
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i) s += u(i) * points[i] * points[i].transpose();
  s -= c * c.transpose();

  // Shape matrix: (p-c)^T A (p-c) <= 1 on the boundary, A = S^{-1}/3 at
  // the optimum. Rescale by the worst remaining level so truncation
  // error never leaves a point outside.
  Eigen::Matrix3d a = s.inverse() / 3.0;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d d = points[i] - c;
    worst = std::max(worst, d.dot(a * d));
  }
  if (worst > 1.0) a /= worst;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(a);
  const Eigen::Vector3d lam = eig.eigenvalues();  // ascending: lam(0) -> longest axis
  if (eig.info() != Eigen::Success || !(lam(0) > 0.0)) {
    throw DegenerateInput("enclosing ellipsoid shape matrix is not positive definite");
  }
  const Eigen::Matrix3d r = detail::frame_from_sorted_eigenvectors(
      eig.eigenvectors().col(0), eig.eigenvectors().col(1));

  EllipsoidParams out;
  out.center = c;
  out.semi_axes = Eigen::Vector3d(1.0 / std::sqrt(lam(0)), 1.0 / std::sqrt(lam(1)),
                                  1.0 / std::sqrt(lam(2)));
  out.angles = euler_zyx(r);
  return out;
}

}  // namespace mvq
