#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>

#include "mvq/core.hpp"
#include "mvq/encoding.hpp"
#include "mvq/errors.hpp"

namespace mvq {

/// Log-variance parameterization of a scalar uncertainty: alpha = log(sigma^2).
/// Keeping the log keeps every downstream expression smooth and positive.
struct LogVariance {
  double alpha = 0.0;

  double variance() const { return std::exp(alpha); }
  double sigma() const { return std::exp(0.5 * alpha); }
};

/// Per-detection uncertainty: one log-variance per offset channel plus
/// one for the ellipse divergence channel.
struct DetectionUncertainty {
  LogVariance x, y, a, b, theta, s;
  LogVariance d;

  /// Offset-channel log-variances in encode order (dx dy da db dtheta ds).
  Eigen::Matrix<double, 6, 1> offset_alphas() const {
    Eigen::Matrix<double, 6, 1> v;
    v << x.alpha, y.alpha, a.alpha, b.alpha, theta.alpha, s.alpha;
    return v;
  }
};

/// smooth-L1 (Huber with unit threshold): quadratic inside |r| <= 1,
/// linear outside, C^1 at the junction.
inline double smooth_l1(double r) {
  const double ar = std::abs(r);
  return ar <= 1.0 ? 0.5 * r * r : ar - 0.5;
}

/// Derivative of smooth_l1; at |r| = 1 both branches give +-1.
inline double smooth_l1_deriv(double r) {
  return std::abs(r) <= 1.0 ? r : (r > 0.0 ? 1.0 : -1.0);
}

/// Value and gradient of the uncertainty-weighted offset loss
///   L = exp(-alpha) * smoothL1(r) + alpha / 2
/// for one offset channel, where r = z_ref - z_pred (folded into
/// (-1/2, 1/2] for the angle channel). Larger alpha discounts the data
/// term and pays a log-partition penalty; the minimizing alpha equals
/// log(2 * smoothL1(r)).
struct OffsetLoss {
  double value = 0.0;
  double d_pred = 0.0;   ///< dL/dz_pred
  double d_alpha = 0.0;  ///< dL/dalpha
  double residual = 0.0;
};

inline OffsetLoss offset_loss(double z_ref, double z_pred, LogVariance alpha,
                              bool is_angle = false) {
  OffsetLoss out;
  out.residual = is_angle ? rectify_angle(z_ref, z_pred) : (z_ref - z_pred);
  const double inv_var = std::exp(-alpha.alpha);
  const double s = smooth_l1(out.residual);
  out.value = inv_var * s + 0.5 * alpha.alpha;
  // dr/dz_pred = -1 on both branches (the fold is a constant shift).
  out.d_pred = -inv_var * smooth_l1_deriv(out.residual);
  out.d_alpha = -inv_var * s + 0.5;
  return out;
}

/// Gaussian view of a normalized ellipse: mean = center, covariance =
/// R(theta) diag(ea^2, eb^2) R(theta)^T.
struct GaussianEllipse {
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
};

inline GaussianEllipse ellipse_to_gaussian(const NormalizedEllipse& e) {
  if (!(e.ea > 0.0) || !(e.eb > 0.0)) {
    throw std::invalid_argument("ellipse_to_gaussian: axes must be positive");
  }
  GaussianEllipse g;
  g.mu << e.ex, e.ey;
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(e.etheta).toRotationMatrix();
  g.sigma = rot * Eigen::Vector2d(e.ea * e.ea, e.eb * e.eb).asDiagonal() * rot.transpose();
  return g;
}

namespace detail {

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
inline Eigen::Vector2d sym2_eigenvalues(const Eigen::Matrix2d& m) {
  const double mean = 0.5 * (m(0, 0) + m(1, 1));
  const double disc = std::sqrt(sq(0.5 * (m(0, 0) - m(1, 1))) + sq(m(0, 1)));
  return {mean - disc, mean + disc};
}

/// Validates that sigma is positive-definite with condition number below
/// 1e12; returns its inverse and determinant.
inline void checked_inverse_2x2(const Eigen::Matrix2d& sigma, const char* label,
                                Eigen::Matrix2d* inv, double* det) {
  const Eigen::Vector2d lam = sym2_eigenvalues(sigma);
  if (!(lam(0) > 0.0) || lam(1) / lam(0) > 1e12) {
    throw SingularCovariance(std::string(label) +
                             " covariance is singular or badly conditioned");
  }
  *det = sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(1, 0);
  *inv = Eigen::Matrix2d::Zero();
  (*inv)(0, 0) = sigma(1, 1);
  (*inv)(1, 1) = sigma(0, 0);
  (*inv)(0, 1) = -sigma(0, 1);
  (*inv)(1, 0) = -sigma(1, 0);
  *inv /= *det;
}

}  // namespace detail

/// KL divergence KL(N_g || N_p) between the Gaussian views of two
/// ellipses, in closed form:
///   1/2 [ tr(Sp^-1 Sg) + m^T Sp^-1 m - 2 + ln(det Sp / det Sg) ]
/// with m = mu_p - mu_g. Nonnegative, zero iff the ellipses coincide.
/// Throws SingularCovariance when either covariance is non-PD or has
/// condition number above 1e12.
inline double gaussian_kl(const GaussianEllipse& g, const GaussianEllipse& p) {
  Eigen::Matrix2d sg_inv, sp_inv;
  double det_g = 0.0, det_p = 0.0;
  detail::checked_inverse_2x2(g.sigma, "first argument", &sg_inv, &det_g);
  detail::checked_inverse_2x2(p.sigma, "second argument", &sp_inv, &det_p);
  const Eigen::Vector2d m = p.mu - g.mu;
  const double kl = 0.5 * ((sp_inv * g.sigma).trace() + m.dot(sp_inv * m) - 2.0 +
                           std::log(det_p / det_g));
  // Exact zero for identical inputs; clamp the last ulps of cancellation.
  return std::max(kl, 0.0);
}

/// Value and gradient of the uncertainty-weighted observation loss
///   L = exp(-alpha_d) * smoothL1(d) + alpha_d / 2,
/// where d = KL(N_ref || N_pred) between the Gaussian views of the
/// reference and predicted normalized ellipses. The gradient with
/// respect to the five predicted-ellipse parameters is analytic
/// (chain rule through the covariance construction), enabling the same
/// finite-difference validation as offset_loss.
struct ObservationLoss {
  double value = 0.0;
  Eigen::Matrix<double, 5, 1> d_pred = Eigen::Matrix<double, 5, 1>::Zero();
  double d_alpha = 0.0;
  double divergence = 0.0;
};

inline ObservationLoss observation_loss(const NormalizedEllipse& e_ref,
                                        const NormalizedEllipse& e_pred,
                                        LogVariance alpha_d) {
  const GaussianEllipse g = ellipse_to_gaussian(e_ref);
  const GaussianEllipse p = ellipse_to_gaussian(e_pred);

  Eigen::Matrix2d sg_inv, sp_inv;
  double det_g = 0.0, det_p = 0.0;
  detail::checked_inverse_2x2(g.sigma, "reference", &sg_inv, &det_g);
  detail::checked_inverse_2x2(p.sigma, "predicted", &sp_inv, &det_p);

  const Eigen::Vector2d m = p.mu - g.mu;
  const double d = std::max(
      0.5 * ((sp_inv * g.sigma).trace() + m.dot(sp_inv * m) - 2.0 +
             std::log(det_p / det_g)),
      0.0);

  // dd/dmu_p = Sp^-1 m; dd/dSp = (Sp^-1 - Sp^-1 Sg Sp^-1
  //            - Sp^-1 m m^T Sp^-1) / 2, paired entrywise with dSp/dt.
  const Eigen::Vector2d dd_mu = sp_inv * m;
  const Eigen::Matrix2d grad_sp =
      0.5 * (sp_inv - sp_inv * g.sigma * sp_inv -
             (sp_inv * m) * (sp_inv * m).transpose());

  const double ct = std::cos(e_pred.etheta), st = std::sin(e_pred.etheta);
  Eigen::Matrix2d rot, rot_dt;
  rot << ct, -st, st, ct;
  rot_dt << -st, -ct, ct, -st;
  const Eigen::Vector2d ax2(e_pred.ea * e_pred.ea, e_pred.eb * e_pred.eb);
  const Eigen::Matrix2d dsp_da =
      rot * Eigen::Vector2d(2.0 * e_pred.ea, 0.0).asDiagonal() * rot.transpose();
  const Eigen::Matrix2d dsp_db =
      rot * Eigen::Vector2d(0.0, 2.0 * e_pred.eb).asDiagonal() * rot.transpose();
  const Eigen::Matrix2d lam_rt = ax2.asDiagonal() * rot.transpose();
  const Eigen::Matrix2d dsp_dtheta =
      rot_dt * lam_rt + (rot_dt * lam_rt).transpose();

  ObservationLoss out;
  out.divergence = d;
  const double inv_var = std::exp(-alpha_d.alpha);
  out.value = inv_var * smooth_l1(d) + 0.5 * alpha_d.alpha;
  out.d_alpha = -inv_var * smooth_l1(d) + 0.5;

  const double outer = inv_var * smooth_l1_deriv(d);
  out.d_pred(0) = outer * dd_mu(0);
  out.d_pred(1) = outer * dd_mu(1);
  out.d_pred(2) = outer * grad_sp.cwiseProduct(dsp_da).sum();
  out.d_pred(3) = outer * grad_sp.cwiseProduct(dsp_db).sum();
  out.d_pred(4) = outer * grad_sp.cwiseProduct(dsp_dtheta).sum();
  return out;
}

/// One supervised sample: reference offsets, predicted offsets, and the
/// predicted per-channel uncertainties.
struct RegressionSample {
  EllipseOffsets ref;
  EllipseOffsets pred;
  DetectionUncertainty unc;
};

/// Mean per-sample training loss over a batch: six offset-loss channels
/// plus the observation loss between the decoded normalized ellipses.
/// Throws EmptyBatch on an empty span.
inline double total_regression_loss(std::span<const RegressionSample> batch) {
  if (batch.empty()) {
    throw EmptyBatch("total_regression_loss: empty batch");
  }
  double total = 0.0;
  for (const RegressionSample& s : batch) {
    total += offset_loss(s.ref.dx, s.pred.dx, s.unc.x).value;
    total += offset_loss(s.ref.dy, s.pred.dy, s.unc.y).value;
    total += offset_loss(s.ref.da, s.pred.da, s.unc.a).value;
    total += offset_loss(s.ref.db, s.pred.db, s.unc.b).value;
    total += offset_loss(s.ref.dtheta, s.pred.dtheta, s.unc.theta, true).value;
    total += offset_loss(s.ref.ds, s.pred.ds, s.unc.s).value;
    total += observation_loss(offsets_to_normalized_ellipse(s.ref),
                              offsets_to_normalized_ellipse(s.pred), s.unc.d)
                 .value;
  }
  return total / static_cast<double>(batch.size());
}

/// Scalar function returning its value and, when `grad` is non-null, its
/// gradient at x.
using ValueGradFn =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

/// Max relative error between the analytic gradient of f at x and a
/// central finite difference with the given step. The denominator is
/// max(1, |analytic|, |numeric|) per coordinate, so tiny gradients are
/// compared absolutely.
inline double finite_difference_check(const ValueGradFn& f, const Eigen::VectorXd& x,
                                      double step = 1e-6) {
  Eigen::VectorXd analytic(x.size());
  f(x, &analytic);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += step;
    xm(i) -= step;
    const double numeric = (f(xp, nullptr) - f(xm, nullptr)) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic(i)), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
  }
  return worst;
}

}  // namespace mvq
