#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvq/camera.hpp"
#include "mvq/encoding.hpp"
#include "mvq/errors.hpp"
#include "mvq/losses.hpp"
#include "mvq/quadric.hpp"

namespace mvq {

/// One detected object in one view: offsets against the detection's
/// reference square, plus per-channel uncertainties.
struct Detection {
  int object_id = 0;
  int camera_id = 0;
  EllipseOffsets offsets;
  RefSquare ref_square;
  DetectionUncertainty unc;
};

using CameraMap = std::map<int, Camera>;

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Offsets the camera would report for the ellipsoid: project the dual
/// quadric, extract the outline ellipse, and encode it against the
/// detection's reference square. Throws BehindCamera, DegenerateConic,
/// or VisibilityOutOfRange when the view cannot see a valid ellipse.
inline EllipseOffsets predict_offsets(const Camera& cam, const EllipsoidParams& q,
                                      const RefSquare& square) {
  const Ellipse outline =
      dual_conic_to_ellipse(project_dual_quadric(compose_dual_quadric(q), cam));
  return encode_offsets(outline, square);
}

/// Offset-channel residual e - tau between a detection and the
/// prediction for ellipsoid q, with the angle channel folded into
/// (-1/2, 1/2]. Order: dx dy da db dtheta ds.
inline Vector6d offset_residual(const Camera& cam, const EllipsoidParams& q,
                                const Detection& det) {
  const EllipseOffsets tau = predict_offsets(cam, q, det.ref_square);
  Vector6d r;
  r << det.offsets.dx - tau.dx, det.offsets.dy - tau.dy, det.offsets.da - tau.da,
      det.offsets.db - tau.db, rectify_angle(det.offsets.dtheta, tau.dtheta),
      det.offsets.ds - tau.ds;
  return r;
}

/// Divergence channel: KL between the Gaussian views of the detected and
/// predicted normalized ellipses (detected distribution first).
inline double divergence_residual(const Camera& cam, const EllipsoidParams& q,
                                  const Detection& det) {
  const EllipseOffsets tau = predict_offsets(cam, q, det.ref_square);
  return gaussian_kl(ellipse_to_gaussian(offsets_to_normalized_ellipse(det.offsets)),
                     ellipse_to_gaussian(offsets_to_normalized_ellipse(tau)));
}

namespace detail {

/// Weighted index pairs for the symmetric-matrix half-vectorization with
/// sqrt(2) on off-diagonal entries, so the Frobenius inner product of
/// symmetric matrices equals the dot product of their coordinates.
template <int N>
struct SymBasis {
  static constexpr int size = N * (N + 1) / 2;

  static Eigen::Matrix<double, size, 1> vech(const Eigen::Matrix<double, N, N>& m) {
    Eigen::Matrix<double, size, 1> v;
    int k = 0;
    for (int i = 0; i < N; ++i) v(k++) = m(i, i);
    const double w = std::sqrt(2.0);
    for (int i = 0; i < N; ++i) {
      for (int j = i + 1; j < N; ++j) v(k++) = w * m(i, j);
    }
    return v;
  }

  static Eigen::Matrix<double, N, N> unvech(const Eigen::Matrix<double, size, 1>& v) {
    Eigen::Matrix<double, N, N> m;
    int k = 0;
    for (int i = 0; i < N; ++i) m(i, i) = v(k++);
    const double w = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < N; ++i) {
      for (int j = i + 1; j < N; ++j) {
        m(i, j) = m(j, i) = w * v(k++);
      }
    }
    return m;
  }

  /// k-th orthonormal symmetric basis matrix (same coordinate order).
  static Eigen::Matrix<double, N, N> basis(int k) {
    Eigen::Matrix<double, size, 1> v = Eigen::Matrix<double, size, 1>::Zero();
    v(k) = 1.0;
    return unvech(v);
  }
};

/// Detections sorted by camera id (ties keep caller order) so row order
/// in the stacked systems is reproducible under input permutation.
inline std::vector<Detection> sorted_by_camera(std::span<const Detection> dets) {
  std::vector<Detection> out(dets.begin(), dets.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.camera_id < b.camera_id;
                   });
  return out;
}

inline const Camera& camera_for(const CameraMap& cameras, int id) {
  const auto it = cameras.find(id);
  if (it == cameras.end()) {
    throw DanglingReference("detection references unknown camera id " +
                            std::to_string(id));
  }
  return it->second;
}

}  // namespace detail

/// Closed-form ellipsoid initialization from at least three views.
///
/// Each view constrains the projected dual quadric to match the detected
/// dual conic up to an unknown per-view scale beta_i:
///   vech(P_i Q P_i^T) = beta_i vech(C_i).
/// Stacking all views gives a homogeneous linear system in the 10
/// quadric coordinates and the V scales; Q is read off the smallest
/// right singular vector. Per-view blocks are Frobenius-normalized to
/// balance the rows.
///
/// The system is assembled in normalized camera coordinates (K divided
/// out of both the projections and the detected conics). This changes
/// nothing in exact arithmetic (each view's equations are multiplied by
/// an invertible matrix) but is essential numerically: in pixel
/// coordinates the least-squares null vector is so badly scaled that
/// detection noise of a few percent corrupts the recovered quadric
/// beyond repair. Columns are equilibrated before the SVD for the same
/// reason.
///
/// Throws InsufficientViews (< 3 views), IllConditioned (near-degenerate
/// null space: ratio of the two smallest singular values above 0.5), or
/// NotAnEllipsoid (solution is not a real bounded ellipsoid).
inline EllipsoidParams init_closed_form(std::span<const Detection> detections,
                                        const CameraMap& cameras) {
  const std::vector<Detection> dets = detail::sorted_by_camera(detections);
  const int v = static_cast<int>(dets.size());
  if (v < 3) {
    throw InsufficientViews("closed-form initialization needs at least 3 views, got " +
                            std::to_string(v));
  }

  using Sym3 = detail::SymBasis<3>;
  using Sym4 = detail::SymBasis<4>;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6 * v, 10 + v);
  for (int i = 0; i < v; ++i) {
    const Camera& cam = detail::camera_for(cameras, dets[i].camera_id);
    // K^-1 P = [R | t]: the metric projection needs no inversion.
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = cam.R;
    p.col(3) = cam.t;

    Eigen::Matrix<double, 6, 10> g;
    for (int k = 0; k < 10; ++k) {
      const Eigen::Matrix4d e = Sym4::basis(k);
      g.col(k) = Sym3::vech(Eigen::Matrix3d(p * e * p.transpose()));
    }

    const Ellipse detected =
        decode_offsets(dets[i].offsets, dets[i].ref_square);
    const Eigen::Matrix3d kinv = cam.K.inverse();
    const Eigen::Matrix3d cm =
        kinv * ellipse_to_dual_conic(detected).matrix() * kinv.transpose();
    const Eigen::Matrix<double, 6, 1> c = Sym3::vech(cm);

    a.block(6 * i, 0, 6, 10) = g / g.norm();
    a.block(6 * i, 10 + i, 6, 1) = -c / c.norm();
  }

  Eigen::VectorXd colscale(10 + v);
  for (int j = 0; j < 10 + v; ++j) {
    const double n = a.col(j).norm();
    colscale(j) = n > 0.0 ? 1.0 / n : 1.0;
    a.col(j) *= colscale(j);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const int last = static_cast<int>(sv.size()) - 1;
  if (sv(last - 1) > 0.0 && sv(last) / sv(last - 1) > 0.5) {
    throw IllConditioned("closed-form initialization null space is ambiguous");
  }

  const Eigen::VectorXd solution =
      svd.matrixV().col(10 + v - 1).cwiseProduct(colscale);
  const Eigen::Matrix<double, 10, 1> qv = solution.head<10>();
  return decompose_dual_quadric(DualQuadric(Sym4::unvech(qv)));
}

struct SolverOptions {
  int max_iters = 100;
  double cost_rel_tol = 1e-10;  ///< relative cost decrease for convergence
  double grad_tol = 1e-8;       ///< infinity norm of the cost gradient
  bool use_divergence = true;   ///< include the KL channel in the residual
  bool strict = false;          ///< propagate view failures instead of dropping
};

struct FitReport {
  EllipsoidParams q_hat;
  double cost = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  /// Weighted residual norm per retained view, in camera-id order.
  std::vector<std::pair<int, double>> view_residuals;
  std::vector<int> dropped_camera_ids;
  std::string error;  ///< empty on success; "Kind: message" when fit_scene absorbed one
};

namespace detail {

struct WeightedView {
  Detection det;
  Camera cam;
  Vector6d inv_sigma;  ///< 1/sigma per offset channel
  double inv_sigma_d;  ///< 1/sqrt(lambda) for the divergence channel
};

inline WeightedView make_weighted_view(const Detection& det, const CameraMap& cameras) {
  WeightedView w{det, camera_for(cameras, det.camera_id), Vector6d::Zero(), 0.0};
  const Vector6d alphas = det.unc.offset_alphas();
  for (int k = 0; k < 6; ++k) {
    w.inv_sigma(k) = std::exp(-0.5 * alphas(k));
  }
  w.inv_sigma_d = std::exp(-0.5 * det.unc.d.alpha);
  return w;
}

/// Stacked weighted residual for the active views; nullopt when any view
/// fails to produce a valid prediction (message in *why).
inline std::optional<Eigen::VectorXd> weighted_residual(
    const std::vector<WeightedView>& views, const EllipsoidParams& q,
    bool use_divergence, std::string* why) {
  const int stride = use_divergence ? 7 : 6;
  Eigen::VectorXd f(stride * static_cast<int>(views.size()));
  for (size_t i = 0; i < views.size(); ++i) {
    const WeightedView& w = views[i];
    try {
      const EllipseOffsets tau = predict_offsets(w.cam, q, w.det.ref_square);
      Vector6d r;
      r << w.det.offsets.dx - tau.dx, w.det.offsets.dy - tau.dy,
          w.det.offsets.da - tau.da, w.det.offsets.db - tau.db,
          rectify_angle(w.det.offsets.dtheta, tau.dtheta),
          w.det.offsets.ds - tau.ds;
      f.segment<6>(stride * i) = r.cwiseProduct(w.inv_sigma);
      if (use_divergence) {
        const double d = gaussian_kl(
            ellipse_to_gaussian(offsets_to_normalized_ellipse(w.det.offsets)),
            ellipse_to_gaussian(offsets_to_normalized_ellipse(tau)));
        f(stride * i + 6) = d * w.inv_sigma_d;
      }
    } catch (const Error& e) {
      if (why != nullptr) {
        *why = std::string(e.kind()) + " at camera " +
               std::to_string(w.det.camera_id) + ": " + e.what();
      }
      return std::nullopt;
    } catch (const std::exception& e) {
      // Trial points outside the model's domain (e.g. a step into
      // negative semi-axes) are invalid, not fatal.
      if (why != nullptr) {
        *why = "invalid parameters at camera " + std::to_string(w.det.camera_id) +
               ": " + e.what();
      }
      return std::nullopt;
    }
  }
  return f;
}

inline Eigen::Matrix<double, 9, 1> pack(const EllipsoidParams& q) {
  Eigen::Matrix<double, 9, 1> x;
  x << q.angles, q.center, q.semi_axes;
  return x;
}

inline EllipsoidParams unpack(const Eigen::Matrix<double, 9, 1>& x) {
  EllipsoidParams q;
  q.angles = x.segment<3>(0);
  q.center = x.segment<3>(3);
  q.semi_axes = x.segment<3>(6);
  return q;
}

}  // namespace detail

/// Weighted nonlinear least-squares refinement of an ellipsoid from
/// multi-view detections (Levenberg-Marquardt on the 9 parameters).
///
/// Per view the residual stacks the six uncertainty-whitened offset
/// channels and, unless opts.use_divergence is off, the KL divergence
/// channel scaled by its calibration. The damping parameter starts at
/// 1e-3 times the largest Gauss-Newton diagonal entry, shrinks by 10 on
/// accepted steps and grows by 10 on rejected ones; the Jacobian uses
/// forward differences with per-coordinate step 1e-7 * max(1, |x_k|).
///
/// Converged when an accepted step's relative cost decrease falls below
/// opts.cost_rel_tol, when the gradient infinity norm falls below
/// opts.grad_tol, or when a rejected step's model-predicted decrease is
/// below the relative tolerance while the whitened residuals are already
/// statistically negligible (the iterate is at the numerical floor).
///
/// Views whose prediction fails at the initial point are dropped with a
/// note in the report (opts.strict propagates the failure instead);
/// trial steps that break a view are rejected like any non-improving
/// step. Throws AllViewsDropped when nothing survives, DivergedFit when
/// the cost is non-finite, DanglingReference for unknown camera ids.
inline FitReport fit_map(std::span<const Detection> detections,
                         const CameraMap& cameras, const EllipsoidParams& init,
                         const SolverOptions& opts = {}) {
  if (!(init.semi_axes.minCoeff() > 0.0)) {
    throw std::invalid_argument("fit_map: initial semi-axes must be positive");
  }
  const std::vector<Detection> sorted = detail::sorted_by_camera(detections);

  FitReport report;
  std::vector<detail::WeightedView> views;
  views.reserve(sorted.size());
  for (const Detection& det : sorted) {
    detail::WeightedView w = detail::make_weighted_view(det, cameras);
    if (opts.strict) {
      // Evaluate without a net so the underlying error propagates.
      const EllipseOffsets tau = predict_offsets(w.cam, init, det.ref_square);
      if (opts.use_divergence) {
        gaussian_kl(ellipse_to_gaussian(offsets_to_normalized_ellipse(det.offsets)),
                    ellipse_to_gaussian(offsets_to_normalized_ellipse(tau)));
      }
      views.push_back(std::move(w));
      continue;
    }
    std::string why;
    const std::vector<detail::WeightedView> probe{w};
    if (detail::weighted_residual(probe, init, opts.use_divergence, &why)) {
      views.push_back(std::move(w));
    } else {
      report.dropped_camera_ids.push_back(det.camera_id);
    }
  }
  if (views.empty()) {
    throw AllViewsDropped("no view yields a valid prediction at the initial point");
  }

  std::string why;
  auto f0 = detail::weighted_residual(views, init, opts.use_divergence, &why);
  if (!f0) {
    throw DivergedFit("initial point is invalid: " + why);
  }

  Eigen::Matrix<double, 9, 1> x = detail::pack(init);
  Eigen::VectorXd f = *f0;
  double cost = f.squaredNorm();
  if (!std::isfinite(cost)) {
    throw DivergedFit("initial cost is not finite");
  }

  const int m = static_cast<int>(f.size());
  double mu = -1.0;
  bool converged = false;
  int iter = 0;

  for (iter = 1; iter <= opts.max_iters; ++iter) {
    // Forward-difference Jacobian; falls back to a backward step when a
    // perturbed prediction fails near a validity boundary.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, 9);
    for (int k = 0; k < 9; ++k) {
      const double h = 1e-7 * std::max(1.0, std::abs(x(k)));
      Eigen::Matrix<double, 9, 1> xk = x;
      xk(k) += h;
      auto fk = detail::weighted_residual(views, detail::unpack(xk),
                                          opts.use_divergence, nullptr);
      if (fk) {
        jac.col(k) = (*fk - f) / h;
        continue;
      }
      xk(k) = x(k) - h;
      fk = detail::weighted_residual(views, detail::unpack(xk),
                                     opts.use_divergence, nullptr);
      if (fk) {
        jac.col(k) = (f - *fk) / h;
      }
    }

    const Eigen::Matrix<double, 9, 9> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 9, 1> g = jac.transpose() * f;
    if ((2.0 * g).lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      converged = true;
      break;
    }
    if (mu < 0.0) {
      mu = 1e-3 * jtj.diagonal().maxCoeff();
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
      const Eigen::Matrix<double, 9, 9> damped =
          jtj + mu * Eigen::Matrix<double, 9, 9>::Identity();
      const Eigen::Matrix<double, 9, 1> delta = damped.ldlt().solve(-g);
      const Eigen::Matrix<double, 9, 1> xt = x + delta;
      const auto ft = detail::weighted_residual(views, detail::unpack(xt),
                                                opts.use_divergence, nullptr);
      double ct = std::numeric_limits<double>::infinity();
      if (ft) {
        ct = ft->squaredNorm();
      }
      if (std::isfinite(ct) && ct < cost) {
        const double rel = (cost - ct) / std::max(cost, 1e-300);
        x = xt;
        f = *ft;
        cost = ct;
        mu = std::max(mu * 0.1, 1e-12);
        accepted = true;
        if (rel < opts.cost_rel_tol) {
          converged = true;
        }
      } else {
        // Rejected-step stall. The model's predicted decrease
        // delta'(mu delta - g) shrinks as mu escalates, so by itself it
        // cannot distinguish a numerical floor from a hard valley; only
        // when the whitened channels are already statistically
        // negligible (RMS z-score below 1e-3) is the stall genuine
        // convergence. Heavily weighted zero-residual problems (oracle
        // alphas at the sigma floor) end this way, as their gradient
        // scale keeps the other two tests out of reach. Otherwise keep
        // escalating: a small enough damped step still descends.
        const double predicted = delta.dot(mu * delta - g);
        if (predicted <= opts.cost_rel_tol * cost &&
            cost <= 1e-6 * static_cast<double>(m)) {
          converged = true;
          break;
        }
        mu *= 10.0;
        if (mu > 1e32) break;
      }
    }
    if (!accepted || converged) break;
  }

  report.q_hat = detail::unpack(x);
  report.cost = cost;
  report.iterations = std::min(iter, opts.max_iters);
  report.converged = converged;
  const int stride = opts.use_divergence ? 7 : 6;
  for (size_t i = 0; i < views.size(); ++i) {
    report.view_residuals.emplace_back(views[i].det.camera_id,
                                       f.segment(stride * i, stride).norm());
  }
  return report;
}

/// Initializes and refines every object present in `detections`.
/// Detections are grouped by object id; objects whose initialization or
/// refinement throws get a report with converged = false and the error
/// recorded, without affecting other objects.
inline std::map<int, FitReport> fit_scene(std::span<const Detection> detections,
                                          const CameraMap& cameras,
                                          const SolverOptions& opts = {}) {
  std::map<int, std::vector<Detection>> by_object;
  for (const Detection& det : detections) {
    by_object[det.object_id].push_back(det);
  }

  std::map<int, FitReport> out;
  for (auto& [object_id, dets] : by_object) {
    try {
      const EllipsoidParams init = init_closed_form(dets, cameras);
      out[object_id] = fit_map(dets, cameras, init, opts);
    } catch (const Error& e) {
      FitReport failed;
      failed.error = std::string(e.kind()) + ": " + e.what();
      out[object_id] = std::move(failed);
    }
  }
  return out;
}

}  // namespace mvq
