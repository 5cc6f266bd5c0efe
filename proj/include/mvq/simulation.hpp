#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mvq/camera.hpp"
#include "mvq/core.hpp"
#include "mvq/encoding.hpp"
#include "mvq/errors.hpp"
#include "mvq/estimation.hpp"
#include "mvq/random.hpp"

namespace mvq {

struct Intrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
};

/// Random scene layout: ellipsoids in a centered box, cameras on a ring
/// around it, all looking at the box center.
struct SceneConfig {
  int n_objects = 1;
  int n_cameras = 8;
  double ring_radius = 8.0;
  double ring_height = 3.0;
  double workspace_half_extent = 1.0;  ///< object centers in [-h, h]^3
  double axis_min = 0.4;               ///< semi-axis range
  double axis_max = 1.2;
  Intrinsics intrinsics;
  std::uint64_t seed = 0;
};

struct Scene {
  std::vector<std::pair<int, EllipsoidParams>> objects;  ///< (id, params)
  std::vector<std::pair<int, Camera>> cameras;           ///< (id, camera)

  CameraMap camera_map() const {
    CameraMap m;
    for (const auto& [id, cam] : cameras) m.emplace(id, cam);
    return m;
  }
};

/// Detection noise: per-channel offset noise grows as the visibility
/// ratio shrinks, sigma_k = base_sigma_k * s^(-gamma). The visibility
/// drawn for each view is uniform in [s_min, s_max]. Alphas attached to
/// detections are the exact log-variances of the injected noise
/// (floored at sigma_floor so noiseless channels stay finite); the
/// divergence alpha is calibrated per detection by Monte Carlo
/// (calib_samples draws of the noise, averaged KL, floored at
/// divergence_floor).
struct NoiseModel {
  Vector6d base_sigma = Vector6d::Constant(0.02);
  double gamma = 1.0;
  double s_min = 0.3;
  double s_max = 0.9;
  int calib_samples = 10000;
  double sigma_floor = 1e-6;
  double divergence_floor = 1e-12;
};

inline Scene generate_scene(const SceneConfig& cfg) {
  if (cfg.n_objects < 1 || cfg.n_cameras < 1) {
    throw std::invalid_argument("generate_scene: counts must be positive");
  }
  if (!(cfg.ring_radius > 0.0) || !(cfg.axis_min > 0.0) ||
      !(cfg.axis_max >= cfg.axis_min) || !(cfg.workspace_half_extent >= 0.0)) {
    throw std::invalid_argument("generate_scene: invalid geometry ranges");
  }

  Rng rng(Rng::derive(cfg.seed, 0x5ce9e));
  Scene scene;
  for (int i = 0; i < cfg.n_objects; ++i) {
    EllipsoidParams q;
    const double h = cfg.workspace_half_extent;
    q.center = Eigen::Vector3d(rng.uniform(-h, h), rng.uniform(-h, h), rng.uniform(-h, h));
    q.semi_axes = Eigen::Vector3d(rng.uniform(cfg.axis_min, cfg.axis_max),
                                  rng.uniform(cfg.axis_min, cfg.axis_max),
                                  rng.uniform(cfg.axis_min, cfg.axis_max));
    // The y angle stays clear of the gimbal singularity; the ranges still
    // cover every ellipsoid shape because axes are drawn independently.
    q.angles = Eigen::Vector3d(rng.uniform(-kPi, kPi), rng.uniform(-1.2, 1.2),
                               rng.uniform(-kPi, kPi));
    scene.objects.emplace_back(i, q);
  }

  const Eigen::Vector3d target = Eigen::Vector3d::Zero();
  for (int i = 0; i < cfg.n_cameras; ++i) {
    const double phi = 2.0 * kPi * i / cfg.n_cameras;
    const Eigen::Vector3d pos(cfg.ring_radius * std::cos(phi),
                              cfg.ring_radius * std::sin(phi), cfg.ring_height);
    scene.cameras.emplace_back(
        i, look_at_camera(cfg.intrinsics.fx, cfg.intrinsics.fy, cfg.intrinsics.cx,
                          cfg.intrinsics.cy, pos, target));
  }

  // Scene invariant: every object centroid has positive depth everywhere.
  for (const auto& [cid, cam] : scene.cameras) {
    for (const auto& [oid, q] : scene.objects) {
      if (!((cam.R * q.center + cam.t).z() > 0.0)) {
        throw std::invalid_argument("generate_scene: object behind camera ring");
      }
    }
  }
  return scene;
}

namespace detail {

inline EllipseOffsets add_offset_noise(const EllipseOffsets& gt, const Vector6d& sigma,
                                       Rng& rng) {
  EllipseOffsets noisy;
  noisy.dx = gt.dx + sigma(0) * rng.normal();
  noisy.dy = gt.dy + sigma(1) * rng.normal();
  noisy.da = gt.da + sigma(2) * rng.normal();
  noisy.db = gt.db + sigma(3) * rng.normal();
  noisy.dtheta = fold_half_unit(gt.dtheta + sigma(4) * rng.normal());
  noisy.ds = gt.ds + sigma(5) * rng.normal();
  return noisy;
}

/// Mean KL divergence between noisy copies of `gt` and `gt` itself.
/// Samples whose noisy visibility collapses are skipped (they would be
/// dropped at fit time too).
inline double calibrate_divergence(const EllipseOffsets& gt, const Vector6d& sigma,
                                   int samples, std::uint64_t seed) {
  Rng rng(seed);
  const GaussianEllipse ref = ellipse_to_gaussian(offsets_to_normalized_ellipse(gt));
  double total = 0.0;
  int valid = 0;
  for (int i = 0; i < samples; ++i) {
    const EllipseOffsets noisy = add_offset_noise(gt, sigma, rng);
    try {
      total += gaussian_kl(ellipse_to_gaussian(offsets_to_normalized_ellipse(noisy)), ref);
      ++valid;
    } catch (const Error&) {
      continue;
    }
  }
  return valid > 0 ? total / valid : 0.0;
}

}  // namespace detail

/// Renders one detection per (object, camera) pair: the ground-truth
/// outline is encoded against a randomly placed reference square whose
/// side is a random fraction (the visibility ratio) of the full extent,
/// then channel noise is added. Noise is unbiased by construction: no
/// clamping is applied to any channel (the angle fold is modular, not a
/// clamp). The emitted alphas make each detection an exactly calibrated
/// observation of its own noise.
inline std::vector<Detection> render_detections(const Scene& scene,
                                                const NoiseModel& noise,
                                                std::uint64_t seed) {
  if (!(noise.s_min > 0.0) || !(noise.s_max <= 1.0) || !(noise.s_min <= noise.s_max)) {
    throw std::invalid_argument("render_detections: s range must be within (0, 1]");
  }
  if (noise.base_sigma.minCoeff() < 0.0 || noise.gamma < 0.0) {
    throw std::invalid_argument("render_detections: negative noise parameters");
  }

  Rng rng(Rng::derive(seed, 0xde7ec7));
  std::vector<Detection> out;
  out.reserve(scene.objects.size() * scene.cameras.size());

  for (const auto& [oid, q] : scene.objects) {
    const DualQuadric quadric = compose_dual_quadric(q);
    for (const auto& [cid, cam] : scene.cameras) {
      // Pairs that project behind the camera produce no detection. All
      // random draws for a pair happen after this point, so skipping
      // one pair does not shift the noise of the others.
      Ellipse outline;
      try {
        outline = dual_conic_to_ellipse(project_dual_quadric(quadric, cam));
      } catch (const BehindCamera&) {
        continue;
      }
      const double el = outline.enclosing_side();

      const double s = rng.uniform(noise.s_min, noise.s_max);
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      const double rad = 0.25 * el * std::sqrt(rng.uniform());
      const RefSquare square{outline.x + rad * std::cos(ang),
                             outline.y + rad * std::sin(ang), s * el};

      const EllipseOffsets gt = encode_offsets(outline, square);
      const Vector6d sigma = noise.base_sigma * std::pow(s, -noise.gamma);

      Detection det;
      det.object_id = oid;
      det.camera_id = cid;
      det.ref_square = square;
      det.offsets = detail::add_offset_noise(gt, sigma, rng);

      const Vector6d floored = sigma.cwiseMax(noise.sigma_floor);
      det.unc.x.alpha = 2.0 * std::log(floored(0));
      det.unc.y.alpha = 2.0 * std::log(floored(1));
      det.unc.a.alpha = 2.0 * std::log(floored(2));
      det.unc.b.alpha = 2.0 * std::log(floored(3));
      det.unc.theta.alpha = 2.0 * std::log(floored(4));
      det.unc.s.alpha = 2.0 * std::log(floored(5));

      const std::uint64_t calib_seed = rng.next_u64();
      const double mean_kl = detail::calibrate_divergence(gt, sigma, noise.calib_samples,
                                                          calib_seed);
      det.unc.d.alpha = std::log(std::max(mean_kl, noise.divergence_floor));

      out.push_back(det);
    }
  }
  return out;
}

enum class UncertaintyMode { kOracle, kIdentity, kShuffled };

/// Weighting ablations: kOracle returns the input unchanged, kIdentity
/// zeroes every alpha (unit variance everywhere, uncertainty ignored),
/// kShuffled permutes the uncertainty blocks across detections so they
/// are calibrated in aggregate but wrong per view.
inline std::vector<Detection> corrupt_uncertainties(std::vector<Detection> dets,
                                                    UncertaintyMode mode,
                                                    std::uint64_t seed = 0) {
  switch (mode) {
    case UncertaintyMode::kOracle:
      return dets;
    case UncertaintyMode::kIdentity:
      for (Detection& d : dets) {
        d.unc = DetectionUncertainty{};
      }
      return dets;
    case UncertaintyMode::kShuffled: {
      Rng rng(Rng::derive(seed, 0x50f1e));
      std::vector<size_t> perm(dets.size());
      std::iota(perm.begin(), perm.end(), size_t{0});
      for (size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
      }
      std::vector<DetectionUncertainty> uncs(dets.size());
      for (size_t i = 0; i < dets.size(); ++i) uncs[i] = dets[perm[i]].unc;
      for (size_t i = 0; i < dets.size(); ++i) dets[i].unc = uncs[i];
      return dets;
    }
  }
  throw std::invalid_argument("corrupt_uncertainties: unknown mode");
}

}  // namespace mvq
