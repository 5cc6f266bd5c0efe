#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mvq/errors.hpp"
#include "mvq/estimation.hpp"
#include "mvq/io.hpp"
#include "mvq/losses.hpp"
#include "mvq/metrics.hpp"
#include "mvq/simulation.hpp"

namespace mvq {

/// Full experiment description, loadable from JSON. Every field has a
/// default; unknown keys are rejected so config typos fail loudly.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  SceneConfig scene;
  NoiseModel noise;
  UncertaintyMode uncertainty_mode = UncertaintyMode::kOracle;
  double view_fraction = 1.0;  ///< 1, 0.5, or 0.25
  int trials = 1;
  SolverOptions solver;
  std::string out_dir = ".";
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigParse(where + ": unknown key \"" + key + "\"");
    }
  }
}

template <typename T>
void maybe_get(const json& j, const char* key, T* out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    *out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigParse(where + "." + key + ": " + e.what());
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline UncertaintyMode parse_uncertainty_mode(const std::string& s) {
  if (s == "oracle") return UncertaintyMode::kOracle;
  if (s == "identity") return UncertaintyMode::kIdentity;
  if (s == "shuffled") return UncertaintyMode::kShuffled;
  throw ConfigParse("uncertainty mode must be oracle, identity, or shuffled; got \"" +
                    s + "\"");
}

inline double parse_view_fraction(const std::string& s) {
  if (s == "1") return 1.0;
  if (s == "1/2") return 0.5;
  if (s == "1/4") return 0.25;
  throw ConfigParse("view fraction must be 1, 1/2, or 1/4; got \"" + s + "\"");
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown_keys(j,
                              {"seed", "scene", "noise", "uncertainty_mode",
                               "view_fraction", "trials", "solver", "out_dir"},
                              "config");
  detail::maybe_get(j, "seed", &cfg.seed, "config");
  detail::maybe_get(j, "trials", &cfg.trials, "config");
  detail::maybe_get(j, "out_dir", &cfg.out_dir, "config");
  if (cfg.trials < 1) {
    throw ConfigParse("config.trials must be at least 1");
  }

  if (j.contains("scene")) {
    const json& s = j["scene"];
    detail::reject_unknown_keys(s,
                                {"n_objects", "n_cameras", "ring_radius", "ring_height",
                                 "workspace_half_extent", "axis_min", "axis_max", "fx",
                                 "fy", "cx", "cy"},
                                "config.scene");
    detail::maybe_get(s, "n_objects", &cfg.scene.n_objects, "config.scene");
    detail::maybe_get(s, "n_cameras", &cfg.scene.n_cameras, "config.scene");
    detail::maybe_get(s, "ring_radius", &cfg.scene.ring_radius, "config.scene");
    detail::maybe_get(s, "ring_height", &cfg.scene.ring_height, "config.scene");
    detail::maybe_get(s, "workspace_half_extent", &cfg.scene.workspace_half_extent,
                      "config.scene");
    detail::maybe_get(s, "axis_min", &cfg.scene.axis_min, "config.scene");
    detail::maybe_get(s, "axis_max", &cfg.scene.axis_max, "config.scene");
    detail::maybe_get(s, "fx", &cfg.scene.intrinsics.fx, "config.scene");
    detail::maybe_get(s, "fy", &cfg.scene.intrinsics.fy, "config.scene");
    detail::maybe_get(s, "cx", &cfg.scene.intrinsics.cx, "config.scene");
    detail::maybe_get(s, "cy", &cfg.scene.intrinsics.cy, "config.scene");
    if (cfg.scene.n_objects < 1 || cfg.scene.n_cameras < 1) {
      throw ConfigParse("config.scene: object and camera counts must be positive");
    }
  }

  if (j.contains("noise")) {
    const json& n = j["noise"];
    detail::reject_unknown_keys(
        n, {"base_sigma", "gamma", "s_min", "s_max", "calib_samples"}, "config.noise");
    if (n.contains("base_sigma")) {
      const json& b = n["base_sigma"];
      if (b.is_number()) {
        cfg.noise.base_sigma = Vector6d::Constant(b.get<double>());
      } else if (b.is_array() && b.size() == 6) {
        for (int k = 0; k < 6; ++k) cfg.noise.base_sigma(k) = b[k].get<double>();
      } else {
        throw ConfigParse("config.noise.base_sigma must be a number or 6 numbers");
      }
    }
    detail::maybe_get(n, "gamma", &cfg.noise.gamma, "config.noise");
    detail::maybe_get(n, "s_min", &cfg.noise.s_min, "config.noise");
    detail::maybe_get(n, "s_max", &cfg.noise.s_max, "config.noise");
    detail::maybe_get(n, "calib_samples", &cfg.noise.calib_samples, "config.noise");
    if (!(cfg.noise.s_min > 0.0) || !(cfg.noise.s_max <= 1.0) ||
        !(cfg.noise.s_min <= cfg.noise.s_max)) {
      throw ConfigParse("config.noise: s range must satisfy 0 < s_min <= s_max <= 1");
    }
    if (cfg.noise.base_sigma.minCoeff() < 0.0 || cfg.noise.gamma < 0.0 ||
        cfg.noise.calib_samples < 1) {
      throw ConfigParse("config.noise: negative noise parameters");
    }
  }

  if (j.contains("uncertainty_mode")) {
    cfg.uncertainty_mode = parse_uncertainty_mode(j["uncertainty_mode"].get<std::string>());
  }
  if (j.contains("view_fraction")) {
    const double f = j["view_fraction"].get<double>();
    if (f != 1.0 && f != 0.5 && f != 0.25) {
      throw ConfigParse("config.view_fraction must be 1, 0.5, or 0.25");
    }
    cfg.view_fraction = f;
  }

  if (j.contains("solver")) {
    const json& s = j["solver"];
    detail::reject_unknown_keys(s, {"max_iters", "use_divergence", "strict"},
                                "config.solver");
    detail::maybe_get(s, "max_iters", &cfg.solver.max_iters, "config.solver");
    detail::maybe_get(s, "use_divergence", &cfg.solver.use_divergence, "config.solver");
    detail::maybe_get(s, "strict", &cfg.solver.strict, "config.solver");
    if (cfg.solver.max_iters < 1) {
      throw ConfigParse("config.solver.max_iters must be at least 1");
    }
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(parse_json_file(path));
}

/// Deterministic evenly spaced camera subset: cameras sorted by id, every
/// k-th kept starting from the first, k = 1 / fraction. Detections whose
/// camera is not kept are removed.
inline std::vector<Detection> filter_view_fraction(std::vector<Detection> dets,
                                                   const Scene& scene,
                                                   double fraction) {
  if (fraction == 1.0) return dets;
  const int k = static_cast<int>(std::lround(1.0 / fraction));
  std::vector<int> ids;
  for (const auto& [id, cam] : scene.cameras) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::set<int> kept;
  for (size_t i = 0; i < ids.size(); i += k) kept.insert(ids[i]);
  std::erase_if(dets, [&](const Detection& d) { return !kept.count(d.camera_id); });
  return dets;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code; data goes to files or the
// given output stream, diagnostics to `diag`. Errors are thrown as
// mvq::Error and mapped to exit codes by the CLI entry point.
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

inline int cmd_simulate(const SimulateArgs& args, std::ostream& diag) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;

  cfg.scene.seed = Rng::derive(cfg.seed, 1);
  const Scene scene = generate_scene(cfg.scene);
  std::vector<Detection> dets =
      render_detections(scene, cfg.noise, Rng::derive(cfg.seed, 2));
  dets = corrupt_uncertainties(std::move(dets), cfg.uncertainty_mode,
                               Rng::derive(cfg.seed, 3));
  dets = filter_view_fraction(std::move(dets), scene, cfg.view_fraction);

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_json_file(dir / "scene.json", scene_to_json(scene));
  write_json_file(dir / "detections.json", detections_to_json(dets));
  diag << "wrote " << (dir / "scene.json").string() << " and "
       << (dir / "detections.json").string() << " (" << dets.size() << " detections)\n";
  return 0;
}

struct FitArgs {
  std::string scene_path;
  std::string detections_path;
  std::string out_path = "results.json";
  std::string weights = "oracle";
  std::string view_fraction = "1";
  bool no_divergence = false;
  bool strict = false;
  std::uint64_t seed = 0;  ///< used only by the shuffled weights mode
};

inline int cmd_fit(const FitArgs& args, std::ostream& diag) {
  const Scene scene = scene_from_json(parse_json_file(args.scene_path));
  std::vector<Detection> dets =
      detections_from_json(parse_json_file(args.detections_path));
  const CameraMap cameras = scene.camera_map();

  for (const Detection& d : dets) {
    if (!cameras.count(d.camera_id)) {
      throw DanglingReference("detections reference camera id " +
                              std::to_string(d.camera_id) +
                              " which is not in the scene");
    }
  }

  dets = corrupt_uncertainties(std::move(dets), parse_uncertainty_mode(args.weights),
                               Rng::derive(args.seed, 3));
  dets = filter_view_fraction(std::move(dets), scene,
                              parse_view_fraction(args.view_fraction));

  SolverOptions opts;
  opts.use_divergence = !args.no_divergence;
  opts.strict = args.strict;
  const std::map<int, FitReport> results = fit_scene(dets, cameras, opts);

  int failed = 0;
  for (const auto& [id, r] : results) {
    if (!r.error.empty()) {
      ++failed;
      diag << "object " << id << ": " << r.error << "\n";
    }
    for (int cam : r.dropped_camera_ids) {
      diag << "object " << id << ": dropped view from camera " << cam << "\n";
    }
  }
  write_json_file(args.out_path, results_to_json(results));
  diag << "wrote " << args.out_path << " (" << results.size() << " objects, " << failed
       << " failed)\n";
  return 0;
}

struct EvalArgs {
  std::string scene_path;
  std::string results_path;
  std::string out_path = "eval.csv";
  int samples = 100000;
  std::uint64_t seed = 0;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& diag) {
  const Scene scene = scene_from_json(parse_json_file(args.scene_path));
  const std::map<int, FitReport> results =
      results_from_json(parse_json_file(args.results_path));

  std::map<int, EllipsoidParams> truth;
  for (const auto& [id, q] : scene.objects) truth.emplace(id, q);

  std::string csv = "object_id,o3d,o3d_stderr,axis_angle_deg,position_error\n";
  double sum_iou = 0.0, sum_axis = 0.0, sum_pos = 0.0, sum_se = 0.0;
  for (const auto& [id, r] : results) {
    const auto it = truth.find(id);
    if (it == truth.end()) {
      throw DanglingReference("results reference object id " + std::to_string(id) +
                              " which is not in the scene");
    }
    const IouEstimate iou =
        o3d(it->second, r.q_hat, args.samples, Rng::derive(args.seed, id));
    const AxisAngleResult axis = axis_angle_error(it->second, r.q_hat);
    const double pos = position_error(it->second, r.q_hat);
    csv += std::to_string(id) + "," + detail::format_double(iou.value) + "," +
           detail::format_double(iou.stderr_value) + "," +
           detail::format_double(axis.degrees) + "," + detail::format_double(pos) + "\n";
    sum_iou += iou.value;
    sum_se += iou.stderr_value * iou.stderr_value;
    sum_axis += axis.degrees;
    sum_pos += pos;
  }
  if (results.empty()) {
    throw EmptyBatch("results file contains no objects");
  }
  const double n = static_cast<double>(results.size());
  csv += "mean," + detail::format_double(sum_iou / n) + "," +
         detail::format_double(std::sqrt(sum_se) / n) + "," +
         detail::format_double(sum_axis / n) + "," + detail::format_double(sum_pos / n) +
         "\n";
  atomic_write_file(args.out_path, csv);
  diag << "wrote " << args.out_path << "\n";
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int count = 100;
  double step = 1e-6;
  /// Negative-control fixture: "offset" or "observation" biases that
  /// kernel's reported gradient by 1e-3 so the check must fail.
  std::string inject;
};

/// Finite-difference validation of the loss-kernel gradients on random
/// configurations sampled at least 1e-3 away from the smooth-L1 kink and
/// the angle fold boundary. Prints one line per kernel to `out` and
/// returns nonzero if any kernel exceeds its tolerance (offset 1e-5,
/// observation 1e-4).
inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out,
                         std::ostream& diag) {
  if (!args.inject.empty() && args.inject != "offset" && args.inject != "observation") {
    throw ConfigParse("inject must be \"offset\" or \"observation\"");
  }
  if (args.count == 0) {
    diag << "warning: gradcheck ran zero configurations; vacuous pass\n";
    out << "offset_loss: no configurations checked: PASS (vacuous)\n";
    out << "observation_loss: no configurations checked: PASS (vacuous)\n";
    return 0;
  }
  if (args.count < 0) {
    throw ConfigParse("gradcheck count must be nonnegative");
  }

  Rng rng(Rng::derive(args.seed, 0x97adc));
  const double bias_offset = args.inject == "offset" ? 1e-3 : 0.0;
  const double bias_observation = args.inject == "observation" ? 1e-3 : 0.0;

  double worst_offset = 0.0;
  for (int i = 0; i < args.count; ++i) {
    const bool is_angle = (i % 2) == 1;
    double z_ref = 0.0, z_pred = 0.0, alpha = 0.0;
    for (int guard = 0; guard < 1000; ++guard) {
      z_ref = rng.uniform(-1.5, 1.5);
      z_pred = rng.uniform(-1.5, 1.5);
      alpha = rng.uniform(-2.0, 2.0);
      const double r = is_angle ? rectify_angle(z_ref, z_pred) : z_ref - z_pred;
      const bool near_kink = std::abs(std::abs(r) - 1.0) < 1e-3;
      const bool near_fold = is_angle && std::abs(std::abs(r) - 0.5) < 1e-3;
      if (!near_kink && !near_fold) break;
    }
    ValueGradFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      const OffsetLoss l = offset_loss(z_ref, x(0), LogVariance{x(1)}, is_angle);
      if (grad != nullptr) {
        (*grad)(0) = l.d_pred + bias_offset;
        (*grad)(1) = l.d_alpha;
      }
      return l.value;
    };
    Eigen::VectorXd x(2);
    x << z_pred, alpha;
    worst_offset = std::max(worst_offset, finite_difference_check(f, x, args.step));
  }

  double worst_observation = 0.0;
  for (int i = 0; i < args.count; ++i) {
    NormalizedEllipse ref, pred;
    double alpha_d = 0.0;
    for (int guard = 0; guard < 1000; ++guard) {
      auto draw = [&](NormalizedEllipse* e) {
        e->ex = rng.uniform(-0.5, 0.5);
        e->ey = rng.uniform(-0.5, 0.5);
        e->ea = rng.uniform(0.3, 1.2);
        e->eb = rng.uniform(0.2, e->ea);
        e->etheta = rng.uniform(-kPi / 2.0, kPi / 2.0);
      };
      draw(&ref);
      draw(&pred);
      alpha_d = rng.uniform(-2.0, 1.0);
      const double d = gaussian_kl(ellipse_to_gaussian(ref), ellipse_to_gaussian(pred));
      if (std::abs(d - 1.0) > 1e-3) break;
    }
    ValueGradFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      NormalizedEllipse p;
      p.ex = x(0);
      p.ey = x(1);
      p.ea = x(2);
      p.eb = x(3);
      p.etheta = x(4);
      const ObservationLoss l = observation_loss(ref, p, LogVariance{x(5)});
      if (grad != nullptr) {
        grad->head<5>() = l.d_pred;
        (*grad)(0) += bias_observation;
        (*grad)(5) = l.d_alpha;
      }
      return l.value;
    };
    Eigen::VectorXd x(6);
    x << pred.ex, pred.ey, pred.ea, pred.eb, pred.etheta, alpha_d;
    worst_observation =
        std::max(worst_observation, finite_difference_check(f, x, args.step));
  }

  const bool offset_ok = worst_offset < 1e-5;
  const bool observation_ok = worst_observation < 1e-4;
  out << "offset_loss: max relative gradient error " << detail::format_double(worst_offset)
      << " over " << args.count << " configurations (tolerance 1e-05): "
      << (offset_ok ? "PASS" : "FAIL") << "\n";
  out << "observation_loss: max relative gradient error "
      << detail::format_double(worst_observation) << " over " << args.count
      << " configurations (tolerance 0.0001): " << (observation_ok ? "PASS" : "FAIL")
      << "\n";
  return (offset_ok && observation_ok) ? 0 : 4;
}

struct BenchArgs {
  std::string config_path;
  std::string out_path = "bench.csv";
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
};

/// Paired weighting benchmark: for each trial, one simulated scene is
/// fitted under oracle and identity weighting at view fractions 1, 1/2,
/// and 1/4, and per-object accuracy metrics are aggregated into a wide
/// CSV (rows: weighting method; columns: metric x fraction, with
/// standard errors of the mean).
inline int cmd_bench(const BenchArgs& args, std::ostream& diag) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (args.trials) cfg.trials = *args.trials;
  if (args.seed) cfg.seed = *args.seed;

  constexpr int kModes = 2;      // oracle, identity
  constexpr int kFractions = 3;  // 1, 1/2, 1/4
  const double fractions[kFractions] = {1.0, 0.5, 0.25};
  std::vector<double> iou[kModes][kFractions];
  std::vector<double> axis[kModes][kFractions];
  std::vector<double> pos[kModes][kFractions];

  for (int trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t trial_seed = Rng::derive(cfg.seed, 100 + trial);
    SceneConfig sc = cfg.scene;
    sc.seed = Rng::derive(trial_seed, 1);
    const Scene scene = generate_scene(sc);
    const std::vector<Detection> dets =
        render_detections(scene, cfg.noise, Rng::derive(trial_seed, 2));
    const CameraMap cameras = scene.camera_map();

    for (int m = 0; m < kModes; ++m) {
      const UncertaintyMode mode =
          m == 0 ? UncertaintyMode::kOracle : UncertaintyMode::kIdentity;
      for (int fi = 0; fi < kFractions; ++fi) {
        std::vector<Detection> subset =
            filter_view_fraction(corrupt_uncertainties(dets, mode), scene,
                                 fractions[fi]);
        const std::map<int, FitReport> results =
            fit_scene(subset, cameras, cfg.solver);
        for (const auto& [oid, q] : scene.objects) {
          const auto it = results.find(oid);
          if (it == results.end()) continue;
          iou[m][fi].push_back(
              o3d(q, it->second.q_hat, 20000, Rng::derive(trial_seed, 7 + oid)).value);
          axis[m][fi].push_back(axis_angle_error(q, it->second.q_hat).degrees);
          pos[m][fi].push_back(position_error(q, it->second.q_hat));
        }
      }
    }
    diag << "trial " << trial + 1 << "/" << cfg.trials << " done\n";
  }

  auto mean_se = [](const std::vector<double>& v) {
    if (v.empty()) return std::pair<double, double>{0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return std::pair<double, double>{mean, 0.0};
    double var = 0.0;
    for (double x : v) var += sq(x - mean);
    var /= static_cast<double>(v.size() - 1);
    return std::pair<double, double>{mean, std::sqrt(var / static_cast<double>(v.size()))};
  };

  std::string csv =
      "method,o3d_full,o3d_full_se,o3d_half,o3d_half_se,o3d_quarter,o3d_quarter_se,"
      "axis_deg_full,axis_deg_full_se,axis_deg_half,axis_deg_half_se,axis_deg_quarter,"
      "axis_deg_quarter_se,pos_full,pos_full_se,pos_half,pos_half_se,pos_quarter,"
      "pos_quarter_se\n";
  const char* names[kModes] = {"oracle", "identity"};
  for (int m = 0; m < kModes; ++m) {
    csv += names[m];
    for (auto* metric : {&iou[m], &axis[m], &pos[m]}) {
      for (int fi = 0; fi < kFractions; ++fi) {
        const auto [mean, se] = mean_se((*metric)[fi]);
        csv += "," + detail::format_double(mean) + "," + detail::format_double(se);
      }
    }
    csv += "\n";
  }
  atomic_write_file(args.out_path, csv);
  diag << "wrote " << args.out_path << "\n";
  return 0;
}

/// Maps a thrown error to the CLI exit code and machine-readable JSON on
/// stderr: 2 for config/IO problems, 3 for domain errors, 4 for failed
/// checks (returned by commands directly), 1 for unexpected exceptions.
template <typename Fn>
int run_command(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigParse& e) {
    err << json{{"error", {{"type", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const IoFailure& e) {
    err << json{{"error", {{"type", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const Error& e) {
    err << json{{"error", {{"type", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << json{{"error", {{"type", "Internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace mvq
