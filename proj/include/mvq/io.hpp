#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvq/errors.hpp"
#include "mvq/estimation.hpp"
#include "mvq/simulation.hpp"

namespace mvq {

using json = nlohmann::json;

/// Writes `content` to `path` via a sibling temp file and rename, so
/// readers never observe a partially written file.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoFailure("cannot open for writing: " + tmp.string());
    }
    out << content;
    if (!out.good()) {
      throw IoFailure("short write: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoFailure("cannot rename " + tmp.string() + " to " + path.string() + ": " +
                    ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoFailure("cannot open for reading: " + path.string());
  }
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

inline json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigParse(path.string() + ": " + e.what());
  }
}

namespace detail {

inline json vec3_to_json(const Eigen::Vector3d& v) {
  return json::array({v(0), v(1), v(2)});
}

inline Eigen::Vector3d vec3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigParse(where + ": expected an array of 3 numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json mat3_to_json(const Eigen::Matrix3d& m) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) {
    rows.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
  }
  return rows;
}

inline Eigen::Matrix3d mat3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigParse(where + ": expected a 3x3 matrix");
  }
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_array() || j[i].size() != 3) {
      throw ConfigParse(where + ": expected a 3x3 matrix");
    }
    for (int k = 0; k < 3; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline const json& require(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigParse(where + ": missing key \"" + key + "\"");
  }
  return *it;
}

}  // namespace detail

inline json scene_to_json(const Scene& scene) {
  json objects = json::array();
  for (const auto& [id, q] : scene.objects) {
    objects.push_back({{"id", id},
                       {"theta", detail::vec3_to_json(q.angles)},
                       {"t", detail::vec3_to_json(q.center)},
                       {"s", detail::vec3_to_json(q.semi_axes)}});
  }
  json cameras = json::array();
  for (const auto& [id, cam] : scene.cameras) {
    cameras.push_back({{"id", id},
                       {"K", detail::mat3_to_json(cam.K)},
                       {"R", detail::mat3_to_json(cam.R)},
                       {"t", detail::vec3_to_json(cam.t)}});
  }
  return {{"objects", objects}, {"cameras", cameras}};
}

inline Scene scene_from_json(const json& j) {
  Scene scene;
  for (const json& o : detail::require(j, "objects", "scene")) {
    EllipsoidParams q;
    q.angles = detail::vec3_from_json(detail::require(o, "theta", "scene object"),
                                      "object theta");
    q.center = detail::vec3_from_json(detail::require(o, "t", "scene object"),
                                      "object t");
    q.semi_axes = detail::vec3_from_json(detail::require(o, "s", "scene object"),
                                         "object s");
    scene.objects.emplace_back(detail::require(o, "id", "scene object").get<int>(), q);
  }
  for (const json& c : detail::require(j, "cameras", "scene")) {
    const Eigen::Matrix3d k =
        detail::mat3_from_json(detail::require(c, "K", "scene camera"), "camera K");
    const Eigen::Matrix3d r =
        detail::mat3_from_json(detail::require(c, "R", "scene camera"), "camera R");
    const Eigen::Vector3d t =
        detail::vec3_from_json(detail::require(c, "t", "scene camera"), "camera t");
    Camera cam(k(0, 0), k(1, 1), k(0, 2), k(1, 2), r, t);
    cam.K = k;  // keep any skew/off-grid entries verbatim
    scene.cameras.emplace_back(detail::require(c, "id", "scene camera").get<int>(), cam);
  }
  return scene;
}

inline json detections_to_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const Detection& d : dets) {
    arr.push_back(
        {{"object_id", d.object_id},
         {"camera_id", d.camera_id},
         {"offsets",
          {{"dx", d.offsets.dx},
           {"dy", d.offsets.dy},
           {"da", d.offsets.da},
           {"db", d.offsets.db},
           {"dtheta", d.offsets.dtheta},
           {"ds", d.offsets.ds}}},
         {"ref_square",
          {{"qx", d.ref_square.qx}, {"qy", d.ref_square.qy}, {"ql", d.ref_square.ql}}},
         {"alpha",
          {{"x", d.unc.x.alpha},
           {"y", d.unc.y.alpha},
           {"a", d.unc.a.alpha},
           {"b", d.unc.b.alpha},
           {"theta", d.unc.theta.alpha},
           {"s", d.unc.s.alpha},
           {"d", d.unc.d.alpha}}}});
  }
  return arr;
}

inline std::vector<Detection> detections_from_json(const json& j) {
  if (!j.is_array()) {
    throw ConfigParse("detections: expected a top-level array");
  }
  std::vector<Detection> out;
  out.reserve(j.size());
  for (const json& e : j) {
    Detection d;
    d.object_id = detail::require(e, "object_id", "detection").get<int>();
    d.camera_id = detail::require(e, "camera_id", "detection").get<int>();
    const json& o = detail::require(e, "offsets", "detection");
    d.offsets.dx = detail::require(o, "dx", "offsets").get<double>();
    d.offsets.dy = detail::require(o, "dy", "offsets").get<double>();
    d.offsets.da = detail::require(o, "da", "offsets").get<double>();
    d.offsets.db = detail::require(o, "db", "offsets").get<double>();
    d.offsets.dtheta = detail::require(o, "dtheta", "offsets").get<double>();
    d.offsets.ds = detail::require(o, "ds", "offsets").get<double>();
    const json& s = detail::require(e, "ref_square", "detection");
    d.ref_square.qx = detail::require(s, "qx", "ref_square").get<double>();
    d.ref_square.qy = detail::require(s, "qy", "ref_square").get<double>();
    d.ref_square.ql = detail::require(s, "ql", "ref_square").get<double>();
    const json& a = detail::require(e, "alpha", "detection");
    d.unc.x.alpha = detail::require(a, "x", "alpha").get<double>();
    d.unc.y.alpha = detail::require(a, "y", "alpha").get<double>();
    d.unc.a.alpha = detail::require(a, "a", "alpha").get<double>();
    d.unc.b.alpha = detail::require(a, "b", "alpha").get<double>();
    d.unc.theta.alpha = detail::require(a, "theta", "alpha").get<double>();
    d.unc.s.alpha = detail::require(a, "s", "alpha").get<double>();
    d.unc.d.alpha = detail::require(a, "d", "alpha").get<double>();
    out.push_back(d);
  }
  return out;
}

inline json results_to_json(const std::map<int, FitReport>& results) {
  json arr = json::array();
  for (const auto& [object_id, r] : results) {
    json q = {{"theta", detail::vec3_to_json(r.q_hat.angles)},
              {"t", detail::vec3_to_json(r.q_hat.center)},
              {"s", detail::vec3_to_json(r.q_hat.semi_axes)}};
    // NaN cost (failed fits) serializes as null.
    arr.push_back({{"object_id", object_id},
                   {"q", q},
                   {"cost", r.cost},
                   {"iterations", r.iterations},
                   {"converged", r.converged}});
  }
  return arr;
}

inline std::map<int, FitReport> results_from_json(const json& j) {
  if (!j.is_array()) {
    throw ConfigParse("results: expected a top-level array");
  }
  std::map<int, FitReport> out;
  for (const json& e : j) {
    FitReport r;
    const json& q = detail::require(e, "q", "result");
    r.q_hat.angles =
        detail::vec3_from_json(detail::require(q, "theta", "result q"), "result theta");
    r.q_hat.center = detail::vec3_from_json(detail::require(q, "t", "result q"),
                                            "result t");
    r.q_hat.semi_axes =
        detail::vec3_from_json(detail::require(q, "s", "result q"), "result s");
    const json& cost = detail::require(e, "cost", "result");
    r.cost = cost.is_null() ? std::numeric_limits<double>::quiet_NaN()
                            : cost.get<double>();
    r.iterations = detail::require(e, "iterations", "result").get<int>();
    r.converged = detail::require(e, "converged", "result").get<bool>();
    out[detail::require(e, "object_id", "result").get<int>()] = r;
  }
  return out;
}

/// Serializes with two-space indentation and a trailing newline; nlohmann
/// emits shortest-round-trip doubles, so values re-parse bit exactly.
inline void write_json_file(const std::filesystem::path& path, const json& j) {
  atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace mvq
