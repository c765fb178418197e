#pragma once

// Self-view projection: pinhole depth rendering of a point cloud from
// controllable viewpoints, plus the on-disk depth format
//   <stem>.depth      raw f32le, row-major H x W
//   <stem>.meta.json  {"width","height","position","look_at","up","fov_deg","background"}

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "svdformer/checkpoint.hpp"
#include "svdformer/errors.hpp"
#include "svdformer/pointcloud.hpp"
#include "svdformer/rng.hpp"
#include "svdformer/tensor.hpp"

namespace svdf {

using Vec3 = std::array<double, 3>;

namespace detail {
inline Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 vcross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }
inline Vec3 vscale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
}  // namespace detail

struct Viewpoint {
  Vec3 position{};
  Vec3 look_at{};
  Vec3 up{0, 0, 1};
};

/// Orthonormal camera frame: right, true up, forward (towards look_at).
struct CameraBasis {
  Vec3 right, up, forward;

  explicit CameraBasis(const Viewpoint& v) {
    using namespace detail;
    const Vec3 dir = vsub(v.look_at, v.position);
    const double len = vnorm(dir);
    if (!(len > 0)) throw std::invalid_argument("viewpoint: position coincides with look_at");
    forward = vscale(dir, 1.0 / len);
    const Vec3 side = vcross(forward, v.up);
    const double side_len = vnorm(side);
    if (!(side_len > 1e-12 * vnorm(v.up)) || vnorm(v.up) == 0) {
      throw std::invalid_argument("viewpoint: up vector is parallel to the view direction");
    }
    right = vscale(side, 1.0 / side_len);
    up = vcross(right, forward);
  }
};

struct DepthMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> depth;  // row-major, 0 = background

  float at(std::size_t row, std::size_t col) const { return depth[row * width + col]; }
  std::size_t occupied() const {
    std::size_t n = 0;
    for (float d : depth) n += d != 0.0f ? 1 : 0;
    return n;
  }
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

/// Cameras on the +x, +y and +z axes at `distance`, looking at the origin.
/// Up is +z for the x- and y-axis cameras and +x for the z-axis camera.
inline std::vector<Viewpoint> orthogonal_viewpoints(double distance) {
  if (!(distance > 0)) throw std::invalid_argument("orthogonal_viewpoints: distance must be positive");
  return {
      Viewpoint{{distance, 0, 0}, {0, 0, 0}, {0, 0, 1}},
      Viewpoint{{0, distance, 0}, {0, 0, 0}, {0, 0, 1}},
      Viewpoint{{0, 0, distance}, {0, 0, 0}, {1, 0, 0}},
  };
}

/// Field of view (degrees) that keeps a cube of the given half extent in frame.
inline double framing_fov_deg(double half_extent, double distance) {
  return 2.0 * std::atan(1.1 * half_extent / distance) * 180.0 / std::numbers::pi;
}

/// Pinhole projection with single-pixel splats and a z-buffer on ray depth.
inline DepthMap render_depth(const PointCloud& cloud, const Viewpoint& view, std::size_t res, double fov_deg) {
  if (res < 8) throw std::invalid_argument("render_depth: resolution must be at least 8");
  if (!(fov_deg > 0 && fov_deg < 180)) throw std::invalid_argument("render_depth: fov must lie in (0, 180)");
  using namespace detail;
  const CameraBasis basis(view);
  const double half = static_cast<double>(res) / 2.0;
  const double focal = half / std::tan(fov_deg * std::numbers::pi / 360.0);
  DepthMap map{res, res, std::vector<float>(res * res, 0.0f)};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    const Vec3 rel = vsub({p[0], p[1], p[2]}, view.position);
    const double xc = vdot(rel, basis.right);
    const double yc = vdot(rel, basis.up);
    const double zc = vdot(rel, basis.forward);
    if (!(zc > 0)) continue;
    const double u = half + focal * xc / zc;
    const double v = half - focal * yc / zc;
    if (!(u >= 0 && v >= 0 && u < static_cast<double>(res) && v < static_cast<double>(res))) continue;
    const auto col = static_cast<std::size_t>(u);
    const auto row = static_cast<std::size_t>(v);
    const auto d = static_cast<float>(std::sqrt(xc * xc + yc * yc + zc * zc));
    float& slot = map.depth[row * res + col];
    if (slot == 0.0f || d < slot) slot = d;
  }
  return map;
}

/// Depth maps plus the camera-position matrix, rows ordered as the views.
struct ViewSet {
  std::vector<DepthMap> maps;
  std::vector<Viewpoint> views;
  double fov_deg = 0;

  std::size_t size() const { return maps.size(); }

  /// (N_V, 1, H, W)
  template <typename T>
  Tensor<T> depth_tensor() const {
    if (maps.empty()) throw std::invalid_argument("view set is empty");
    const std::size_t h = maps[0].height, w = maps[0].width;
    std::vector<T> data;
    data.reserve(maps.size() * h * w);
    for (const auto& m : maps) {
      if (m.height != h || m.width != w) throw std::invalid_argument("view set maps differ in resolution");
      data.insert(data.end(), m.depth.begin(), m.depth.end());
    }
    return Tensor<T>({maps.size(), 1, h, w}, std::move(data));
  }

  /// (N_V, 3)
  template <typename T>
  Tensor<T> position_matrix() const {
    std::vector<T> data;
    for (const auto& v : views) {
      for (double c : v.position) data.push_back(static_cast<T>(c));
    }
    return Tensor<T>({views.size(), 3}, std::move(data));
  }
};

inline ViewSet project_all(const PointCloud& cloud, const std::vector<Viewpoint>& views, std::size_t res,
                           double fov_deg) {
  ViewSet set;
  set.views = views;
  set.fov_deg = fov_deg;
  for (const auto& v : views) set.maps.push_back(render_depth(cloud, v, res, fov_deg));
  return set;
}

/// Random-projection mode: rotates the camera about the look-at point by at
/// most `max_angle_deg` and perturbs its distance by at most `max_distance`.
inline Viewpoint jitter_viewpoint(const Viewpoint& view, Rng& rng, double max_angle_deg = 10.0,
                                  double max_distance = 0.1) {
  using namespace detail;
  const Vec3 offset = vsub(view.position, view.look_at);
  const double dist = vnorm(offset);
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  axis = vscale(axis, 1.0 / vnorm(axis));
  const double angle = rng.uniform(0.0, max_angle_deg) * std::numbers::pi / 180.0;
  // Rodrigues rotation of the offset about `axis`.
  const Vec3 c = vcross(axis, offset);
  const double ca = std::cos(angle), sa = std::sin(angle), k = vdot(axis, offset) * (1 - ca);
  Vec3 rotated{};
  for (int i = 0; i < 3; ++i) rotated[i] = offset[i] * ca + c[i] * sa + axis[i] * k;
  const double new_dist = std::max(1e-3, dist + rng.uniform(-max_distance, max_distance));
  rotated = vscale(rotated, new_dist / vnorm(rotated));
  Viewpoint out = view;
  for (int i = 0; i < 3; ++i) out.position[i] = view.look_at[i] + rotated[i];
  return out;
}

// ---------------------------------------------------------------------------
// Depth file I/O
// ---------------------------------------------------------------------------

struct DepthFile {
  DepthMap map;
  Viewpoint view;
  double fov_deg = 0;
};

inline void write_depth(const std::filesystem::path& stem, const DepthMap& map, const Viewpoint& view, double fov_deg) {
  const std::filesystem::path base = stem;
  detail::write_file_bytes(base.string() + ".depth", encode_f32le(map.depth));
  nlohmann::json meta = {{"width", map.width},
                         {"height", map.height},
                         {"position", view.position},
                         {"look_at", view.look_at},
                         {"up", view.up},
                         {"fov_deg", fov_deg},
                         {"background", 0.0}};
  const std::string text = meta.dump(2) + "\n";
  detail::write_file_bytes(base.string() + ".meta.json", std::vector<char>(text.begin(), text.end()));
}

inline DepthFile read_depth(const std::filesystem::path& stem) {
  const std::string base = stem.string();
  const auto meta_bytes = detail::read_file_bytes(base + ".meta.json");
  DepthFile out;
  try {
    const auto meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
    out.map.width = meta.at("width").get<std::size_t>();
    out.map.height = meta.at("height").get<std::size_t>();
    out.view.position = meta.at("position").get<Vec3>();
    out.view.look_at = meta.at("look_at").get<Vec3>();
    out.view.up = meta.at("up").get<Vec3>();
    out.fov_deg = meta.at("fov_deg").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(base + ".meta.json: " + e.what());
  }
  const auto blob = detail::read_file_bytes(base + ".depth");
  if (blob.size() != out.map.width * out.map.height * 4) {
    throw DataError(base + ".depth: expected " + std::to_string(out.map.width * out.map.height * 4) + " bytes, found " +
                    std::to_string(blob.size()));
  }
  out.map.depth = decode_f32le(blob);
  return out;
}

}  // namespace svdf
