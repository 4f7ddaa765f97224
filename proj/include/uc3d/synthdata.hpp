// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Procedural RGB-D frames: rooms of planes, boxes and spheres ray-cast into
// z-depth and Lambertian color, with invalid pixels at grazing incidence and
// along depth discontinuities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/geometry.hpp"
#include "uc3d/geometry_io.hpp"

namespace uc3d {

/// Infinite plane {p : dot(normal, p) = offset}.
struct Plane {
  Vec3 normal{0, 1, 0};
  double offset = 0.0;
  Vec3 albedo{0.6, 0.6, 0.6};
  bool checker = false;  ///< modulate albedo with a 0.5 m checkerboard
};

struct Box {
  Vec3 lo, hi;
  Vec3 albedo{0.5, 0.5, 0.5};
};

struct Sphere {
  Vec3 center;
  double radius = 0.5;
  Vec3 albedo{0.5, 0.5, 0.5};
};

/// World is y-up; the floor is the plane y = 0.
struct Scene {
  std::vector<Plane> planes;
  std::vector<Box> boxes;
  std::vector<Sphere> spheres;
  double room_half_extent = 2.5;
  std::uint64_t seed = 0;

  std::size_t primitive_count() const { return planes.size() + boxes.size() + spheres.size(); }
};

struct PosedFrame {
  DepthMap depth;
  ColorImage color;
  CameraIntrinsics intrinsics;
  RigidTransform pose;  ///< camera to world
};

struct BadPixelModel {
  double grazing_threshold = 0.1;        ///< |normal . ray| below this is unmeasurable
  double discontinuity_threshold = 0.1;  ///< meters between 4-neighbors
  int band_width = 2;                    ///< pixels straddling each discontinuity
  double max_range = 10.0;
};

struct SceneOptions {
  double room_half_extent = 2.5;
  double wall_probability = 0.75;
  int min_objects = 3;
  int max_objects = 7;
};

/// 80x60 pinhole with a ~62 degree horizontal field of view.
inline CameraIntrinsics default_intrinsics() { return {66.0, 66.0, 39.5, 29.5, 80, 60}; }

/// Camera-to-world pose at `eye` looking at `target`. Camera axes: x right,
/// y down, z forward.
inline RigidTransform look_at(Vec3 eye, Vec3 target, Vec3 up = {0, 1, 0}) {
  const Vec3 f = normalized(target - eye);
  Vec3 r = cross(f, up);
  if (norm(r) < 1e-9) r = cross(f, Vec3{0, 0, -1});
  r = normalized(r);
  const Vec3 d = cross(f, r);
  return {Mat3::from_columns(r, d, f), eye};
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  Vec3 albedo;
};

namespace detail {

inline void intersect(const Plane& pl, Vec3 o, Vec3 dir, Hit& hit) {
  const double den = dot(pl.normal, dir);
  if (std::abs(den) < 1e-12) return;
  const double t = (pl.offset - dot(pl.normal, o)) / den;
  if (t <= 1e-9 || t >= hit.t) return;
  hit.t = t;
  hit.normal = pl.normal;
  hit.albedo = pl.albedo;
  if (pl.checker) {
    const Vec3 p = o + t * dir;
    const long parity = std::lround(std::floor(p.x / 0.5)) + std::lround(std::floor(p.z / 0.5));
    if (parity % 2 != 0) hit.albedo = 0.55 * pl.albedo;
  }
}

inline void intersect(const Box& b, Vec3 o, Vec3 dir, Hit& hit) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1;
  double sign0 = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return;
      continue;
    }
    double ta = (b.lo[a] - o[a]) / dir[a], tb = (b.hi[a] - o[a]) / dir[a];
    double s = -1.0;  // entering through the lo face
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1.0;
    }
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
      sign0 = s;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || axis0 < 0 || t0 <= 1e-9 || t0 >= hit.t) return;
  hit.t = t0;
  Vec3 n{0, 0, 0};
  if (axis0 == 0) n.x = sign0;
  if (axis0 == 1) n.y = sign0;
  if (axis0 == 2) n.z = sign0;
  hit.normal = n;
  hit.albedo = b.albedo;
}

inline void intersect(const Sphere& s, Vec3 o, Vec3 dir, Hit& hit) {
  const Vec3 oc = o - s.center;
  const double a = dot(dir, dir), hb = dot(oc, dir), c = dot(oc, oc) - s.radius * s.radius;
  const double disc = hb * hb - a * c;
  if (disc < 0.0) return;
  const double sq = std::sqrt(disc);
  double t = (-hb - sq) / a;
  if (t <= 1e-9) t = (-hb + sq) / a;
  if (t <= 1e-9 || t >= hit.t) return;
  hit.t = t;
  hit.normal = normalized(o + t * dir - s.center);
  hit.albedo = s.albedo;
}

}  // namespace detail

/// Nearest intersection along o + t * dir, t > 0.
inline std::optional<Hit> cast_ray(const Scene& scene, Vec3 o, Vec3 dir) {
  Hit hit;
  for (const Plane& p : scene.planes) detail::intersect(p, o, dir, hit);
  for (const Box& b : scene.boxes) detail::intersect(b, o, dir, hit);
  for (const Sphere& s : scene.spheres) detail::intersect(s, o, dir, hit);
  if (!std::isfinite(hit.t)) return std::nullopt;
  return hit;
}

/// Ray-cast z-depth and shaded color. Throws DegenerateError when no ray hits.
inline PosedFrame render(const Scene& scene, const RigidTransform& pose, const CameraIntrinsics& k,
                         const BadPixelModel& bad = {}) {
  k.validate();
  const int w = k.width, h = k.height;
  PosedFrame f{DepthMap(w, h), ColorImage(w, h), k, pose};
  const Vec3 light = normalized(Vec3{0.4, 1.0, 0.3});
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> z(std::size_t(w) * h, inf);
  std::vector<std::uint8_t> grazing(z.size(), 0);
  bool any = false;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      // Camera ray with unit z, so the hit parameter is the z-depth.
      const Vec3 dc{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
      const Vec3 dir = pose.rotation * dc;
      const auto hit = cast_ray(scene, pose.translation, dir);
      if (!hit) continue;
      any = true;
      const std::size_t p = f.depth.index(u, v);
      z[p] = hit->t;
      Vec3 n = hit->normal;
      if (dot(n, dir) > 0.0) n = -1.0 * n;
      grazing[p] = std::abs(dot(n, normalized(dir))) < bad.grazing_threshold;
      const double shade = 0.3 + 0.7 * std::max(0.0, dot(n, light));
      for (int c = 0; c < 3; ++c) f.color.at(u, v, c) = std::clamp(hit->albedo[c] * shade, 0.0, 1.0);
    }
  }
  if (!any) throw DegenerateError("render: no ray hits the scene from this pose");

  // Pixels on either side of a depth jump form a band_width wide strip; the
  // strip is widened symmetrically for larger widths.
  std::vector<std::uint8_t> edge(z.size(), 0);
  auto jump = [&](double a, double b) {
    if (std::isinf(a) && std::isinf(b)) return false;
    return std::isinf(a) || std::isinf(b) || std::abs(a - b) > bad.discontinuity_threshold;
  };
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t p = f.depth.index(u, v);
      if (u + 1 < w && jump(z[p], z[p + 1])) edge[p] = edge[p + 1] = 1;
      if (v + 1 < h && jump(z[p], z[p + std::size_t(w)])) edge[p] = edge[p + std::size_t(w)] = 1;
    }
  }
  const int grow = std::max(0, bad.band_width / 2 - 1);
  std::vector<std::uint8_t> band = edge;
  if (grow > 0) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (!edge[f.depth.index(u, v)]) continue;
        for (int dv = -grow; dv <= grow; ++dv) {
          for (int du = -grow; du <= grow; ++du) {
            const int uu = u + du, vv = v + dv;
            if (uu >= 0 && vv >= 0 && uu < w && vv < h) band[f.depth.index(uu, vv)] = 1;
          }
        }
      }
    }
  }

  for (std::size_t p = 0; p < z.size(); ++p) {
    if (std::isinf(z[p]) || grazing[p] || band[p] || z[p] > bad.max_range) continue;
    f.depth.set(p, z[p]);
  }
  return f;
}

inline double bad_pixel_fraction(const DepthMap& d) {
  return 1.0 - static_cast<double>(d.valid_count()) / static_cast<double>(d.size());
}

/// Floor, up to three walls and a handful of boxes and spheres resting on
/// the floor.
inline Scene generate_scene(Rng& rng, const SceneOptions& opt = {}) {
  if (opt.min_objects < 1 || opt.max_objects < opt.min_objects) throw ConfigError("scene: bad object count range");
  Scene s;
  s.seed = rng.next_u64();
  const double e = opt.room_half_extent;
  s.room_half_extent = e;
  auto color = [&]() { return Vec3{rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95)}; };
  s.planes.push_back({{0, 1, 0}, 0.0, color(), true});
  const Vec3 wall_normals[3] = {{0, 0, 1}, {1, 0, 0}, {-1, 0, 0}};
  for (const Vec3& n : wall_normals) {
    if (rng.bernoulli(opt.wall_probability)) s.planes.push_back({n, -e, color(), false});
  }
  const int count = static_cast<int>(rng.range(opt.min_objects, opt.max_objects));
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform(-0.6 * e, 0.6 * e), zc = rng.uniform(-0.6 * e, 0.3 * e);
    if (rng.bernoulli(0.5)) {
      const double sx = rng.uniform(0.2, 0.6), sy = rng.uniform(0.2, 1.2), sz = rng.uniform(0.2, 0.6);
      s.boxes.push_back({{x - sx, 0.0, zc - sz}, {x + sx, 2 * sy, zc + sz}, color()});
    } else {
      const double r = rng.uniform(0.2, 0.6);
      s.spheres.push_back({{x, r + rng.uniform(0.0, 0.5), zc}, r, color()});
    }
  }
  return s;
}

/// Eye near the front of the room looking down into it.
inline RigidTransform sample_camera_pose(const Scene& s, Rng& rng) {
  const double e = s.room_half_extent;
  const Vec3 eye{rng.uniform(-0.4 * e, 0.4 * e), rng.uniform(1.2, 2.0), rng.uniform(0.5 * e, 0.8 * e)};
  const Vec3 target{rng.uniform(-0.3 * e, 0.3 * e), rng.uniform(0.0, 0.6), rng.uniform(-0.5 * e, 0.0)};
  return look_at(eye, target);
}

/// Two views of `scene` whose poses differ by a rotation of at most 30
/// degrees and a translation of at most `baseline`; resampled until the
/// reprojection overlap reaches min_overlap. A zero baseline yields the
/// same pose twice.
inline std::pair<PosedFrame, PosedFrame> render_pair(const Scene& scene, const CameraIntrinsics& k, double baseline,
                                                     Rng& rng, double min_overlap = 0.3, int max_attempts = 50) {
  if (baseline < 0.0) throw ConfigError("render_pair: negative baseline");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const RigidTransform pa = sample_camera_pose(scene, rng);
    RigidTransform pb = pa;
    if (baseline > 0.0) {
      Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
      if (norm(axis) < 1e-12) axis = {0, 1, 0};
      const double angle = rng.uniform(0.0, std::numbers::pi / 6.0);
      Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
      if (norm(dir) < 1e-12) dir = {1, 0, 0};
      const Vec3 shift = rng.uniform(0.0, baseline) * normalized(dir);
      // Rotate about the camera center in the camera frame, then shift the center in the world.
      pb.rotation = pa.rotation * Mat3::rotation(normalized(axis), angle);
      pb.translation = pa.translation + shift;
    }
    try {
      PosedFrame a = render(scene, pa, k), b = render(scene, pb, k);
      if (a.depth.valid_count() == 0 || b.depth.valid_count() == 0) continue;
      if (frame_overlap(a.depth, a.pose, b.depth, b.pose, k) >= min_overlap) return {std::move(a), std::move(b)};
    } catch (const DegenerateError&) {
    }
  }
  throw GenerationError("render_pair: no pair with overlap >= " + std::to_string(min_overlap) + " after " +
                        std::to_string(max_attempts) + " attempts");
}

struct FrameOptions {
  CameraIntrinsics intrinsics = default_intrinsics();
  SceneOptions scene;
  BadPixelModel bad_pixels;
  double min_bad_fraction = 0.01;
  double max_bad_fraction = 0.40;
  int max_attempts = 50;
};

/// One frame of a freshly generated scene, resampled until the bad-pixel
/// fraction is within bounds.
inline PosedFrame generate_frame(Rng& rng, const FrameOptions& opt = {}) {
  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    const Scene scene = generate_scene(rng, opt.scene);
    const RigidTransform pose = sample_camera_pose(scene, rng);
    try {
      PosedFrame f = render(scene, pose, opt.intrinsics, opt.bad_pixels);
      const double bad = bad_pixel_fraction(f.depth);
      if (bad >= opt.min_bad_fraction && bad <= opt.max_bad_fraction) return f;
    } catch (const DegenerateError&) {
    }
  }
  throw GenerationError("generate_frame: no acceptable frame after " + std::to_string(opt.max_attempts) +
                        " attempts");
}

/// n frames; frame i depends only on (seed, i).
inline std::vector<PosedFrame> generate_frames(std::size_t n, std::uint64_t seed, const FrameOptions& opt = {}) {
  std::vector<PosedFrame> frames;
  frames.reserve(n);
  Rng master(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = master.fork();
    frames.push_back(generate_frame(rng, opt));
  }
  return frames;
}

/// Posed pairs of overlapping views for PointContrast-style training.
inline std::vector<std::pair<PosedFrame, PosedFrame>> generate_pairs(std::size_t n, std::uint64_t seed,
                                                                     double baseline = 0.3,
                                                                     const FrameOptions& opt = {}) {
  std::vector<std::pair<PosedFrame, PosedFrame>> pairs;
  pairs.reserve(n);
  Rng master(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = master.fork();
    const Scene scene = generate_scene(rng, opt.scene);
    pairs.push_back(render_pair(scene, opt.intrinsics, baseline, rng));
  }
  return pairs;
}

namespace io {

inline std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu", i);
  return buf;
}

/// frame_NNNNN.depth.pgm / .color.ppm / .pose.txt / .intrinsics.txt
inline void write_frames(const std::filesystem::path& dir, const std::vector<PosedFrame>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string stem = frame_stem(i);
    write_depth_pgm(dir / (stem + ".depth.pgm"), frames[i].depth);
    write_color_ppm(dir / (stem + ".color.ppm"), frames[i].color);
    write_pose(dir / (stem + ".pose.txt"), frames[i].pose);
    write_intrinsics(dir / (stem + ".intrinsics.txt"), frames[i].intrinsics);
  }
}

/// Reads every frame_*.depth.pgm in name order. A missing color image is
/// replaced by a gray one; a missing pose by the identity.
inline std::vector<PosedFrame> read_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("read_frames: not a directory: " + dir.string());
  std::vector<std::string> stems;
  const std::string suffix = ".depth.pgm";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw EmptyInputError("read_frames: no *.depth.pgm files in " + dir.string());
  std::vector<PosedFrame> frames;
  for (const std::string& stem : stems) {
    PosedFrame f;
    f.depth = read_depth_pgm(dir / (stem + ".depth.pgm"));
    f.intrinsics = read_intrinsics(dir / (stem + ".intrinsics.txt"));
    const auto color = dir / (stem + ".color.ppm");
    if (std::filesystem::exists(color)) {
      f.color = read_color_ppm(color);
    } else {
      f.color = ColorImage(f.depth.width, f.depth.height);
      std::fill(f.color.rgb.begin(), f.color.rgb.end(), 0.5);
    }
    const auto pose = dir / (stem + ".pose.txt");
    f.pose = std::filesystem::exists(pose) ? read_pose(pose) : RigidTransform{};
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace io

}  // namespace uc3d
