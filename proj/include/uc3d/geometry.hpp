// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Pinhole conversions among depth maps, point clouds and voxel sets.
//
// Conventions: camera frame is x right, y down, z forward. Integer pixel
// (u, v) is the pinhole sample itself (no half-pixel offset), so
// project(unproject(d)) is an exact inverse pair. Pixel index p = v * width + u.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"

namespace uc3d {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("intrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
      throw ConfigError("intrinsics: principal point outside the image");
    }
  }

  /// Intrinsics of the sub-image starting at (x0, y0). The shifted principal
  /// point may fall outside the crop; that is a legal camera, so no validate().
  CameraIntrinsics cropped(int x0, int y0, int w, int h) const {
    return {fx, fy, cx - x0, cy - y0, w, h};
  }
};

/// Depth in meters; invalid ("bad") pixels store 0 and valid[p] == 0.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;

  DepthMap(int w, int h) : width(w), height(h), values(std::size_t(w) * h, 0.0), valid(std::size_t(w) * h, 0) {}

  /// Builds the mask from the values: positive finite depth is valid.
  static DepthMap from_values(int w, int h, std::vector<double> vals) {
    if (vals.size() != std::size_t(w) * h) throw ConfigError("depth map: value count does not match size");
    DepthMap d(w, h);
    for (std::size_t p = 0; p < vals.size(); ++p) {
      if (vals[p] > 0.0 && std::isfinite(vals[p])) {
        d.values[p] = vals[p];
        d.valid[p] = 1;
      }
    }
    return d;
  }

  std::size_t size() const { return values.size(); }
  std::size_t index(int u, int v) const { return std::size_t(v) * width + u; }
  bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }

  void set(std::size_t p, double depth) {
    if (depth > 0.0 && std::isfinite(depth)) {
      values[p] = depth;
      valid[p] = 1;
    } else {
      invalidate(p);
    }
  }

  void invalidate(std::size_t p) {
    values[p] = 0.0;
    valid[p] = 0;
  }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
};

/// RGB in [0, 1], interleaved.
struct ColorImage {
  int width = 0, height = 0;
  std::vector<double> rgb;

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0.0) {}

  double& at(int u, int v, int c) { return rgb[(std::size_t(v) * width + u) * 3 + c]; }
  double at(int u, int v, int c) const { return rgb[(std::size_t(v) * width + u) * 3 + c]; }
};

struct PointCloud {
  std::vector<Vec3> points;
  /// Row-major |points| x feature_dim, empty when feature_dim == 0.
  std::vector<double> features;
  int feature_dim = 0;
  /// Original 3D coordinate of each point, untouched by augmentation.
  std::vector<Vec3> anchors;

  std::size_t size() const { return points.size(); }

  void check() const {
    if (points.size() != anchors.size()) throw ContractError("point cloud: anchors/points size mismatch");
    if (feature_dim > 0 && features.size() != points.size() * std::size_t(feature_dim)) {
      throw ContractError("point cloud: feature count mismatch");
    }
  }
};

using VoxelIndex = std::array<std::int64_t, 3>;

struct VoxelSet {
  double voxel_size = 0.0;
  std::vector<VoxelIndex> indices;
  std::vector<double> features;
  int feature_dim = 1;
  /// Representative coordinate per voxel (mean of member anchors).
  std::vector<Vec3> anchors;

  std::size_t size() const { return indices.size(); }
};

inline VoxelIndex voxel_index_of(Vec3 p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z / voxel_size))};
}

/// Lifts one pixel through the pinhole model.
inline Vec3 unproject_pixel(double u, double v, double depth, const CameraIntrinsics& k) {
  return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

/// One point per valid pixel in row-major order; anchors equal the points.
inline PointCloud unproject(const DepthMap& depth, const CameraIntrinsics& k) {
  if (depth.width != k.width || depth.height != k.height) {
    throw ConfigError("unproject: depth map is " + std::to_string(depth.width) + "x" +
                      std::to_string(depth.height) + " but intrinsics expect " + std::to_string(k.width) +
                      "x" + std::to_string(k.height));
  }
  PointCloud pc;
  pc.points.reserve(depth.valid_count());
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const std::size_t p = depth.index(u, v);
      if (!depth.valid[p]) continue;
      pc.points.push_back(unproject_pixel(u, v, depth.values[p], k));
    }
  }
  if (pc.points.empty()) throw EmptyInputError("unproject: depth map has no valid pixels");
  pc.anchors = pc.points;
  return pc;
}

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
  /// z > 0 and the nearest pixel lies inside the image.
  bool in_bounds = false;

  int pixel_u() const { return static_cast<int>(std::lround(u)); }
  int pixel_v() const { return static_cast<int>(std::lround(v)); }
};

inline Projection project_point(Vec3 p, const CameraIntrinsics& k) {
  Projection r;
  r.depth = p.z;
  if (!(p.z > 0.0)) return r;
  r.u = k.fx * p.x / p.z + k.cx;
  r.v = k.fy * p.y / p.z + k.cy;
  const double ru = std::round(r.u), rv = std::round(r.v);
  r.in_bounds = ru >= 0.0 && ru < k.width && rv >= 0.0 && rv < k.height;
  return r;
}

inline std::vector<Projection> project(const std::vector<Vec3>& points, const CameraIntrinsics& k) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(project_point(p, k));
  return out;
}

inline std::vector<Projection> project(const PointCloud& pc, const CameraIntrinsics& k) {
  return project(pc.points, k);
}

/// Quantizes points into cells of side voxel_size, floor convention.
/// Output voxels are sorted by index; anchor and features are member means,
/// features default to the constant 1 when the cloud carries none.
inline VoxelSet voxelize(const PointCloud& pc, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ConfigError("voxelize: voxel_size must be positive");
  if (pc.points.empty()) throw EmptyInputError("voxelize: empty point cloud");
  pc.check();

  struct Accum {
    Vec3 anchor_sum;
    std::vector<double> feature_sum;
    std::size_t count = 0;
  };
  std::map<VoxelIndex, Accum> cells;
  const int fdim = pc.feature_dim;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    Accum& a = cells[voxel_index_of(pc.points[i], voxel_size)];
    a.anchor_sum = a.anchor_sum + pc.anchors[i];
    if (fdim > 0) {
      a.feature_sum.resize(fdim, 0.0);
      for (int c = 0; c < fdim; ++c) a.feature_sum[c] += pc.features[i * fdim + c];
    }
    ++a.count;
  }

  VoxelSet vs;
  vs.voxel_size = voxel_size;
  vs.feature_dim = fdim > 0 ? fdim : 1;
  vs.indices.reserve(cells.size());
  vs.anchors.reserve(cells.size());
  vs.features.reserve(cells.size() * vs.feature_dim);
  for (const auto& [idx, a] : cells) {
    const double inv = 1.0 / static_cast<double>(a.count);
    vs.indices.push_back(idx);
    vs.anchors.push_back(inv * a.anchor_sum);
    if (fdim > 0) {
      for (int c = 0; c < fdim; ++c) vs.features.push_back(a.feature_sum[c] * inv);
    } else {
      vs.features.push_back(1.0);
    }
  }
  return vs;
}

/// Fraction of `from`'s valid pixels that, moved into `to`'s camera, land on a
/// valid pixel whose depth agrees within depth_tolerance meters.
inline double directed_overlap(const DepthMap& from, const RigidTransform& from_pose, const DepthMap& to,
                               const RigidTransform& to_pose, const CameraIntrinsics& k,
                               double depth_tolerance) {
  const RigidTransform from_to = to_pose.inverse().compose(from_pose);
  std::size_t total = 0, hit = 0;
  for (int v = 0; v < from.height; ++v) {
    for (int u = 0; u < from.width; ++u) {
      const std::size_t p = from.index(u, v);
      if (!from.valid[p]) continue;
      ++total;
      const Projection pr = project_point(from_to.apply(unproject_pixel(u, v, from.values[p], k)), k);
      if (!pr.in_bounds) continue;
      const std::size_t q = to.index(pr.pixel_u(), pr.pixel_v());
      if (to.valid[q] && std::abs(to.values[q] - pr.depth) <= depth_tolerance) ++hit;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

/// Symmetric overlap of two posed depth maps sharing intrinsics: the smaller
/// of the two directed overlaps.
inline double frame_overlap(const DepthMap& a, const RigidTransform& pose_a, const DepthMap& b,
                            const RigidTransform& pose_b, const CameraIntrinsics& k,
                            double depth_tolerance = 0.05) {
  return std::min(directed_overlap(a, pose_a, b, pose_b, k, depth_tolerance),
                  directed_overlap(b, pose_b, a, pose_a, k, depth_tolerance));
}

}  // namespace uc3d
