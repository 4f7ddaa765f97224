// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Crops and format-specific views. Every view element carries the original
// 3D coordinate ("anchor") of the pixel or points it came from, expressed in
// the unaugmented camera frame, so positive pairs between two views of one
// crop are found by comparing anchors and never need extrinsics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/geometry.hpp"

namespace uc3d {

enum class Format { Depth, Point, Voxel, Image };

inline const char* format_name(Format f) {
  switch (f) {
    case Format::Depth: return "depth";
    case Format::Point: return "point";
    case Format::Voxel: return "voxel";
    case Format::Image: return "image";
  }
  return "?";
}

struct PixelRect {
  int x0 = 0, y0 = 0, w = 0, h = 0;

  bool contains(int u, int v) const { return u >= x0 && u < x0 + w && v >= y0 && v < y0 + h; }
};

/// Crop rectangle in source pixels plus an optional dropped square in
/// crop-local pixels.
struct CropSpec {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  std::optional<PixelRect> dropout;

  static CropSpec full(int width, int height) { return {0, 0, width, height, std::nullopt}; }

  void validate(int src_width, int src_height) const {
    if (w <= 0 || h <= 0 || x0 < 0 || y0 < 0 || x0 + w > src_width || y0 + h > src_height) {
      throw ConfigError("crop rectangle outside the source image");
    }
    if (dropout && (dropout->x0 < 0 || dropout->y0 < 0 || dropout->x0 + dropout->w > w ||
                    dropout->y0 + dropout->h > h)) {
      throw ConfigError("dropout square outside the crop");
    }
  }
};

struct CropRanges {
  double min_side_fraction = 0.5;
  double max_side_fraction = 1.0;
  double min_dropout_fraction = 0.1;
  double max_dropout_fraction = 0.3;
  int min_crop_side = 8;
};

/// Two independent crops with one dropout square each.
inline std::pair<CropSpec, CropSpec> sample_crops(int width, int height, Rng& rng,
                                                   const CropRanges& ranges = {}) {
  if (std::lround(width * ranges.min_side_fraction) < ranges.min_crop_side ||
      std::lround(height * ranges.min_side_fraction) < ranges.min_crop_side) {
    throw ConfigError("sample_crops: image " + std::to_string(width) + "x" + std::to_string(height) +
                      " is smaller than the minimum crop");
  }
  auto one = [&]() {
    CropSpec c;
    c.w = std::clamp<int>(std::lround(width * rng.uniform(ranges.min_side_fraction, ranges.max_side_fraction)), 1,
                          width);
    c.h = std::clamp<int>(
        std::lround(height * rng.uniform(ranges.min_side_fraction, ranges.max_side_fraction)), 1, height);
    c.x0 = static_cast<int>(rng.range(0, width - c.w));
    c.y0 = static_cast<int>(rng.range(0, height - c.h));
    const int side = std::max<int>(
        1, std::lround(std::min(c.w, c.h) *
                       rng.uniform(ranges.min_dropout_fraction, ranges.max_dropout_fraction)));
    PixelRect d;
    d.w = d.h = side;
    d.x0 = static_cast<int>(rng.range(0, c.w - side));
    d.y0 = static_cast<int>(rng.range(0, c.h - side));
    c.dropout = d;
    return c;
  };
  CropSpec a = one();
  CropSpec b = one();
  return {a, b};
}

inline std::pair<CropSpec, CropSpec> sample_crops(const DepthMap& depth, Rng& rng, const CropRanges& ranges = {}) {
  return sample_crops(depth.width, depth.height, rng, ranges);
}

/// Concrete augmentation for one view.
struct AugmentParams {
  // Point and voxel payloads.
  double rotation_angle = 0.0;  ///< about the camera up-axis (y)
  double scale = 1.0;
  bool flip_x = false;
  bool flip_z = false;
  double voxel_size = 0.025;
  std::size_t max_points = 0;  ///< random subsample cap, 0 keeps all

  // Depth payloads.
  double depth_roll_angle = 0.0;  ///< about the principal point
  double pixel_zero_fraction = 0.0;

  // Color payloads; a jitter value j scales by (1 + j).
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  bool grayscale = false;
  double blur_sigma = 0.0;

  std::uint64_t seed = 0;

  static AugmentParams identity() { return {}; }

  void validate() const {
    if (!(pixel_zero_fraction >= 0.0 && pixel_zero_fraction <= 1.0)) {
      throw ConfigError("augment: pixel_zero_fraction must lie in [0, 1]");
    }
    if (!(scale > 0.0)) throw ConfigError("augment: scale must be positive");
    if (!(voxel_size > 0.0)) throw ConfigError("augment: voxel_size must be positive");
    if (blur_sigma < 0.0) throw ConfigError("augment: blur_sigma must be non-negative");
  }
};

/// Distributions the trainer samples AugmentParams from.
struct AugmentRanges {
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_probability = 0.5;
  double max_depth_roll = std::numbers::pi / 6.0;
  double pixel_zero_fraction = 0.2;
  double jitter_strength = 0.4;
  double grayscale_probability = 0.2;
  double blur_probability = 0.5;
  double max_blur_sigma = 1.0;
  double voxel_size = 0.025;
  std::size_t max_points = 2048;
};

inline AugmentParams sample_augment_params(const AugmentRanges& r, Rng& rng) {
  AugmentParams p;
  p.rotation_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.scale = rng.uniform(r.scale_min, r.scale_max);
  p.flip_x = rng.bernoulli(r.flip_probability);
  p.flip_z = rng.bernoulli(r.flip_probability);
  p.voxel_size = r.voxel_size;
  p.max_points = r.max_points;
  p.depth_roll_angle = rng.uniform(-r.max_depth_roll, r.max_depth_roll);
  p.pixel_zero_fraction = r.pixel_zero_fraction;
  p.brightness = rng.uniform(-r.jitter_strength, r.jitter_strength);
  p.contrast = rng.uniform(-r.jitter_strength, r.jitter_strength);
  p.saturation = rng.uniform(-r.jitter_strength, r.jitter_strength);
  p.grayscale = rng.bernoulli(r.grayscale_probability);
  p.blur_sigma = rng.bernoulli(r.blur_probability) ? rng.uniform(0.1, r.max_blur_sigma) : 0.0;
  p.seed = rng.next_u64();
  return p;
}

/// One format-tagged rendering of a crop.
struct View {
  Format format = Format::Point;
  std::variant<DepthMap, PointCloud, VoxelSet, ColorImage> payload;
  /// One per element: valid pixels (row-major) for Depth/Image, points, voxels.
  std::vector<Vec3> anchors;
  /// Present for Depth and Image payloads.
  std::optional<CameraIntrinsics> intrinsics;
  /// Image views: pixels with a valid aligned depth.
  std::vector<std::uint8_t> mask;
  /// Source-frame pixel index per element; empty for voxel views.
  std::vector<std::int64_t> source_pixels;

  const DepthMap& depth() const { return std::get<DepthMap>(payload); }
  const PointCloud& points() const { return std::get<PointCloud>(payload); }
  const VoxelSet& voxels() const { return std::get<VoxelSet>(payload); }
  const ColorImage& image() const { return std::get<ColorImage>(payload); }

  std::size_t element_count() const { return anchors.size(); }
};

namespace detail {

/// Crop with dropout applied; anchors and source indices per crop pixel.
struct CroppedDepth {
  DepthMap depth;
  CameraIntrinsics intrinsics;
  std::vector<Vec3> pixel_anchor;
  std::vector<std::int64_t> pixel_source;
};

inline CroppedDepth crop_depth(const DepthMap& src, const CameraIntrinsics& k, const CropSpec& crop) {
  if (src.width != k.width || src.height != k.height) {
    throw ConfigError("make_view: depth map size does not match intrinsics");
  }
  crop.validate(src.width, src.height);
  CroppedDepth out{DepthMap(crop.w, crop.h), k.cropped(crop.x0, crop.y0, crop.w, crop.h),
                   std::vector<Vec3>(std::size_t(crop.w) * crop.h), std::vector<std::int64_t>(std::size_t(crop.w) * crop.h)};
  for (int v = 0; v < crop.h; ++v) {
    for (int u = 0; u < crop.w; ++u) {
      const int su = u + crop.x0, sv = v + crop.y0;
      const std::size_t s = src.index(su, sv), p = out.depth.index(u, v);
      out.pixel_source[p] = static_cast<std::int64_t>(s);
      if (!src.valid[s]) continue;
      if (crop.dropout && crop.dropout->contains(u, v)) continue;
      out.depth.set(p, src.values[s]);
      // Anchors use the uncropped intrinsics so they live in the source frame.
      out.pixel_anchor[p] = unproject_pixel(su, sv, src.values[s], k);
    }
  }
  return out;
}

/// Rotate about y, scale, then flip; anchors are not touched by callers.
inline Vec3 augment_point(Vec3 p, const AugmentParams& a, const Mat3& rot) {
  Vec3 q = a.scale * (rot * p);
  if (a.flip_x) q.x = -q.x;
  if (a.flip_z) q.z = -q.z;
  return q;
}

inline std::vector<std::size_t> subsample_order_preserving(std::size_t n, std::size_t cap, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (cap == 0 || n <= cap) return idx;
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Builds a Point view from per-element camera coordinates and anchors.
inline View point_view_from(std::vector<Vec3> coords, std::vector<Vec3> anchors, std::vector<std::int64_t> sources,
                            const AugmentParams& a, Rng& rng) {
  const auto keep = subsample_order_preserving(coords.size(), a.max_points, rng);
  const Mat3 rot = Mat3::rotation({0, 1, 0}, a.rotation_angle);
  PointCloud pc;
  View view;
  view.format = Format::Point;
  pc.points.reserve(keep.size());
  for (std::size_t i : keep) {
    pc.points.push_back(augment_point(coords[i], a, rot));
    pc.anchors.push_back(anchors[i]);
    view.source_pixels.push_back(sources[i]);
  }
  view.anchors = pc.anchors;
  view.payload = std::move(pc);
  return view;
}

inline void gaussian_blur(ColorImage& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& w : kernel) w /= sum;
  ColorImage tmp = img;
  for (int pass = 0; pass < 2; ++pass) {
    const ColorImage& src = pass == 0 ? img : tmp;
    ColorImage& dst = pass == 0 ? tmp : img;
    for (int v = 0; v < img.height; ++v) {
      for (int u = 0; u < img.width; ++u) {
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int su = pass == 0 ? std::clamp(u + i, 0, img.width - 1) : u;
            const int sv = pass == 1 ? std::clamp(v + i, 0, img.height - 1) : v;
            acc += kernel[i + radius] * src.at(su, sv, c);
          }
          dst.at(u, v, c) = acc;
        }
      }
    }
  }
}

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace detail

/// Crop -> dropout -> format conversion and augmentation.
///
/// Point/Voxel: unproject, then rotate/scale/flip the coordinates (anchors
/// keep the unaugmented values), then voxelize for Voxel. Depth: roll the
/// image about the principal point with nearest-neighbor resampling, then
/// zero round(pixel_zero_fraction * valid) uniformly chosen valid pixels.
inline View make_view(const DepthMap& depth, const CameraIntrinsics& k, const CropSpec& crop, Format format,
                      const AugmentParams& params) {
  if (format == Format::Image) throw ConfigError("make_view: use make_image_view for Image views");
  params.validate();
  Rng rng(params.seed);
  detail::CroppedDepth c = detail::crop_depth(depth, k, crop);

  if (format == Format::Point || format == Format::Voxel) {
    std::vector<Vec3> coords, anchors;
    std::vector<std::int64_t> sources;
    for (std::size_t p = 0; p < c.depth.size(); ++p) {
      if (!c.depth.valid[p]) continue;
      coords.push_back(c.pixel_anchor[p]);
      anchors.push_back(c.pixel_anchor[p]);
      sources.push_back(c.pixel_source[p]);
    }
    if (coords.empty()) throw EmptyInputError("make_view: crop has no valid pixels after dropout");
    View view = detail::point_view_from(std::move(coords), std::move(anchors), std::move(sources), params, rng);
    if (format == Format::Voxel) {
      VoxelSet vs = voxelize(view.points(), params.voxel_size);
      view.format = Format::Voxel;
      view.anchors = vs.anchors;
      view.source_pixels.clear();
      view.payload = std::move(vs);
    }
    return view;
  }

  // Depth.
  const int w = c.depth.width, h = c.depth.height;
  DepthMap rolled(w, h);
  std::vector<std::size_t> from(rolled.size(), 0);
  const double cs = std::cos(params.depth_roll_angle), sn = std::sin(params.depth_roll_angle);
  const double pcx = c.intrinsics.cx, pcy = c.intrinsics.cy;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      // Inverse map: output pixel q samples R(-angle)(q - c) + c.
      const double du = u - pcx, dv = v - pcy;
      const long su = std::lround(cs * du + sn * dv + pcx);
      const long sv = std::lround(-sn * du + cs * dv + pcy);
      if (su < 0 || sv < 0 || su >= w || sv >= h) continue;
      const std::size_t s = c.depth.index(static_cast<int>(su), static_cast<int>(sv));
      if (!c.depth.valid[s]) continue;
      const std::size_t q = rolled.index(u, v);
      rolled.set(q, c.depth.values[s]);
      from[q] = s;
    }
  }

  std::vector<std::size_t> valid_px;
  for (std::size_t q = 0; q < rolled.size(); ++q) {
    if (rolled.valid[q]) valid_px.push_back(q);
  }
  const auto n_zero = static_cast<std::size_t>(std::llround(params.pixel_zero_fraction * valid_px.size()));
  for (std::size_t i = 0; i < n_zero; ++i) {
    std::swap(valid_px[i], valid_px[i + rng.below(valid_px.size() - i)]);
    rolled.invalidate(valid_px[i]);
  }

  View view;
  view.format = Format::Depth;
  view.intrinsics = c.intrinsics;
  for (std::size_t q = 0; q < rolled.size(); ++q) {
    if (!rolled.valid[q]) continue;
    view.anchors.push_back(c.pixel_anchor[from[q]]);
    view.source_pixels.push_back(c.pixel_source[from[q]]);
  }
  if (view.anchors.empty()) throw EmptyInputError("make_view: depth view is empty after dropout and zeroing");
  view.payload = std::move(rolled);
  return view;
}

/// Cropped color view with jitter, grayscale and blur; anchors come from the
/// aligned depth so image pixels correspond to 3D coordinates.
inline View make_image_view(const ColorImage& rgb, const DepthMap& depth, const CameraIntrinsics& k,
                            const CropSpec& crop, const AugmentParams& params) {
  if (rgb.width != depth.width || rgb.height != depth.height) {
    throw ConfigError("make_image_view: color image and depth map are not aligned");
  }
  params.validate();
  detail::CroppedDepth c = detail::crop_depth(depth, k, crop);

  ColorImage img(crop.w, crop.h);
  for (int v = 0; v < crop.h; ++v) {
    for (int u = 0; u < crop.w; ++u) {
      const bool dropped = crop.dropout && crop.dropout->contains(u, v);
      for (int ch = 0; ch < 3; ++ch) img.at(u, v, ch) = dropped ? 0.0 : rgb.at(u + crop.x0, v + crop.y0, ch);
    }
  }

  if (params.brightness != 0.0) {
    for (double& x : img.rgb) x = std::clamp(x * (1.0 + params.brightness), 0.0, 1.0);
  }
  if (params.contrast != 0.0) {
    double mean = 0.0;
    for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
      mean += detail::luminance(img.rgb[p], img.rgb[p + 1], img.rgb[p + 2]);
    }
    mean /= std::max<std::size_t>(1, img.rgb.size() / 3);
    for (double& x : img.rgb) x = std::clamp((x - mean) * (1.0 + params.contrast) + mean, 0.0, 1.0);
  }
  if (params.saturation != 0.0) {
    for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
      const double g = detail::luminance(img.rgb[p], img.rgb[p + 1], img.rgb[p + 2]);
      for (int ch = 0; ch < 3; ++ch) {
        img.rgb[p + ch] = std::clamp(g + (img.rgb[p + ch] - g) * (1.0 + params.saturation), 0.0, 1.0);
      }
    }
  }
  if (params.grayscale) {
    for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
      const double g = detail::luminance(img.rgb[p], img.rgb[p + 1], img.rgb[p + 2]);
      img.rgb[p] = img.rgb[p + 1] = img.rgb[p + 2] = g;
    }
  }
  if (params.blur_sigma > 0.0) detail::gaussian_blur(img, params.blur_sigma);

  View view;
  view.format = Format::Image;
  view.intrinsics = c.intrinsics;
  view.mask = c.depth.valid;
  for (std::size_t p = 0; p < c.depth.size(); ++p) {
    if (!c.depth.valid[p]) continue;
    view.anchors.push_back(c.pixel_anchor[p]);
    view.source_pixels.push_back(c.pixel_source[p]);
  }
  if (view.anchors.empty()) throw EmptyInputError("make_image_view: no valid depth under the crop");
  view.payload = std::move(img);
  return view;
}

/// Two Point views of overlapping posed frames whose anchors are world
/// coordinates, so anchor matching reproduces extrinsic-based correspondence.
/// Throws DegenerateError when the frames overlap less than min_overlap.
inline std::pair<View, View> cross_view_pair(const DepthMap& depth_a, const RigidTransform& pose_a,
                                             const DepthMap& depth_b, const RigidTransform& pose_b,
                                             const CameraIntrinsics& k, const AugmentParams& params_a = {},
                                             const AugmentParams& params_b = {}, double min_overlap = 0.3) {
  const double overlap = frame_overlap(depth_a, pose_a, depth_b, pose_b, k);
  if (overlap < min_overlap) {
    throw DegenerateError("cross_view_pair: overlap " + std::to_string(overlap) + " below minimum " +
                          std::to_string(min_overlap));
  }
  auto build = [&](const DepthMap& d, const RigidTransform& pose, const AugmentParams& a) {
    a.validate();
    const PointCloud pc = unproject(d, k);
    std::vector<Vec3> world;
    world.reserve(pc.size());
    for (const Vec3& p : pc.points) world.push_back(pose.apply(p));
    std::vector<std::int64_t> sources;
    for (std::size_t p = 0; p < d.size(); ++p) {
      if (d.valid[p]) sources.push_back(static_cast<std::int64_t>(p));
    }
    Rng rng(a.seed);
    return detail::point_view_from(pc.points, std::move(world), std::move(sources), a, rng);
  };
  return {build(depth_a, pose_a, params_a), build(depth_b, pose_b, params_b)};
}

}  // namespace uc3d
