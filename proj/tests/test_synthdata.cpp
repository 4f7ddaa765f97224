// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "uc3d/synthdata.hpp"

namespace uc3d {
namespace {

BadPixelModel no_bad_pixels() { return {0.0, 1e9, 2, 1e9}; }

TEST(Render, FloorFromTwoMetersLookingDown) {
  Scene s;
  s.planes.push_back({{0, 1, 0}, 0.0});
  const RigidTransform pose = look_at({0, 2, 0}, {0, 0, 0}, {0, 0, -1});
  const CameraIntrinsics k{20, 20, 7.5, 5.5, 16, 12};
  const PosedFrame f = render(s, pose, k, no_bad_pixels());
  ASSERT_EQ(f.depth.valid_count(), f.depth.size());
  for (double z : f.depth.values) EXPECT_NEAR(z, 2.0, 1e-12);
}

TEST(Render, SkyPixelsAreInvalid) {
  Scene s;
  s.planes.push_back({{0, 1, 0}, 0.0});
  // Horizontal camera: rows above the horizon never hit the floor, and the
  // first floor row borders the sky so it falls in the discontinuity band.
  const RigidTransform pose = look_at({0, 1, 0}, {0, 1, -5});
  const CameraIntrinsics k{20, 20, 7.5, 5.5, 16, 12};
  const PosedFrame f = render(s, pose, k, no_bad_pixels());
  for (int v = 0; v < 12; ++v) {
    for (int u = 0; u < 16; ++u) {
      EXPECT_EQ(f.depth.is_valid(u, v), v > 6) << u << "," << v;
    }
  }
}

TEST(Render, SphereCenterPixelDepth) {
  for (double r : {0.3, 0.5, 1.0}) {
    for (double z : {2.0, 3.5}) {
      Scene s;
      s.spheres.push_back({{0, 0, -z}, r});
      const RigidTransform pose = look_at({0, 0, 0}, {0, 0, -1});
      const CameraIntrinsics k{20, 20, 8, 6, 17, 13};
      const PosedFrame f = render(s, pose, k, no_bad_pixels());
      EXPECT_NEAR(f.depth.values[f.depth.index(8, 6)], z - r, 1e-12);
    }
  }
}

TEST(Render, NothingHitIsDegenerate) {
  Scene s;
  s.spheres.push_back({{0, 0, 5}, 0.5});
  const RigidTransform pose = look_at({0, 0, 0}, {0, 0, -1});
  EXPECT_THROW(render(s, pose, CameraIntrinsics{20, 20, 7.5, 5.5, 16, 12}), DegenerateError);
}

TEST(Render, DiscontinuityBandStraddlesEdges) {
  // Box in front of a wall: a vertical depth jump splits the image.
  Scene s;
  s.planes.push_back({{0, 0, 1}, -5.0});
  s.boxes.push_back({{-10, -10, -3}, {0, 10, -2}});
  const RigidTransform pose = look_at({0, 0, 0}, {0, 0, -1});
  const CameraIntrinsics k{20, 20, 7.5, 5.5, 16, 12};
  const PosedFrame f = render(s, pose, k, BadPixelModel{0.1, 0.1, 2, 10});
  // Columns u <= 7 see the box (x < 0), u >= 8 the wall; both 7 and 8 are banded.
  for (int v = 0; v < 12; ++v) {
    EXPECT_FALSE(f.depth.is_valid(7, v));
    EXPECT_FALSE(f.depth.is_valid(8, v));
    EXPECT_TRUE(f.depth.is_valid(6, v));
    EXPECT_TRUE(f.depth.is_valid(9, v));
  }
}

TEST(Render, GrazingPixelsAreInvalid) {
  Scene s;
  s.planes.push_back({{0, 1, 0}, 0.0});
  // Nearly horizontal view of the floor: far rows hit it at a grazing angle.
  const RigidTransform pose = look_at({0, 0.3, 0}, {0, 0.25, -5});
  const CameraIntrinsics k{20, 20, 7.5, 5.5, 16, 12};
  const PosedFrame strict = render(s, pose, k, BadPixelModel{0.1, 1e9, 2, 1e9});
  const PosedFrame lax = render(s, pose, k, BadPixelModel{0.0, 1e9, 2, 1e9});
  EXPECT_LT(strict.depth.valid_count(), lax.depth.valid_count());
  for (int v = 0; v < 12; ++v) {
    for (int u = 0; u < 16; ++u) {
      if (!lax.depth.is_valid(u, v) || strict.depth.is_valid(u, v)) continue;
      const Vec3 dc{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
      const Vec3 dir = normalized(pose.rotation * dc);
      EXPECT_LT(std::abs(dir.y), 0.1);
    }
  }
}

TEST(Render, DepthIsConsistentWithRayCasting) {
  Rng rng(3);
  const Scene scene = generate_scene(rng);
  const RigidTransform pose = sample_camera_pose(scene, rng);
  const CameraIntrinsics k = default_intrinsics();
  const PosedFrame f = render(scene, pose, k);
  const PointCloud pc = unproject(f.depth, k);
  for (std::size_t i = 0; i < pc.size(); i += 7) {
    // Independent check: the world point lies on the first surface along its ray.
    const Vec3 w = pose.apply(pc.points[i]);
    const Vec3 dir = w - pose.translation;
    const auto hit = cast_ray(scene, pose.translation, normalized(dir));
    ASSERT_TRUE(hit.has_value());
    EXPECT_NEAR(hit->t, norm(dir), 1e-9);
  }
}

TEST(GenerateFrames, DeterministicAndWithinBadPixelBounds) {
  const auto a = generate_frames(12, 77), b = generate_frames(12, 77);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].depth.values, b[i].depth.values);
    EXPECT_EQ(a[i].color.rgb, b[i].color.rgb);
    const double bad = bad_pixel_fraction(a[i].depth);
    EXPECT_GE(bad, 0.01);
    EXPECT_LE(bad, 0.40);
  }
  // Frame i depends only on (seed, i).
  const auto prefix = generate_frames(5, 77);
  EXPECT_EQ(prefix[4].depth.values, a[4].depth.values);
}

TEST(GenerateScene, RoomInvariants) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Scene s = generate_scene(rng);
    EXPECT_GE(s.boxes.size() + s.spheres.size(), 3u);
    EXPECT_LE(s.boxes.size() + s.spheres.size(), 7u);
    const double e = s.room_half_extent;
    for (const Box& b : s.boxes) {
      EXPECT_GE(b.lo.x, -e);
      EXPECT_LE(b.hi.x, e);
      EXPECT_GE(b.lo.y, 0.0);
    }
    for (const Sphere& sp : s.spheres) {
      EXPECT_GE(sp.center.y - sp.radius, 0.0);
      EXPECT_LE(std::abs(sp.center.x) + sp.radius, e);
    }
  }
}

TEST(RenderPair, ZeroBaselineGivesIdenticalFrames) {
  Rng rng(5);
  const Scene s = generate_scene(rng);
  const auto [a, b] = render_pair(s, default_intrinsics(), 0.0, rng);
  EXPECT_EQ(a.depth.values, b.depth.values);
  EXPECT_DOUBLE_EQ(frame_overlap(a.depth, a.pose, b.depth, b.pose, a.intrinsics), 1.0);
}

TEST(RenderPair, OverlapAlwaysAboveThreshold) {
  const auto pairs = generate_pairs(10, 6, 0.3);
  for (const auto& [a, b] : pairs) {
    EXPECT_GE(frame_overlap(a.depth, a.pose, b.depth, b.pose, a.intrinsics), 0.3);
  }
}

TEST(RenderPair, ImpossibleOverlapIsGenerationError) {
  Rng rng(7);
  const Scene s = generate_scene(rng);
  EXPECT_THROW(render_pair(s, default_intrinsics(), 0.3, rng, 1.01, 3), GenerationError);
}

TEST(RenderPair, ReprojectedWorldPointsAreFirstSurfaces) {
  Rng rng(8);
  const Scene s = generate_scene(rng);
  const CameraIntrinsics k = default_intrinsics();
  const auto [a, b] = render_pair(s, k, 0.3, rng);
  const PointCloud pc = unproject(a.depth, k);
  const RigidTransform to_b = b.pose.inverse();
  std::size_t agree = 0, in_bounds = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 w = a.pose.apply(pc.points[i]);
    const Projection p = project_point(to_b.apply(w), k);
    if (!p.in_bounds) continue;
    ++in_bounds;
    // Round trip through frame b's camera reproduces the world point.
    const Vec3 back = b.pose.apply(unproject_pixel(p.u, p.v, p.depth, k));
    EXPECT_LE(norm(back - w), 1e-6);
    // Frame b sees either this point or an occluder in front of it.
    const Vec3 dir = b.pose.rotation * Vec3{(p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0};
    const auto hit = cast_ray(s, b.pose.translation, dir);
    ASSERT_TRUE(hit.has_value());
    EXPECT_LE(hit->t, p.depth + 1e-6);
    if (std::abs(hit->t - p.depth) <= 1e-6) {
      EXPECT_LE(norm(b.pose.translation + hit->t * dir - w), 1e-6);
      ++agree;
    }
  }
  EXPECT_GT(in_bounds, 0u);
  EXPECT_GT(agree, in_bounds / 2);
}

TEST(FrameIo, WriteReadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "uc3d_test_frames";
  std::filesystem::remove_all(dir);
  const auto frames = generate_frames(3, 9);
  io::write_frames(dir, frames);
  EXPECT_TRUE(std::filesystem::exists(dir / "frame_00002.depth.pgm"));
  const auto back = io::read_frames(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].depth.valid, frames[i].depth.valid);
    for (std::size_t p = 0; p < frames[i].depth.size(); ++p) {
      EXPECT_NEAR(back[i].depth.values[p], frames[i].depth.values[p], 0.0005 + 1e-12);
    }
    EXPECT_EQ(back[i].pose.translation, frames[i].pose.translation);
    EXPECT_EQ(back[i].intrinsics.fx, frames[i].intrinsics.fx);
    for (std::size_t c = 0; c < frames[i].color.rgb.size(); ++c) {
      EXPECT_NEAR(back[i].color.rgb[c], frames[i].color.rgb[c], 0.5 / 255 + 1e-12);
    }
  }
  std::filesystem::remove(dir / "frame_00001.color.ppm");
  std::filesystem::remove(dir / "frame_00001.pose.txt");
  const auto partial = io::read_frames(dir);
  EXPECT_EQ(partial[1].color.rgb[0], 0.5);
  EXPECT_EQ(partial[1].pose.translation, (Vec3{0, 0, 0}));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(io::read_frames(dir), IoError);
}

}  // namespace
}  // namespace uc3d
