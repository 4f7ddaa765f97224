// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <tuple>

#include "uc3d/core/rng.hpp"
#include "uc3d/geometry.hpp"
#include "uc3d/geometry_io.hpp"
#include "uc3d/synthdata.hpp"

namespace uc3d {
namespace {

CameraIntrinsics test_camera() { return {50.0, 52.0, 3.5, 3.5, 8, 8}; }

DepthMap random_depth(int w, int h, Rng& rng, double invalid = 0.2) {
  std::vector<double> v(std::size_t(w) * h);
  for (double& d : v) d = rng.bernoulli(invalid) ? 0.0 : rng.uniform(0.5, 5.0);
  return DepthMap::from_values(w, h, std::move(v));
}

TEST(Intrinsics, ValidateRejectsBadValues) {
  EXPECT_NO_THROW(test_camera().validate());
  CameraIntrinsics k = test_camera();
  k.fx = 0.0;
  EXPECT_THROW(k.validate(), ConfigError);
  k = test_camera();
  k.cx = 8.0;
  EXPECT_THROW(k.validate(), ConfigError);
  k = test_camera();
  k.height = 0;
  EXPECT_THROW(k.validate(), ConfigError);
}

TEST(DepthMap, ValidIffPositive) {
  const DepthMap d = DepthMap::from_values(3, 1, {0.0, 1.5, -2.0});
  EXPECT_EQ(d.valid, (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_EQ(d.values[2], 0.0);
  EXPECT_EQ(d.valid_count(), 1u);
  EXPECT_THROW(DepthMap::from_values(2, 2, {1.0}), ConfigError);
}

TEST(Unproject, PrincipalPointLiesOnAxis) {
  const CameraIntrinsics k = test_camera();
  const Vec3 p = unproject_pixel(k.cx, k.cy, 2.0, k);
  EXPECT_DOUBLE_EQ(p.x, 0.0);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
  EXPECT_DOUBLE_EQ(p.z, 2.0);
}

TEST(Unproject, UnitTangentOffset) {
  const CameraIntrinsics k = test_camera();
  const Vec3 p = unproject_pixel(k.cx + k.fx, k.cy, 1.0, k);
  EXPECT_DOUBLE_EQ(p.x, 1.0);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
  EXPECT_DOUBLE_EQ(p.z, 1.0);
}

TEST(Unproject, MatchesPerPixelOracle) {
  Rng rng(3);
  const CameraIntrinsics k = test_camera();
  const DepthMap d = random_depth(8, 8, rng);
  const PointCloud pc = unproject(d, k);
  // Independent pinhole evaluation over the raw arrays.
  std::vector<std::array<double, 3>> expect;
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      const double z = d.values[std::size_t(v) * 8 + u];
      if (z <= 0.0) continue;
      expect.push_back({(u - 3.5) * z / 50.0, (v - 3.5) * z / 52.0, z});
    }
  }
  ASSERT_EQ(pc.size(), expect.size());
  EXPECT_EQ(pc.size(), d.valid_count());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    EXPECT_NEAR(pc.points[i].x, expect[i][0], 1e-12);
    EXPECT_NEAR(pc.points[i].y, expect[i][1], 1e-12);
    EXPECT_NEAR(pc.points[i].z, expect[i][2], 1e-12);
    EXPECT_EQ(pc.anchors[i], pc.points[i]);
  }
}

TEST(Unproject, Errors) {
  const CameraIntrinsics k = test_camera();
  EXPECT_THROW(unproject(DepthMap(4, 4), k), ConfigError);
  EXPECT_THROW(unproject(DepthMap(8, 8), k), EmptyInputError);
}

TEST(Project, InverseOfUnprojectExamples) {
  const CameraIntrinsics k = test_camera();
  Projection p = project_point({0, 0, 2.0}, k);
  EXPECT_DOUBLE_EQ(p.u, k.cx);
  EXPECT_DOUBLE_EQ(p.v, k.cy);
  EXPECT_DOUBLE_EQ(p.depth, 2.0);
  p = project_point({1.0, 0, 1.0}, k);
  EXPECT_DOUBLE_EQ(p.u, k.cx + k.fx);
  EXPECT_DOUBLE_EQ(p.v, k.cy);
  EXPECT_DOUBLE_EQ(p.depth, 1.0);
}

TEST(Project, NonPositiveDepthIsFlagged) {
  const CameraIntrinsics k = test_camera();
  EXPECT_FALSE(project_point({0, 0, 0.0}, k).in_bounds);
  EXPECT_FALSE(project_point({0, 0, -1.0}, k).in_bounds);
  EXPECT_TRUE(project_point({0, 0, 1.0}, k).in_bounds);
  EXPECT_FALSE(project_point({10.0, 0, 1.0}, k).in_bounds);
}

TEST(Project, RoundTripOverSyntheticFrames) {
  const auto frames = generate_frames(4, 11);
  for (const PosedFrame& f : frames) {
    const PointCloud pc = unproject(f.depth, f.intrinsics);
    const auto proj = project(pc, f.intrinsics);
    std::size_t i = 0;
    for (int v = 0; v < f.depth.height; ++v) {
      for (int u = 0; u < f.depth.width; ++u) {
        if (!f.depth.is_valid(u, v)) continue;
        ASSERT_TRUE(proj[i].in_bounds);
        EXPECT_NEAR(proj[i].u, u, 1e-6);
        EXPECT_NEAR(proj[i].v, v, 1e-6);
        EXPECT_NEAR(proj[i].depth, f.depth.values[f.depth.index(u, v)], 1e-9);
        ++i;
      }
    }
    EXPECT_EQ(i, proj.size());
  }
}

TEST(Voxelize, FloorConvention) {
  PointCloud pc;
  pc.points = {{0.026, 0, 0}};
  pc.anchors = pc.points;
  VoxelSet vs = voxelize(pc, 0.025);
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs.indices[0], (VoxelIndex{1, 0, 0}));
  EXPECT_EQ(vs.features, std::vector<double>{1.0});

  pc.points = {{-0.001, 0, 0}};
  pc.anchors = pc.points;
  vs = voxelize(pc, 0.025);
  EXPECT_EQ(vs.indices[0], (VoxelIndex{-1, 0, 0}));
}

TEST(Voxelize, Errors) {
  PointCloud pc;
  pc.points = {{0, 0, 0}};
  pc.anchors = pc.points;
  EXPECT_THROW(voxelize(pc, 0.0), ConfigError);
  EXPECT_THROW(voxelize(pc, -1.0), ConfigError);
  EXPECT_THROW(voxelize(PointCloud{}, 0.1), EmptyInputError);
}

TEST(Voxelize, MeansOfAnchorsAndFeatures) {
  PointCloud pc;
  pc.points = {{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}, {0.3, 0, 0}};
  pc.anchors = {{1, 1, 1}, {3, 3, 3}, {5, 5, 5}};
  pc.feature_dim = 2;
  pc.features = {1, 2, 3, 4, 5, 6};
  const VoxelSet vs = voxelize(pc, 0.1);
  ASSERT_EQ(vs.size(), 2u);
  EXPECT_EQ(vs.feature_dim, 2);
  EXPECT_EQ(vs.anchors[0], (Vec3{2, 2, 2}));
  EXPECT_EQ(vs.features, (std::vector<double>{2, 3, 5, 6}));
}

TEST(Voxelize, CountMatchesHashSetOracle) {
  Rng rng(20000);
  PointCloud pc;
  for (int i = 0; i < 20000; ++i) pc.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 4)});
  pc.anchors = pc.points;
  const double size = 0.13;
  std::set<std::tuple<long long, long long, long long>> oracle;
  for (const Vec3& p : pc.points) {
    oracle.emplace(static_cast<long long>(std::floor(p.x / size)), static_cast<long long>(std::floor(p.y / size)),
                   static_cast<long long>(std::floor(p.z / size)));
  }
  const VoxelSet vs = voxelize(pc, size);
  ASSERT_EQ(vs.size(), oracle.size());
  std::size_t i = 0;
  for (const auto& [x, y, z] : oracle) {
    EXPECT_EQ(vs.indices[i], (VoxelIndex{x, y, z}));
    ++i;
  }
}

TEST(Voxelize, AnchorsInsideCellsAndIdempotent) {
  Rng rng(5);
  PointCloud pc;
  for (int i = 0; i < 3000; ++i) pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2)});
  pc.anchors = pc.points;
  const double size = 0.07;
  const VoxelSet vs = voxelize(pc, size);
  std::set<VoxelIndex> distinct(vs.indices.begin(), vs.indices.end());
  EXPECT_EQ(distinct.size(), vs.size());
  for (std::size_t v = 0; v < vs.size(); ++v) EXPECT_EQ(voxel_index_of(vs.anchors[v], size), vs.indices[v]);

  PointCloud again;
  again.points = vs.anchors;
  again.anchors = vs.anchors;
  EXPECT_EQ(voxelize(again, size).indices, vs.indices);

  for (const Vec3& a : vs.anchors) {
    double best = 1e30;
    for (const Vec3& p : pc.points) best = std::min(best, norm(a - p));
    EXPECT_LE(best, size * std::sqrt(3.0));
  }
}

TEST(Overlap, IdenticalFramesOverlapFully) {
  const auto frames = generate_frames(1, 2);
  const PosedFrame& f = frames[0];
  EXPECT_DOUBLE_EQ(frame_overlap(f.depth, f.pose, f.depth, f.pose, f.intrinsics), 1.0);
}

class GeometryIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("uc3d_geometry_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(GeometryIo, DepthPgmRoundTripsMillimeters) {
  Rng rng(8);
  std::vector<double> v(6 * 5);
  for (double& d : v) d = rng.bernoulli(0.2) ? 0.0 : static_cast<double>(rng.range(1, 65535)) / 1000.0;
  const DepthMap d = DepthMap::from_values(6, 5, v);
  io::write_depth_pgm(dir_ / "d.pgm", d);
  const DepthMap back = io::read_depth_pgm(dir_ / "d.pgm");
  ASSERT_EQ(back.width, 6);
  ASSERT_EQ(back.height, 5);
  EXPECT_EQ(back.valid, d.valid);
  for (std::size_t p = 0; p < d.size(); ++p) EXPECT_NEAR(back.values[p], d.values[p], 1e-12);
}

TEST_F(GeometryIo, SidecarsRoundTrip) {
  const CameraIntrinsics k{66.0, 65.5, 39.5, 29.25, 80, 60};
  io::write_intrinsics(dir_ / "k.txt", k);
  const CameraIntrinsics kb = io::read_intrinsics(dir_ / "k.txt");
  EXPECT_EQ(kb.fx, k.fx);
  EXPECT_EQ(kb.fy, k.fy);
  EXPECT_EQ(kb.cx, k.cx);
  EXPECT_EQ(kb.cy, k.cy);
  EXPECT_EQ(kb.width, k.width);
  EXPECT_EQ(kb.height, k.height);

  const RigidTransform pose{Mat3::rotation(normalized(Vec3{1, 2, 3}), 0.7), {0.1, -2.0, 3.5}};
  io::write_pose(dir_ / "p.txt", pose);
  const RigidTransform pb = io::read_pose(dir_ / "p.txt");
  for (int i = 0; i < 9; ++i) EXPECT_EQ(pb.rotation.m[i], pose.rotation.m[i]);
  EXPECT_EQ(pb.translation, pose.translation);
}

TEST_F(GeometryIo, MalformedFilesAreIoErrors) {
  EXPECT_THROW(io::read_depth_pgm(dir_ / "missing.pgm"), IoError);
  {
    std::ofstream f(dir_ / "bad.pgm", std::ios::binary);
    f << "P2\n2 2\n65535\n";
  }
  EXPECT_THROW(io::read_depth_pgm(dir_ / "bad.pgm"), IoError);
  {
    std::ofstream f(dir_ / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n65535\n";
    f.write("\x01\x02", 2);
  }
  EXPECT_THROW(io::read_depth_pgm(dir_ / "short.pgm"), IoError);
}

}  // namespace
}  // namespace uc3d
