// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Dense 3D U-net (two stride-2 downs, two nearest-neighbor ups with skip
// concatenation) over the bounding grid of the occupied voxels. Rows are
// emitted at the occupied input voxels only, so the output resolution equals
// the input resolution.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders/params.hpp"

namespace uc3d {

inline ParamSet make_voxel_encoder(const EncoderConfig& cfg, Rng& rng, std::size_t input_feature_dim = 1) {
  ParamSet p;
  p.tag = "encoder:voxel";
  p.format = Format::Voxel;
  p.config = cfg;
  const std::size_t c1 = cfg.width1, c2 = cfg.width2, c3 = cfg.width3;
  p.add("enc0.w", detail::he_uniform({3, 3, 3, input_feature_dim, c1}, rng));
  p.add("enc0.b", detail::zero_bias(c1));
  p.add("down1.w", detail::he_uniform({3, 3, 3, c1, c2}, rng));
  p.add("down1.b", detail::zero_bias(c2));
  p.add("down2.w", detail::he_uniform({3, 3, 3, c2, c3}, rng));
  p.add("down2.b", detail::zero_bias(c3));
  p.add("up1.w", detail::he_uniform({3, 3, 3, c3 + c2, c2}, rng));
  p.add("up1.b", detail::zero_bias(c2));
  p.add("up2.w", detail::he_uniform({3, 3, 3, c2 + c1, c1}, rng));
  p.add("up2.b", detail::zero_bias(c1));
  p.add("out.w", detail::he_uniform({c1, cfg.feature_dim}, rng));
  p.add("out.b", detail::zero_bias(cfg.feature_dim));
  return p;
}

namespace detail {

/// Nearest-neighbor x2 up-sampling of [D, H, W, C] to the given extents.
inline dm::Tensor upsample2_3d(dm::Tape* tape, const dm::Tensor& x, std::array<std::size_t, 3> out_ext) {
  const std::size_t d = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<std::size_t> src;
  src.reserve(out_ext[0] * out_ext[1] * out_ext[2]);
  for (std::size_t i = 0; i < out_ext[0]; ++i) {
    for (std::size_t j = 0; j < out_ext[1]; ++j) {
      for (std::size_t k = 0; k < out_ext[2]; ++k) {
        src.push_back((std::min(i / 2, d - 1) * h + std::min(j / 2, h - 1)) * w + std::min(k / 2, w - 1));
      }
    }
  }
  dm::Tensor flat = dm::reshape(tape, x, {d * h * w, c});
  return dm::reshape(tape, dm::gather(tape, flat, src), {out_ext[0], out_ext[1], out_ext[2], c});
}

}  // namespace detail

inline FeatureSet encode_voxels(dm::Tape* tape, const View& view, const ParamSet& params) {
  if (view.format != Format::Voxel) throw ConfigError("encode_voxels: view is not a voxel view");
  const VoxelSet& vs = view.voxels();
  if (vs.size() == 0) throw EmptyInputError("encode_voxels: no occupied voxels");
  const EncoderConfig& cfg = params.config;

  VoxelIndex lo, hi;
  lo.fill(std::numeric_limits<std::int64_t>::max());
  hi.fill(std::numeric_limits<std::int64_t>::min());
  for (const VoxelIndex& idx : vs.indices) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], idx[a]);
      hi[a] = std::max(hi[a], idx[a]);
    }
  }
  std::array<std::size_t, 3> ext{};
  for (int a = 0; a < 3; ++a) {
    const auto span = static_cast<std::size_t>(hi[a] - lo[a] + 1);
    // Round up to a multiple of 4 so both down-samplings are exact.
    ext[a] = (span + 3) / 4 * 4;
    if (ext[a] > cfg.max_grid) {
      throw ConfigError("encode_voxels: occupied extent " + std::to_string(span) + " exceeds the " +
                        std::to_string(cfg.max_grid) + "-cell grid; use a larger voxel_size");
    }
  }

  const std::size_t cin = static_cast<std::size_t>(vs.feature_dim);
  std::vector<double> grid(ext[0] * ext[1] * ext[2] * cin, 0.0);
  std::vector<std::size_t> cells(vs.size());
  for (std::size_t v = 0; v < vs.size(); ++v) {
    const std::size_t cell =
        (std::size_t(vs.indices[v][0] - lo[0]) * ext[1] + std::size_t(vs.indices[v][1] - lo[1])) * ext[2] +
        std::size_t(vs.indices[v][2] - lo[2]);
    cells[v] = cell;
    for (std::size_t c = 0; c < cin; ++c) grid[cell * cin + c] = vs.features[v * cin + c];
  }

  dm::Tensor x = dm::Tensor::from({ext[0], ext[1], ext[2], cin}, std::move(grid));
  dm::Tensor e0 = dm::relu(tape, dm::conv3d(tape, x, params["enc0.w"], params["enc0.b"], 1, 1));
  dm::Tensor e1 = dm::relu(tape, dm::conv3d(tape, e0, params["down1.w"], params["down1.b"], 2, 1));
  dm::Tensor e2 = dm::relu(tape, dm::conv3d(tape, e1, params["down2.w"], params["down2.b"], 2, 1));
  dm::Tensor u1 = detail::upsample2_3d(tape, e2, {e1.dim(0), e1.dim(1), e1.dim(2)});
  u1 = dm::relu(tape, dm::conv3d(tape, dm::concat(tape, {u1, e1}, 3), params["up1.w"], params["up1.b"], 1, 1));
  dm::Tensor u2 = detail::upsample2_3d(tape, u1, ext);
  u2 = dm::relu(tape, dm::conv3d(tape, dm::concat(tape, {u2, e0}, 3), params["up2.w"], params["up2.b"], 1, 1));

  dm::Tensor flat = dm::reshape(tape, u2, {ext[0] * ext[1] * ext[2], u2.dim(3)});
  FeatureSet fs;
  fs.features = dm::linear(tape, dm::gather(tape, flat, cells), params["out.w"], params["out.b"]);
  fs.anchors = view.anchors;
  return fs;
}

}  // namespace uc3d
