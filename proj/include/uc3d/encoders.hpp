// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

#include <cstddef>

#include "uc3d/augment.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders/grid_encoder.hpp"
#include "uc3d/encoders/params.hpp"
#include "uc3d/encoders/point_encoder.hpp"
#include "uc3d/encoders/voxel_encoder.hpp"

namespace uc3d {

/// Three fully connected layers after global max pooling.
inline ParamSet make_projection_head(const EncoderConfig& cfg, Rng& rng) {
  ParamSet p;
  p.tag = "head";
  p.config = cfg;
  p.add("fc1.w", detail::he_uniform({cfg.feature_dim, cfg.head_hidden}, rng));
  p.add("fc1.b", detail::zero_bias(cfg.head_hidden));
  p.add("fc2.w", detail::he_uniform({cfg.head_hidden, cfg.head_hidden}, rng));
  p.add("fc2.b", detail::zero_bias(cfg.head_hidden));
  p.add("fc3.w", detail::he_uniform({cfg.head_hidden, cfg.embed_dim}, rng));
  p.add("fc3.b", detail::zero_bias(cfg.embed_dim));
  return p;
}

/// Global max pool -> MLP -> unit vector of size embed_dim.
inline dm::Tensor pool_project(dm::Tape* tape, const FeatureSet& fs, const ParamSet& head) {
  if (!fs.features.defined() || fs.features.rank() != 2 || fs.features.dim(0) == 0) {
    throw EmptyInputError("pool_project: empty feature set");
  }
  const std::size_t d = fs.features.dim(1);
  dm::Tensor h = dm::reshape(tape, dm::max_pool_global(tape, fs.features), {1, d});
  h = dm::relu(tape, dm::linear(tape, h, head["fc1.w"], head["fc1.b"]));
  h = dm::relu(tape, dm::linear(tape, h, head["fc2.w"], head["fc2.b"]));
  h = dm::linear(tape, h, head["fc3.w"], head["fc3.b"]);
  return dm::l2_normalize(tape, dm::reshape(tape, h, {h.dim(1)}), 0);
}

inline ParamSet make_encoder(Format format, const EncoderConfig& cfg, Rng& rng) {
  switch (format) {
    case Format::Point: return make_point_encoder(cfg, rng);
    case Format::Voxel: return make_voxel_encoder(cfg, rng);
    case Format::Depth:
    case Format::Image: return make_grid_encoder(format, cfg, rng);
  }
  throw ConfigError("make_encoder: unknown format");
}

inline FeatureSet encode(dm::Tape* tape, const View& view, const ParamSet& params) {
  if (view.format != params.format) {
    throw ConfigError(std::string("encode: ") + format_name(view.format) + " view given to " + params.tag);
  }
  switch (view.format) {
    case Format::Point: return encode_points(tape, view, params);
    case Format::Voxel: return encode_voxels(tape, view, params);
    case Format::Depth: return encode_depth(tape, view, params);
    case Format::Image: return encode_image(tape, view, params);
  }
  throw ConfigError("encode: unknown format");
}

}  // namespace uc3d
