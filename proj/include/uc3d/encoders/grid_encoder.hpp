// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Stride-8 CNN for depth maps (1 channel) and color images (3 channels).
// The input is resized (nearest) and zero-padded to a square; each output
// cell is anchored at the input pixel at the center of its receptive field
// and emitted only when that pixel is valid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders/params.hpp"

namespace uc3d {

/// Output stride of the grid encoder; three stride-2 stages.
inline constexpr std::size_t kGridStride = 8;

/// For each pixel of the size x size target, the source pixel index it
/// samples, or -1 inside the padding. Aspect ratio is preserved.
inline std::vector<std::int64_t> resize_and_pad_map(int width, int height, std::size_t size) {
  const double s = static_cast<double>(size) / std::max(width, height);
  std::vector<std::int64_t> map(size * size, -1);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const auto sx = static_cast<std::int64_t>(std::floor((static_cast<double>(x) + 0.5) / s));
      const auto sy = static_cast<std::int64_t>(std::floor((static_cast<double>(y) + 0.5) / s));
      if (sx < width && sy < height) map[y * size + x] = sy * width + sx;
    }
  }
  return map;
}

/// Input pixel at the receptive-field center of output cell o along one axis
/// (3x3 kernels, padding 1, stride 2, three times).
constexpr std::size_t grid_cell_center(std::size_t o) { return kGridStride * o; }

inline ParamSet make_grid_encoder(Format format, const EncoderConfig& cfg, Rng& rng) {
  if (format != Format::Depth && format != Format::Image) throw ConfigError("grid encoder serves depth or image");
  if (cfg.input_size % kGridStride != 0 || cfg.input_size == 0) {
    throw ConfigError("grid encoder: input_size must be a positive multiple of 8");
  }
  ParamSet p;
  p.tag = format == Format::Depth ? "encoder:depth" : "encoder:image";
  p.format = format;
  p.config = cfg;
  const std::size_t cin = format == Format::Depth ? 1 : 3;
  p.add("conv1.w", detail::he_uniform({3, 3, cin, cfg.width1}, rng));
  p.add("conv1.b", detail::zero_bias(cfg.width1));
  p.add("conv2.w", detail::he_uniform({3, 3, cfg.width1, cfg.width2}, rng));
  p.add("conv2.b", detail::zero_bias(cfg.width2));
  p.add("conv3.w", detail::he_uniform({3, 3, cfg.width2, cfg.width3}, rng));
  p.add("conv3.b", detail::zero_bias(cfg.width3));
  p.add("conv4.w", detail::he_uniform({3, 3, cfg.width3, cfg.width3}, rng));
  p.add("conv4.b", detail::zero_bias(cfg.width3));
  p.add("out.w", detail::he_uniform({cfg.width3, cfg.feature_dim}, rng));
  p.add("out.b", detail::zero_bias(cfg.feature_dim));
  return p;
}

namespace detail {

inline FeatureSet encode_grid(dm::Tape* tape, const View& view, const ParamSet& params, int width, int height,
                              const std::vector<std::uint8_t>& valid, const std::vector<double>& channels,
                              std::size_t cin) {
  const std::size_t size = params.config.input_size;
  const auto map = resize_and_pad_map(width, height, size);

  // Rank of each valid pixel in row-major order = its anchor index.
  std::vector<std::int64_t> anchor_index(valid.size(), -1);
  std::int64_t next = 0;
  for (std::size_t p = 0; p < valid.size(); ++p) {
    if (valid[p]) anchor_index[p] = next++;
  }
  if (next == 0) throw EmptyInputError("grid encoder: no valid pixels");

  std::vector<double> input(size * size * cin, 0.0);
  for (std::size_t q = 0; q < map.size(); ++q) {
    if (map[q] < 0) continue;
    for (std::size_t c = 0; c < cin; ++c) input[q * cin + c] = channels[std::size_t(map[q]) * cin + c];
  }
  dm::Tensor x = dm::Tensor::from({size, size, cin}, std::move(input));
  x = dm::relu(tape, dm::conv2d(tape, x, params["conv1.w"], params["conv1.b"], 2, 1));
  x = dm::relu(tape, dm::conv2d(tape, x, params["conv2.w"], params["conv2.b"], 2, 1));
  x = dm::relu(tape, dm::conv2d(tape, x, params["conv3.w"], params["conv3.b"], 2, 1));
  x = dm::relu(tape, dm::conv2d(tape, x, params["conv4.w"], params["conv4.b"], 1, 1));
  const std::size_t out_side = x.dim(0), c3 = x.dim(2);

  FeatureSet fs;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < out_side; ++i) {
    for (std::size_t j = 0; j < out_side; ++j) {
      const std::int64_t src = map[grid_cell_center(i) * size + grid_cell_center(j)];
      if (src < 0 || anchor_index[std::size_t(src)] < 0) continue;
      rows.push_back(i * out_side + j);
      fs.anchors.push_back(view.anchors[std::size_t(anchor_index[std::size_t(src)])]);
    }
  }
  if (rows.empty()) throw EmptyInputError("grid encoder: no output cell is centered on a valid pixel");
  dm::Tensor flat = dm::reshape(tape, x, {out_side * out_side, c3});
  fs.features = dm::linear(tape, dm::gather(tape, flat, rows), params["out.w"], params["out.b"]);
  return fs;
}

}  // namespace detail

inline FeatureSet encode_depth(dm::Tape* tape, const View& view, const ParamSet& params) {
  if (view.format != Format::Depth) throw ConfigError("encode_depth: view is not a depth view");
  const DepthMap& d = view.depth();
  if (d.valid_count() == 0) throw EmptyInputError("encode_depth: all pixels invalid");
  return detail::encode_grid(tape, view, params, d.width, d.height, d.valid, d.values, 1);
}

inline FeatureSet encode_image(dm::Tape* tape, const View& view, const ParamSet& params) {
  if (view.format != Format::Image) throw ConfigError("encode_image: view is not an image view");
  const ColorImage& img = view.image();
  return detail::encode_grid(tape, view, params, img.width, img.height, view.mask, img.rgb, 3);
}

}  // namespace uc3d
