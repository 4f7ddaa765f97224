// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/tensor.hpp"

namespace uc3d {

/// Architecture hyperparameters shared by all toy encoders.
struct EncoderConfig {
  std::size_t feature_dim = 32;  ///< width D of per-element features
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  std::size_t width3 = 64;

  // Depth / image CNN.
  std::size_t input_size = 64;  ///< inputs are resized and zero-padded to this square

  // Point U-shape.
  double radius1 = 0.2;
  double radius2 = 0.5;
  std::size_t group_size = 16;

  // Voxel U-net.
  std::size_t max_grid = 32;

  // Projection head.
  std::size_t head_hidden = 64;
  std::size_t embed_dim = 32;
};

/// Named parameter tensors of one network. `tag` names the role, e.g.
/// "encoder:depth" or "head".
struct ParamSet {
  std::string tag;
  Format format = Format::Point;
  EncoderConfig config;
  std::vector<std::pair<std::string, dm::Tensor>> tensors;

  const dm::Tensor& operator[](const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw ConfigError("parameter '" + name + "' not found in " + tag);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  /// Untracked deep copy, used for momentum mirrors.
  ParamSet mirror() const {
    ParamSet m = *this;
    for (auto& [name, t] : m.tensors) {
      t = t.clone();
      t.set_requires_grad(false);
    }
    return m;
  }

  void add(std::string name, dm::Tensor t) {
    for (const auto& [n, existing] : tensors) {
      if (n == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    tensors.emplace_back(std::move(name), std::move(t));
  }
};

namespace detail {

/// He-uniform weights of the given shape; fan_in is the product of all but the last extent.
inline dm::Tensor he_uniform(dm::Shape shape, Rng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  dm::Tensor t = dm::Tensor::zeros(std::move(shape), true);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline dm::Tensor zero_bias(std::size_t n) { return dm::Tensor::zeros({n}, true); }

}  // namespace detail

/// Per-element embeddings with the anchor of each row.
struct FeatureSet {
  dm::Tensor features;  ///< [M, D]
  std::vector<Vec3> anchors;

  std::size_t rows() const { return anchors.size(); }
};

}  // namespace uc3d
