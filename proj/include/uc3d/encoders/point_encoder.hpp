// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Toy U-shaped point encoder: two set-abstraction levels (farthest point
// sampling, radius grouping, shared MLP, local max pool) and one
// feature-propagation level back up to N/8 points.

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <tuple>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders/params.hpp"

namespace uc3d {

/// Indices of m points chosen by farthest point sampling, starting at
/// `start`. Ties go to the lowest index. The result is a prefix-closed order:
/// its first k entries are the FPS sample of size k.
inline std::vector<std::size_t> farthest_point_sampling(const std::vector<Vec3>& pts, std::size_t m,
                                                        std::size_t start = 0) {
  const std::size_t n = pts.size();
  if (m > n) throw EmptyInputError("farthest_point_sampling: asked for more samples than points");
  if (m == 0) return {};
  if (start >= n) throw ConfigError("farthest_point_sampling: start index out of range");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> out;
  out.reserve(m);
  std::size_t cur = start;
  for (std::size_t s = 0; s < m; ++s) {
    out.push_back(cur);
    std::size_t best = 0;
    double best_d = -1.0;
    const Vec3 c = pts[cur];
    for (std::size_t i = 0; i < n; ++i) {
      const double d = squared_distance(pts[i], c);
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    cur = best;
  }
  return out;
}

/// For each center, k points within `radius`: the candidates sorted by
/// (distance, x, y, z) are sampled at k evenly spaced ranks, so the group
/// spans the whole ball and does not depend on input order. With fewer than
/// k candidates the nearest is repeated. Returns centers.size() * k indices.
inline std::vector<std::size_t> radius_group(const std::vector<Vec3>& pts, const std::vector<std::size_t>& centers,
                                             double radius, std::size_t k) {
  const double r2 = radius * radius;
  std::vector<std::size_t> out;
  out.reserve(centers.size() * k);
  std::vector<std::tuple<double, double, double, double, std::size_t>> cand;
  for (std::size_t c : centers) {
    cand.clear();
    const Vec3 pc = pts[c];
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double d = squared_distance(pts[j], pc);
      if (d <= r2) cand.emplace_back(d, pts[j].x, pts[j].y, pts[j].z, j);
    }
    std::sort(cand.begin(), cand.end());
    const std::size_t m = cand.size();
    for (std::size_t i = 0; i < k; ++i) out.push_back(std::get<4>(cand[m >= k ? i * m / k : (i < m ? i : 0)]));
  }
  return out;
}

/// Index of the nearest reference point for each query (lowest index on ties).
inline std::vector<std::size_t> nearest_indices(const std::vector<Vec3>& queries, const std::vector<Vec3>& refs) {
  std::vector<std::size_t> out(queries.size(), 0);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const double d = squared_distance(queries[i], refs[j]);
      if (d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

/// One set-abstraction level: group neighbors of each center, run a shared
/// two-layer MLP on (relative position / radius, neighbor features) and max
/// pool each group. `feats` may be undefined (geometry only).
inline dm::Tensor set_abstraction(dm::Tape* tape, const std::vector<Vec3>& pos, const dm::Tensor& feats,
                                  const std::vector<std::size_t>& centers, double radius, std::size_t k,
                                  const dm::Tensor& w1, const dm::Tensor& b1, const dm::Tensor& w2,
                                  const dm::Tensor& b2) {
  const std::vector<std::size_t> nbr = radius_group(pos, centers, radius, k);
  std::vector<double> rel(nbr.size() * 3);
  for (std::size_t g = 0; g < centers.size(); ++g) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t r = g * k + i;
      const Vec3 d = (1.0 / radius) * (pos[nbr[r]] - pos[centers[g]]);
      rel[r * 3 + 0] = d.x;
      rel[r * 3 + 1] = d.y;
      rel[r * 3 + 2] = d.z;
    }
  }
  dm::Tensor input = dm::Tensor::from({nbr.size(), 3}, std::move(rel));
  if (feats.defined()) input = dm::concat(tape, {input, dm::gather(tape, feats, nbr)}, 1);
  dm::Tensor h = dm::relu(tape, dm::linear(tape, input, w1, b1));
  h = dm::relu(tape, dm::linear(tape, h, w2, b2));
  return dm::group_max(tape, h, k);
}

struct PointEncodeOptions {
  std::size_t fps_start = 0;
};

inline ParamSet make_point_encoder(const EncoderConfig& cfg, Rng& rng, std::size_t input_feature_dim = 0) {
  ParamSet p;
  p.tag = "encoder:point";
  p.format = Format::Point;
  p.config = cfg;
  const std::size_t c1 = cfg.width1, c2 = cfg.width2, c3 = cfg.width3, d = cfg.feature_dim;
  p.add("sa1.w1", detail::he_uniform({3 + input_feature_dim, c1}, rng));
  p.add("sa1.b1", detail::zero_bias(c1));
  p.add("sa1.w2", detail::he_uniform({c1, c2}, rng));
  p.add("sa1.b2", detail::zero_bias(c2));
  p.add("sa2.w1", detail::he_uniform({3 + c2, c2}, rng));
  p.add("sa2.b1", detail::zero_bias(c2));
  p.add("sa2.w2", detail::he_uniform({c2, c3}, rng));
  p.add("sa2.b2", detail::zero_bias(c3));
  p.add("fp.w", detail::he_uniform({c2 + c3, c3}, rng));
  p.add("fp.b", detail::zero_bias(c3));
  p.add("out.w", detail::he_uniform({c3, d}, rng));
  p.add("out.b", detail::zero_bias(d));
  return p;
}

/// N input points -> N/8 output rows anchored at a subset of the inputs.
inline FeatureSet encode_points(dm::Tape* tape, const View& view, const ParamSet& params,
                                const PointEncodeOptions& opt = {}) {
  if (view.format != Format::Point) throw ConfigError("encode_points: view is not a point view");
  const PointCloud& pc = view.points();
  const std::size_t n = pc.size();
  if (n < 8) throw EmptyInputError("encode_points: need at least 8 points, got " + std::to_string(n));
  const EncoderConfig& cfg = params.config;
  const std::size_t n_out = n / 8, n1 = n / 4, n2 = std::max<std::size_t>(1, n / 16);

  dm::Tensor in_feats;
  if (pc.feature_dim > 0) {
    in_feats = dm::Tensor::from({n, static_cast<std::size_t>(pc.feature_dim)}, pc.features);
  }

  const std::vector<std::size_t> c1 = farthest_point_sampling(pc.points, n1, opt.fps_start);
  dm::Tensor f1 = set_abstraction(tape, pc.points, in_feats, c1, cfg.radius1, cfg.group_size, params["sa1.w1"],
                                  params["sa1.b1"], params["sa1.w2"], params["sa1.b2"]);

  std::vector<Vec3> p1(n1);
  for (std::size_t i = 0; i < n1; ++i) p1[i] = pc.points[c1[i]];
  const std::vector<std::size_t> c2 = farthest_point_sampling(p1, n2, 0);
  dm::Tensor f2 = set_abstraction(tape, p1, f1, c2, cfg.radius2, cfg.group_size, params["sa2.w1"],
                                  params["sa2.b1"], params["sa2.w2"], params["sa2.b2"]);

  // Up-sample to the first n_out level-1 centers (an FPS sample themselves).
  std::vector<Vec3> targets(p1.begin(), p1.begin() + static_cast<std::ptrdiff_t>(n_out));
  std::vector<Vec3> p2(n2);
  for (std::size_t i = 0; i < n2; ++i) p2[i] = p1[c2[i]];
  std::vector<std::size_t> target_rows(n_out);
  for (std::size_t i = 0; i < n_out; ++i) target_rows[i] = i;
  dm::Tensor up = dm::gather(tape, f2, nearest_indices(targets, p2));
  dm::Tensor skip = dm::gather(tape, f1, target_rows);
  dm::Tensor h = dm::relu(tape, dm::linear(tape, dm::concat(tape, {skip, up}, 1), params["fp.w"], params["fp.b"]));
  FeatureSet fs;
  fs.features = dm::linear(tape, h, params["out.w"], params["out.b"]);
  fs.anchors.reserve(n_out);
  for (std::size_t i = 0; i < n_out; ++i) fs.anchors.push_back(pc.anchors[c1[i]]);
  return fs;
}

}  // namespace uc3d
