// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Finite-difference checks over every differentiable op, every encoder, the
// projection head and both InfoNCE losses, each on a list of seeds.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/contrast.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/gradcheck.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders.hpp"

namespace uc3d {

struct GradCase {
  std::string name;
  /// Builds the inputs for one seed and runs the check.
  std::function<dm::GradCheckResult(std::uint64_t seed)> run;
};

struct GradCaseReport {
  std::string name;
  std::size_t seeds = 0;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

namespace detail {

inline dm::Tensor random_tensor(dm::Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                                double hi = 1.0) {
  dm::Tensor t = dm::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// <out, R> with a fixed random R, so every output element gets a distinct weight.
inline dm::Tensor probe_loss(dm::Tape* tape, const dm::Tensor& out, const dm::Tensor& r) {
  return dm::sum(tape, dm::mul(tape, out, r));
}

inline dm::GradCheckResult check_op(Rng& rng, std::vector<dm::Tensor> inputs,
                                    const std::function<dm::Tensor(dm::Tape*)>& op,
                                    const dm::GradCheckOptions& opt = {}) {
  const dm::Tensor probe_shape = op(nullptr);
  const dm::Tensor r = random_tensor(probe_shape.shape(), rng, false);
  return dm::check_gradients([&](dm::Tape* t) { return probe_loss(t, op(t), r); }, std::move(inputs), opt);
}

/// Small random depth map with a few invalid pixels.
inline DepthMap random_depth(int w, int h, Rng& rng) {
  std::vector<double> v(std::size_t(w) * h);
  for (double& d : v) d = rng.bernoulli(0.1) ? 0.0 : rng.uniform(1.0, 2.0);
  return DepthMap::from_values(w, h, std::move(v));
}

inline CameraIntrinsics small_intrinsics(int w, int h) {
  return {double(w), double(w), (w - 1) / 2.0, (h - 1) / 2.0, w, h};
}

inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.feature_dim = 6;
  c.width1 = 4;
  c.width2 = 5;
  c.width3 = 6;
  c.input_size = 16;
  c.radius1 = 0.3;
  c.radius2 = 0.8;
  c.group_size = 4;
  c.max_grid = 16;
  c.head_hidden = 7;
  c.embed_dim = 5;
  return c;
}

inline dm::GradCheckResult check_encoder(Format format, std::uint64_t seed) {
  Rng rng(seed);
  const EncoderConfig cfg = tiny_encoder_config();
  const DepthMap depth = random_depth(12, 10, rng);
  const CameraIntrinsics k = small_intrinsics(12, 10);
  const CropSpec crop = CropSpec::full(12, 10);
  AugmentParams a;
  a.seed = rng.next_u64();
  a.voxel_size = 0.25;
  View view;
  if (format == Format::Image) {
    ColorImage img(12, 10);
    for (double& c : img.rgb) c = rng.uniform();
    view = make_image_view(img, depth, k, crop, a);
  } else {
    view = make_view(depth, k, crop, format, a);
  }
  if (format == Format::Voxel) {
    // Random occupancy features so the input is not constant.
    VoxelSet vs = view.voxels();
    for (double& f : vs.features) f = rng.uniform(0.5, 1.5);
    view.payload = vs;
  }
  const ParamSet params = make_encoder(format, cfg, rng);
  std::vector<dm::Tensor> wrt;
  for (const auto& [name, t] : params.tensors) wrt.push_back(t);
  const FeatureSet probe = encode(nullptr, view, params);
  const dm::Tensor r = random_tensor(probe.features.shape(), rng, false);
  dm::GradCheckOptions opt;
  opt.max_coords_per_tensor = 12;
  return dm::check_gradients([&](dm::Tape* t) { return probe_loss(t, encode(t, view, params).features, r); }, wrt,
                             opt);
}

}  // namespace detail

inline std::vector<GradCase> gradient_suite() {
  using dm::Tape;
  using dm::Tensor;
  using detail::check_op;
  using detail::random_tensor;
  std::vector<GradCase> cases;
  auto add = [&](std::string name, std::function<dm::GradCheckResult(std::uint64_t)> f) {
    cases.push_back({std::move(name), std::move(f)});
  };

  add("matmul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::matmul(t, a, b); });
  });
  add("transpose", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::transpose(t, a); });
  });
  add("add", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::add(t, a, b); });
  });
  add("add_bias", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::add(t, a, b); });
  });
  add("mul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::mul(t, a, b); });
  });
  add("scale", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({6}, rng);
    const double k = rng.uniform(-3.0, 3.0);
    return check_op(rng, {a}, [&](Tape* t) { return dm::scale(t, a, k); });
  });
  add("weighted_sum", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4}, rng), b = random_tensor({4}, rng), c = random_tensor({4}, rng);
    const std::vector<double> w{rng.uniform(), rng.uniform(), rng.uniform()};
    return check_op(rng, {a, b, c}, [&](Tape* t) { return dm::weighted_sum(t, {a, b, c}, w); });
  });
  add("relu", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({20}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::relu(t, a); });
  });
  add("sum", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 3}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::sum(t, a); });
  });
  add("mean", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 3}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::mean(t, a); });
  });
  add("reshape", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 6}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::reshape(t, a, {3, 4}); });
  });
  add("concat_rows", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4, 3}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::concat(t, {a, b}, 0); });
  });
  add("concat_channels", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 2, 3}, rng), b = random_tensor({2, 2, 1}, rng);
    return check_op(rng, {a, b}, [&](Tape* t) { return dm::concat(t, {a, b}, 2); });
  });
  add("gather", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({5, 3}, rng);
    std::vector<std::size_t> idx;
    for (int i = 0; i < 8; ++i) idx.push_back(rng.below(5));
    return check_op(rng, {a}, [&](Tape* t) { return dm::gather(t, a, idx); });
  });
  add("group_max", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({12, 3}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::group_max(t, a, 4); });
  });
  add("max_pool_global", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({7, 4}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::max_pool_global(t, a); });
  });
  add("max_pool_2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({5, 4, 2}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::max_pool_2d(t, a, 2); });
  });
  add("layer_norm", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 5}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::layer_norm(t, a); });
  });
  add("l2_normalize", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return check_op(rng, {a}, [&](Tape* t) { return dm::l2_normalize(t, a, 1); });
  });
  add("softmax_cross_entropy", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 6}, rng, true, -3.0, 3.0);
    std::vector<std::size_t> y;
    for (int i = 0; i < 4; ++i) y.push_back(rng.below(6));
    return dm::check_gradients([&](Tape* t) { return dm::softmax_cross_entropy(t, a, y); }, {a});
  });
  add("conv2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({6, 5, 2}, rng), w = random_tensor({3, 3, 2, 3}, rng), b = random_tensor({3}, rng);
    return check_op(rng, {x, w, b}, [&](Tape* t) { return dm::conv2d(t, x, w, b, 2, 1); });
  });
  add("conv3d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({4, 3, 4, 2}, rng), w = random_tensor({3, 3, 3, 2, 2}, rng), b = random_tensor({2}, rng);
    return check_op(rng, {x, w, b}, [&](Tape* t) { return dm::conv3d(t, x, w, b, 1, 1); });
  });
  add("linear", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({4, 3}, rng), w = random_tensor({3, 2}, rng), b = random_tensor({2}, rng);
    return check_op(rng, {x, w, b}, [&](Tape* t) { return dm::linear(t, x, w, b); });
  });

  add("encoder_depth", [](std::uint64_t s) { return detail::check_encoder(Format::Depth, s); });
  add("encoder_image", [](std::uint64_t s) { return detail::check_encoder(Format::Image, s); });
  add("encoder_point", [](std::uint64_t s) { return detail::check_encoder(Format::Point, s); });
  add("encoder_voxel", [](std::uint64_t s) { return detail::check_encoder(Format::Voxel, s); });
  add("projection_head", [](std::uint64_t s) {
    Rng rng(s);
    const EncoderConfig cfg = detail::tiny_encoder_config();
    const ParamSet head = make_projection_head(cfg, rng);
    FeatureSet fs;
    fs.features = random_tensor({9, cfg.feature_dim}, rng);
    fs.anchors.resize(9);
    std::vector<Tensor> wrt{fs.features};
    for (const auto& [n, t] : head.tensors) wrt.push_back(t);
    return check_op(rng, wrt, [&](Tape* t) { return pool_project(t, fs, head); });
  });

  add("local_infonce", [](std::uint64_t s) {
    Rng rng(s);
    FeatureSet a, b;
    a.features = random_tensor({10, 6}, rng);
    b.features = random_tensor({8, 6}, rng);
    PairSet ps{{}, 0.1};
    for (std::size_t i = 0; i < 6; ++i) ps.pairs.emplace_back(i, 7 - i);
    return dm::check_gradients([&](Tape* t) { return local_infonce(t, a, b, ps, 0.07); }, {a.features, b.features});
  });
  add("global_infonce", [](std::uint64_t s) {
    Rng rng(s);
    MemoryBank bank(16, 5);
    auto unit = [&]() {
      std::vector<double> v(5);
      double n = 0.0;
      for (double& x : v) {
        x = rng.normal();
        n += x * x;
      }
      for (double& x : v) x /= std::sqrt(n);
      return v;
    };
    for (int i = 0; i < 11; ++i) bank.enqueue(unit());
    const std::vector<double> k = unit();
    Tensor raw = random_tensor({5}, rng);
    return dm::check_gradients(
        [&](Tape* t) { return global_infonce(t, dm::l2_normalize(t, raw, 0), k, bank, 0.07); }, {raw});
  });
  return cases;
}

/// Runs every case on seeds 1..n_seeds.
inline std::vector<GradCaseReport> run_gradient_suite(std::size_t n_seeds,
                                                      const std::function<void(const GradCaseReport&)>& on_case = {}) {
  std::vector<GradCaseReport> out;
  for (const GradCase& c : gradient_suite()) {
    GradCaseReport r;
    r.name = c.name;
    for (std::uint64_t s = 1; s <= n_seeds; ++s) {
      const dm::GradCheckResult g = c.run(s);
      r.max_relative_error = std::max(r.max_relative_error, g.max_relative_error);
      r.checked += g.checked;
      r.skipped_at_kinks += g.skipped_at_kinks;
      ++r.seeds;
    }
    if (on_case) on_case(r);
    out.push_back(r);
  }
  return out;
}

}  // namespace uc3d
