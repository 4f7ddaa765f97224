// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// The six pre-training variants as configurations of one dual-encoder
// framework, and the per-frame training step shared by all of them.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "uc3d/augment.hpp"
#include "uc3d/contrast.hpp"
#include "uc3d/core/error.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders.hpp"
#include "uc3d/synthdata.hpp"

namespace uc3d {

/// DDCo is the (Depth, Depth) extension; the rest are the named variants.
enum class StrategyKind { DPCo, DVCo, PVCo, PPCo, IPCo, PointContrast, DDCo };

inline const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::DPCo: return "dpco";
    case StrategyKind::DVCo: return "dvco";
    case StrategyKind::PVCo: return "pvco";
    case StrategyKind::PPCo: return "ppco";
    case StrategyKind::IPCo: return "ipco";
    case StrategyKind::PointContrast: return "pointcontrast";
    case StrategyKind::DDCo: return "ddco";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (StrategyKind k : {StrategyKind::DPCo, StrategyKind::DVCo, StrategyKind::PVCo, StrategyKind::PPCo,
                         StrategyKind::IPCo, StrategyKind::PointContrast, StrategyKind::DDCo}) {
    if (s == strategy_name(k)) return k;
  }
  throw ConfigError("unknown strategy '" + s + "' (expected dpco, dvco, pvco, ppco, ipco, pointcontrast or ddco)");
}

/// (format_alpha, format_beta) of each variant.
inline std::pair<Format, Format> strategy_formats(StrategyKind k) {
  switch (k) {
    case StrategyKind::DPCo: return {Format::Depth, Format::Point};
    case StrategyKind::DVCo: return {Format::Depth, Format::Voxel};
    case StrategyKind::PVCo: return {Format::Point, Format::Voxel};
    case StrategyKind::PPCo: return {Format::Point, Format::Point};
    case StrategyKind::IPCo: return {Format::Image, Format::Point};
    case StrategyKind::PointContrast: return {Format::Point, Format::Point};
    case StrategyKind::DDCo: return {Format::Depth, Format::Depth};
  }
  throw ConfigError("unknown strategy kind");
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::DPCo;
  bool use_local = true;
  bool use_global = true;
  EncoderConfig encoder;
  AugmentRanges augment;
  CropRanges crops;
  double match_radius = 0.025;
  std::size_t max_pairs = 512;
  std::size_t bank_size = 4096;
  double ema_momentum = 0.999;
  double tau = 0.07;
  double min_overlap = 0.3;  ///< PointContrast frame pairs

  Format format_alpha() const { return strategy_formats(kind).first; }
  Format format_beta() const { return strategy_formats(kind).second; }
  bool shares_weights() const { return format_alpha() == format_beta(); }
  /// PointContrast only ever uses the local term.
  bool global_enabled() const { return use_global && kind != StrategyKind::PointContrast; }
  bool local_enabled() const { return use_local; }

  void validate() const {
    if (!local_enabled() && !global_enabled()) throw ConfigError("strategy: both loss terms disabled, nothing to optimize");
    if (!(tau > 0.0)) throw ConfigError("strategy: tau must be positive");
    if (!(match_radius > 0.0)) throw ConfigError("strategy: match_radius must be positive");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("strategy: ema_momentum must be in [0, 1]");
    if (max_pairs < 2) throw ConfigError("strategy: max_pairs must be at least 2");
    if (global_enabled() && bank_size == 0) throw ConfigError("strategy: bank_size must be positive");
  }
};

/// Built state; alpha and beta point at the same parameter sets when the
/// formats agree.
inline DualEncoderState build_strategy(const StrategyConfig& cfg, Rng& rng) {
  cfg.validate();
  DualEncoderState s;
  s.ema_momentum = cfg.ema_momentum;
  s.temperature = cfg.tau;
  s.alpha.format = cfg.format_alpha();
  s.beta.format = cfg.format_beta();
  s.alpha.encoder = std::make_shared<ParamSet>(make_encoder(s.alpha.format, cfg.encoder, rng));
  s.alpha.head = std::make_shared<ParamSet>(make_projection_head(cfg.encoder, rng));
  if (cfg.shares_weights()) {
    s.beta.encoder = s.alpha.encoder;
    s.beta.head = s.alpha.head;
  } else {
    s.beta.encoder = std::make_shared<ParamSet>(make_encoder(s.beta.format, cfg.encoder, rng));
    s.beta.head = std::make_shared<ParamSet>(make_projection_head(cfg.encoder, rng));
  }
  if (cfg.global_enabled()) {
    s.alpha.momentum_encoder = std::make_shared<ParamSet>(s.alpha.encoder->mirror());
    s.alpha.momentum_head = std::make_shared<ParamSet>(s.alpha.head->mirror());
    if (cfg.shares_weights()) {
      s.beta.momentum_encoder = s.alpha.momentum_encoder;
      s.beta.momentum_head = s.alpha.momentum_head;
    } else {
      s.beta.momentum_encoder = std::make_shared<ParamSet>(s.beta.encoder->mirror());
      s.beta.momentum_head = std::make_shared<ParamSet>(s.beta.head->mirror());
    }
    s.bank_alpha.emplace(cfg.bank_size, cfg.encoder.embed_dim);
    s.bank_beta.emplace(cfg.bank_size, cfg.encoder.embed_dim);
  }
  return s;
}

/// Per-step losses. Disabled or unavailable terms are reported as 0 and
/// excluded from the average.
struct StepReport {
  double l_ab = 0.0, l_ba = 0.0, g_ab = 0.0, g_ba = 0.0;
  double total = 0.0;
  std::size_t pairs = 0;       ///< matched pairs entering the local loss
  std::size_t candidates = 0;  ///< candidates per local softmax row
  double acc = 0.0;            ///< local top-1 matching accuracy
  int terms = 0;               ///< number of averaged terms
};

/// One frame, or a posed pair for PointContrast.
using StepInput = std::variant<const PosedFrame*, std::pair<const PosedFrame*, const PosedFrame*>>;

/// Gradient buffers aligned with DualEncoderState::trainable().
struct ParamGrads {
  std::vector<std::shared_ptr<ParamSet>> sets;
  std::vector<std::vector<std::vector<double>>> values;  ///< [set][tensor][element]

  static ParamGrads zeros_like(const DualEncoderState& s) {
    ParamGrads g;
    g.sets = s.trainable();
    for (const auto& set : g.sets) {
      auto& per = g.values.emplace_back();
      for (const auto& [name, t] : set->tensors) per.emplace_back(t.size(), 0.0);
    }
    return g;
  }

  /// Adds the tape's gradients w.r.t. every trainable tensor.
  void accumulate(const dm::Tape& tape) {
    for (std::size_t i = 0; i < sets.size(); ++i) {
      for (std::size_t j = 0; j < sets[i]->tensors.size(); ++j) {
        const auto* g = tape.grad(sets[i]->tensors[j].second);
        if (!g) continue;
        auto& dst = values[i][j];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += (*g)[k];
      }
    }
  }

  void scale(double s) {
    for (auto& per : values) {
      for (auto& v : per) {
        for (double& x : v) x *= s;
      }
    }
  }
};

/// Forward pass of one step recorded on a caller-owned tape.
struct StepForward {
  StepReport report;
  dm::Tensor loss;  ///< undefined when the step is degenerate
  std::string skip_reason;
  std::optional<std::vector<double>> key_alpha, key_beta;  ///< momentum keys to enqueue

  bool skipped() const { return !loss.defined(); }
};

namespace detail {

inline View branch_view(const PosedFrame& f, const CropSpec& crop, Format format, const AugmentParams& a) {
  if (format == Format::Image) return make_image_view(f.color, f.depth, f.intrinsics, crop, a);
  return make_view(f.depth, f.intrinsics, crop, format, a);
}

inline AugmentParams sample_params(const StrategyConfig& cfg, Rng& rng) {
  AugmentParams a = sample_augment_params(cfg.augment, rng);
  a.voxel_size = cfg.augment.voxel_size;
  return a;
}

}  // namespace detail

/// Fraction of matched rows whose most similar (cosine) candidate among the
/// matched beta rows is their partner. Uses the same pair subset as the
/// local loss.
inline double local_matching_accuracy(const FeatureSet& fa, const FeatureSet& fb, const PairSet& pairs,
                                      std::size_t max_pairs, std::size_t* candidates = nullptr) {
  const auto used = cap_pairs(pairs, max_pairs);
  if (candidates) *candidates = used.size();
  if (used.empty()) return 0.0;
  std::vector<std::size_t> ia, ib;
  for (auto [i, j] : used) {
    ia.push_back(i);
    ib.push_back(j);
  }
  const dm::Tensor a = dm::l2_normalize(nullptr, dm::gather(nullptr, fa.features.detach(), ia), 1);
  const dm::Tensor b = dm::l2_normalize(nullptr, dm::gather(nullptr, fb.features.detach(), ib), 1);
  const dm::Tensor sims = dm::matmul(nullptr, a, dm::transpose(nullptr, b));
  const std::size_t n = used.size();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (sims[r * n + c] > sims[r * n + best]) best = c;
    }
    hits += best == r;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Builds the views, encodes them and records the loss on `tape`. Consumes
/// rng in a fixed order: crops, then augmentations alpha1, beta1, alpha2, beta2.
inline StepForward forward_step(dm::Tape& tape, const DualEncoderState& state, const StepInput& input,
                                const StrategyConfig& cfg, Rng& rng) {
  cfg.validate();
  StepForward out;
  const double tau = state.temperature;

  std::optional<View> va1, vb1, va2, vb2;
  try {
    if (cfg.kind == StrategyKind::PointContrast) {
      const auto* pair = std::get_if<std::pair<const PosedFrame*, const PosedFrame*>>(&input);
      if (!pair) throw ConfigError("pointcontrast: training step needs a posed frame pair");
      const AugmentParams pa = detail::sample_params(cfg, rng), pb = detail::sample_params(cfg, rng);
      auto views = cross_view_pair(pair->first->depth, pair->first->pose, pair->second->depth, pair->second->pose,
                                   pair->first->intrinsics, pa, pb, cfg.min_overlap);
      va1 = std::move(views.first);
      vb1 = std::move(views.second);
    } else {
      const auto* fp = std::get_if<const PosedFrame*>(&input);
      if (!fp) throw ConfigError(std::string(strategy_name(cfg.kind)) + ": training step needs a single frame");
      const PosedFrame& f = **fp;
      const auto [c1, c2] = sample_crops(f.depth, rng, cfg.crops);
      const AugmentParams pa1 = detail::sample_params(cfg, rng), pb1 = detail::sample_params(cfg, rng);
      const AugmentParams pa2 = detail::sample_params(cfg, rng), pb2 = detail::sample_params(cfg, rng);
      va1 = detail::branch_view(f, c1, state.alpha.format, pa1);
      vb1 = detail::branch_view(f, c1, state.beta.format, pb1);
      if (cfg.global_enabled()) {
        va2 = detail::branch_view(f, c2, state.alpha.format, pa2);
        vb2 = detail::branch_view(f, c2, state.beta.format, pb2);
      }
    }
  } catch (const EmptyInputError& e) {
    out.skip_reason = e.what();
    return out;
  } catch (const DegenerateError& e) {
    out.skip_reason = e.what();
    return out;
  }

  FeatureSet fa1, fb1;
  try {
    fa1 = encode(&tape, *va1, *state.alpha.encoder);
    fb1 = encode(&tape, *vb1, *state.beta.encoder);
  } catch (const EmptyInputError& e) {
    out.skip_reason = e.what();
    return out;
  }

  std::vector<dm::Tensor> terms;
  StepReport& rep = out.report;
  if (cfg.local_enabled()) {
    const PairSet pairs = mine_pairs(fa1, fb1, cfg.match_radius);
    if (cap_pairs(pairs, cfg.max_pairs).size() < 2) {
      out.skip_reason = "fewer than 2 matched pairs (" + std::to_string(pairs.size()) + ")";
      return out;
    }
    const dm::Tensor l_ab = local_infonce(&tape, fa1, fb1, pairs, tau, cfg.max_pairs);
    const dm::Tensor l_ba = local_infonce(&tape, fb1, fa1, pairs.transposed(), tau, cfg.max_pairs);
    rep.l_ab = l_ab.item();
    rep.l_ba = l_ba.item();
    rep.pairs = cap_pairs(pairs, cfg.max_pairs).size();
    rep.acc = local_matching_accuracy(fa1, fb1, pairs, cfg.max_pairs, &rep.candidates);
    terms.push_back(l_ab);
    terms.push_back(l_ba);
  }

  if (cfg.global_enabled()) {
    if (!state.has_banks() || !state.alpha.momentum_encoder || !state.beta.momentum_encoder) {
      throw ContractError("forward_step: global loss requested but the state has no banks or mirrors");
    }
    std::vector<double> k_a, k_b;
    try {
      k_a = pool_project(nullptr, encode(nullptr, *va2, *state.alpha.momentum_encoder), *state.alpha.momentum_head)
                .values();
      k_b = pool_project(nullptr, encode(nullptr, *vb2, *state.beta.momentum_encoder), *state.beta.momentum_head)
                .values();
    } catch (const EmptyInputError& e) {
      out.skip_reason = e.what();
      return out;
    }
    // The very first step sees empty banks; the global terms join once keys exist.
    if (state.bank_beta->filled() > 0 && state.bank_alpha->filled() > 0) {
      const dm::Tensor q_a = pool_project(&tape, fa1, *state.alpha.head);
      const dm::Tensor q_b = pool_project(&tape, fb1, *state.beta.head);
      const dm::Tensor g_ab = global_infonce(&tape, q_a, k_b, *state.bank_beta, tau);
      const dm::Tensor g_ba = global_infonce(&tape, q_b, k_a, *state.bank_alpha, tau);
      rep.g_ab = g_ab.item();
      rep.g_ba = g_ba.item();
      terms.push_back(g_ab);
      terms.push_back(g_ba);
    }
    out.key_alpha = std::move(k_a);
    out.key_beta = std::move(k_b);
  }

  if (terms.empty()) {
    out.skip_reason = "no loss term available";
    return out;
  }
  out.loss = dm::weighted_sum(&tape, terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(terms.size())));
  rep.terms = static_cast<int>(terms.size());
  rep.total = out.loss.item();
  return out;
}

struct StepResult {
  StepReport report;
  bool skipped = false;
  std::string skip_reason;
};

/// Forward, backward into `grads`, then enqueue the momentum keys.
inline StepResult training_step(DualEncoderState& state, const StepInput& input, const StrategyConfig& cfg, Rng& rng,
                                ParamGrads& grads) {
  dm::Tape tape;
  StepForward fwd = forward_step(tape, state, input, cfg, rng);
  if (!fwd.skipped()) {
    tape.backward(fwd.loss);
    grads.accumulate(tape);
  }
  // Keys are enqueued even when no term was available yet (empty banks).
  if (fwd.key_alpha) state.bank_alpha->enqueue(*fwd.key_alpha);
  if (fwd.key_beta) state.bank_beta->enqueue(*fwd.key_beta);
  return {fwd.report, fwd.skipped(), fwd.skip_reason};
}

}  // namespace uc3d
