// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Deterministic pre-training loop: SGD with momentum on a cosine schedule,
// EMA mirrors, per-step metrics and per-epoch checkpoints.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "uc3d/contrast.hpp"
#include "uc3d/core/error.hpp"
#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/checkpoint.hpp"
#include "uc3d/geometry_io.hpp"
#include "uc3d/strategies.hpp"
#include "uc3d/synthdata.hpp"

namespace uc3d {

struct TrainConfig {
  StrategyConfig strategy;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double lr0 = 0.03;
  double sgd_momentum = 0.9;
  std::size_t seed = 1;
  std::size_t frames = 200;    ///< synthetic frames (or pairs) when no directory is given
  double pair_baseline = 0.3;  ///< PointContrast synthetic pairs

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be positive");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("train: sgd_momentum must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    strategy.validate();
  }
};

namespace detail {

using FieldRef = std::variant<double*, std::size_t*, bool*, int*, StrategyKind*>;

inline std::vector<std::pair<std::string, FieldRef>> config_fields(TrainConfig& c) {
  StrategyConfig& s = c.strategy;
  EncoderConfig& e = s.encoder;
  AugmentRanges& a = s.augment;
  CropRanges& r = s.crops;
  return {
      {"strategy", &s.kind},
      {"use_local", &s.use_local},
      {"use_global", &s.use_global},
      {"epochs", &c.epochs},
      {"batch_size", &c.batch_size},
      {"lr0", &c.lr0},
      {"sgd_momentum", &c.sgd_momentum},
      {"seed", &c.seed},
      {"frames", &c.frames},
      {"pair_baseline", &c.pair_baseline},
      {"tau", &s.tau},
      {"bank_size", &s.bank_size},
      {"ema_momentum", &s.ema_momentum},
      {"match_radius", &s.match_radius},
      {"max_pairs", &s.max_pairs},
      {"min_overlap", &s.min_overlap},
      {"voxel_size", &a.voxel_size},
      {"max_points", &a.max_points},
      {"scale_min", &a.scale_min},
      {"scale_max", &a.scale_max},
      {"flip_probability", &a.flip_probability},
      {"max_depth_roll", &a.max_depth_roll},
      {"pixel_zero_fraction", &a.pixel_zero_fraction},
      {"jitter_strength", &a.jitter_strength},
      {"grayscale_probability", &a.grayscale_probability},
      {"blur_probability", &a.blur_probability},
      {"max_blur_sigma", &a.max_blur_sigma},
      {"crop_min_side_fraction", &r.min_side_fraction},
      {"crop_max_side_fraction", &r.max_side_fraction},
      {"crop_min_dropout_fraction", &r.min_dropout_fraction},
      {"crop_max_dropout_fraction", &r.max_dropout_fraction},
      {"crop_min_side", &r.min_crop_side},
      {"feature_dim", &e.feature_dim},
      {"width1", &e.width1},
      {"width2", &e.width2},
      {"width3", &e.width3},
      {"input_size", &e.input_size},
      {"radius1", &e.radius1},
      {"radius2", &e.radius2},
      {"group_size", &e.group_size},
      {"max_grid", &e.max_grid},
      {"head_hidden", &e.head_hidden},
      {"embed_dim", &e.embed_dim},
  };
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void parse_field(const std::string& key, const std::string& value, FieldRef ref) {
  auto bad = [&]() { return ConfigError("config: bad value '" + value + "' for key '" + key + "'"); };
  try {
    std::size_t used = 0;
    if (auto* d = std::get_if<double*>(&ref)) {
      **d = std::stod(value, &used);
    } else if (auto* z = std::get_if<std::size_t*>(&ref)) {
      if (!value.empty() && value[0] == '-') throw bad();
      **z = static_cast<std::size_t>(std::stoull(value, &used));
    } else if (auto* i = std::get_if<int*>(&ref)) {
      **i = std::stoi(value, &used);
    } else if (auto* b = std::get_if<bool*>(&ref)) {
      if (value == "true" || value == "1") {
        **b = true;
      } else if (value == "false" || value == "0") {
        **b = false;
      } else {
        throw bad();
      }
      used = value.size();
    } else if (auto* k = std::get_if<StrategyKind*>(&ref)) {
      **k = parse_strategy(value);
      used = value.size();
    }
    if (used != value.size()) throw bad();
  } catch (const std::invalid_argument&) {
    throw bad();
  } catch (const std::out_of_range&) {
    throw bad();
  }
}

inline std::string format_field(FieldRef ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(*p);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, StrategyKind>) {
          return strategy_name(*p);
        } else {
          return std::to_string(*p);
        }
      },
      ref);
}

}  // namespace detail

/// Applies key=value pairs on top of `base`. Unknown keys are errors.
inline TrainConfig parse_train_config(const std::map<std::string, std::string>& kv, TrainConfig base = {}) {
  auto fields = detail::config_fields(base);
  for (const auto& [key, value] : kv) {
    bool found = false;
    for (auto& [name, ref] : fields) {
      if (name == key) {
        detail::parse_field(key, value, ref);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("config: unknown key '" + key + "'");
  }
  return base;
}

inline TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
  return parse_train_config(io::read_key_values(path), std::move(base));
}

/// Every key, one per line, in a fixed order; parses back to the same config.
inline std::string train_config_text(TrainConfig cfg) {
  std::string out;
  for (auto& [name, ref] : detail::config_fields(cfg)) out += name + "=" + detail::format_field(ref) + "\n";
  return out;
}

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
inline double lr_schedule(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) return lr0;
  if (step > total_steps) throw ContractError("lr_schedule: step beyond total_steps");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

/// v <- momentum * v + g; theta <- theta - lr * v. Every gradient is checked
/// for finiteness before any tensor is touched.
inline void sgd_step(ParamSet& params, const std::vector<std::vector<double>>& grads,
                     std::vector<std::vector<double>>& velocity, double lr, double momentum) {
  if (grads.size() != params.tensors.size()) throw ShapeError("sgd_step: gradient count differs from parameter count");
  if (velocity.empty()) {
    for (const auto& [name, t] : params.tensors) velocity.emplace_back(t.size(), 0.0);
  }
  if (velocity.size() != params.tensors.size()) throw ShapeError("sgd_step: velocity count differs from parameter count");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& [name, t] = params.tensors[i];
    if (grads[i].size() != t.size() || velocity[i].size() != t.size()) {
      throw ShapeError("sgd_step: shape mismatch for '" + name + "' in " + params.tag);
    }
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      if (!std::isfinite(grads[i][k])) {
        throw NumericError("sgd_step: non-finite gradient in '" + name + "' of " + params.tag + " at element " +
                           std::to_string(k));
      }
    }
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    dm::Tensor& t = params.tensors[i].second;
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      velocity[i][k] = momentum * velocity[i][k] + grads[i][k];
      t.data()[k] -= lr * velocity[i][k];
    }
  }
}

/// Checkpoint entries "<role>/<tensor>", each parameter set once.
inline dm::NamedTensors state_tensors(const DualEncoderState& s) {
  const std::pair<const char*, std::shared_ptr<ParamSet>> roles[] = {
      {"alpha.encoder", s.alpha.encoder},
      {"alpha.head", s.alpha.head},
      {"beta.encoder", s.beta.encoder},
      {"beta.head", s.beta.head},
      {"alpha.momentum_encoder", s.alpha.momentum_encoder},
      {"alpha.momentum_head", s.alpha.momentum_head},
      {"beta.momentum_encoder", s.beta.momentum_encoder},
      {"beta.momentum_head", s.beta.momentum_head},
  };
  dm::NamedTensors out;
  std::vector<const ParamSet*> seen;
  for (const auto& [role, set] : roles) {
    if (!set || std::find(seen.begin(), seen.end(), set.get()) != seen.end()) continue;
    seen.push_back(set.get());
    for (const auto& [name, t] : set->tensors) out.emplace_back(std::string(role) + "/" + name, t);
  }
  return out;
}

/// Copies checkpoint values into a state built from the same config.
inline void load_state_tensors(DualEncoderState& s, const dm::NamedTensors& saved) {
  const dm::NamedTensors target = state_tensors(s);
  if (target.size() != saved.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(saved.size()) + " tensors, the configured strategy has " +
                      std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].first != saved[i].first || target[i].second.shape() != saved[i].second.shape()) {
      throw ConfigError("checkpoint entry '" + saved[i].first + "' does not match '" + target[i].first + "'");
    }
    dm::Tensor dst = target[i].second;
    std::copy(saved[i].second.values().begin(), saved[i].second.values().end(), dst.values().begin());
  }
}

/// Frames for single-frame strategies, posed pairs for PointContrast.
struct TrainData {
  std::vector<PosedFrame> frames;
  std::vector<std::pair<PosedFrame, PosedFrame>> pairs;

  std::size_t size() const { return frames.empty() ? pairs.size() : frames.size(); }
};

/// Synthetic data matching the strategy.
inline TrainData synthetic_data(const TrainConfig& cfg) {
  TrainData d;
  if (cfg.strategy.kind == StrategyKind::PointContrast) {
    d.pairs = generate_pairs(cfg.frames, cfg.seed, cfg.pair_baseline);
  } else {
    d.frames = generate_frames(cfg.frames, cfg.seed);
  }
  return d;
}

/// Frames from a directory; PointContrast pairs consecutive frames.
inline TrainData directory_data(const std::filesystem::path& dir, StrategyKind kind) {
  TrainData d;
  std::vector<PosedFrame> frames = io::read_frames(dir);
  if (kind != StrategyKind::PointContrast) {
    d.frames = std::move(frames);
    return d;
  }
  if (frames.size() < 2) throw EmptyInputError("pointcontrast needs at least two frames in " + dir.string());
  for (std::size_t i = 0; i + 1 < frames.size(); i += 2) d.pairs.emplace_back(frames[i], frames[i + 1]);
  return d;
}

/// One optimizer step; losses averaged over the non-skipped frames of the batch.
struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double l_ab = 0.0, l_ba = 0.0, g_ab = 0.0, g_ba = 0.0, total = 0.0;
  std::size_t pairs = 0;  ///< summed over the batch
  double acc = 0.0;
  std::size_t used = 0;  ///< frames that produced a loss
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double mean_acc = 0.0;
  std::size_t steps = 0;    ///< frame steps with a loss
  std::size_t skipped = 0;  ///< degenerate frame steps
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
  std::vector<EpochSummary> epochs;
  double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,lr,l_ab,l_ba,g_ab,g_ba,total,pairs,acc";

inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricsRow& r : m.rows) {
    out += std::to_string(r.step) + "," + detail::format_double(r.lr) + "," + detail::format_double(r.l_ab) + "," +
           detail::format_double(r.l_ba) + "," + detail::format_double(r.g_ab) + "," + detail::format_double(r.g_ba) +
           "," + detail::format_double(r.total) + "," + std::to_string(r.pairs) + "," + detail::format_double(r.acc) +
           "\n";
  }
  return out;
}

inline std::string epochs_csv(const RunMetrics& m) {
  std::string out = "epoch,mean_total,mean_acc,steps,skipped\n";
  for (const EpochSummary& e : m.epochs) {
    out += std::to_string(e.epoch) + "," + detail::format_double(e.mean_total) + "," +
           detail::format_double(e.mean_acc) + "," + std::to_string(e.steps) + "," + std::to_string(e.skipped) + "\n";
  }
  return out;
}

struct PretrainOptions {
  std::optional<std::filesystem::path> out_dir;  ///< metrics, config and checkpoints
  std::function<void(const std::string&)> log;   ///< degenerate steps and epoch summaries
};

struct PretrainResult {
  DualEncoderState state;
  RunMetrics metrics;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("write failed for " + p.string());
}

}  // namespace detail

/// Full run. (seed, config, data) determine every metric and checkpoint byte.
inline PretrainResult pretrain(const TrainConfig& cfg, const TrainData& data, const PretrainOptions& opt = {}) {
  cfg.validate();
  const bool pc = cfg.strategy.kind == StrategyKind::PointContrast;
  if (pc ? data.pairs.empty() : data.frames.empty()) {
    throw EmptyInputError(pc ? "pretrain: pointcontrast needs posed frame pairs" : "pretrain: no frames");
  }
  const auto t0 = std::chrono::steady_clock::now();
  Rng run(cfg.seed);
  Rng init_rng = run.fork(), order_rng = run.fork(), step_rng = run.fork();
  PretrainResult res{build_strategy(cfg.strategy, init_rng), {}};
  DualEncoderState& state = res.state;

  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    detail::write_text(*opt.out_dir / "config.txt", train_config_text(cfg));
  }
  auto checkpoint = [&](const std::string& name) {
    if (opt.out_dir) dm::save_checkpoint(*opt.out_dir / name, state_tensors(state));
  };

  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const auto sets = state.trainable();
  std::vector<std::vector<std::vector<double>>> velocity(sets.size());
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    order_rng.shuffle(order);
    EpochSummary es;
    es.epoch = epoch;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      ParamGrads grads = ParamGrads::zeros_like(state);
      MetricsRow row;
      row.step = step;
      row.lr = lr_schedule(step, total_steps, cfg.lr0);
      const std::size_t end = std::min(n, (b + 1) * cfg.batch_size);
      for (std::size_t j = b * cfg.batch_size; j < end; ++j) {
        const std::size_t idx = order[j];
        StepInput input = pc ? StepInput{std::make_pair(&data.pairs[idx].first, &data.pairs[idx].second)}
                             : StepInput{&data.frames[idx]};
        const StepResult r = training_step(state, input, cfg.strategy, step_rng, grads);
        if (r.skipped) {
          ++es.skipped;
          if (opt.log) opt.log("step " + std::to_string(step) + " frame " + std::to_string(idx) + ": skipped, " + r.skip_reason);
          continue;
        }
        ++row.used;
        row.l_ab += r.report.l_ab;
        row.l_ba += r.report.l_ba;
        row.g_ab += r.report.g_ab;
        row.g_ba += r.report.g_ba;
        row.total += r.report.total;
        row.pairs += r.report.pairs;
        row.acc += r.report.acc;
        es.mean_total += r.report.total;
        es.mean_acc += r.report.acc;
        ++es.steps;
      }
      if (row.used > 0) {
        const double inv = 1.0 / static_cast<double>(row.used);
        for (double* v : {&row.l_ab, &row.l_ba, &row.g_ab, &row.g_ba, &row.total, &row.acc}) *v *= inv;
        grads.scale(inv);
        for (std::size_t s = 0; s < sets.size(); ++s) {
          sgd_step(*sets[s], grads.values[s], velocity[s], row.lr, cfg.sgd_momentum);
        }
        state.ema_update();
      }
      res.metrics.rows.push_back(row);
      ++step;
    }
    if (es.steps > 0) {
      es.mean_total /= static_cast<double>(es.steps);
      es.mean_acc /= static_cast<double>(es.steps);
    }
    res.metrics.epochs.push_back(es);
    if (opt.log) {
      opt.log("epoch " + std::to_string(epoch) + ": mean total " + detail::format_double(es.mean_total) +
              ", mean acc " + detail::format_double(es.mean_acc) + ", skipped " + std::to_string(es.skipped));
    }
    char name[48];
    std::snprintf(name, sizeof name, "checkpoint_epoch_%03zu.ckpt", epoch);
    checkpoint(name);
  }
  checkpoint("checkpoint_final.ckpt");
  if (opt.out_dir) {
    detail::write_text(*opt.out_dir / "metrics.csv", metrics_csv(res.metrics));
    detail::write_text(*opt.out_dir / "epochs.csv", epochs_csv(res.metrics));
  }
  res.metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct EvalResult {
  double accuracy = 0.0;
  std::size_t hits = 0;
  std::size_t pairs = 0;
  std::size_t frames_used = 0;
  double chance = 0.0;  ///< pair-weighted mean of 1 / candidates
};

/// Top-1 local matching accuracy of the query encoders on held-out frames.
/// Each frame gets crops and augmentations drawn as in training from a
/// per-frame stream of `seed`.
inline EvalResult eval_matching(const DualEncoderState& state, const std::vector<PosedFrame>& frames,
                                const StrategyConfig& cfg, std::uint64_t seed = 0) {
  EvalResult res;
  Rng master(seed);
  for (const PosedFrame& f : frames) {
    Rng rng = master.fork();
    try {
      const auto [c1, c2] = sample_crops(f.depth, rng, cfg.crops);
      const AugmentParams pa = detail::sample_params(cfg, rng), pb = detail::sample_params(cfg, rng);
      const FeatureSet fa = encode(nullptr, detail::branch_view(f, c1, state.alpha.format, pa), *state.alpha.encoder);
      const FeatureSet fb = encode(nullptr, detail::branch_view(f, c1, state.beta.format, pb), *state.beta.encoder);
      const PairSet pairs = mine_pairs(fa, fb, cfg.match_radius);
      std::size_t cand = 0;
      const double acc = local_matching_accuracy(fa, fb, pairs, cfg.max_pairs, &cand);
      if (cand < 2) continue;
      res.hits += static_cast<std::size_t>(std::llround(acc * static_cast<double>(cand)));
      res.pairs += cand;
      res.chance += 1.0;  // cand * (1 / cand)
      ++res.frames_used;
    } catch (const EmptyInputError&) {
    }
  }
  if (res.pairs > 0) {
    res.accuracy = static_cast<double>(res.hits) / static_cast<double>(res.pairs);
    res.chance /= static_cast<double>(res.pairs);
  }
  return res;
}

}  // namespace uc3d
