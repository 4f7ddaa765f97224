// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Contrastive machinery: anchor-based positive mining, the dense local
// InfoNCE, the memory-bank instance-discrimination InfoNCE, the symmetric
// average of the four terms, EMA mirrors and FIFO key banks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/encoders/params.hpp"

namespace uc3d {

/// One-to-one positives: (row in the alpha FeatureSet, row in the beta FeatureSet).
struct PairSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double match_radius = 0.0;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  PairSet transposed() const {
    PairSet t{{}, match_radius};
    t.pairs.reserve(pairs.size());
    for (auto [a, b] : pairs) t.pairs.emplace_back(b, a);
    return t;
  }
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Uniform hash grid with cell side equal to the search radius, so every
/// neighbor within the radius lives in the 27 surrounding cells.
class RadiusGrid {
 public:
  RadiusGrid(const std::vector<Vec3>& pts, double radius) : pts_(pts), radius_(radius) {
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(pts[i])].push_back(i);
  }

  /// Nearest point within the radius, lowest index on ties.
  std::optional<std::size_t> nearest(Vec3 q) const {
    const CellKey c = key(q);
    const double r2 = radius_ * radius_;
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> arg;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            const double d = squared_distance(q, pts_[j]);
            if (d > r2) continue;
            if (d < best || (d == best && j < *arg)) {
              best = d;
              arg = j;
            }
          }
        }
      }
    }
    return arg;
  }

 private:
  CellKey key(Vec3 p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / radius_)), static_cast<std::int64_t>(std::floor(p.y / radius_)),
            static_cast<std::int64_t>(std::floor(p.z / radius_))};
  }

  const std::vector<Vec3>& pts_;
  double radius_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
};

}  // namespace detail

/// Mutual nearest neighbors between anchor sets within match_radius. A pair
/// (i, j) is kept iff j is i's nearest beta anchor, i is j's nearest alpha
/// anchor and their distance is at most the radius. Sorted by alpha index.
inline PairSet mine_pairs(const std::vector<Vec3>& alpha, const std::vector<Vec3>& beta, double match_radius) {
  if (!(match_radius > 0.0)) throw ConfigError("mine_pairs: match_radius must be positive");
  if (alpha.empty() || beta.empty()) throw EmptyInputError("mine_pairs: empty anchor set");
  const detail::RadiusGrid grid_a(alpha, match_radius), grid_b(beta, match_radius);
  PairSet out{{}, match_radius};
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const auto j = grid_b.nearest(alpha[i]);
    if (!j) continue;
    const auto back = grid_a.nearest(beta[*j]);
    if (back && *back == i) out.pairs.emplace_back(i, *j);
  }
  return out;
}

inline PairSet mine_pairs(const FeatureSet& fa, const FeatureSet& fb, double match_radius) {
  return mine_pairs(fa.anchors, fb.anchors, match_radius);
}

/// Evenly spaced subset of at most `cap` pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> cap_pairs(const PairSet& ps, std::size_t cap) {
  if (cap == 0 || ps.size() <= cap) return ps.pairs;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(ps.pairs[i * ps.size() / cap]);
  return out;
}

/// Dense InfoNCE from alpha to beta: every matched alpha feature classifies
/// its partner among all matched beta features (temperature tau), averaged
/// over matched anchors. Rows are L2-normalized internally.
inline dm::Tensor local_infonce(dm::Tape* tape, const FeatureSet& fa, const FeatureSet& fb, const PairSet& pairs,
                                double tau, std::size_t max_pairs = 512) {
  const auto used = cap_pairs(pairs, max_pairs);
  if (used.size() < 2) {
    throw DegenerateError("local_infonce: need at least 2 pairs, got " + std::to_string(used.size()));
  }
  std::vector<std::size_t> ia, ib, targets(used.size());
  for (std::size_t k = 0; k < used.size(); ++k) {
    ia.push_back(used[k].first);
    ib.push_back(used[k].second);
    targets[k] = k;
  }
  const dm::Tensor a = dm::l2_normalize(tape, dm::gather(tape, fa.features, ia), 1);
  const dm::Tensor b = dm::l2_normalize(tape, dm::gather(tape, fb.features, ib), 1);
  const dm::Tensor logits = dm::scale(tape, dm::matmul(tape, a, dm::transpose(tape, b)), 1.0 / tau);
  return dm::softmax_cross_entropy(tape, logits, targets);
}

/// Fixed-capacity FIFO of unit-norm keys.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {
    if (capacity == 0 || dim == 0) throw ConfigError("memory bank: capacity and dim must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t filled() const { return filled_; }
  std::size_t cursor() const { return cursor_; }

  /// Storage row i (not FIFO age order).
  std::vector<double> row(std::size_t i) const {
    if (i >= filled_) throw ContractError("memory bank: row " + std::to_string(i) + " not filled");
    return {storage_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
            storage_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_)};
  }

  const std::vector<double>& storage() const { return storage_; }

  void enqueue(const std::vector<double>& key) {
    if (key.size() != dim_) throw ContractError("memory bank: key has wrong dimension");
    double n2 = 0.0;
    for (double v : key) n2 += v * v;
    if (!(std::abs(std::sqrt(n2) - 1.0) <= 1e-6)) {
      throw ContractError("memory bank: key norm " + std::to_string(std::sqrt(n2)) + " is not 1");
    }
    std::copy(key.begin(), key.end(), storage_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
    cursor_ = (cursor_ + 1) % capacity_;
    filled_ = std::min(capacity_, filled_ + 1);
  }

  void enqueue(const std::vector<std::vector<double>>& keys) {
    for (const auto& k : keys) enqueue(k);
  }

 private:
  std::size_t capacity_, dim_;
  std::vector<double> storage_;
  std::size_t cursor_ = 0;
  std::size_t filled_ = 0;
};

/// Instance discrimination: q must pick k_pos among k_pos and every filled
/// bank key. Only q carries gradients.
inline dm::Tensor global_infonce(dm::Tape* tape, const dm::Tensor& q, const std::vector<double>& k_pos,
                                 const MemoryBank& bank, double tau) {
  if (bank.filled() == 0) throw DegenerateError("global_infonce: memory bank is empty");
  if (q.rank() != 1 || q.size() != bank.dim() || k_pos.size() != bank.dim()) {
    throw ShapeError("global_infonce: query/key/bank dimensions disagree");
  }
  const std::size_t d = bank.dim(), rows = bank.filled() + 1;
  std::vector<double> keys;
  keys.reserve(rows * d);
  keys.insert(keys.end(), k_pos.begin(), k_pos.end());
  keys.insert(keys.end(), bank.storage().begin(), bank.storage().begin() + static_cast<std::ptrdiff_t>(bank.filled() * d));
  const dm::Tensor key_mat = dm::Tensor::from({rows, d}, std::move(keys));
  const dm::Tensor sims = dm::matmul(tape, key_mat, dm::reshape(tape, q, {d, 1}));
  const dm::Tensor logits = dm::scale(tape, dm::reshape(tape, sims, {rows}), 1.0 / tau);
  return dm::softmax_cross_entropy(tape, logits, {0});
}

/// 0.25 * (l_ab + l_ba + g_ab + g_ba).
inline double total_loss(double l_ab, double l_ba, double g_ab, double g_ba) {
  return 0.25 * (l_ab + l_ba + g_ab + g_ba);
}

inline dm::Tensor total_loss(dm::Tape* tape, const dm::Tensor& l_ab, const dm::Tensor& l_ba, const dm::Tensor& g_ab,
                             const dm::Tensor& g_ba) {
  return dm::weighted_sum(tape, {l_ab, l_ba, g_ab, g_ba}, {0.25, 0.25, 0.25, 0.25});
}

/// theta' <- m * theta' + (1 - m) * theta for every tensor pair.
inline void ema_update(ParamSet& mirror, const ParamSet& source, double m) {
  if (mirror.tensors.size() != source.tensors.size()) throw ContractError("ema_update: parameter sets differ");
  for (std::size_t i = 0; i < mirror.tensors.size(); ++i) {
    auto& dst = mirror.tensors[i].second;
    const auto& src = source.tensors[i].second;
    if (dst.shape() != src.shape() || mirror.tensors[i].first != source.tensors[i].first) {
      throw ContractError("ema_update: mirror of '" + source.tensors[i].first + "' has a different shape");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst.data()[k] = m * dst.data()[k] + (1.0 - m) * src[k];
  }
}

/// Encoder, head and their momentum mirrors for one format.
struct Branch {
  Format format = Format::Point;
  std::shared_ptr<ParamSet> encoder;
  std::shared_ptr<ParamSet> head;
  std::shared_ptr<ParamSet> momentum_encoder;  ///< null when the strategy has no global branch
  std::shared_ptr<ParamSet> momentum_head;
};

struct DualEncoderState {
  Branch alpha, beta;
  double ema_momentum = 0.999;
  double temperature = 0.07;
  /// Keys from the alpha and beta momentum branches.
  std::optional<MemoryBank> bank_alpha, bank_beta;

  bool shares_weights() const { return alpha.encoder == beta.encoder; }
  bool has_banks() const { return bank_alpha.has_value() && bank_beta.has_value(); }

  /// Query-side parameter sets, each listed once.
  std::vector<std::shared_ptr<ParamSet>> trainable() const {
    std::vector<std::shared_ptr<ParamSet>> out;
    for (const auto& p : {alpha.encoder, alpha.head, beta.encoder, beta.head}) {
      if (p && std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    return out;
  }

  /// (mirror, source) pairs, each mirror listed once.
  std::vector<std::pair<std::shared_ptr<ParamSet>, std::shared_ptr<ParamSet>>> mirrors() const {
    std::vector<std::pair<std::shared_ptr<ParamSet>, std::shared_ptr<ParamSet>>> out;
    auto push = [&](const std::shared_ptr<ParamSet>& m, const std::shared_ptr<ParamSet>& s) {
      if (!m) return;
      for (const auto& e : out) {
        if (e.first == m) return;
      }
      out.emplace_back(m, s);
    };
    push(alpha.momentum_encoder, alpha.encoder);
    push(alpha.momentum_head, alpha.head);
    push(beta.momentum_encoder, beta.encoder);
    push(beta.momentum_head, beta.head);
    return out;
  }

  void ema_update() {
    for (auto& [mirror, source] : mirrors()) uc3d::ema_update(*mirror, *source, ema_momentum);
  }
};

}  // namespace uc3d
