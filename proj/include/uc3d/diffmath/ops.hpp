// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Differentiable ops. Every op takes the tape first; a null tape (or inputs
// that do not require gradients) evaluates without recording.
//
// Layouts are channel-last: matrices [rows, features], images [H, W, C],
// volumes [D, H, W, C]. Max-type ops break ties toward the lowest index.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "uc3d/diffmath/tensor.hpp"

namespace uc3d::dm {

namespace detail {

inline bool recording(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

/// Adds g into the tape gradient of t when t is tracked.
template <typename F>
inline void accumulate(Tape& tape, const Tensor& t, F&& fill) {
  if (!t.requires_grad()) return;
  fill(tape.grad_buffer(t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out = Tensor::zeros({m, n}, rec);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (rec) {
    tape->record([a, b, out, m, k, n](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      const double* g = go->data();
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        const double* pb = b.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb[kk * n + j];
            ga[i * k + kk] += s;
          }
        }
      });
      detail::accumulate(t, b, [&](std::vector<double>& gb) {
        const double* pa = a.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += av * g[i * n + j];
          }
        }
      });
    });
  }
  return out;
}

inline Tensor transpose(Tape* tape, const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros({n, m}, rec);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a[i * n + j];
  }
  if (rec) {
    tape->record([a, out, m, n](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += (*go)[j * m + i];
        }
      });
    });
  }
  return out;
}

/// a + b for equal shapes, or a + b broadcast over rows when b is a vector
/// matching a's last extent (bias add).
inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0);
  if (!same && !bias) detail::shape_mismatch("add", a.shape(), b.shape());
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.size(), c = b.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a[i] + b[same ? i : i % c];
  if (rec) {
    tape->record([a, b, out, same, n, c](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += (*go)[i];
      });
      detail::accumulate(t, b, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < n; ++i) gb[same ? i : i % c] += (*go)[i];
      });
    });
  }
  return out;
}

/// Elementwise product of equal shapes.
inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a[i] * b[i];
  if (rec) {
    tape->record([a, b, out, n](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += (*go)[i] * b[i];
      });
      detail::accumulate(t, b, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += (*go)[i] * a[i];
      });
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& a, double s) {
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = s * a[i];
  if (rec) {
    tape->record([a, out, s, n](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += s * (*go)[i];
      });
    });
  }
  return out;
}

/// Sum of scalars (or equal-shape tensors) with constant weights.
inline Tensor weighted_sum(Tape* tape, const std::vector<Tensor>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
  bool rec = false;
  for (const Tensor& t : terms) {
    if (t.shape() != terms[0].shape()) detail::shape_mismatch("weighted_sum", terms[0].shape(), t.shape());
    rec = rec || detail::recording(tape, {&t});
  }
  Tensor out = Tensor::zeros(terms[0].shape(), rec);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += weights[k] * terms[k][i];
  }
  if (rec) {
    tape->record([terms, weights, out](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      for (std::size_t k = 0; k < terms.size(); ++k) {
        detail::accumulate(t, terms[k], [&](std::vector<double>& g) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[k] * (*go)[i];
        });
      }
    });
  }
  return out;
}

inline Tensor relu(Tape* tape, const Tensor& a) {
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rec);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a[i] > 0.0 ? a[i] : 0.0;
  if (tape && tape->tracking_branches()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
      word = (word << 1) | (a[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) tape->note_branch(word), word = 0;
    }
    tape->note_branch(word);
  }
  if (rec) {
    tape->record([a, out, n](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < n; ++i) {
          if (a[i] > 0.0) ga[i] += (*go)[i];
        }
      });
    });
  }
  return out;
}

inline Tensor sum(Tape* tape, const Tensor& a) {
  const bool rec = detail::recording(tape, {&a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s, rec);
  if (rec) {
    tape->record([a, out](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (double& g : ga) g += (*go)[0];
      });
    });
  }
  return out;
}

inline Tensor mean(Tape* tape, const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor reshape(Tape* tape, const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) detail::shape_mismatch("reshape", a.shape(), shape);
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::from(std::move(shape), a.values(), rec);
  if (rec) {
    tape->record([a, out](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Indexing

/// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(Tape* tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for shape " + shape_str(s0));
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  bool rec = false;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) detail::shape_mismatch("concat", s0, s);
    total_axis += s[axis];
    rec = rec || detail::recording(tape, {&p});
  }
  Shape os = s0;
  os[axis] = total_axis;
  Tensor out = Tensor::zeros(os, rec);
  const std::size_t out_row = total_axis * inner;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data().data() + o * out_row + offset);
    }
    offset += chunk;
  }
  if (rec) {
    tape->record([parts, out, axis, outer, inner, out_row](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        const std::size_t chunk = p.dim(axis) * inner;
        detail::accumulate(t, p, [&](std::vector<double>& gp) {
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += (*go)[o * out_row + off + i];
          }
        });
        off += chunk;
      }
    });
  }
  return out;
}

/// Selects slices along axis 0 (rows); indices may repeat.
inline Tensor gather(Tape* tape, const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() < 1) throw ShapeError("gather: scalar input");
  const std::size_t rows = a.dim(0), row = rows == 0 ? 0 : a.size() / rows;
  for (std::size_t i : indices) {
    if (i >= rows) throw ShapeError("gather: index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
  }
  Shape os = a.shape();
  os[0] = indices.size();
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros(os, rec);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(a.data().data() + indices[r] * row, row, out.data().data() + r * row);
  }
  if (rec) {
    tape->record([a, out, indices, row](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t r = 0; r < indices.size(); ++r) {
          for (std::size_t c = 0; c < row; ++c) ga[indices[r] * row + c] += (*go)[r * row + c];
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling

/// Max over consecutive groups of `group` rows: [G*group, C] -> [G, C].
inline Tensor group_max(Tape* tape, const Tensor& a, std::size_t group) {
  detail::require_rank("group_max", a, 2);
  if (group == 0 || a.dim(0) % group != 0 || a.dim(0) == 0) {
    throw ShapeError("group_max: " + shape_str(a.shape()) + " is not divisible into groups of " +
                     std::to_string(group));
  }
  const std::size_t groups = a.dim(0) / group, c = a.dim(1);
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros({groups, c}, rec);
  std::vector<std::size_t> argmax(groups * c);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = g * group;
      for (std::size_t r = g * group + 1; r < (g + 1) * group; ++r) {
        if (a[r * c + j] > a[best * c + j]) best = r;
      }
      argmax[g * c + j] = best;
      out.data()[g * c + j] = a[best * c + j];
      if (tape && tape->tracking_branches()) tape->note_branch(best);
    }
  }
  if (rec) {
    tape->record([a, out, argmax = std::move(argmax), c](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < argmax.size(); ++i) ga[argmax[i] * c + i % c] += (*go)[i];
      });
    });
  }
  return out;
}

/// Columnwise max over the rows of [M, C] -> [C].
inline Tensor max_pool_global(Tape* tape, const Tensor& a) {
  detail::require_rank("max_pool_global", a, 2);
  if (a.dim(0) == 0) throw ShapeError("max_pool_global: no rows");
  return reshape(tape, group_max(tape, a, a.dim(0)), {a.dim(1)});
}

/// Non-overlapping k x k max pooling of [H, W, C]; trailing rows/cols that do
/// not fill a window are dropped.
inline Tensor max_pool_2d(Tape* tape, const Tensor& a, std::size_t k) {
  detail::require_rank("max_pool_2d", a, 3);
  if (k == 0 || a.dim(0) < k || a.dim(1) < k) throw ShapeError("max_pool_2d: window larger than " + shape_str(a.shape()));
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2), ho = h / k, wo = w / k;
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros({ho, wo, c}, rec);
  std::vector<std::size_t> argmax(ho * wo * c);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((oy * k) * w + ox * k) * c + ch;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = ((oy * k + dy) * w + ox * k + dx) * c + ch;
            if (a[idx] > a[best]) best = idx;
          }
        }
        const std::size_t o = (oy * wo + ox) * c + ch;
        argmax[o] = best;
        out.data()[o] = a[best];
        if (tape && tape->tracking_branches()) tape->note_branch(best);
      }
    }
  }
  if (rec) {
    tape->record([a, out, argmax = std::move(argmax)](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < argmax.size(); ++i) ga[argmax[i]] += (*go)[i];
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-row standardization over the last axis, no affine parameters.
inline Tensor layer_norm(Tape* tape, const Tensor& a, double eps = 1e-5) {
  if (a.rank() < 1 || a.shape().back() == 0) throw ShapeError("layer_norm: empty last axis");
  const std::size_t c = a.shape().back(), rows = a.size() / c;
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rec);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += a[r * c + j];
    mu /= c;
    for (std::size_t j = 0; j < c; ++j) var += (a[r * c + j] - mu) * (a[r * c + j] - mu);
    var /= c;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out.data()[r * c + j] = (a[r * c + j] - mu) * inv_std[r];
  }
  if (rec) {
    tape->record([a, out, inv_std = std::move(inv_std), c, rows](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t r = 0; r < rows; ++r) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            mg += (*go)[r * c + j];
            mgy += (*go)[r * c + j] * out[r * c + j];
          }
          mg /= c;
          mgy /= c;
          for (std::size_t j = 0; j < c; ++j) {
            ga[r * c + j] += inv_std[r] * ((*go)[r * c + j] - mg - out[r * c + j] * mgy);
          }
        }
      });
    });
  }
  return out;
}

/// x / max(||x||, eps) along `axis`.
inline Tensor l2_normalize(Tape* tape, const Tensor& a, std::size_t axis, double eps = 1e-12) {
  if (axis >= a.rank()) throw ShapeError("l2_normalize: axis out of range for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = a.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const bool rec = detail::recording(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rec);
  std::vector<double> norms(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double v = a[(o * len + k) * inner + in];
        s += v * v;
      }
      const double n = std::max(std::sqrt(s), eps);
      norms[o * inner + in] = n;
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t idx = (o * len + k) * inner + in;
        out.data()[idx] = a[idx] / n;
      }
    }
  }
  if (rec) {
    tape->record([a, out, norms = std::move(norms), outer, inner, len, eps](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      detail::accumulate(t, a, [&](std::vector<double>& ga) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const double n = norms[o * inner + in];
            double yg = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t idx = (o * len + k) * inner + in;
              yg += out[idx] * (*go)[idx];
            }
            const bool clamped = n <= eps;
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t idx = (o * len + k) * inner + in;
              ga[idx] += clamped ? (*go)[idx] / n : ((*go)[idx] - out[idx] * yg) / n;
            }
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

/// Mean over rows of -log softmax(logits[r])[targets[r]]. Accepts [K] with
/// one target or [R, K] with R targets.
inline Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 1 && logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected [K] or [R,K], got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.rank() == 1 ? 1 : logits.dim(0);
  const std::size_t k = logits.shape().back();
  if (targets.size() != rows || k == 0 || rows == 0) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  for (std::size_t tgt : targets) {
    if (tgt >= k) throw ShapeError("softmax_cross_entropy: target out of range");
  }
  const bool rec = detail::recording(tape, {&logits});
  std::vector<double> probs(rows * k);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.data().data() + r * k;
    const double mx = *std::max_element(l, l + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - l[targets[r]];
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(l[j] - lse);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(rows), rec);
  if (rec) {
    tape->record([logits, out, probs = std::move(probs), targets, rows, k](Tape& t) {
      const auto* go = t.grad(out);
      if (!go) return;
      const double g = (*go)[0] / static_cast<double>(rows);
      detail::accumulate(t, logits, [&](std::vector<double>& gl) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            gl[r * k + j] += g * (probs[r * k + j] - (j == targets[r] ? 1.0 : 0.0));
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  std::array<std::size_t, 3> in{}, out{}, kernel{}, stride{}, pad{};
  std::size_t cin = 0, cout = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

// out[od,oh,ow,co] = bias[co] + sum x[id,ih,iw,ci] * w[kd,kh,kw,ci,co]
inline void conv_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* y) {
  const std::size_t cin = g.cin, cout = g.cout;
  for (std::size_t od = 0; od < g.out[0]; ++od) {
    for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
      for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
        double* yo = y + ((od * g.out[1] + oh) * g.out[2] + ow) * cout;
        if (bias) std::copy_n(bias, cout, yo);
        for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
          const std::ptrdiff_t id = std::ptrdiff_t(od * g.stride[0] + kd) - std::ptrdiff_t(g.pad[0]);
          if (id < 0 || id >= std::ptrdiff_t(g.in[0])) continue;
          for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
            const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride[1] + kh) - std::ptrdiff_t(g.pad[1]);
            if (ih < 0 || ih >= std::ptrdiff_t(g.in[1])) continue;
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
              const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride[2] + kw) - std::ptrdiff_t(g.pad[2]);
              if (iw < 0 || iw >= std::ptrdiff_t(g.in[2])) continue;
              const double* xi = x + ((std::size_t(id) * g.in[1] + std::size_t(ih)) * g.in[2] + std::size_t(iw)) * cin;
              const double* wk = w + ((kd * g.kernel[1] + kh) * g.kernel[2] + kw) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double xv = xi[ci];
                if (xv == 0.0) continue;
                const double* wr = wk + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) yo[co] += xv * wr[co];
              }
            }
          }
        }
      }
    }
  }
}

inline void conv_backward(const ConvGeometry& g, const double* x, const double* w, const double* gy, double* gx,
                          double* gw, double* gb) {
  const std::size_t cin = g.cin, cout = g.cout;
  for (std::size_t od = 0; od < g.out[0]; ++od) {
    for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
      for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
        const double* go = gy + ((od * g.out[1] + oh) * g.out[2] + ow) * cout;
        bool any = false;
        for (std::size_t co = 0; co < cout; ++co) any = any || go[co] != 0.0;
        if (!any) continue;
        if (gb) {
          for (std::size_t co = 0; co < cout; ++co) gb[co] += go[co];
        }
        for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
          const std::ptrdiff_t id = std::ptrdiff_t(od * g.stride[0] + kd) - std::ptrdiff_t(g.pad[0]);
          if (id < 0 || id >= std::ptrdiff_t(g.in[0])) continue;
          for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
            const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride[1] + kh) - std::ptrdiff_t(g.pad[1]);
            if (ih < 0 || ih >= std::ptrdiff_t(g.in[1])) continue;
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
              const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride[2] + kw) - std::ptrdiff_t(g.pad[2]);
              if (iw < 0 || iw >= std::ptrdiff_t(g.in[2])) continue;
              const std::size_t xoff = ((std::size_t(id) * g.in[1] + std::size_t(ih)) * g.in[2] + std::size_t(iw)) * cin;
              const std::size_t woff = ((kd * g.kernel[1] + kh) * g.kernel[2] + kw) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* wr = w + woff + ci * cout;
                if (gx) {
                  double s = 0.0;
                  for (std::size_t co = 0; co < cout; ++co) s += go[co] * wr[co];
                  gx[xoff + ci] += s;
                }
                if (gw) {
                  const double xv = x[xoff + ci];
                  if (xv == 0.0) continue;
                  double* gwr = gw + woff + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) gwr[co] += xv * go[co];
                }
              }
            }
          }
        }
      }
    }
  }
}

inline Tensor conv_nd(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g,
                      const Shape& out_shape) {
  const bool rec = detail::recording(tape, {&x, &w, &bias});
  Tensor y = Tensor::zeros(out_shape, rec);
  conv_forward(g, x.data().data(), w.data().data(), bias.defined() ? bias.data().data() : nullptr, y.data().data());
  if (rec) {
    tape->record([x, w, bias, y, g](Tape& t) {
      const auto* gy = t.grad(y);
      if (!gy) return;
      double* gx = x.requires_grad() ? t.grad_buffer(x).data() : nullptr;
      double* gw = w.requires_grad() ? t.grad_buffer(w).data() : nullptr;
      double* gb = bias.defined() && bias.requires_grad() ? t.grad_buffer(bias).data() : nullptr;
      conv_backward(g, x.data().data(), w.data().data(), gy->data(), gx, gw, gb);
    });
  }
  return y;
}

}  // namespace detail

/// 2D convolution. x: [H, W, Cin], w: [K, K, Cin, Cout], bias: [Cout] or undefined.
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  detail::require_rank("conv2d", x, 3);
  detail::require_rank("conv2d", w, 4);
  if (w.dim(2) != x.dim(2) || (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(3))) || stride == 0) {
    detail::shape_mismatch("conv2d", x.shape(), w.shape());
  }
  detail::ConvGeometry g;
  g.in = {1, x.dim(0), x.dim(1)};
  g.kernel = {1, w.dim(0), w.dim(1)};
  g.stride = {1, stride, stride};
  g.pad = {0, padding, padding};
  g.cin = x.dim(2);
  g.cout = w.dim(3);
  g.out = {1, detail::conv_out_extent(g.in[1], g.kernel[1], stride, padding),
           detail::conv_out_extent(g.in[2], g.kernel[2], stride, padding)};
  if (g.out[1] == 0 || g.out[2] == 0) detail::shape_mismatch("conv2d", x.shape(), w.shape());
  return detail::conv_nd(tape, x, w, bias, g, {g.out[1], g.out[2], g.cout});
}

/// Dense 3D convolution. x: [D, H, W, Cin], w: [K, K, K, Cin, Cout].
inline Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  detail::require_rank("conv3d", x, 4);
  detail::require_rank("conv3d", w, 5);
  if (w.dim(3) != x.dim(3) || (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(4))) || stride == 0) {
    detail::shape_mismatch("conv3d", x.shape(), w.shape());
  }
  detail::ConvGeometry g;
  g.in = {x.dim(0), x.dim(1), x.dim(2)};
  g.kernel = {w.dim(0), w.dim(1), w.dim(2)};
  g.stride = {stride, stride, stride};
  g.pad = {padding, padding, padding};
  g.cin = x.dim(3);
  g.cout = w.dim(4);
  for (int a = 0; a < 3; ++a) g.out[a] = detail::conv_out_extent(g.in[a], g.kernel[a], stride, padding);
  if (g.out[0] == 0 || g.out[1] == 0 || g.out[2] == 0) detail::shape_mismatch("conv3d", x.shape(), w.shape());
  return detail::conv_nd(tape, x, w, bias, g, {g.out[0], g.out[1], g.out[2], g.cout});
}

/// x W + b for x: [M, K], W: [K, N], b: [N].
inline Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(tape, matmul(tape, x, w), b);
}

}  // namespace uc3d::dm
