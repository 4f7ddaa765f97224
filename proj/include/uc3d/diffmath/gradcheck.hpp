// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Central finite-difference verification of tape gradients. The numeric side
// only ever calls the forward function, so it is independent of every
// backward rule it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "uc3d/diffmath/tensor.hpp"

namespace uc3d::dm {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error, so near-zero gradients are
  /// compared on an absolute scale of floor * tolerance.
  double relative_floor = 1e-4;
  /// Check at most this many coordinates per tensor (0 = all), spread evenly.
  std::size_t max_coords_per_tensor = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose ±step evaluation crossed a relu/max kink.
  std::size_t skipped_at_kinks = 0;
};

/// `f` builds a scalar loss on the given tape (which may be null). Every tensor
/// in `wrt` must require gradients.
inline GradCheckResult check_gradients(const std::function<Tensor(Tape*)>& f, std::vector<Tensor> wrt,
                                       const GradCheckOptions& opt = {}) {
  Tape tape(true);
  const Tensor loss = f(&tape);
  tape.backward(loss);
  const std::uint64_t signature = tape.branch_signature();

  auto eval = [&](std::uint64_t& sig) {
    Tape probe(true);
    const double v = f(&probe).item();
    sig = probe.branch_signature();
    return v;
  };

  GradCheckResult res;
  for (Tensor& t : wrt) {
    const std::vector<double>* analytic = tape.grad(t);
    const std::size_t n = t.size();
    const std::size_t stride =
        opt.max_coords_per_tensor == 0 || n <= opt.max_coords_per_tensor ? 1 : n / opt.max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double x0 = t.data()[i];
      std::uint64_t sp = 0, sm = 0;
      t.data()[i] = x0 + opt.step;
      const double fp = eval(sp);
      t.data()[i] = x0 - opt.step;
      const double fm = eval(sm);
      t.data()[i] = x0;
      if (sp != signature || sm != signature) {
        ++res.skipped_at_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic ? (*analytic)[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.relative_floor});
      res.max_relative_error = std::max(res.max_relative_error, std::abs(a - numeric) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace uc3d::dm
