// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <deque>

#include "uc3d/contrast.hpp"
#include "uc3d/encoders.hpp"

namespace uc3d {
namespace {

std::vector<Vec3> random_anchors(std::size_t n, Rng& rng) {
  std::vector<Vec3> p(n);
  for (Vec3& x : p) x = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
  return p;
}

FeatureSet random_features(std::size_t rows, std::size_t dim, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(rows * dim);
  for (double& x : v) x = rng.uniform(-1, 1);
  FeatureSet fs;
  fs.features = dm::Tensor::from({rows, dim}, std::move(v), grad);
  fs.anchors.assign(rows, Vec3{});
  return fs;
}

std::vector<double> unit(std::size_t dim, std::size_t axis) {
  std::vector<double> v(dim, 0.0);
  v[axis] = 1.0;
  return v;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

/// O(n^2) mutual nearest neighbours, lowest index on ties.
std::vector<std::pair<std::size_t, std::size_t>> brute_force_pairs(const std::vector<Vec3>& a,
                                                                   const std::vector<Vec3>& b, double r) {
  auto nearest = [](const Vec3& q, const std::vector<Vec3>& set) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < set.size(); ++j) {
      if (squared_distance(q, set[j]) < squared_distance(q, set[best])) best = j;
    }
    return best;
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = nearest(a[i], b);
    if (nearest(b[j], a) == i && squared_distance(a[i], b[j]) <= r * r) out.emplace_back(i, j);
  }
  return out;
}

TEST(MinePairs, MatchesBruteForceOnHundredSeeds) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const auto a = random_anchors(256, rng), b = random_anchors(256, rng);
    const double r = rng.uniform(0.02, 0.2);
    EXPECT_EQ(mine_pairs(a, b, r).pairs, brute_force_pairs(a, b, r)) << "seed " << seed;
  }
}

TEST(MinePairs, SymmetricUnderSwap) {
  Rng rng(7);
  const auto a = random_anchors(200, rng), b = random_anchors(150, rng);
  const PairSet ab = mine_pairs(a, b, 0.1);
  auto t = ab.transposed().pairs;
  std::sort(t.begin(), t.end());
  EXPECT_EQ(mine_pairs(b, a, 0.1).pairs, t);
}

TEST(MinePairs, IdenticalAnchorsPairDiagonally) {
  Rng rng(8);
  const auto a = random_anchors(50, rng);
  const PairSet ps = mine_pairs(a, a, 1e-9);
  ASSERT_EQ(ps.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(ps.pairs[i], std::make_pair(i, i));
}

TEST(MinePairs, FarApartGivesNoPairs) {
  const std::vector<Vec3> a{{0, 0, 0}}, b{{1, 0, 0}};
  EXPECT_TRUE(mine_pairs(a, b, 0.5).empty());
  EXPECT_EQ(mine_pairs(a, b, 1.0).size(), 1u);
}

TEST(MinePairs, Errors) {
  const std::vector<Vec3> a{{0, 0, 0}};
  EXPECT_THROW(mine_pairs(a, a, 0.0), ConfigError);
  EXPECT_THROW(mine_pairs(a, {}, 0.1), EmptyInputError);
}

TEST(CapPairs, EvenlySpacedSubset) {
  PairSet ps;
  for (std::size_t i = 0; i < 10; ++i) ps.pairs.emplace_back(i, i);
  const auto c = cap_pairs(ps, 4);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0].first, 0u);
  EXPECT_EQ(c[1].first, 2u);
  EXPECT_EQ(c[2].first, 5u);
  EXPECT_EQ(c[3].first, 7u);
  EXPECT_EQ(cap_pairs(ps, 0).size(), 10u);
}

TEST(LocalInfoNce, UniformLogitsGiveLogK) {
  for (std::size_t k : {2u, 10u, 64u}) {
    FeatureSet fa, fb;
    fa.features = dm::Tensor::from({k, 3}, std::vector<double>(k * 3, 0.5));
    fb.features = dm::Tensor::from({k, 3}, std::vector<double>(k * 3, -2.0));
    PairSet ps;
    for (std::size_t i = 0; i < k; ++i) ps.pairs.emplace_back(i, k - 1 - i);
    EXPECT_NEAR(local_infonce(nullptr, fa, fb, ps, 0.07).item(), std::log(double(k)), 1e-9);
  }
}

TEST(LocalInfoNce, MatchesDirectComputation) {
  const FeatureSet fa = random_features(12, 5, 1), fb = random_features(9, 5, 2);
  PairSet ps;
  ps.pairs = {{0, 3}, {2, 1}, {5, 8}, {7, 0}, {11, 4}};
  const double tau = 0.07;
  auto row = [](const FeatureSet& f, std::size_t r) {
    std::vector<double> v(5);
    double n = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      v[c] = f.features[r * 5 + c];
      n += v[c] * v[c];
    }
    for (double& x : v) x /= std::sqrt(n);
    return v;
  };
  double expect = 0.0;
  for (const auto& [i, j] : ps.pairs) {
    const auto a = row(fa, i);
    double num = 0.0, den = 0.0;
    for (const auto& [i2, j2] : ps.pairs) {
      const auto b = row(fb, j2);
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += a[c] * b[c];
      den += std::exp(s / tau);
      if (j2 == j) num = std::exp(s / tau);
      (void)i2;
    }
    expect += -std::log(num / den);
  }
  expect /= double(ps.size());
  EXPECT_NEAR(local_infonce(nullptr, fa, fb, ps, tau).item(), expect, 1e-10);
}

TEST(LocalInfoNce, CapUsesSubsetAndFewPairsAreDegenerate) {
  const FeatureSet fa = random_features(20, 4, 3), fb = random_features(20, 4, 4);
  PairSet ps;
  for (std::size_t i = 0; i < 20; ++i) ps.pairs.emplace_back(i, i);
  PairSet sub;
  sub.pairs = cap_pairs(ps, 5);
  EXPECT_EQ(local_infonce(nullptr, fa, fb, ps, 0.1, 5).item(), local_infonce(nullptr, fa, fb, sub, 0.1).item());
  PairSet one;
  one.pairs = {{0, 0}};
  EXPECT_THROW(local_infonce(nullptr, fa, fb, one, 0.1), DegenerateError);
}

TEST(GlobalInfoNce, OrthogonalBankClosedForm) {
  const double tau = 0.07;
  for (std::size_t filled : {1u, 3u, 7u}) {
    MemoryBank bank(8, 8);
    for (std::size_t i = 1; i <= filled; ++i) bank.enqueue(unit(8, i));
    const dm::Tensor q = dm::Tensor::from({8}, unit(8, 0));
    const double expect = -std::log(std::exp(1.0 / tau) / (std::exp(1.0 / tau) + double(filled)));
    EXPECT_NEAR(global_infonce(nullptr, q, unit(8, 0), bank, tau).item(), expect, 1e-9);
  }
}

TEST(GlobalInfoNce, MatchesDirectComputation) {
  Rng rng(5);
  MemoryBank bank(6, 4);
  for (int i = 0; i < 9; ++i) bank.enqueue(random_unit(4, rng));
  const auto qv = random_unit(4, rng), k = random_unit(4, rng);
  const double tau = 0.2;
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double den = std::exp(dot(qv, k) / tau);
  const double num = den;
  for (std::size_t i = 0; i < bank.filled(); ++i) den += std::exp(dot(qv, bank.row(i)) / tau);
  const dm::Tensor q = dm::Tensor::from({4}, qv);
  EXPECT_NEAR(global_infonce(nullptr, q, k, bank, tau).item(), -std::log(num / den), 1e-12);
}

TEST(GlobalInfoNce, OnlyQueryReceivesGradient) {
  Rng rng(6);
  MemoryBank bank(4, 3);
  bank.enqueue(random_unit(3, rng));
  const std::vector<double> before = bank.storage();
  const dm::Tensor q = dm::Tensor::from({3}, random_unit(3, rng), true);
  dm::Tape tape;
  tape.backward(global_infonce(&tape, q, random_unit(3, rng), bank, 0.07));
  EXPECT_TRUE(tape.has_grad(q));
  EXPECT_EQ(bank.storage(), before);
}

TEST(GlobalInfoNce, Errors) {
  MemoryBank bank(4, 3);
  const dm::Tensor q = dm::Tensor::from({3}, unit(3, 0));
  EXPECT_THROW(global_infonce(nullptr, q, unit(3, 0), bank, 0.07), DegenerateError);
  bank.enqueue(unit(3, 1));
  EXPECT_THROW(global_infonce(nullptr, q, unit(4, 0), bank, 0.07), ShapeError);
}

TEST(TotalLoss, QuarterOfSumExactly) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(0, 5), b = rng.uniform(0, 5), c = rng.uniform(0, 5), d = rng.uniform(0, 5);
    EXPECT_EQ(total_loss(a, b, c, d), 0.25 * (a + b + c + d));
    const dm::Tensor t = total_loss(nullptr, dm::Tensor::scalar(a), dm::Tensor::scalar(b), dm::Tensor::scalar(c),
                                    dm::Tensor::scalar(d));
    EXPECT_NEAR(t.item(), 0.25 * (a + b + c + d), 1e-15);
  }
}

TEST(MemoryBank, FifoMatchesReferenceQueue) {
  Rng rng(8);
  const std::size_t cap = 37, dim = 5;
  MemoryBank bank(cap, dim);
  std::deque<std::vector<double>> model;
  for (int op = 0; op < 10000; ++op) {
    const std::size_t n = rng.range(1, 3);
    std::vector<std::vector<double>> keys;
    for (std::size_t i = 0; i < n; ++i) keys.push_back(random_unit(dim, rng));
    bank.enqueue(keys);
    for (auto& k : keys) {
      model.push_back(k);
      if (model.size() > cap) model.pop_front();
    }
    ASSERT_EQ(bank.filled(), model.size());
    if (op % 97 != 0 && op != 9999) continue;
    // Oldest row sits at the cursor once the bank has wrapped.
    const std::size_t oldest = bank.filled() < cap ? 0 : bank.cursor();
    for (std::size_t age = 0; age < model.size(); ++age) {
      EXPECT_EQ(bank.row((oldest + age) % cap), model[age]);
    }
  }
  for (std::size_t i = 0; i < bank.filled(); ++i) {
    double n = 0.0;
    for (double x : bank.row(i)) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(MemoryBank, RejectsBadKeys) {
  MemoryBank bank(3, 2);
  EXPECT_THROW(bank.enqueue(std::vector<double>{1.0, 0.0, 0.0}), ContractError);
  EXPECT_THROW(bank.enqueue(std::vector<double>{1.0, 1.0}), ContractError);
  EXPECT_THROW(bank.row(0), ContractError);
  EXPECT_THROW(MemoryBank(0, 2), ConfigError);
}

class EmaTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(9);
    EncoderConfig cfg;
    cfg.head_hidden = 6;
    cfg.embed_dim = 4;
    cfg.feature_dim = 5;
    source_ = make_projection_head(cfg, rng);
    mirror_ = make_projection_head(cfg, rng);
  }
  ParamSet source_, mirror_;
};

TEST_F(EmaTest, ZeroMomentumCopies) {
  ema_update(mirror_, source_, 0.0);
  for (std::size_t i = 0; i < source_.tensors.size(); ++i) {
    EXPECT_EQ(mirror_.tensors[i].second.values(), source_.tensors[i].second.values());
  }
}

TEST_F(EmaTest, UnitMomentumFreezes) {
  const ParamSet before = mirror_.mirror();
  ema_update(mirror_, source_, 1.0);
  for (std::size_t i = 0; i < source_.tensors.size(); ++i) {
    EXPECT_EQ(mirror_.tensors[i].second.values(), before.tensors[i].second.values());
  }
}

TEST_F(EmaTest, GeometricConvergenceOverHundredSteps) {
  for (double m : {0.9, 0.999}) {
    ParamSet mirror = mirror_.mirror();
    const ParamSet start = mirror_.mirror();
    for (int t = 1; t <= 100; ++t) {
      ema_update(mirror, source_, m);
      const double decay = std::pow(m, t);
      for (std::size_t i = 0; i < source_.tensors.size(); ++i) {
        const auto& s = source_.tensors[i].second;
        const auto& m0 = start.tensors[i].second;
        const auto& mt = mirror.tensors[i].second;
        for (std::size_t k = 0; k < s.size(); ++k) {
          ASSERT_NEAR(mt[k] - s[k], decay * (m0[k] - s[k]), 1e-12);
        }
      }
    }
  }
}

TEST_F(EmaTest, MismatchedSetsAreContractErrors) {
  ParamSet other;
  other.add("fc1.w", dm::Tensor::zeros({1}));
  EXPECT_THROW(ema_update(other, source_, 0.5), ContractError);
}

}  // namespace
}  // namespace uc3d
