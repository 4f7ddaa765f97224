// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "uc3d/core/rng.hpp"
#include "uc3d/diffmath/checkpoint.hpp"
#include "uc3d/diffmath/gradcheck.hpp"
#include "uc3d/diffmath/ops.hpp"
#include "uc3d/gradcheck_suite.hpp"

namespace uc3d::dm {
namespace {

Tensor random(Shape s, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(shape_size(s));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(s), std::move(v), grad);
}

TEST(Tensor, FromChecksSize) {
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
  const Tensor t = Tensor::from({2}, {1.0, 2.0});
  EXPECT_THROW(static_cast<void>(t.item()), ContractError);
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
}

TEST(Tensor, CopiesAliasAndCloneDoesNot) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor b = a;
  Tensor c = a.clone();
  b.values()[0] = 5.0;
  EXPECT_EQ(a[0], 5.0);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_TRUE(a.same(b));
  EXPECT_FALSE(a.same(c));
}

TEST(Ops, MatmulMatchesTripleLoop) {
  const Tensor a = random({3, 4}, 1), b = random({4, 5}, 2);
  const Tensor c = matmul(nullptr, a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 5}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 5 + j];
      EXPECT_NEAR(c[i * 5 + j], s, 1e-14);
    }
  }
  EXPECT_THROW(matmul(nullptr, a, a), ShapeError);
}

TEST(Ops, Conv2dMatchesDirectLoops) {
  const std::size_t h = 7, w = 6, cin = 2, cout = 3, k = 3, stride = 2, pad = 1;
  const Tensor x = random({h, w, cin}, 3), wt = random({k, k, cin, cout}, 4), b = random({cout}, 5);
  const Tensor y = conv2d(nullptr, x, wt, b, stride, pad);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{ho, wo, cout}));
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t co = 0; co < cout; ++co) {
        double s = b[co];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long iy = long(oy * stride + ky) - long(pad), ix = long(ox * stride + kx) - long(pad);
            if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              s += x[(std::size_t(iy) * w + std::size_t(ix)) * cin + ci] * wt[((ky * k + kx) * cin + ci) * cout + co];
            }
          }
        }
        EXPECT_NEAR(y[(oy * wo + ox) * cout + co], s, 1e-13);
      }
    }
  }
}

TEST(Ops, Conv3dSingleVoxelKernelIsLinear) {
  const Tensor x = random({2, 3, 4, 2}, 6), wt = random({1, 1, 1, 2, 3}, 7);
  const Tensor y = conv3d(nullptr, x, wt, Tensor{}, 1, 0);
  const Tensor flat = reshape(nullptr, x, {24, 2});
  const Tensor ref = matmul(nullptr, flat, reshape(nullptr, wt, {2, 3}));
  ASSERT_EQ(y.size(), ref.size());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-14);
}

TEST(Ops, SoftmaxCrossEntropyMatchesDirectFormula) {
  const Tensor logits = random({3, 5}, 8);
  const std::vector<std::size_t> targets{0, 4, 2};
  double expect = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits[r * 5 + j]);
    expect += -std::log(std::exp(logits[r * 5 + targets[r]]) / z);
  }
  EXPECT_NEAR(softmax_cross_entropy(nullptr, logits, targets).item(), expect / 3.0, 1e-14);
}

TEST(Ops, SoftmaxCrossEntropyIsStableForLargeLogits) {
  const Tensor logits = Tensor::from({3}, {1000.0, 0.0, -1000.0});
  EXPECT_NEAR(softmax_cross_entropy(nullptr, logits, {0}).item(), 0.0, 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(nullptr, logits, {1}).item(), 1000.0, 1e-9);
  EXPECT_THROW(softmax_cross_entropy(nullptr, logits, {3}), ShapeError);
}

TEST(Ops, UniformLogitsGiveLogK) {
  for (std::size_t k : {2u, 7u, 64u}) {
    const Tensor logits = Tensor::from({k}, std::vector<double>(k, 0.3));
    EXPECT_NEAR(softmax_cross_entropy(nullptr, logits, {k - 1}).item(), std::log(double(k)), 1e-12);
  }
}

TEST(Ops, LayerNormStandardizesRows) {
  const Tensor a = random({4, 6}, 9);
  const Tensor y = layer_norm(nullptr, a, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 6; ++c) m += y[r * 6 + c];
    m /= 6;
    for (std::size_t c = 0; c < 6; ++c) v += (y[r * 6 + c] - m) * (y[r * 6 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 6, 1.0, 1e-12);
  }
}

TEST(Ops, L2NormalizeAlongEitherAxis) {
  const Tensor a = random({3, 4}, 10);
  const Tensor rows = l2_normalize(nullptr, a, 1), cols = l2_normalize(nullptr, a, 0);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += rows[r * 4 + c] * rows[r * 4 + c];
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 3; ++r) s += cols[r * 4 + c] * cols[r * 4 + c];
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  const Tensor zero = Tensor::zeros({1, 3});
  for (double x : l2_normalize(nullptr, zero, 1).values()) EXPECT_TRUE(std::isfinite(x));
}

TEST(Ops, PoolingAndGather) {
  const Tensor a = Tensor::from({4, 2}, {1, 8, 5, 2, 3, 3, 0, 9});
  EXPECT_EQ(group_max(nullptr, a, 2).values(), (std::vector<double>{5, 8, 3, 9}));
  EXPECT_EQ(max_pool_global(nullptr, a).values(), (std::vector<double>{5, 9}));
  EXPECT_EQ(gather(nullptr, a, {3, 0, 3}).values(), (std::vector<double>{0, 9, 1, 8, 0, 9}));
  EXPECT_THROW(group_max(nullptr, a, 3), ShapeError);
  EXPECT_THROW(gather(nullptr, a, {4}), ShapeError);
  const Tensor img = Tensor::from({2, 3, 1}, {1, 4, 2, 3, 0, 7});
  EXPECT_EQ(max_pool_2d(nullptr, img, 2).values(), (std::vector<double>{4}));
}

TEST(Ops, ConcatAlongAxes) {
  const Tensor a = Tensor::from({1, 2}, {1, 2}), b = Tensor::from({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(concat(nullptr, {a, b}, 0).values(), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  const Tensor c = Tensor::from({2, 1}, {7, 8});
  EXPECT_EQ(concat(nullptr, {b, c}, 1).values(), (std::vector<double>{3, 4, 7, 5, 6, 8}));
  EXPECT_THROW(concat(nullptr, {a, c}, 1), ShapeError);
}

TEST(Tape, BackwardOfSquaredNorm) {
  Tape tape;
  const Tensor x = random({5}, 11, true);
  const Tensor loss = sum(&tape, mul(&tape, x, x));
  tape.backward(loss);
  const auto* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ((*g)[i], 2.0 * x[i]);
}

TEST(Tape, ReusedInputAccumulates) {
  Tape tape;
  const Tensor x = Tensor::from({1}, {3.0}, true);
  const Tensor y = add(&tape, scale(&tape, x, 2.0), mul(&tape, x, x));
  tape.backward(sum(&tape, y));
  EXPECT_DOUBLE_EQ((*tape.grad(x))[0], 2.0 + 6.0);
}

TEST(Tape, NothingRecordedWithoutTapeOrGradInputs) {
  Tape tape;
  const Tensor a = random({2, 2}, 12), b = random({2, 2}, 13);
  const Tensor c = matmul(&tape, a, b);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(c.requires_grad());
  const Tensor g = random({2, 2}, 14, true);
  EXPECT_FALSE(matmul(nullptr, g, b).requires_grad());
}

TEST(Tape, BackwardContract) {
  Tape tape;
  const Tensor x = random({3}, 15, true);
  EXPECT_THROW(tape.backward(mul(&tape, x, x)), ContractError);
  const Tensor loss = sum(&tape, x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  Tape other;
  EXPECT_THROW(other.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Tape, UntouchedTensorHasNoGradient) {
  Tape tape;
  const Tensor x = random({3}, 16, true), y = random({3}, 17, true);
  tape.backward(sum(&tape, x));
  EXPECT_TRUE(tape.has_grad(x));
  EXPECT_FALSE(tape.has_grad(y));
}

TEST(GradCheck, DetectsAWrongGradient) {
  // x * stop(x) has true derivative 2x but the tape sees only one factor.
  const Tensor x = random({4}, 18, true);
  const auto f = [&](Tape* t) { return sum(t, mul(t, x, x.detach())); };
  const GradCheckResult r = check_gradients(f, {x});
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(GradCheck, PassesOnSmoothComposite) {
  const Tensor a = random({3, 4}, 19, true), b = random({4, 2}, 20, true);
  const auto f = [&](Tape* t) {
    return softmax_cross_entropy(t, l2_normalize(t, matmul(t, a, b), 1), {0, 1, 1});
  };
  const GradCheckResult r = check_gradients(f, {a, b});
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.checked, 20u);
}

TEST(GradientSuite, AllCasesPassOnTenSeedsWithinBudget) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = uc3d::run_gradient_suite(10);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) {
    EXPECT_EQ(r.seeds, 10u) << r.name;
    EXPECT_GT(r.checked, 0u) << r.name;
    EXPECT_LT(r.max_relative_error, 1e-4) << r.name;
  }
  EXPECT_LT(secs, 120.0);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = std::filesystem::temp_directory_path() / "uc3d_test_checkpoint.ckpt";
  }
  void TearDown() override { std::filesystem::remove(path_); }
  std::filesystem::path path_;
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const NamedTensors t{{"a", random({2, 3}, 21)}, {"b.w", random({4}, 22)}, {"s", Tensor::scalar(-0.0)}};
  const std::vector<char> first = serialize_checkpoint(t);
  const NamedTensors back = deserialize_checkpoint(first);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].first, t[i].first);
    EXPECT_EQ(back[i].second.shape(), t[i].second.shape());
    EXPECT_EQ(back[i].second.values(), t[i].second.values());
  }
  EXPECT_EQ(serialize_checkpoint(back), first);

  save_checkpoint(path_, t);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path_)), first);
}

TEST_F(CheckpointTest, CorruptDataIsIoError) {
  std::vector<char> buf = serialize_checkpoint({{"a", random({3}, 23)}});
  std::vector<char> truncated(buf.begin(), buf.end() - 5);
  EXPECT_THROW(deserialize_checkpoint(truncated), IoError);
  std::vector<char> bad_magic = buf;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), IoError);
  EXPECT_THROW(load_checkpoint(path_.string() + ".missing"), IoError);
}

}  // namespace
}  // namespace uc3d::dm
