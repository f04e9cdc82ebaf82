// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "clipforge/contrastive.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/grad_check.hpp"
#include "clipforge/ops.hpp"
#include "clipforge/tensor.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

namespace clipforge {
namespace {

using testing::random_tensor;
using testing::random_values;
using testing::weighted_sum;

constexpr double kGradTol = 1e-3;
constexpr int kSeeds = 10;

void expect_grad(const std::string& what, const std::function<Tensor(const Tensor&)>& f, const Shape& shape,
                 double scale = 1.0) {
  for (int s = 0; s < kSeeds; ++s) {
    const Tensor x = random_tensor(shape, 1000 + s, scale, true);
    const GradCheckResult r = grad_check(f, x);
    EXPECT_LT(r.max_relative_error, kGradTol) << what << " seed " << s;
  }
}

TEST(Matmul, HandExample) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{19, 22, 43, 50}));
}

TEST(Matmul, IdentityRightFactor) {
  for (std::size_t n : {1u, 3u, 7u, 17u}) {
    std::vector<float> eye(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0f;
    const Tensor a = random_tensor({n, n}, n);
    const Tensor c = matmul(a, Tensor::from({n, n}, eye));
    for (std::size_t i = 0; i < n * n; ++i) EXPECT_EQ(c.at(i), a.at(i));
  }
}

TEST(Matmul, AgreesWithTripleLoopOnRandomShapes) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(32), k = 1 + rng.below(32), n = 1 + rng.below(32);
    const auto av = random_values(m * k, 2 * trial), bv = random_values(k * n, 2 * trial + 1);
    const Tensor c = matmul(Tensor::from({m, k}, av), Tensor::from({k, n}, bv));
    const auto ref = testing::naive_matmul(av, bv, m, k, n);
    double scale = 0.0;
    for (double r : ref) scale = std::max(scale, std::abs(r));
    for (std::size_t i = 0; i < m * n; ++i)
      ASSERT_NEAR(c.at(i), ref[i], 1e-5 * std::max(1.0, scale)) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, RejectsIncompatibleShapes) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientOnSmallShape) {
  const Tensor b = random_tensor({4, 2}, 7);
  const Tensor a = random_tensor({3, 4}, 8);
  for (int s = 0; s < kSeeds; ++s) {
    EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, b), s); }, random_tensor({3, 4}, s, 1.0, true))
                  .max_relative_error,
              kGradTol);
    EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(matmul(a, x), s); }, random_tensor({4, 2}, s, 1.0, true))
                  .max_relative_error,
              kGradTol);
  }
}

TEST(LayerNorm, HandExample) {
  const Tensor y = layer_norm(Tensor::from({1, 3}, {1, 2, 3}), Tensor::full({3}, 1.0f), Tensor::zeros({3}), 0.0f);
  EXPECT_NEAR(y.at(0), -1.22474, 1e-5);
  EXPECT_NEAR(y.at(1), 0.0, 1e-6);
  EXPECT_NEAR(y.at(2), 1.22474, 1e-5);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = layer_norm(Tensor::full({2, 5}, 3.25f), Tensor::full({5}, 1.0f), Tensor::zeros({5}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, StandardizesRandomRows) {
  const Tensor y = layer_norm(random_tensor({2, 8}, 5, 3.0), Tensor::full({8}, 1.0f), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 2; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mu += y.at(r * 8 + j);
    mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (y.at(r * 8 + j) - mu) * (y.at(r * 8 + j) - mu);
    var /= 8;
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(Softmax, Examples) {
  const Tensor a = softmax_rows(Tensor::from({1, 2}, {0, 0}));
  EXPECT_FLOAT_EQ(a.at(0), 0.5f);
  EXPECT_FLOAT_EQ(a.at(1), 0.5f);
  const Tensor b = softmax_rows(Tensor::from({1, 2}, {static_cast<float>(std::log(2.0)), 0}));
  EXPECT_NEAR(b.at(0), 2.0 / 3.0, 1e-7);
  EXPECT_NEAR(b.at(1), 1.0 / 3.0, 1e-7);
  const Tensor c = softmax_rows(Tensor::from({1, 2}, {1000, 0}));
  EXPECT_EQ(c.at(0), 1.0f);
  EXPECT_TRUE(std::isfinite(c.at(1)));
  EXPECT_LT(c.at(1), 1e-30);
}

TEST(Softmax, RowsSumToOneIncludingLargeMagnitudes) {
  for (int s = 0; s < 20; ++s) {
    const Tensor x = random_tensor({6, 11}, s, s % 2 ? 1e3 : 1.0);
    const Tensor y = softmax_rows(x);
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 11; ++j) total += y.at(r * 11 + j);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SquareHasGradientTwoX) {
  const Tensor x = Tensor::from({1}, {3}, true);
  backward(sum(mul(x, x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, FanOutAccumulates) {
  const Tensor x = Tensor::from({1}, {1.5f}, true);
  backward(sum(add(x, x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  x.zero_grad();
  backward(sum(x));
  EXPECT_FLOAT_EQ(x.grad()[1], 1.0f);
}

TEST(Backward, TensorWithoutRequiresGradNeverAccumulates) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor c = Tensor::from({2}, {3, 4}, false);
  backward(sum(mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(c.grad().empty());
}

TEST(Backward, RejectsNonScalarRoot) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0f)), ContractError);
}

TEST(Backward, SharedSubexpressionEqualsUnrolledCopies) {
  // f = sum(h ⊙ h) + sum(exp(h)) with h = tanh-free composite used three times.
  const auto xv = random_values(12, 77);
  const Tensor w = random_tensor({4, 3}, 78);

  const Tensor x1 = Tensor::from({3, 4}, xv, true);
  const Tensor h = gelu(matmul(x1, w));
  backward(add(sum(mul(h, h)), sum(exp(scale(h, 0.5f)))));

  const Tensor x2 = Tensor::from({3, 4}, xv, true);
  const Tensor h1 = gelu(matmul(x2, w)), h2 = gelu(matmul(x2, w)), h3 = gelu(matmul(x2, w));
  backward(add(sum(mul(h1, h2)), sum(exp(scale(h3, 0.5f)))));

  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(x1.grad()[i], x2.grad()[i], 1e-6 * (1 + std::abs(x2.grad()[i])));
}

TEST(Graph, InputsPrecedeTheirConsumersAndRecordsAreUnique) {
  const Tensor x = random_tensor({3, 4}, 1, 1.0, true);
  const Tensor w = random_tensor({4, 4}, 2, 1.0, true);
  const Tensor h = gelu(linear(x, w));
  const Tensor root = sum(mul(softmax_rows(h), h));
  const Graph g = Graph::trace(root);
  std::set<const detail::TensorImpl*> produced;
  std::set<const detail::Node*> nodes;
  for (const auto& rec : g.records()) {
    for (const auto& in : rec.node->inputs)
      EXPECT_TRUE(in->node == nullptr || produced.count(in.get())) << rec.node->op;
    produced.insert(rec.output.get());
    EXPECT_TRUE(nodes.insert(rec.node).second);
  }
  EXPECT_EQ(g.records().back().output.get(), root.impl().get());
}

TEST(Tensor, ShapeAndDataInvariants) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<float>(5)), DimensionError);
  const Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  const Tensor x = random_tensor({2, 3}, 3, 1.0, true);
  backward(sum(scale(x, 2.0f)));
  EXPECT_EQ(x.grad().size(), x.numel());
}

// Central differences are exact on a quadratic, so only float32 rounding of f
// remains: about |f| * 2^-24 / 2e-3 against gradients of order 1.
TEST(GradCheck, QuadraticIsNearlyExact) {
  for (int s = 0; s < kSeeds; ++s) {
    const auto r = grad_check([](const Tensor& x) { return sum(mul(x, x)); }, random_tensor({7}, s, 1.0, true));
    EXPECT_LT(r.max_relative_error, 2e-4) << "seed " << s;
  }
}

TEST(GradCheck, LayerNormThenMean) {
  const Tensor g = random_tensor({6}, 90), b = random_tensor({6}, 91);
  expect_grad("layer_norm/mean", [&](const Tensor& x) { return mean(layer_norm(x, g, b)); }, {3, 6});
  // mean(layer_norm(x)) with unit gain is nearly constant in x; the weighted form has a non-trivial gradient.
  expect_grad("layer_norm", [&](const Tensor& x) { return weighted_sum(layer_norm(x, g, b), 3); }, {3, 6});
  const Tensor x0 = random_tensor({3, 6}, 92);
  expect_grad("layer_norm gain", [&](const Tensor& gg) { return weighted_sum(layer_norm(x0, gg, b), 4); }, {6});
  expect_grad("layer_norm bias", [&](const Tensor& bb) { return weighted_sum(layer_norm(x0, g, bb), 5); }, {6});
}

TEST(GradCheck, ContrastiveLossOnFourPairs) {
  for (int s = 0; s < kSeeds; ++s) {
    const Tensor txt_raw = random_tensor({4, 8}, 500 + s);
    const Tensor log_scale = Tensor::scalar(2.0f);
    auto f = [&](const Tensor& img_raw) {
      const EmbeddingOutput img{l2_normalize_rows(img_raw), true, 0};
      const EmbeddingOutput txt{l2_normalize_rows(txt_raw), true, 0};
      return clip_loss(similarity_logits(img, txt, LogitScale{log_scale, kDefaultMaxLogScale}));
    };
    EXPECT_LT(grad_check(f, random_tensor({4, 8}, 600 + s, 1.0, true)).max_relative_error, kGradTol) << "seed " << s;
  }
}

// One finite-difference check per differentiable op and per differentiable input.
TEST(GradCheck, EveryOp) {
  for (const auto& c : testing::op_grad_cases()) expect_grad(c.name, c.f, c.shape, c.scale);
}

TEST(Ops, DropPathIsIdentityOutsideTraining) {
  Rng rng(1);
  const Tensor x = random_tensor({4, 3}, 2);
  const Tensor y = drop_path(x, 0.5, rng, false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.at(i), y.at(i));
}

TEST(Ops, CausalMaskBlocksFuturePositions) {
  const Tensor y = causal_mask(Tensor::zeros({1, 3, 3}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (j > i)
        EXPECT_EQ(y.at(i * 3 + j), -std::numeric_limits<float>::infinity());
      else
        EXPECT_EQ(y.at(i * 3 + j), 0.0f);
    }
}

TEST(Ops, SplitAndMergeHeadsAreInverse) {
  const Tensor x = random_tensor({2, 5, 8}, 3);
  const Tensor y = merge_heads(split_heads(x, 4), 4);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.at(i), y.at(i));
}

TEST(Ops, NoGradGuardSuppressesRecording) {
  const Tensor x = random_tensor({2, 2}, 1, 1.0, true);
  NoGradGuard guard;
  const Tensor y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

}  // namespace
}  // namespace clipforge
