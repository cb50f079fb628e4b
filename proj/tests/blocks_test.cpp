#include "gupdm/blocks.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gupdm/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace gupdm;
using testsupport::check_gradients;
using testsupport::conv2d_oracle;
using testsupport::max_abs_diff;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

}  // namespace

TEST(DynamicConv, RejectsTooFewKernels) {
  Rng rng(1);
  EXPECT_THROW(DynamicConv(3, 4, 3, 1, 4, rng), ConfigError);
}

TEST(DynamicConv, AttentionIsSimplex) {
  Rng rng(2);
  DynamicConv dc(3, 8, 3, 4, 4, rng);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor pi = dc.attention(x);
    for (int n = 0; n < 2; ++n) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double v = pi.data()[n * 4 + k];
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(DynamicConv, IdenticalKernelsCollapseToPlainConv) {
  Rng rng(3);
  DynamicConv dc(2, 3, 3, 4, 4, rng);
  for (int k = 1; k < 4; ++k) {
    dc.kernels[static_cast<size_t>(k)] = dc.kernels[0].clone();
    dc.biases[static_cast<size_t>(k)] = dc.biases[0].clone();
  }
  fill_uniform(dc.biases[0], rng, -0.3, 0.3);
  for (int k = 1; k < 4; ++k) dc.biases[static_cast<size_t>(k)] = dc.biases[0].clone();
  Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tensor got = dc.forward(x);
  Tensor want = conv2d_oracle(x, dc.kernels[0], dc.biases[0], 1, 1);
  EXPECT_LE(max_abs_diff(got, want), 1e-10);
}

TEST(DynamicConv, OneHotAttentionSelectsSingleKernel) {
  Rng rng(4);
  DynamicConv dc(1, 2, 3, 3, 4, rng);
  // force logits to a huge spike on kernel 1
  std::fill(dc.attn_w2.vec().begin(), dc.attn_w2.vec().end(), 0.0);
  dc.attn_b2.data()[0] = 0.0;
  dc.attn_b2.data()[1] = 120.0;
  dc.attn_b2.data()[2] = 0.0;
  Tensor x = random_tensor({1, 1, 4, 4}, rng);
  Tensor got = dc.forward(x);
  Tensor want = conv2d_oracle(x, dc.kernels[1], dc.biases[1], 1, 1);
  EXPECT_LE(max_abs_diff(got, want), 1e-10);
}

TEST(DynamicConv, UniformAttentionAveragesKernels) {
  Rng rng(5);
  DynamicConv dc(1, 1, 3, 2, 4, rng);
  // zero attention net -> equal logits -> uniform mixing
  std::fill(dc.attn_w1.vec().begin(), dc.attn_w1.vec().end(), 0.0);
  std::fill(dc.attn_w2.vec().begin(), dc.attn_w2.vec().end(), 0.0);
  dc.kernels[0] = Tensor::from_vector({1, 1, 3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 1});
  dc.kernels[1] = Tensor::from_vector({1, 1, 3, 3}, {0, 1, 0, 1, 0, 1, 0, 1, 0});
  dc.biases[0] = Tensor::from_vector({1}, {0.5});
  dc.biases[1] = Tensor::from_vector({1}, {-0.5});
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor avg_w({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i)
    avg_w.data()[i] = 0.5 * (dc.kernels[0].data()[i] + dc.kernels[1].data()[i]);
  Tensor avg_b({1}, 0.0);
  Tensor want = conv2d_oracle(x, avg_w, avg_b, 1, 1);
  Tensor got = dc.forward(x);
  EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(DynamicConv, GradientsFlowThroughAttentionAndKernels) {
  Rng rng(6);
  DynamicConv dc(1, 1, 3, 2, 4, rng);
  Tensor x = random_tensor({1, 1, 4, 4}, rng);
  std::vector<Tensor> leaves = {x, dc.kernels[0], dc.kernels[1], dc.biases[0],
                                dc.attn_w1, dc.attn_w2, dc.attn_b2};
  auto res = check_gradients([&]() { return sum(square(dc.forward(x))); }, leaves);
  EXPECT_TRUE(res.ok) << res.detail;
}

TEST(HyperResBlock, ZeroGeneratorIsBitwiseIdentity) {
  Rng rng(7);
  HyperResBlock hrb(2, 4, 3, rng);
  hrb.zero_generator();
  Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tensor cond = random_tensor({2, 4}, rng);
  Tensor y = hrb.forward(x, cond);
  ASSERT_EQ(y.numel(), x.numel());
  EXPECT_EQ(0, std::memcmp(y.data(), x.data(), sizeof(double) * static_cast<size_t>(x.numel())));
}

TEST(HyperResBlock, ZeroConditioningWithZeroBiasIsIdentity) {
  Rng rng(8);
  HyperResBlock hrb(2, 4, 3, rng);
  std::fill(hrb.fc_b.vec().begin(), hrb.fc_b.vec().end(), 0.0);
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor cond({1, 4}, 0.0);
  Tensor y = hrb.forward(x, cond);
  EXPECT_EQ(0, std::memcmp(y.data(), x.data(), sizeof(double) * static_cast<size_t>(x.numel())));
}

TEST(HyperResBlock, HandSetOnesKernels) {
  // 1x1 generated convs, conditioning of length 1; fc maps cond=2 to
  // w1=1,b1=0,w2=1,b2=0, so y = x + relu(x).
  Rng rng(9);
  HyperResBlock hrb(1, 1, 1, rng);
  hrb.fc_w.vec() = {0.5, 0.0, 0.5, 0.0};  // layout [w1|b1|w2|b2]
  std::fill(hrb.fc_b.vec().begin(), hrb.fc_b.vec().end(), 0.0);
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1.0, -2.0, 3.0, -4.0});
  Tensor cond = Tensor::from_vector({1, 1}, {2.0});
  Tensor y = hrb.forward(x, cond);
  const double want[4] = {2.0, -2.0, 6.0, -4.0};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.data()[i], want[i]);
}

TEST(HyperResBlock, ConditioningLengthMismatchRejected) {
  Rng rng(10);
  HyperResBlock hrb(2, 4, 3, rng);
  Tensor x({1, 2, 4, 4}, 0.1);
  Tensor cond({1, 5}, 0.0);
  EXPECT_THROW(hrb.forward(x, cond), ShapeError);
}

TEST(HyperResBlock, GradientsReachInputCondAndGenerator) {
  Rng rng(11);
  HyperResBlock hrb(1, 2, 3, rng);
  Tensor x = random_tensor({1, 1, 4, 4}, rng);
  Tensor cond = random_tensor({1, 2}, rng);
  auto res = check_gradients([&]() { return sum(square(hrb.forward(x, cond))); },
                             {x, cond, hrb.fc_w, hrb.fc_b});
  EXPECT_TRUE(res.ok) << res.detail;
}

TEST(HyperResBlock, StaticModeRunsWithoutConditioning) {
  Rng rng(12);
  HyperResBlock hrb(2, 4, 3, rng, false);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor cond;  // ignored
  Tensor y = hrb.forward(x, cond);
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(MultiScaleBlock, ZeroInputZeroBiasGivesZero) {
  Rng rng(13);
  MultiScaleBlock mfe(4, 4, rng);
  Tensor x({1, 4, 6, 6}, 0.0);
  Tensor y = mfe.forward(x);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.0);
}

TEST(MultiScaleBlock, BranchCollapseWithSaturatedAttention) {
  Rng rng(14);
  MultiScaleBlock mfe(2, 4, rng);
  // embed the 1x1 kernels at the center of the 3x3 and 5x5 branches
  std::fill(mfe.w3.vec().begin(), mfe.w3.vec().end(), 0.0);
  std::fill(mfe.w5.vec().begin(), mfe.w5.vec().end(), 0.0);
  for (int o = 0; o < 2; ++o)
    for (int c = 0; c < 2; ++c) {
      const double v = mfe.w1.data()[o * 2 + c];
      mfe.w3.data()[((o * 2 + c) * 3 + 1) * 3 + 1] = v;
      mfe.w5.data()[((o * 2 + c) * 5 + 2) * 5 + 2] = v;
    }
  mfe.b3 = mfe.b1.clone();
  mfe.b5 = mfe.b1.clone();
  // saturate the attention at 1
  std::fill(mfe.attn_w2.vec().begin(), mfe.attn_w2.vec().end(), 0.0);
  std::fill(mfe.attn_b2.vec().begin(), mfe.attn_b2.vec().end(), 120.0);
  Tensor x = random_tensor({1, 2, 6, 6}, rng);
  Tensor f1 = relu(conv2d(x, mfe.w1, mfe.b1, 1, 0));
  Tensor want = relu(conv2d(f1, mfe.fuse_w, mfe.fuse_b, 1, 0));
  Tensor got = mfe.forward(x);
  EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(MultiScaleBlock, ShapePreservedAndSmallInputRejected) {
  Rng rng(15);
  MultiScaleBlock mfe(3, 4, rng);
  for (int hw : {5, 6, 9}) {
    Tensor x = random_tensor({1, 3, hw, hw}, rng);
    EXPECT_EQ(mfe.forward(x).shape(), x.shape());
  }
  Tensor tiny({1, 3, 4, 4}, 0.1);
  EXPECT_THROW(mfe.forward(tiny), ShapeError);
}

TEST(MultiScaleBlock, GradientCheck) {
  Rng rng(16);
  MultiScaleBlock mfe(2, 4, rng);
  Tensor x = random_tensor({1, 2, 8, 8}, rng);
  auto res = check_gradients([&]() { return sum(square(mfe.forward(x))); },
                             {x, mfe.w1, mfe.w3, mfe.w5, mfe.attn_w1, mfe.attn_w2,
                              mfe.fuse_w, mfe.fuse_b});
  EXPECT_TRUE(res.ok) << res.detail;
}

TEST(TransmissionGate, NeutralAndDoubling) {
  Rng rng(17);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  Tensor zero({1, 1, 4, 4}, 0.0);
  Tensor y0 = transmission_gate(x, zero);
  EXPECT_EQ(0, std::memcmp(y0.data(), x.data(), sizeof(double) * static_cast<size_t>(x.numel())));
  Tensor one({1, 1, 4, 4}, 1.0);
  Tensor y1 = transmission_gate(x, one);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(y1.data()[i], 2.0 * x.data()[i]);
}

TEST(TransmissionGate, MatchesElementwiseOracle) {
  Rng rng(18);
  Tensor x = random_tensor({2, 3, 3, 3}, rng);
  Tensor m = random_tensor({2, 1, 3, 3}, rng);
  Tensor y = transmission_gate(x, m);
  const std::int64_t plane = 9;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (std::int64_t j = 0; j < plane; ++j) {
        const double xv = x.data()[(n * 3 + c) * plane + j];
        const double mv = m.data()[n * plane + j];
        EXPECT_DOUBLE_EQ(y.data()[(n * 3 + c) * plane + j], xv + xv * mv);
      }
  Tensor bad({2, 1, 4, 4}, 0.0);
  EXPECT_THROW(transmission_gate(x, bad), ShapeError);
}

TEST(TransmissionGate, GradientCheck) {
  Rng rng(19);
  Tensor x = random_tensor({1, 2, 3, 3}, rng);
  Tensor m = random_tensor({1, 1, 3, 3}, rng);
  auto res = check_gradients([&]() { return sum(square(transmission_gate(x, m))); }, {x, m});
  EXPECT_TRUE(res.ok) << res.detail;
}
