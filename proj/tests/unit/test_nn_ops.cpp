#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xvol/nn_ops.hpp"
#include "xvol/random.hpp"

using namespace xvol;
using testutil::near;

namespace {

ConvKernel random_kernel(Rng& rng, int co, int ci, int k, int dil = 1, bool zero_bias = false) {
  return ConvKernel::same(rng.normal_tensor(Dims{co, ci, k, k}, 0.5),
                          zero_bias ? std::vector<float>(static_cast<std::size_t>(co), 0.0f)
                                    : rng.normal_vector(co, 0.0, 0.5),
                          dil);
}

BatchNormParams random_bn(Rng& rng, int c) {
  BatchNormParams bn;
  bn.gamma = rng.uniform_vector(c, 0.5, 1.5);
  bn.beta = rng.normal_vector(c, 0.0, 0.3);
  bn.mean = rng.normal_vector(c, 0.0, 0.3);
  bn.var = rng.uniform_vector(c, 0.3, 2.0);
  return bn;
}

AttentionParams random_attn(Rng& rng, int ce, int ci) {
  return {rng.normal_tensor(Dims{ce, ci, 1, 1}, 0.6), rng.normal_tensor(Dims{ce, ci, 1, 1}, 0.6),
          rng.normal_tensor(Dims{ce, ci, 1, 1}, 0.6)};
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST(Conv2d, OneByOneUnitKernelIsIdentity) {
  Rng rng(1);
  const auto x = rng.normal_tensor(Dims{2, 1, 5, 4});
  const auto k = ConvKernel::same(Tensor4::ones(Dims{1, 1, 1, 1}), {0.0f});
  EXPECT_EQ(conv2d(x, k), x);
}

TEST(Conv2d, ZeroInputGivesBias) {
  Rng rng(2);
  const auto k = random_kernel(rng, 3, 2, 3);
  const auto y = conv2d(Tensor4(Dims{1, 2, 5, 5}), k);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 25; ++i) EXPECT_EQ(y.plane(0, o)[i], k.bias[o]);
}

TEST(Conv2d, MatchesLiteralOracle) {
  Rng rng(3);
  const auto x = rng.normal_tensor(Dims{1, 2, 5, 5});
  const auto k = random_kernel(rng, 3, 2, 3);
  EXPECT_TRUE(near(conv2d(x, k), oracle::conv(x, k), 1e-5));
}

TEST(Conv2d, MatchesOracleAcrossStrideDilationPadding) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 2 * rng.uniform_int(0, 2) + 1;
    ConvKernel kern = random_kernel(rng, rng.uniform_int(1, 3), rng.uniform_int(1, 3), k, rng.uniform_int(1, 2));
    kern.stride = rng.uniform_int(1, 3);
    kern.padding = rng.uniform_int(0, kern.dilation * (k / 2) + 1);
    const int side = kern.extent() + rng.uniform_int(0, 6);
    const auto x = rng.normal_tensor(Dims{rng.uniform_int(1, 2), kern.c_in(), side, side + 1});
    EXPECT_TRUE(near(conv2d(x, kern), oracle::conv(x, kern), 1e-5)) << "trial " << trial;
  }
}

TEST(Conv2d, RejectsBadArguments) {
  Rng rng(5);
  const auto k = random_kernel(rng, 2, 3, 3);
  EXPECT_THROW(conv2d(Tensor4(Dims{1, 2, 5, 5}), k), DomainError);
  ConvKernel even{Tensor4(Dims{1, 1, 2, 2}), {0.0f}};
  EXPECT_THROW(even.validate(), DomainError);
  EXPECT_THROW(conv2d(Tensor4(Dims{1, 1, 5, 5}), even), DomainError);
  ConvKernel no_pad = random_kernel(rng, 1, 1, 5);
  no_pad.padding = 0;
  EXPECT_THROW(conv2d(Tensor4(Dims{1, 1, 3, 3}), no_pad), DomainError);
}

TEST(Conv2d, IsLinearWithoutBias) {
  Rng rng(6);
  const auto k = random_kernel(rng, 3, 2, 3, 2, true);
  const auto x = rng.normal_tensor(Dims{1, 2, 9, 9});
  const auto y = rng.normal_tensor(x.dims());
  const double a = 0.7, b = -1.3;
  const auto lhs = conv2d(add(scale(x, a), scale(y, b)), k);
  const auto rhs = add(scale(conv2d(x, k), a), scale(conv2d(y, k), b));
  EXPECT_TRUE(near(lhs, rhs, 1e-5));
}

TEST(Conv2d, TranslationEquivariantOnInterior) {
  Rng rng(7);
  const auto k = random_kernel(rng, 2, 2, 3);
  const auto x = rng.normal_tensor(Dims{1, 2, 12, 12});
  const ShiftOffset d{2, -1};
  const auto a = conv2d(shift2d(x, d), k);
  const auto b = shift2d(conv2d(x, k), d);
  // Positions whose receptive field stays inside both the shifted and original image.
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j) {
        const int si = i - d.dy, sj = j - d.dx;
        if (si < 1 || si > 10 || sj < 1 || sj > 10 || i < 1 || i > 10 || j < 1 || j > 10) continue;
        if (i - 1 - d.dy < 0 || i + 1 - d.dy > 11 || j - 1 - d.dx < 0 || j + 1 - d.dx > 11) continue;
        EXPECT_LE(testutil::ulp_distance(a(0, o, i, j), b(0, o, i, j)), 4) << i << "," << j;
      }
}

// ---------------------------------------------------------------------------
// batchnorm and folding
// ---------------------------------------------------------------------------

TEST(BatchNorm, IdentityParamsPreserveInput) {
  Rng rng(8);
  const auto x = rng.normal_tensor(Dims{2, 3, 4, 4});
  EXPECT_TRUE(near(batchnorm(x, BatchNormParams::identity(3)), x, 1e-6));
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(9);
  auto bn = random_bn(rng, 2);
  bn.gamma = {0.0f, 0.0f};
  const auto y = batchnorm(rng.normal_tensor(Dims{1, 2, 3, 3}), bn);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i) EXPECT_EQ(y.plane(0, c)[i], bn.beta[c]);
}

TEST(BatchNorm, MatchesScalarOracle) {
  Rng rng(10);
  const auto bn = random_bn(rng, 4);
  const auto x = rng.normal_tensor(Dims{2, 4, 5, 5});
  EXPECT_TRUE(near(batchnorm(x, bn), oracle::bn(x, bn), 1e-6));
  EXPECT_THROW(batchnorm(Tensor4(Dims{1, 3, 2, 2}), bn), DomainError);
}

TEST(FoldBn, IdentityBnLeavesKernelUnchanged) {
  Rng rng(11);
  const auto k = random_kernel(rng, 3, 2, 3);
  const auto f = fold_bn_into_conv(k, BatchNormParams::identity(3));
  EXPECT_TRUE(near(f.weight, k.weight, 1e-7));
  for (int o = 0; o < 3; ++o) EXPECT_NEAR(f.bias[o], k.bias[o], 1e-7);
}

TEST(FoldBn, ZeroGammaZeroesWeights) {
  Rng rng(12);
  const auto k = random_kernel(rng, 2, 2, 3);
  auto bn = random_bn(rng, 2);
  bn.gamma = {0.0f, 0.0f};
  const auto f = fold_bn_into_conv(k, bn);
  for (float w : f.weight.data()) EXPECT_EQ(w, 0.0f);
  EXPECT_EQ(f.bias, bn.beta);
}

TEST(FoldBn, MatchesSequentialOnRandomInputs) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = random_kernel(rng, 3, 4, 2 * rng.uniform_int(0, 2) + 1, rng.uniform_int(1, 2));
    const auto bn = random_bn(rng, 3);
    const auto x = rng.normal_tensor(Dims{1, 4, 8, 8});
    EXPECT_TRUE(near(conv2d(x, fold_bn_into_conv(k, bn)), batchnorm(conv2d(x, k), bn), 1e-5));
  }
  EXPECT_THROW(fold_bn_into_conv(random_kernel(rng, 3, 1, 3), random_bn(rng, 2)), DomainError);
}

// ---------------------------------------------------------------------------
// softmax and exact attention
// ---------------------------------------------------------------------------

TEST(Softmax, EqualRowIsUniformAndLargeLimit) {
  Matrix m(2, 4, 3.0f);
  m(1, 0) = 0.0f;
  m(1, 1) = 1000.0f;
  m(1, 2) = 0.0f;
  m(1, 3) = 0.0f;
  const auto s = softmax_rows(m);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(s(0, j), 0.25, 1e-7);
  EXPECT_NEAR(s(1, 1), 1.0, 1e-7);
  EXPECT_NEAR(s(1, 0), 0.0, 1e-7);
}

TEST(Softmax, MatchesOracleSumsToOneAndShiftInvariant) {
  Rng rng(14);
  Matrix m(5, 7);
  for (auto& v : m.data) v = static_cast<float>(rng.normal(0.0, 3.0));
  const auto s = softmax_rows(m);
  Matrix shifted = m;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) shifted(r, c) += static_cast<float>(r * 2.5 - 4.0);
  const auto s2 = softmax_rows(shifted);
  for (int r = 0; r < 5; ++r) {
    double mx = -1e300, z = 0.0, total = 0.0;
    for (int c = 0; c < 7; ++c) mx = std::max(mx, static_cast<double>(m(r, c)));
    for (int c = 0; c < 7; ++c) z += std::exp(m(r, c) - mx);
    int arg_in = 0, arg_out = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_NEAR(s(r, c), std::exp(m(r, c) - mx) / z, 1e-7);
      EXPECT_NEAR(s2(r, c), s(r, c), 1e-6);
      total += s(r, c);
      if (m(r, c) > m(r, arg_in)) arg_in = c;
      if (s(r, c) > s(r, arg_out)) arg_out = c;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_EQ(arg_in, arg_out);
  }
}

TEST(SelfAttention, SinglePixelReturnsValue) {
  Rng rng(15);
  const auto p = random_attn(rng, 3, 2);
  const auto x = rng.normal_tensor(Dims{1, 2, 1, 1});
  EXPECT_TRUE(near(self_attention_exact(x, p), embed_1x1(x, p.wv), 1e-6));
}

TEST(SelfAttention, ConstantImageGivesValueEverywhere) {
  Rng rng(16);
  const auto p = random_attn(rng, 2, 3);
  Tensor4 x(Dims{1, 3, 4, 5});
  for (int c = 0; c < 3; ++c) std::fill_n(x.plane(0, c), 20, static_cast<float>(c - 1.3));
  EXPECT_TRUE(near(self_attention_exact(x, p), embed_1x1(x, p.wv), 1e-6));
}

TEST(SelfAttention, MatchesPairwiseOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_attn(rng, rng.uniform_int(1, 3), rng.uniform_int(1, 3));
    const auto x = rng.normal_tensor(Dims{rng.uniform_int(1, 2), p.c_in(), rng.uniform_int(1, 4), rng.uniform_int(1, 4)});
    EXPECT_TRUE(near(self_attention_exact(x, p), oracle::self_attention(x, p), 1e-5));
    AttentionOptions scaled{true};
    EXPECT_TRUE(near(self_attention_exact(x, p, scaled), oracle::self_attention(x, p, true), 1e-5));
  }
}

TEST(SelfAttention, PermutationEquivariant) {
  Rng rng(18);
  const auto p = random_attn(rng, 2, 2);
  const auto x = rng.normal_tensor(Dims{1, 2, 3, 4});
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const auto xm = to_matrix(x, 0);
  Matrix pm(xm.rows, xm.cols);
  for (int r = 0; r < xm.rows; ++r)
    for (int c = 0; c < xm.cols; ++c) pm(r, c) = xm(r, perm[static_cast<std::size_t>(c)]);
  const auto y = to_matrix(self_attention_exact(x, p), 0);
  const auto yp = to_matrix(self_attention_exact(from_matrix(pm, 3, 4), p), 0);
  for (int r = 0; r < y.rows; ++r)
    for (int c = 0; c < y.cols; ++c) EXPECT_NEAR(yp(r, c), y(r, perm[static_cast<std::size_t>(c)]), 1e-6);
}

TEST(SelfAttention, ChannelMismatchThrows) {
  Rng rng(19);
  EXPECT_THROW(self_attention_exact(Tensor4(Dims{1, 3, 2, 2}), random_attn(rng, 2, 2)), DomainError);
}

// ---------------------------------------------------------------------------
// dynamic_conv2d
// ---------------------------------------------------------------------------

namespace {

struct DynCase {
  Tensor4 x;
  DynamicKernelField field;
  ConvKernel sk;
  DynamicValue value;
  std::vector<float> bias;
};

DynCase random_dyn(Rng& rng, int groups_mode) {
  DynCase d;
  const int ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3), ce = rng.uniform_int(1, 3);
  const int h = rng.uniform_int(5, 8), w = rng.uniform_int(5, 8);
  d.x = rng.normal_tensor(Dims{rng.uniform_int(1, 2), ci, h, w});
  std::vector<ShiftOffset> offs{{0, 0}, {-1, 0}, {1, 1}, {0, -3}, {3, 3}, {-4, 2}};
  const int groups = groups_mode == 0 ? 1 : ce;
  d.field = DynamicKernelField(d.x.n(), h, w, groups, offs);
  for (auto& c : d.field.coeff) c = static_cast<float>(rng.normal());
  d.sk = ConvKernel::same(rng.normal_tensor(Dims{co, ci, 3, 3}, 0.4), rng.normal_vector(co, 0.0, 0.2),
                          rng.uniform_int(1, 2));
  d.value.wv = rng.normal_tensor(Dims{ce, ci, 1, 1}, 0.5);
  d.value.mix = rng.normal_tensor(Dims{static_cast<int>(offs.size()), co, ce, 1}, 0.5);
  d.bias = rng.normal_vector(co, 0.0, 0.3);
  return d;
}

}  // namespace

TEST(DynamicConv2d, ZeroFieldIsStaticConv) {
  Rng rng(20);
  auto d = random_dyn(rng, 0);
  std::fill(d.field.coeff.begin(), d.field.coeff.end(), 0.0f);
  std::vector<float> zero(d.bias.size(), 0.0f);
  EXPECT_TRUE(near(dynamic_conv2d(d.x, d.field, d.sk, d.value, zero), conv2d(d.x, d.sk), 1e-5));
}

TEST(DynamicConv2d, UnitCenterCoefficientReproducesInput) {
  Rng rng(21);
  const auto x = rng.normal_tensor(Dims{1, 2, 4, 4});
  DynamicKernelField f(1, 4, 4, 1, {{0, 0}});
  std::fill(f.coeff.begin(), f.coeff.end(), 1.0f);
  const auto sk = ConvKernel::zeros(2, 2, 3);
  DynamicValue v{Tensor4(Dims{2, 2, 1, 1}), Tensor4(Dims{1, 2, 2, 1})};
  for (int i = 0; i < 2; ++i) {
    v.wv(i, i, 0, 0) = 1.0f;
    v.mix(0, i, i, 0) = 1.0f;
  }
  EXPECT_EQ(dynamic_conv2d(x, f, sk, v, {0.0f, 0.0f}), x);
}

TEST(DynamicConv2d, MatchesPerPositionOracle) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = random_dyn(rng, trial % 2);
    EXPECT_TRUE(near(dynamic_conv2d(d.x, d.field, d.sk, d.value, d.bias),
                     oracle::dynamic_conv(d.x, d.field, d.sk, d.value, d.bias), 1e-5))
        << "trial " << trial;
  }
}

TEST(DynamicConv2d, RejectsMismatchedField) {
  Rng rng(23);
  auto d = random_dyn(rng, 0);
  DynamicKernelField wrong(d.x.n(), d.x.h() + 1, d.x.w(), 1, d.field.offsets);
  EXPECT_THROW(dynamic_conv2d(d.x, wrong, d.sk, d.value, d.bias), DomainError);
  auto strided = d.sk;
  strided.stride = 2;
  EXPECT_THROW(dynamic_conv2d(d.x, d.field, strided, d.value, d.bias), DomainError);
}
