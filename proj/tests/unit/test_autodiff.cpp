#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "xvol/layers.hpp"

using namespace xvol;
namespace ad = xvol::ad;
using testutil::near;

TEST(Backward, ScaleByThree) {
  Rng rng(1);
  ad::Tape t;
  const auto x = t.leaf(rng.normal_tensor(Dims{1, 2, 3, 3}));
  const auto y = ad::scale(t, x, 3.0);
  const auto g = rng.normal_tensor(Dims{1, 2, 3, 3});
  const auto grads = t.backward(y, g);
  EXPECT_TRUE(near(grads[x], scale(g, 3.0), 1e-6));
}

TEST(Backward, IdentityConvPassesGradientThrough) {
  Rng rng(2);
  ad::Tape t;
  const auto x = t.leaf(rng.normal_tensor(Dims{2, 1, 4, 5}));
  const auto w = t.leaf(Tensor4::ones(Dims{1, 1, 1, 1}));
  const auto y = ad::conv2d(t, x, w, std::nullopt, {});
  const auto g = rng.normal_tensor(Dims{2, 1, 4, 5});
  EXPECT_EQ(t.backward(y, g)[x], g);
}

TEST(Backward, OutGradShapeAndScalarChecks) {
  Rng rng(3);
  ad::Tape t;
  const auto x = t.leaf(rng.normal_tensor(Dims{1, 1, 2, 2}));
  const auto y = ad::relu(t, x);
  EXPECT_THROW(t.backward(y), DomainError);
  EXPECT_THROW(t.backward(y, Tensor4(Dims{1, 1, 2, 3})), DomainError);
}

TEST(Backward, ConstantLeavesGetNoGradient) {
  Rng rng(4);
  ad::Tape t;
  const auto a = t.leaf(rng.normal_tensor(Dims{1, 1, 2, 2}));
  const auto c = t.leaf(rng.normal_tensor(Dims{1, 1, 2, 2}), false);
  const auto g = t.backward(ad::sum_all(t, ad::hadamard(t, a, c)));
  EXPECT_TRUE(g.has(a));
  EXPECT_FALSE(g.has(c));
  EXPECT_TRUE(near(g[a], t.value(c), 0.0));
}

namespace {

// <A x, y> against <x, A^T y> where A^T comes from the tape.
template <class Build>
void expect_adjoint(Build build, Dims in_dims, Rng& rng) {
  ad::Tape t;
  const auto xv = rng.normal_tensor(in_dims);
  const auto x = t.leaf(xv);
  const auto out = build(t, x);
  const auto y = rng.normal_tensor(t.value(out).dims());
  const double lhs = dot(t.value(out), y);
  const double rhs = dot(xv, t.backward(out, y)[x]);
  EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(lhs)));
}

}  // namespace

TEST(Adjoint, ConvMatchesTranspose) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 * rng.uniform_int(0, 2) + 1;
    const ad::ConvAttrs attrs{rng.uniform_int(1, 2), rng.uniform_int(1, 2), rng.uniform_int(0, 3)};
    const auto w = rng.normal_tensor(Dims{2, 3, k, k});
    expect_adjoint([&](ad::Tape& t, ad::Var x) { return ad::conv2d(t, x, t.leaf(w, false), std::nullopt, attrs); },
                   Dims{2, 3, 9, 8}, rng);
  }
}

TEST(Adjoint, ShiftMatchesTranspose) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const ShiftOffset d{rng.uniform_int(-4, 4), rng.uniform_int(-4, 4)};
    expect_adjoint([&](ad::Tape& t, ad::Var x) { return ad::shift2d(t, x, d); }, Dims{1, 2, 7, 6}, rng);
  }
}

TEST(GradCheck, EveryOpWithinTolerance) {
  for (const auto& r : gradcheck::run_suite(5, 2024)) EXPECT_LE(r.worst, 1e-3) << r.op;
}

TEST(GradCheck, BiasBeforeBatchNormHasNoGradient) {
  Rng rng(13);
  const auto cfg = gradcheck::small_pssa(ProductMode::Reduce, MixMode::Learned);
  const auto p = random_xvolution(2, 2, 2, rng, cfg);
  ad::Tape t;
  const auto x = t.leaf(rng.normal_tensor(Dims{2, 2, 6, 6}));
  const auto pv = ad::record(t, p);
  const auto loss = gradcheck::weighted_loss(t, ad::xvolution_train_forward(t, x, pv, cfg, ad::BnMode::Batch), rng);
  const auto g = t.backward(loss);
  for (auto b : {*pv.conv3.bias, *pv.conv5d.bias, *pv.pssa.mix->bias}) EXPECT_LE(max_abs(g[b]), 1e-5);
  EXPECT_GT(max_abs(g[pv.conv3.weight]), 1e-2);
}

TEST(GradCheck, CatchesAWrongBackward) {
  ad::OpRegistry broken = ad::OpRegistry::standard();
  auto rule = broken.rule(ad::OpId::Scale);
  rule.backward = [](const ad::BackwardArgs& b) { return std::vector<Tensor4>{scale(b.out_grad, 2.0)}; };
  broken.set(ad::OpId::Scale, rule);
  Rng rng(7);
  ad::Tape t(broken);
  const auto x = t.leaf(rng.normal_tensor(Dims{1, 1, 3, 3}));
  const auto loss = gradcheck::weighted_loss(t, ad::scale(t, x, 3.0), rng);
  const ad::Var params[] = {x};
  EXPECT_GT(ad::check_gradients(t, loss, params)[0].rel_error, 0.1);
}

TEST(Tape, ReplayIsBitExact) {
  Rng rng(8);
  const auto cfg = gradcheck::small_pssa(ProductMode::Elementwise, MixMode::Learned);
  const auto p = random_xvolution(2, 2, 2, rng, cfg);
  ad::Tape t;
  const auto x = t.leaf(rng.normal_tensor(Dims{2, 2, 8, 8}));
  const auto pv = ad::record(t, p);
  const auto y = ad::xvolution_train_forward(t, x, pv, cfg, ad::BnMode::Batch);
  const Tensor4 before = t.value(y);
  t.replay();
  EXPECT_EQ(t.value(y), before);
  // Perturb and restore a leaf: replay returns to the original value exactly.
  const Tensor4 w = t.value(pv.conv3.weight);
  t.set_leaf(pv.conv3.weight, scale(w, 1.5));
  t.replay();
  EXPECT_FALSE(t.value(y) == before);
  t.set_leaf(pv.conv3.weight, w);
  t.replay();
  EXPECT_EQ(t.value(y), before);
}

TEST(Tape, TapeValuesMatchLibraryForwards) {
  Rng rng(9);
  for (auto product : {ProductMode::Elementwise, ProductMode::Reduce}) {
    auto cfg = gradcheck::small_pssa(product, MixMode::Learned);
    const auto p = random_xvolution(3, 2, 2, rng, cfg);
    const auto xv = rng.normal_tensor(Dims{1, 3, 8, 8});
    ad::Tape t;
    const auto x = t.leaf(xv);
    const auto y = ad::xvolution_train_forward(t, x, ad::record(t, p), cfg, ad::BnMode::Inference);
    EXPECT_TRUE(near(t.value(y), xvolution_train_forward(xv, p), 1e-5));
  }
  const AttentionParams ap{rng.normal_tensor(Dims{2, 3, 1, 1}), rng.normal_tensor(Dims{2, 3, 1, 1}),
                           rng.normal_tensor(Dims{2, 3, 1, 1})};
  const auto xv = rng.normal_tensor(Dims{2, 3, 3, 4});
  ad::Tape t;
  const auto y = ad::self_attention(t, t.leaf(xv), t.leaf(ap.wq), t.leaf(ap.wk), t.leaf(ap.wv));
  EXPECT_TRUE(near(t.value(y), self_attention_exact(xv, ap), 1e-6));
}

TEST(Tape, SetLeafRejectsComputedValues) {
  ad::Tape t;
  const auto x = t.leaf(Tensor4(Dims{1, 1, 2, 2}));
  const auto y = ad::relu(t, x);
  EXPECT_THROW(t.set_leaf(y, Tensor4(Dims{1, 1, 2, 2})), DomainError);
  EXPECT_FALSE(t.op(x).has_value());
  EXPECT_EQ(*t.op(y), ad::OpId::Relu);
  EXPECT_EQ(t.inputs(y), std::vector<ad::Var>{x});
}

TEST(Registry, EveryOpHasForwardAndBackward) {
  const auto& r = ad::OpRegistry::standard();
  for (int i = 0; i < static_cast<int>(ad::OpId::Count_); ++i) {
    const auto op = static_cast<ad::OpId>(i);
    EXPECT_NE(r.rule(op).forward, nullptr) << ad::op_name(op);
    EXPECT_NE(r.rule(op).backward, nullptr) << ad::op_name(op);
  }
}

TEST(Registry, UnregisteredBackwardIsHardError) {
  ad::OpRegistry reg = ad::OpRegistry::standard();
  reg.clear_backward(ad::OpId::Hadamard);
  Rng rng(10);
  ad::Tape t(reg);
  const auto a = t.leaf(rng.normal_tensor(Dims{1, 1, 2, 2}));
  const auto loss = ad::sum_all(t, ad::hadamard(t, a, a));
  EXPECT_THROW(t.backward(loss), std::logic_error);
}

// ---------------------------------------------------------------------------
// finite_diff
// ---------------------------------------------------------------------------

TEST(FiniteDiff, QuadraticMatchesAnalytic) {
  Rng rng(11);
  std::vector<float> theta(50);
  for (auto& v : theta) v = static_cast<float>(rng.normal());
  const auto fd = ad::finite_diff(
      [](std::span<const float> th) {
        double s = 0.0;
        for (float v : th) s += static_cast<double>(v) * v;
        return s;
      },
      theta);
  ASSERT_EQ(fd.coords.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(fd.grad[i], 2.0 * theta[fd.coords[i]], 1e-6);
}

TEST(FiniteDiff, LinearIsExact) {
  std::vector<float> theta{0.3f, -1.2f, 4.0f};
  const double a[] = {2.0, -0.5, 0.125};
  const auto fd = ad::finite_diff(
      [&](std::span<const float> th) { return a[0] * th[0] + a[1] * th[1] + a[2] * th[2]; }, theta);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fd.grad[i], a[i], 1e-12);
}

TEST(FiniteDiff, SamplesCoordinatesAboveLimit) {
  std::vector<float> theta(1000, 1.0f);
  const auto f = [](std::span<const float> th) {
    double s = 0.0;
    for (float v : th) s += v;
    return s;
  };
  const auto a = ad::finite_diff(f, theta, 1e-3, 200, 5);
  const auto b = ad::finite_diff(f, theta, 1e-3, 200, 5);
  EXPECT_EQ(a.coords.size(), 200u);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_TRUE(std::is_sorted(a.coords.begin(), a.coords.end()));
  EXPECT_THROW(ad::finite_diff(f, theta, 0.0), DomainError);
}

TEST(FiniteDiff, RelativeError) {
  const double a[] = {1.0, 2.0}, b[] = {1.0, 2.0}, z[] = {0.0, 0.0};
  EXPECT_EQ(ad::relative_error(a, b), 0.0);
  EXPECT_EQ(ad::relative_error(z, z), 0.0);
  EXPECT_NEAR(ad::relative_error(a, z), 1.0, 1e-15);
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

TEST(Sgd, ZeroGradientZeroDecayIsNoOp) {
  Rng rng(12);
  auto p = rng.normal_tensor(Dims{1, 2, 3, 3});
  const auto before = p;
  ad::Sgd opt({0.1, 0.9, 0.0});
  Tensor4* params[] = {&p};
  const Tensor4 grads[] = {Tensor4(p.dims())};
  for (int i = 0; i < 3; ++i) opt.step(params, grads);
  EXPECT_EQ(p, before);
}

TEST(Sgd, OneStepWithoutMomentum) {
  Tensor4 p(Dims{1, 1, 1, 2});
  p[0] = 1.0f;
  p[1] = -2.0f;
  Tensor4 g(p.dims());
  g[0] = 0.5f;
  g[1] = 0.25f;
  ad::Sgd opt({0.1, 0.0, 0.01});
  Tensor4* params[] = {&p};
  const Tensor4 grads[] = {g};
  opt.step(params, grads);
  EXPECT_FLOAT_EQ(p[0], static_cast<float>(1.0 - 0.1 * (0.5 + 0.01 * 1.0)));
  EXPECT_FLOAT_EQ(p[1], static_cast<float>(-2.0 - 0.1 * (0.25 + 0.01 * -2.0)));
}

TEST(Sgd, TwoStepsWithMomentumFollowRecurrence) {
  const double lr = 0.05, mu = 0.9, wd = 1e-4;
  Tensor4 p(Dims{1, 1, 1, 1}, 0.8f);
  ad::Sgd opt({lr, mu, wd});
  Tensor4* params[] = {&p};
  double theta = 0.8, v = 0.0;
  for (double grad : {0.3, -0.7}) {
    const Tensor4 grads[] = {Tensor4(p.dims(), static_cast<float>(grad))};
    opt.step(params, grads);
    v = mu * v + grad + wd * theta;
    theta -= lr * v;
    EXPECT_NEAR(p[0], theta, 1e-7);
  }
}

TEST(Sgd, ShapeMismatchThrows) {
  Tensor4 p(Dims{1, 1, 2, 2});
  Tensor4* params[] = {&p};
  const Tensor4 grads[] = {Tensor4(Dims{1, 1, 2, 3})};
  ad::Sgd opt({});
  EXPECT_THROW(opt.step(params, grads), DomainError);
}

namespace {

// A few SGD steps fitting a 3x3 conv to a fixed target; returns final weights.
Tensor4 short_training_run(std::uint64_t seed) {
  Rng rng(seed);
  const auto x = rng.normal_tensor(Dims{2, 2, 8, 8});
  const auto target = rng.normal_tensor(Dims{2, 2, 8, 8});
  auto w = rng.normal_tensor(Dims{2, 2, 3, 3}, 0.3);
  ad::Sgd opt({0.01, 0.9, 1e-4});
  for (int step = 0; step < 5; ++step) {
    ad::Tape t;
    const auto wv = t.leaf(w);
    const auto y = ad::conv2d(t, t.leaf(x, false), wv, std::nullopt, {1, 1, 1});
    const auto diff = ad::add(t, y, t.leaf(scale(target, -1.0), false));
    const auto loss = ad::sum_all(t, ad::hadamard(t, diff, diff));
    const auto g = t.backward(loss);
    Tensor4* params[] = {&w};
    const Tensor4 grads[] = {g[wv]};
    opt.step(params, grads);
  }
  return w;
}

}  // namespace

TEST(Sgd, TrainingIsDeterministic) {
  EXPECT_EQ(short_training_run(3), short_training_run(3));
  EXPECT_FALSE(short_training_run(3) == short_training_run(4));
}
