#include <benchmark/benchmark.h>

#include "xvol/nn_ops.hpp"
#include "xvol/pssa.hpp"
#include "xvol/random.hpp"
#include "xvol/xvolution.hpp"

namespace {

using namespace xvol;

constexpr int kChannels = 4;

void BM_Conv3x3(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto kern = ConvKernel::same(rng.normal_tensor(Dims{kChannels, kChannels, 3, 3}, 0.3),
                                     std::vector<float>(kChannels, 0.0f));
  const auto x = rng.normal_tensor(Dims{1, kChannels, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, kern));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(side) * side);
}
BENCHMARK(BM_Conv3x3)->RangeMultiplier(2)->Range(32, 256)->Complexity(benchmark::oN);

void BM_PssaForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(2);
  const auto p = random_xvolution(kChannels, kChannels, kChannels, rng);
  const auto x = rng.normal_tensor(Dims{1, kChannels, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(pssa_forward(x, p.pssa, p.pssa_cfg));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(side) * side);
}
BENCHMARK(BM_PssaForward)->RangeMultiplier(2)->Range(32, 256)->Complexity(benchmark::oN);

void BM_SelfAttentionExact(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(3);
  const int ce = 16;
  AttentionParams ap{rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1), rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1),
                     rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1)};
  const auto x = rng.normal_tensor(Dims{1, ce, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(self_attention_exact(x, ap));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(side) * side);
}
BENCHMARK(BM_SelfAttentionExact)->DenseRange(8, 40, 8)->Complexity(benchmark::oNSquared);

void BM_XvolutionTrain(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(4);
  const auto p = random_xvolution(kChannels, kChannels, kChannels, rng);
  const auto x = rng.normal_tensor(Dims{1, kChannels, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(xvolution_train_forward(x, p));
}
BENCHMARK(BM_XvolutionTrain)->Arg(32)->Arg(64)->Arg(128);

void BM_XvolutionInfer(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(4);
  const auto p = random_xvolution(kChannels, kChannels, kChannels, rng);
  const auto ip = reparameterize(p);
  const auto x = rng.normal_tensor(Dims{1, kChannels, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(xvolution_infer_forward(x, ip));
}
BENCHMARK(BM_XvolutionInfer)->Arg(32)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
