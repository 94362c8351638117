// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "rblr/blr_layer.hpp"
#include "rblr/conv.hpp"
#include "rblr/haar.hpp"
#include "rblr/network.hpp"

using namespace rblr;

namespace {

Tensor5D noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor5D t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

KernelStack stack(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.1);
  KernelStack ks(m, n);
  for (double& w : ks.weights()) w = d(rng);
  return ks;
}

void BM_Conv3d(benchmark::State& state) {
  const auto side = state.range(0);
  const Tensor5D x = noise({side, side, side, 1}, 1);
  Kernel3D k{};
  for (int t = 0; t < kKernelTaps; ++t) k[t] = 0.01 * t;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(k, x));
  state.SetItemsProcessed(state.iterations() * x.volume());
}
BENCHMARK(BM_Conv3d)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv3dAdjoint(benchmark::State& state) {
  const auto side = state.range(0);
  const Tensor5D y = noise({side, side, side, 1}, 2);
  Kernel3D k{};
  for (int t = 0; t < kKernelTaps; ++t) k[t] = 0.01 * t;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_adjoint(k, y));
  state.SetItemsProcessed(state.iterations() * y.volume());
}
BENCHMARK(BM_Conv3dAdjoint)->Arg(16)->Arg(32)->Arg(64);

// Same input width, varying block rank m.
void BM_LayerApply(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int n = 24;
  const KernelStack ks = stack(m, n, 3);
  const Tensor5D y = noise({16, 16, 8, n}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(layer_apply(ks, Activation::relu(), y));
}
BENCHMARK(BM_LayerApply)->Arg(2)->Arg(4)->Arg(8)->Arg(24);

void BM_HaarForward(benchmark::State& state) {
  const Tensor5D x = noise({32, 32, 16, 3}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(haar_forward(x));
}
BENCHMARK(BM_HaarForward);

NetworkSpec bench_network(int m) {
  NetworkSpec spec;
  spec.input_shape = {32, 32, 16, 3};
  spec.layers = {{3, 3, ResolutionChange::Identity},     {m, 24, ResolutionChange::HaarForward},
                 {m, 192, ResolutionChange::HaarForward}, {m, 24, ResolutionChange::HaarInverse},
                 {3, 3, ResolutionChange::HaarInverse}};
  return spec;
}

NetworkParams bench_params(const NetworkSpec& spec) {
  NetworkParams p;
  std::uint64_t seed = 10;
  for (const auto& l : spec.layers) p.push_back(stack(l.m, l.n, seed++));
  return p;
}

void BM_Forward(benchmark::State& state) {
  const NetworkSpec spec = bench_network(static_cast<int>(state.range(0)));
  const NetworkParams params = bench_params(spec);
  const Tensor5D x = noise(spec.input_shape, 6);
  for (auto _ : state) benchmark::DoNotOptimize(forward(spec, params, x));
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Gradient(benchmark::State& state) {
  const NetworkSpec spec = bench_network(static_cast<int>(state.range(0)));
  const NetworkParams params = bench_params(spec);
  const Tensor5D x = noise(spec.input_shape, 7);
  const LossFn loss = [](const Tensor5D& out) { return LossValue{0.5 * dot(out, out), out}; };
  for (auto _ : state) benchmark::DoNotOptimize(gradient(spec, params, x, loss));
}
BENCHMARK(BM_Gradient)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
