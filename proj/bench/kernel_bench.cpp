// Optimized (im2col + GEMM) kernels against the direct-loop references, at
// the shapes the Catch networks actually run.

#include <benchmark/benchmark.h>

#include "rldc/kernels.hpp"
#include "rldc/network.hpp"
#include "rldc/reference_kernels.hpp"
#include "rldc/rng.hpp"

using namespace rldc;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// (in_c, out_c, kernel, stride, input size) of the expert stack at 44x44.
struct ConvCase {
  std::size_t in_c, out_c, k, stride, size;
};
constexpr ConvCase kConvCases[] = {{4, 32, 8, 4, 44}, {32, 64, 4, 2, 10}, {64, 64, 3, 1, 4}};

ConvSpec spec_of(const ConvCase& c) { return ConvSpec{c.in_c, c.out_c, c.k, c.k, c.stride}; }

void BM_ConvForward(benchmark::State& state) {
  const ConvCase& c = kConvCases[state.range(0)];
  const ConvSpec spec = spec_of(c);
  const Tensor x = random_tensor({c.in_c, c.size, c.size}, 1);
  const Tensor w = random_tensor({c.out_c, c.in_c, c.k, c.k}, 2);
  const Tensor b = random_tensor({c.out_c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, spec, w, b));
}

void BM_ConvForwardReference(benchmark::State& state) {
  const ConvCase& c = kConvCases[state.range(0)];
  const ConvSpec spec = spec_of(c);
  const Tensor x = random_tensor({c.in_c, c.size, c.size}, 1);
  const Tensor w = random_tensor({c.out_c, c.in_c, c.k, c.k}, 2);
  const Tensor b = random_tensor({c.out_c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d_forward(x, spec, w, b));
}

void BM_ConvBackward(benchmark::State& state) {
  const ConvCase& c = kConvCases[state.range(0)];
  Conv2d conv(spec_of(c), random_tensor({c.out_c, c.in_c, c.k, c.k}, 2), random_tensor({c.out_c}, 3));
  Tensor x = random_tensor({c.in_c, c.size, c.size}, 1);
  Tensor y = conv.forward(x);
  for (double& g : y.grad()) g = 1.0;
  for (auto _ : state) {
    conv.backward(x, y);
    benchmark::ClobberMemory();
  }
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const ConvCase& c = kConvCases[state.range(0)];
  const ConvSpec spec = spec_of(c);
  const Tensor x = random_tensor({c.in_c, c.size, c.size}, 1);
  const Tensor w = random_tensor({c.out_c, c.in_c, c.k, c.k}, 2);
  const Tensor out = reference::conv2d_forward(x, spec, w, Tensor({c.out_c}));
  const Tensor grad(out.shape(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d_backward(x, spec, w, grad));
}

void BM_Linear(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({in}, 1);
  const Tensor w = random_tensor({512, in}, 2);
  const Tensor b = random_tensor({512}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b));
}

void BM_LinearReference(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({in}, 1);
  const Tensor w = random_tensor({512, in}, 2);
  const Tensor b = random_tensor({512}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(reference::linear(x, w, b));
}

// One training step's forward pass over a batch of 32.
void BM_ExpertBatchForward(benchmark::State& state) {
  Network net = Network::build(arch_spec("expert", {4, 44, 44}, 3), 1);
  const Tensor batch = random_tensor({32, 4, 44, 44}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_batch(batch).data());
}

}  // namespace

BENCHMARK(BM_ConvForward)->DenseRange(0, 2);
BENCHMARK(BM_ConvForwardReference)->DenseRange(0, 2);
BENCHMARK(BM_ConvBackward)->DenseRange(0, 2);
BENCHMARK(BM_ConvBackwardReference)->DenseRange(0, 2);
BENCHMARK(BM_Linear)->Arg(32)->Arg(64 * 2 * 2);
BENCHMARK(BM_LinearReference)->Arg(32)->Arg(64 * 2 * 2);
BENCHMARK(BM_ExpertBatchForward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
