// Parallel (im2col + packed GEMM, OpenMP) kernels against the serial
// direct-loop reference kernels they are tested against.

#include <benchmark/benchmark.h>

#include <random>

#include "helio/kernels.hpp"

using namespace helio;
using namespace helio::kernels;

namespace {

Tensor random_tensor(Shape shape) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = d(rng);
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}), b = random_tensor({n, n});
  Tensor c({n, n});
  for (auto _ : state) {
    gemm(Trans::No, Trans::No, n, n, n, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}), b = random_tensor({n, n});
  Tensor c({n, n});
  for (auto _ : state) {
    reference::gemm(Trans::No, Trans::No, n, n, n, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256);

// PatchGAN-style first layer: 6 -> 16 channels, k4 s2 p1.
template <bool Reference>
void BM_Conv2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({1, 6, side, side});
  const Tensor w = random_tensor({16, 6, 4, 4});
  const Tensor b = random_tensor({16});
  const ConvParams p{2, 1, 0};
  for (auto _ : state) {
    Tensor y = Reference ? reference::conv2d_forward(x, w, b, p) : conv2d_forward(x, w, b, p);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2d<false>)->Name("BM_Conv2d")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv2d<true>)->Name("BM_Conv2dReference")->Arg(64)->Arg(256);

template <bool Reference>
void BM_Conv2dBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({1, 16, side, side});
  const Tensor w = random_tensor({32, 16, 3, 3});
  const ConvParams p{1, 1, 0};
  const Tensor gy = random_tensor({1, 32, side, side});
  Tensor gw(w.shape());
  for (auto _ : state) {
    Tensor gx = Reference ? reference::conv2d_backward(x, w, gy, p, gw, nullptr, true)
                          : conv2d_backward(x, w, gy, p, gw, nullptr, true);
    benchmark::DoNotOptimize(gx.data());
  }
}
BENCHMARK(BM_Conv2dBackward<false>)->Name("BM_Conv2dBackward")->Arg(32)->Arg(64);
BENCHMARK(BM_Conv2dBackward<true>)->Name("BM_Conv2dBackwardReference")->Arg(32);

template <bool Reference>
void BM_ConvTranspose2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({1, 32, side, side});
  const Tensor w = random_tensor({32, 16, 4, 4});
  const ConvParams p{2, 1, 0};
  for (auto _ : state) {
    Tensor y = Reference ? reference::conv_transpose2d_forward(x, w, Tensor{}, p)
                         : conv_transpose2d_forward(x, w, Tensor{}, p);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ConvTranspose2d<false>)->Name("BM_ConvTranspose2d")->Arg(16)->Arg(32);
BENCHMARK(BM_ConvTranspose2d<true>)->Name("BM_ConvTranspose2dReference")->Arg(16);

}  // namespace

BENCHMARK_MAIN();
