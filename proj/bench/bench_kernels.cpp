// Serial reference kernels against the OpenMP kernels on the shapes the
// encoder and transformer actually run. Set OMP_NUM_THREADS to vary workers.

#include <benchmark/benchmark.h>

#include <vector>

#include "cardiofuse/kernels.hpp"
#include "cardiofuse/rng.hpp"

namespace k = cardiofuse::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  cardiofuse::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Gemm(m, n, kk, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * kk));
}

// (rows, cols, inner): LSTM gate projection, transformer feed-forward, square.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({240, 64, 32})->Args({64, 128, 64})->Args({256, 256, 256});
}

BENCHMARK(BM_Gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Apply(gemm_shapes);

k::ConvShape conv_shape(const benchmark::State& state) {
  k::ConvShape s;
  s.batch = static_cast<std::size_t>(state.range(0));
  s.in_channels = static_cast<std::size_t>(state.range(1));
  s.out_channels = static_cast<std::size_t>(state.range(2));
  s.height = s.width = static_cast<std::size_t>(state.range(3));
  return s;
}

template <auto Forward>
void BM_ConvForward(benchmark::State& state) {
  const auto s = conv_shape(state);
  const auto x = filled(s.input_size(), 3), w = filled(s.weight_size(), 4), bias = filled(s.out_channels, 5);
  std::vector<double> y(s.output_size());
  for (auto _ : state) {
    Forward(s, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto BackInput, auto BackWeight>
void BM_ConvBackward(benchmark::State& state) {
  const auto s = conv_shape(state);
  const auto x = filled(s.input_size(), 3), w = filled(s.weight_size(), 4), dy = filled(s.output_size(), 6);
  std::vector<double> dx(s.input_size()), dw(s.weight_size()), db(s.out_channels);
  for (auto _ : state) {
    BackInput(s, dy, w, dx);
    BackWeight(s, x, dy, dw, db);
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

// (frames, in, out, side): first and second encoder blocks on 16x16 clips.
void conv_shapes(benchmark::internal::Benchmark* b) { b->Args({240, 1, 4, 16})->Args({240, 4, 8, 8}); }

BENCHMARK(BM_ConvForward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(conv_shapes);
BENCHMARK(BM_ConvForward<k::parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<k::serial::conv2d_backward_input, k::serial::conv2d_backward_weight>)
    ->Name("conv_backward/serial")
    ->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<k::parallel::conv2d_backward_input, k::parallel::conv2d_backward_weight>)
    ->Name("conv_backward/parallel")
    ->Apply(conv_shapes);

}  // namespace
BENCHMARK_MAIN();
