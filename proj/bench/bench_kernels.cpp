// Parallel GEMM against the serial reference on shapes the model uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "abmem/kernels.hpp"

using abmem::kernels::GemmShape;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

GemmShape shape_of(const benchmark::State& s) {
  return {static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(1)),
          static_cast<std::size_t>(s.range(2)), s.range(3) != 0, false};
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const GemmShape s = shape_of(state);
  std::mt19937_64 rng(1);
  const auto a = random_vec(s.m * s.k, rng), b = random_vec(s.k * s.n, rng);
  std::vector<double> c(s.m * s.n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      abmem::kernels::gemm(s, a, b, c, false);
    } else {
      abmem::kernels::reference::gemm(s, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.m * s.n * s.k));
}

// m, n, k, trans_a: LSTM gate matvec, its transpose in backward, a
// weight-gradient outer product, and a square matrix product.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({512, 1, 256, 0})->Args({256, 1, 512, 1})->Args({512, 256, 1, 0})->Args({256, 256, 256, 0});
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Apply(shapes);
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Apply(shapes);

BENCHMARK_MAIN();
