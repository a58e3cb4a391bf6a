// Throughput comparison of the serial reference kernels and their OpenMP
// variants. Run with --benchmark_filter to narrow to one kernel.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "seqnas/kernels.hpp"
#include "seqnas/util.hpp"

namespace {

std::vector<double> rand_vec(size_t n, uint64_t seed) {
  seqnas::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void bm_matmul(benchmark::State& state, bool parallel) {
  const int n = static_cast<int>(state.range(0));
  const auto a = rand_vec(static_cast<size_t>(n) * n, 1);
  const auto b = rand_vec(static_cast<size_t>(n) * n, 2);
  std::vector<double> c(static_cast<size_t>(n) * n);
  for (auto _ : state) {
    if (parallel)
      seqnas::kernels::omp::matmul(a.data(), b.data(), c.data(), n, n, n);
    else
      seqnas::kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n) * n * n);
}

void bm_conv1d(benchmark::State& state, bool parallel) {
  const int batch = 8, len = static_cast<int>(state.range(0)), cin = 32, cout = 32, k = 5;
  const auto x = rand_vec(static_cast<size_t>(batch) * len * cin, 3);
  const auto w = rand_vec(static_cast<size_t>(cout) * cin * k, 4);
  const auto bias = rand_vec(static_cast<size_t>(cout), 5);
  std::vector<double> y(static_cast<size_t>(batch) * len * cout);
  for (auto _ : state) {
    if (parallel)
      seqnas::kernels::omp::conv1d(x.data(), w.data(), bias.data(), y.data(), batch, len, cin,
                                   cout, k, 2);
    else
      seqnas::kernels::serial::conv1d(x.data(), w.data(), bias.data(), y.data(), batch, len, cin,
                                      cout, k, 2);
    benchmark::DoNotOptimize(y.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * batch * len * cin * cout * k);
}

void bm_softmax(benchmark::State& state, bool parallel) {
  const int rows = static_cast<int>(state.range(0)), cols = 512;
  const auto x = rand_vec(static_cast<size_t>(rows) * cols, 6);
  std::vector<double> y(static_cast<size_t>(rows) * cols);
  for (auto _ : state) {
    if (parallel)
      seqnas::kernels::omp::softmax_rows(x.data(), y.data(), rows, cols);
    else
      seqnas::kernels::serial::softmax_rows(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * rows * cols);
}

}  // namespace

BENCHMARK_CAPTURE(bm_matmul, serial, false)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bm_matmul, omp, true)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bm_conv1d, serial, false)->Arg(128)->Arg(512);
BENCHMARK_CAPTURE(bm_conv1d, omp, true)->Arg(128)->Arg(512);
BENCHMARK_CAPTURE(bm_softmax, serial, false)->Arg(256)->Arg(1024);
BENCHMARK_CAPTURE(bm_softmax, omp, true)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
