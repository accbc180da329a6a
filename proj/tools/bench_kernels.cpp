// Serial-vs-OpenMP comparison for the hot kernels.
#include <benchmark/benchmark.h>

#include "mint/kernels.hpp"
#include "mint/rng.hpp"

namespace {

mint::Mat random_mat(int r, int c, uint64_t seed) {
  mint::Rng rng(seed);
  mint::Mat m(r, c);
  for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

void bm_matmul_serial(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const mint::Mat a = random_mat(n, n, 1);
  const mint::Mat b = random_mat(n, n, 2);
  mint::Mat c;
  for (auto _ : state) {
    mint::kernels::matmul_serial(a, b, c);
    benchmark::DoNotOptimize(c.data.data());
  }
}

void bm_matmul_omp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const mint::Mat a = random_mat(n, n, 1);
  const mint::Mat b = random_mat(n, n, 2);
  mint::Mat c;
  for (auto _ : state) {
    mint::kernels::matmul(a, b, c);
    benchmark::DoNotOptimize(c.data.data());
  }
}

void bm_nearest_codes_serial(benchmark::State& state) {
  const mint::Mat x = random_mat(static_cast<int>(state.range(0)), 32, 3);
  const mint::Mat cb = random_mat(512, 32, 4);
  std::vector<int> idx;
  for (auto _ : state) {
    mint::kernels::nearest_codes_serial(x, cb, idx);
    benchmark::DoNotOptimize(idx.data());
  }
}

void bm_nearest_codes_omp(benchmark::State& state) {
  const mint::Mat x = random_mat(static_cast<int>(state.range(0)), 32, 3);
  const mint::Mat cb = random_mat(512, 32, 4);
  std::vector<int> idx;
  for (auto _ : state) {
    mint::kernels::nearest_codes(x, cb, idx);
    benchmark::DoNotOptimize(idx.data());
  }
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_omp)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_nearest_codes_serial)->Arg(256)->Arg(2048);
BENCHMARK(bm_nearest_codes_omp)->Arg(256)->Arg(2048);

BENCHMARK_MAIN();
