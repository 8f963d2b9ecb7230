// Serial vs parallel kernel backends, plus the full-size decomposition the
// latency budget is written against. Build with -DCOLAN_BENCH=ON (needs
// Google Benchmark).

#include <benchmark/benchmark.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "colan/kernels.hpp"
#include "colan/matrix.hpp"
#include "colan/solver.hpp"

namespace {

using colan::DenseMatrix;
using colan::kernels::Backend;

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::vector<float> out(n);
  std::uint64_t state = seed;
  for (auto& x : out) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    x = static_cast<float>(double(z >> 11) * 0x1.0p-53 - 0.5);
  }
  return out;
}

void bm_dot(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  colan::kernels::set_backend(state.range(1) ? Backend::parallel : Backend::serial);
  const std::vector<float> a = random_floats(n, 1);
  const std::vector<float> b = random_floats(n, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(colan::kernels::dot(std::span<const float>(a),
                                                 std::span<const float>(b)));
  }
  state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(n) * 2 * sizeof(float));
}
BENCHMARK(bm_dot)
    ->ArgsProduct({{1 << 12, 1 << 16, 77 * 768}, {0, 1}})
    ->ArgNames({"n", "parallel"});

void bm_matvec(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 30;
  colan::kernels::set_backend(state.range(1) ? Backend::parallel : Backend::serial);
  const std::vector<float> m = random_floats(rows * cols, 3);
  const std::vector<double> w(cols, 0.1);
  std::vector<double> out(rows);
  for (auto _ : state) {
    colan::kernels::matvec_rowmajor(m.data(), rows, cols, w, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(rows * cols) * sizeof(float));
}
BENCHMARK(bm_matvec)
    ->ArgsProduct({{1 << 12, 77 * 768}, {0, 1}})
    ->ArgNames({"rows", "parallel"});

// The acceptance-budget shape: 59136-dim text latents over 30 atoms.
void bm_full_solve(benchmark::State& state) {
  const std::size_t d = 77 * 768;
  const std::size_t n = 30;
  colan::kernels::set_backend(state.range(0) ? Backend::parallel : Backend::serial);

  std::vector<float> cols = random_floats(d * n, 4);
  const DenseMatrix dict = [&] {
    // Normalize columns so the instance matches real dictionaries.
    std::vector<float> data = cols;
    for (std::size_t j = 0; j < n; ++j) {
      double norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) norm += double(data[i * n + j]) * data[i * n + j];
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < d; ++i) data[i * n + j] = float(data[i * n + j] / norm);
    }
    return DenseMatrix(d, n, std::move(data));
  }();
  std::vector<float> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.3f * dict.at(i, 0) - 0.7f * dict.at(i, 5);

  for (auto _ : state) {
    const colan::SparseSolution sol = colan::elastic_net_solve(v, dict, colan::SolverConfig{});
    benchmark::DoNotOptimize(sol.weights.data());
  }
}
BENCHMARK(bm_full_solve)->Arg(0)->Arg(1)->ArgNames({"parallel"});

}  // namespace

BENCHMARK_MAIN();
