#include <benchmark/benchmark.h>

#include <vector>

#include "gradcore/kernels.hpp"
#include "spectradiff/rng.hpp"

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    spectradiff::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <auto Kernel>
void BM_Gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const auto k = static_cast<std::size_t>(state.range(1));
    const auto n = static_cast<std::size_t>(state.range(2));
    const auto a = random_buffer(m * k, 1);
    const auto b = random_buffer(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        Kernel(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::DoNotOptimize(c.data());
        benchmark::ClobberMemory();
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * k * n),
                                                 benchmark::Counter::kIsIterationInvariantRate);
}

// Shapes of the denoiser's MLP and projection layers at batch 36, 4 tokens.
void gemm_args(benchmark::internal::Benchmark* b) {
    b->Args({144, 64, 256})->Args({144, 256, 64})->Args({144, 64, 64})->Args({36, 64, 384});
}

}  // namespace

BENCHMARK(BM_Gemm<spectradiff::kernels::gemm_nn>)->Apply(gemm_args);
BENCHMARK(BM_Gemm<spectradiff::kernels::gemm_nt>)->Apply(gemm_args);
BENCHMARK(BM_Gemm<spectradiff::kernels::gemm_tn>)->Apply(gemm_args);
