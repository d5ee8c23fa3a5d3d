// Serial reference vs OpenMP kernels on a ViT-B/16 sized grid (14 x 14 x 768).

#include <benchmark/benchmark.h>

#include "clipos/kernels.hpp"
#include "clipos/rng.hpp"

using namespace clipos;

namespace {

PatchGrid make_grid() {
    Rng rng(3);
    PatchGrid g(14, 14, 768);
    for (long i = 0; i < g.tokens().rows(); ++i) {
        for (long j = 0; j < g.tokens().cols(); ++j) g.tokens()(i, j) = rng.normal();
    }
    return g;
}

const PatchGrid& grid() {
    static const PatchGrid g = make_grid();
    return g;
}

void BM_context_serial(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::context_incorporate(grid(), 0.1, Padding::replicate));
}
void BM_context_parallel(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(kernels::parallel::context_incorporate(grid(), 0.1, Padding::replicate));
    }
}
void BM_vv_serial(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::vv_attention(grid(), 0.125, 12));
}
void BM_vv_parallel(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::vv_attention(grid(), 0.125, 12));
}

}  // namespace

BENCHMARK(BM_context_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_context_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_vv_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_vv_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
