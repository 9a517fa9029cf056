// SPDX-License-Identifier: Apache-2.0
// Parallel kernels against the serial reference implementations.
// Arg(0) is the thread count for the kernel runs.
#include "m3/attention.hpp"
#include "m3/memory_bank.hpp"
#include "m3/parallel.hpp"
#include "m3/rasterizer.hpp"
#include "reference.hpp"
#include "test_util.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace m3;

namespace {

std::vector<float> clustered(std::size_t n, std::size_t d) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> base(32 * d), rows(n * d);
    for (auto& v : base) v = normal(rng);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t c = rng() % 32;
        for (std::size_t k = 0; k < d; ++k) rows[r * d + k] = base[c * d + k] + 0.3f * normal(rng);
    }
    return rows;
}

MemoryBank bank_of(std::size_t t, std::size_t d, std::size_t s) {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    MemoryBank b;
    b.model_name = "m";
    b.d = std::uint32_t(d);
    b.degree = std::uint32_t(s);
    b.psc.resize(t * d);
    b.w_m.resize(s * d);
    for (auto& v : b.psc) v = normal(rng);
    for (auto& v : b.w_m) v = normal(rng);
    for (std::size_t j = 0; j < t; ++j) b.selected_indices.push_back(std::uint32_t(j));
    return b;
}

std::vector<double> queries(std::size_t rows, std::size_t s) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> q(rows * s);
    for (auto& v : q) v = u(rng);
    return q;
}

// ------------------------------------------------------------ reduction

void BM_ReduceChunked(benchmark::State& state) {
    parallel::set_threads(int(state.range(0)));
    const auto rows = clustered(4096, 32);
    for (auto _ : state) benchmark::DoNotOptimize(reduce_rows(rows, 32, 0.8f, kDefaultChunk));
}
BENCHMARK(BM_ReduceChunked)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_ReduceReference(benchmark::State& state) {
    const auto rows = clustered(4096, 32);
    for (auto _ : state) benchmark::DoNotOptimize(reference::reduce_sequential(rows, 32, 0.8));
}
BENCHMARK(BM_ReduceReference)->Unit(benchmark::kMillisecond);

// ------------------------------------------------------------ rasterizer

GaussianScene bench_scene() {
    std::mt19937_64 rng(4);
    return testkit::random_scene(rng, 300, 16, 1.0, 0.05, 0.25);
}

void BM_Render(benchmark::State& state) {
    parallel::set_threads(int(state.range(0)));
    const auto scene = bench_scene();
    const auto cam = testkit::make_camera(96, 96, 110.0, {0.0, 0.0, 4.0});
    for (auto _ : state) benchmark::DoNotOptimize(raster::render_view(scene, cam, {true, raster::QueryRange{0, 16}}));
}
BENCHMARK(BM_Render)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state) {
    parallel::set_threads(int(state.range(0)));
    const auto scene = bench_scene();
    const auto cam = testkit::make_camera(96, 96, 110.0, {0.0, 0.0, 4.0});
    const std::vector<double> grad_rgb(cam.pixel_count() * 3, 0.1), grad_q(cam.pixel_count() * 16, 0.1);
    const raster::RenderRequest req{true, raster::QueryRange{0, 16}};
    for (auto _ : state) benchmark::DoNotOptimize(raster::backward_render(scene, cam, req, grad_rgb, grad_q));
}
BENCHMARK(BM_RenderBackward)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_RenderReference(benchmark::State& state) {
    const auto scene = bench_scene();
    const auto cam = testkit::make_camera(96, 96, 110.0, {0.0, 0.0, 4.0});
    for (auto _ : state) benchmark::DoNotOptimize(reference::render_naive(scene, cam, true, 0, 16));
}
BENCHMARK(BM_RenderReference)->Unit(benchmark::kMillisecond);

// ------------------------------------------------------------ attention

void BM_Attend(benchmark::State& state) {
    parallel::set_threads(int(state.range(0)));
    const auto bank = bank_of(64, 512, 16);
    const auto q = queries(4096, 16);
    for (auto _ : state) benchmark::DoNotOptimize(attention::attend(q, 16, bank));
}
BENCHMARK(BM_Attend)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_AttendBackward(benchmark::State& state) {
    parallel::set_threads(int(state.range(0)));
    const auto bank = bank_of(64, 512, 16);
    const auto q = queries(4096, 16);
    const std::vector<double> up(4096 * 512, 0.01);
    for (auto _ : state) benchmark::DoNotOptimize(attention::attend_backward(q, 16, bank, {}, up));
}
BENCHMARK(BM_AttendBackward)->Arg(1)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_AttendReference(benchmark::State& state) {
    const auto bank = bank_of(64, 512, 16);
    const auto q = queries(4096, 16);
    const double scale = attention::logit_scale({}, 512);
    for (auto _ : state) benchmark::DoNotOptimize(reference::attend_naive(q, 16, bank.psc, 64, 512, bank.w_m, scale));
}
BENCHMARK(BM_AttendReference)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
