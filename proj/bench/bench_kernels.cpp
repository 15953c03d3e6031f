// Parallel kernels against their serial reference twins at the shapes the
// desk-scale model actually runs (a few hundred tokens, width 32 to 256).

#include "jointmotion/kernels.hpp"
#include "jointmotion/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace k = jm::kernels;

namespace {

std::vector<double> filled(size_t n, uint64_t seed) {
    jm::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
    const int m = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1)), kk = static_cast<int>(state.range(2));
    const auto a = filled(static_cast<size_t>(m) * kk, 1), b = filled(static_cast<size_t>(kk) * n, 2);
    std::vector<double> c(static_cast<size_t>(m) * n);
    for (auto _ : state) {
        Gemm(m, n, kk, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * m * n * kk);
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
    b->Args({128, 128, 128})->Args({300, 1024, 256})->Args({300, 32, 64})->Args({1024, 256, 256});
}

template <auto Forward>
void BM_attention_forward(benchmark::State& state) {
    const k::AttentionShape s{static_cast<int>(state.range(0)), static_cast<int>(state.range(0)),
                              static_cast<int>(state.range(1)), static_cast<int>(state.range(2))};
    const size_t w = static_cast<size_t>(s.width());
    const auto q = filled(s.nq * w, 3), kv = filled(s.nk * w, 4), v = filled(s.nk * w, 5);
    std::vector<uint8_t> allowed(static_cast<size_t>(s.nq) * s.nk);
    for (int i = 0; i < s.nq; ++i)
        for (int j = 0; j < s.nk; ++j) allowed[static_cast<size_t>(i) * s.nk + j] = (i - j <= 32 && j - i <= 32);
    std::vector<double> probs(static_cast<size_t>(s.heads) * s.nq * s.nk), out(s.nq * w);
    for (auto _ : state) {
        Forward(s, q.data(), kv.data(), v.data(), allowed.data(), probs.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Forward, auto Backward>
void BM_attention_backward(benchmark::State& state) {
    const k::AttentionShape s{static_cast<int>(state.range(0)), static_cast<int>(state.range(0)),
                              static_cast<int>(state.range(1)), static_cast<int>(state.range(2))};
    const size_t w = static_cast<size_t>(s.width()), pn = static_cast<size_t>(s.heads) * s.nq * s.nk;
    const auto q = filled(s.nq * w, 3), kv = filled(s.nk * w, 4), v = filled(s.nk * w, 5), dout = filled(s.nq * w, 6);
    std::vector<double> probs(pn), out(s.nq * w), dq(s.nq * w), dk(s.nk * w), dv(s.nk * w), scratch(pn);
    Forward(s, q.data(), kv.data(), v.data(), nullptr, probs.data(), out.data());
    for (auto _ : state) {
        Backward(s, q.data(), kv.data(), v.data(), probs.data(), dout.data(), dq.data(), dk.data(), dv.data(),
                 scratch.data());
        benchmark::DoNotOptimize(dq.data());
    }
}

void attention_shapes(benchmark::internal::Benchmark* b) { b->Args({128, 2, 16})->Args({300, 8, 32})->Args({512, 8, 32}); }

template <auto Forward>
void BM_layer_norm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
    const auto x = filled(static_cast<size_t>(n) * d, 7), gain = filled(d, 8), bias = filled(d, 9);
    std::vector<double> y(x.size()), xhat(x.size()), rstd(n);
    for (auto _ : state) {
        Forward(n, d, x.data(), gain.data(), bias.data(), 1e-5, y.data(), xhat.data(), rstd.data());
        benchmark::DoNotOptimize(y.data());
    }
}

} // namespace

BENCHMARK(BM_gemm<k::reference::gemm_nn>)->Name("gemm_nn/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Apply(gemm_shapes)->UseRealTime();
BENCHMARK(BM_gemm<k::reference::gemm_nt>)->Name("gemm_nt/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->Apply(gemm_shapes)->UseRealTime();
BENCHMARK(BM_gemm<k::reference::gemm_tn>)->Name("gemm_tn/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Apply(gemm_shapes)->UseRealTime();

BENCHMARK(BM_attention_forward<k::reference::attention_forward>)->Name("attention_fwd/reference")->Apply(attention_shapes);
BENCHMARK(BM_attention_forward<k::parallel::attention_forward>)
    ->Name("attention_fwd/parallel")
    ->Apply(attention_shapes)
    ->UseRealTime();
BENCHMARK(BM_attention_backward<k::reference::attention_forward, k::reference::attention_backward>)
    ->Name("attention_bwd/reference")
    ->Apply(attention_shapes);
BENCHMARK(BM_attention_backward<k::parallel::attention_forward, k::parallel::attention_backward>)
    ->Name("attention_bwd/parallel")
    ->Apply(attention_shapes)
    ->UseRealTime();

BENCHMARK(BM_layer_norm<k::reference::layer_norm_forward>)->Name("layer_norm/reference")->Args({1024, 256})->Args({300, 2048});
BENCHMARK(BM_layer_norm<k::parallel::layer_norm_forward>)
    ->Name("layer_norm/parallel")
    ->Args({1024, 256})
    ->Args({300, 2048})
    ->UseRealTime();

BENCHMARK_MAIN();
