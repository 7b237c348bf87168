// Microbenchmarks over the loss and quantile kernels. Sizes mirror the
// desk-scale datasets: a few thousand items, a couple hundred sampled
// negatives per interaction.
#include <benchmark/benchmark.h>

#include <vector>

#include "toprank/losses.hpp"
#include "toprank/metrics.hpp"
#include "toprank/model.hpp"
#include "toprank/quantile.hpp"
#include "toprank/rng.hpp"
#include "toprank/trainer.hpp"

using namespace toprank;

namespace {

std::vector<double> random_scores(std::size_t n, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0xbe9cULL);
    std::vector<double> s(n);
    for (auto& x : s) x = rng.next_gaussian();
    return s;
}

EmbeddingModel bench_model(std::size_t users, std::size_t items) {
    return init_model(users, items, 64, ScoreKind::Cosine, 7);
}

void BM_SlTerm(benchmark::State& state) {
    const auto negs = random_scores(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(sl_term(0.3, negs, 0.2));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SlTerm)->Arg(200)->Arg(1000);

void BM_SlkWeight(benchmark::State& state) {
    double x = -1.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(slk_weight(x, 0.1, 2.5));
        x += 1e-9;
    }
}
BENCHMARK(BM_SlkWeight);

void BM_ExactQuantile(benchmark::State& state) {
    const auto scores =
        random_scores(static_cast<std::size_t>(state.range(0)), 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(exact_topk_quantile(scores, 20));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExactQuantile)->Arg(1000)->Arg(10000);

void BM_McQuantile(benchmark::State& state) {
    const auto pos = random_scores(30, 3);
    const auto negs =
        random_scores(static_cast<std::size_t>(state.range(0)), 4);
    for (auto _ : state)
        benchmark::DoNotOptimize(mc_topk_quantile(pos, negs, 20));
}
BENCHMARK(BM_McQuantile)->Arg(200)->Arg(1000);

void BM_SoftmaxInteractionGradient(benchmark::State& state) {
    const auto model = bench_model(100, 2000);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng = Rng::stream(5, 0x6e9ULL);
    std::vector<std::uint32_t> negs(n);
    for (auto& j : negs) j = static_cast<std::uint32_t>(rng.next_below(2000));
    SparseGrad user_g, item_g;
    user_g.init(model.d);
    item_g.init(model.d);
    for (auto _ : state) {
        user_g.clear();
        item_g.clear();
        benchmark::DoNotOptimize(softmax_interaction_gradient(
            model, 3, 17, negs, 0.05, 0.2, 2.5, true, user_g, item_g));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SoftmaxInteractionGradient)->Arg(200)->Arg(1000);

void BM_LambdaInteractionGradient(benchmark::State& state) {
    const auto model = bench_model(100, 2000);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng = Rng::stream(6, 0x6e9ULL);
    std::vector<std::uint32_t> negs(n);
    std::vector<double> pi_negs(n);
    for (std::size_t x = 0; x < n; ++x) {
        negs[x] = static_cast<std::uint32_t>(rng.next_below(2000));
        pi_negs[x] = 1.0 + static_cast<double>(rng.next_below(2000));
    }
    SparseGrad user_g, item_g;
    user_g.init(model.d);
    item_g.init(model.d);
    for (auto _ : state) {
        user_g.clear();
        item_g.clear();
        benchmark::DoNotOptimize(lambda_interaction_gradient(
            model, 3, 17, 4.0, negs, pi_negs, 20, user_g, item_g));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_LambdaInteractionGradient)->Arg(200)->Arg(1000);

void BM_FullLambdaLoss(benchmark::State& state) {
    const auto scores =
        random_scores(static_cast<std::size_t>(state.range(0)), 8);
    std::vector<std::uint32_t> positives;
    for (std::uint32_t i = 0; i < 30; ++i) positives.push_back(i * 7);
    for (auto _ : state)
        benchmark::DoNotOptimize(lambdaloss_at_k(scores, positives, 20));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FullLambdaLoss)->Arg(1000)->Arg(4000);

void BM_ScoreAllItems(benchmark::State& state) {
    const auto model =
        bench_model(100, static_cast<std::size_t>(state.range(0)));
    std::vector<double> out;
    for (auto _ : state) {
        score_all_items(model, 11, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScoreAllItems)->Arg(2000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
