#include <benchmark/benchmark.h>

#include "oodkit/evaluator.hpp"
#include "oodkit/rng.hpp"
#include "oodkit/scorers.hpp"

using namespace oodkit;

namespace {

EmbeddingMatrix gaussian(Rng& rng, std::size_t n, std::size_t d) {
    EmbeddingMatrix m(n, d);
    for (float& v : m.data()) v = static_cast<float>(rng.normal());
    return m;
}

DatasetSplit labelled(Rng& rng, std::size_t n, std::size_t d, std::size_t classes) {
    DatasetSplit s;
    s.name = "id_train";
    s.role = Role::IdTrain;
    s.features = gaussian(rng, n, d);
    std::vector<std::int64_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::int64_t>(i % classes);
    s.labels = make_labels(std::move(y));
    return s;
}

}  // namespace

static void BM_KnnScore(benchmark::State& state) {
    Rng rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto train = labelled(rng, n, 128, 10);
    const auto queries = gaussian(rng, 256, 128);
    const auto fs = fit(Method::KNN, train, nullptr);
    for (auto _ : state) benchmark::DoNotOptimize(score(fs, queries));
    state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_KnnScore)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_Auroc(benchmark::State& state) {
    Rng rng(2);
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<double> id(n), ood(n);
    for (double& v : id) v = rng.normal() + 1.0;
    for (double& v : ood) v = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(auroc(id, ood));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

static void BM_LinearProbe(benchmark::State& state) {
    Rng rng(3);
    const auto train = labelled(rng, 5000, 128, 10);
    ProbeConfig cfg;
    cfg.epochs = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(train_linear_probe(train, cfg));
}
BENCHMARK(BM_LinearProbe)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_MlpProbe(benchmark::State& state) {
    Rng rng(4);
    const auto train = labelled(rng, 2000, 64, 10);
    ProbeConfig cfg;
    cfg.epochs = 5;
    cfg.hidden = 128;
    for (auto _ : state) benchmark::DoNotOptimize(train_mlp_probe(train, cfg));
}
BENCHMARK(BM_MlpProbe)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
