#include <benchmark/benchmark.h>

#include "protoseg/benchmark.hpp"

using namespace protoseg;

namespace {

const SyntheticSource& source() {
    static const SyntheticSource s{SyntheticTaskSpec{}};
    return s;
}

const Episode& episode() {
    static const Episode ep = source().episode(0, 1, 3);
    return ep;
}

PrototypeOptions options(int clusters) { return {clusters, 0.8, 10, 0}; }

void BM_KMeans(benchmark::State& state) {
    const FeatureMap& f = episode().query;
    Matrix points;
    for (std::size_t i = 0; i < f.pixel_count(); ++i) points.append(f.pixel(i));
    for (auto _ : state) benchmark::DoNotOptimize(kmeans(points, static_cast<int>(state.range(0)), 10, 0));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(points.rows()));
}
BENCHMARK(BM_KMeans)->Arg(5)->Arg(10);

void BM_SupportPrototypes(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(support_prototypes(episode(), options(5)));
}
BENCHMARK(BM_SupportPrototypes);

void BM_Similarity(benchmark::State& state) {
    const PrototypeSet protos = support_prototypes(episode(), options(static_cast<int>(state.range(0))));
    for (auto _ : state) benchmark::DoNotOptimize(similarity(episode().query, protos));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(episode().query.pixel_count()));
}
BENCHMARK(BM_Similarity)->Arg(5)->Arg(20);

void BM_SigmaMap(benchmark::State& state) {
    const UncertaintyNet net = UncertaintyNet::create(episode().channels(), 0);
    const PrototypeSet protos = support_prototypes(episode(), options(5));
    const SimilarityMaps sims = similarity(episode().query, protos);
    const int w = episode().query.width(), h = episode().query.height();
    for (auto _ : state) benchmark::DoNotOptimize(sigma_map(net, episode().query, protos, sims, w, h));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(episode().query.pixel_count()));
}
BENCHMARK(BM_SigmaMap);

void BM_TrainStep(benchmark::State& state) {
    const TrainOptions opts;
    const auto batch = episode_samples(source().episode(1, 1, 0), opts, static_cast<std::size_t>(state.range(0)), 0);
    TrainState train = TrainState::start(UncertaintyNet::create(episode().channels(), 0));
    for (auto _ : state) train = train_step(std::move(train), batch, 1e-4);
}
BENCHMARK(BM_TrainStep)->Arg(32);

void BM_SegmentSemiSupervised(benchmark::State& state) {
    const UncertaintyNet net = UncertaintyNet::create(episode().channels(), 0);
    BenchmarkConfig cfg;
    cfg.m_unlabeled = static_cast<int>(state.range(0));
    const SemiSupervisedConfig pipeline = cfg.pipeline(0);
    for (auto _ : state) benchmark::DoNotOptimize(segment_semisupervised(episode(), &net, pipeline));
}
BENCHMARK(BM_SegmentSemiSupervised)->Arg(0)->Arg(3);

} // namespace

BENCHMARK_MAIN();
