#include <benchmark/benchmark.h>

#include "spectradiff/augmenters.hpp"
#include "spectradiff/evaluate.hpp"
#include "spectradiff/sampler.hpp"
#include "spectradiff/training.hpp"

namespace sd = spectradiff;

namespace {

// Desk-scale shapes: 32 bands, 3 classes, 12 training rows per class.
const sd::Dataset& desk_data() {
    static const auto ds = sd::make_benchmark(3, 12, 32, 0);
    return ds;
}

sd::DenoiserConfig desk_denoiser() {
    sd::DenoiserConfig dc;
    dc.bands = 32;
    dc.num_classes = 3;
    return dc;
}

void BM_DiffusionTrainStep(benchmark::State& state) {
    const auto& ds = desk_data();
    sd::ScheduleConfig sc;
    sc.timesteps = 100;
    const auto sched = sd::build_schedule(sc);
    sd::Denoiser model(desk_denoiser(), 1);
    sd::DiffusionTrainer trainer(model, sched, {}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.train_step(ds.samples, ds.labels));
    }
    state.counters["rows/s"] = benchmark::Counter(static_cast<double>(ds.size()), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_DiffusionTrainStep)->Unit(benchmark::kMillisecond);

void BM_ReverseStep(benchmark::State& state) {
    sd::ScheduleConfig sc;
    sc.timesteps = 100;
    const auto sched = sd::build_schedule(sc);
    sd::Denoiser model(desk_denoiser(), 3);
    const auto rows = static_cast<std::size_t>(state.range(0));
    sd::Rng init(4);
    sd::Matrix x(rows, 32);
    for (auto& v : x.data()) v = init.normal();
    std::vector<sd::Rng> rngs(rows);
    const std::vector<int> y(rows, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(sd::p_sample_step(x, 50, y, model, sched, rngs));
    }
    state.counters["chains/s"] = benchmark::Counter(static_cast<double>(rows), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_ReverseStep)->Arg(1)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_ClassifierEpoch(benchmark::State& state) {
    const auto& ds = desk_data();
    sd::ClassifierConfig cc;
    cc.bands = 32;
    cc.num_classes = 3;
    sd::AugmentConfig aug;
    aug.method = sd::AugmentMethod::jitter;
    aug.per_class_count = static_cast<int>(state.range(0));
    const auto train = sd::augment_dataset(ds, aug);
    sd::ClassifierTrainConfig tc;
    tc.epochs = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(sd::train_classifier(train, ds, cc, tc, 5));
    }
    state.counters["rows"] = static_cast<double>(train.size());
}
BENCHMARK(BM_ClassifierEpoch)->Arg(0)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Smote(benchmark::State& state) {
    const auto ds = sd::make_benchmark(3, 200, 32, 6);
    sd::AugmentConfig aug;
    aug.method = sd::AugmentMethod::smote;
    aug.per_class_count = 100;
    for (auto _ : state) {
        benchmark::DoNotOptimize(sd::augment_dataset(ds, aug));
    }
}
BENCHMARK(BM_Smote)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
