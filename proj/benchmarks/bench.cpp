#include <benchmark/benchmark.h>

#include "remifill/infill.hpp"
#include "remifill/ingest.hpp"
#include "remifill/metrics.hpp"
#include "remifill/model.hpp"
#include "remifill/rng.hpp"
#include "remifill/train.hpp"

using namespace remifill;

namespace {

std::vector<BarNotes> bench_bars(int n_bars, int notes_per_bar) {
    Rng rng(99);
    std::vector<BarNotes> bars(static_cast<std::size_t>(n_bars));
    for (int b = 0; b < n_bars; ++b)
        for (int i = 0; i < notes_per_bar; ++i)
            bars[static_cast<std::size_t>(b)].push_back(
                {b, static_cast<int>(rng.next_below(16)),
                 40 + static_cast<int>(rng.next_below(40)),
                 1 + static_cast<int>(rng.next_below(8)), 120});
    return bars;
}

const std::vector<InfillingExample>& bench_examples() {
    static auto examples = [] {
        auto songs = make_synthetic_corpus(1, 2, {"i1 A2 B2 A2 B2 o1"});
        std::vector<InfillingExample> out;
        for (const Song& song : songs) {
            auto built = build_training_examples(song);
            out.insert(out.end(), built.begin(), built.end());
        }
        return out;
    }();
    return examples;
}

ModelConfig bench_config() {
    ModelConfig config = ModelConfig::tiny();
    config.heads = 2;
    config.cross_heads = 2;
    return config;
}

} // namespace

static void EncodeBars(benchmark::State& state) {
    auto bars = bench_bars(static_cast<int>(state.range(0)), 5);
    std::vector<int> struct_ids(bars.size(), 1);
    for (auto _ : state) {
        TokenSeq seq = encode_bars(bars, struct_ids, true);
        benchmark::DoNotOptimize(seq);
    }
}
BENCHMARK(EncodeBars)->Arg(4)->Arg(16)->Arg(32);

static void DecodeTokens(benchmark::State& state) {
    auto bars = bench_bars(static_cast<int>(state.range(0)), 5);
    TokenSeq seq = encode_bars(bars, std::vector<int>(bars.size(), 1), true);
    for (auto _ : state) {
        auto notes = decode(seq);
        benchmark::DoNotOptimize(notes);
    }
}
BENCHMARK(DecodeTokens)->Arg(4)->Arg(16)->Arg(32);

static void ForwardPass(benchmark::State& state) {
    ModelConfig config = bench_config();
    Model model(config, 1);
    Batch batch = Batch::from_examples({bench_examples()[0]}, config);
    for (auto _ : state) {
        auto logits = model.forward_example(batch.examples[0]);
        benchmark::DoNotOptimize(logits);
    }
}
BENCHMARK(ForwardPass);

static void TrainStep(benchmark::State& state) {
    ModelConfig config = bench_config();
    Model model(config, 1);
    Batch batch = Batch::from_examples(
        {bench_examples()[0], bench_examples()[1 % bench_examples().size()]}, config);
    for (auto _ : state) {
        ad::Var loss = loss_var(model, batch);
        ad::backward(loss);
        model.parameters().zero_grads();
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(TrainStep);

static void NucleusSample(benchmark::State& state) {
    Rng rng(7);
    std::vector<double> dist(216);
    double z = 0;
    for (double& p : dist) {
        p = rng.next_double();
        z += p;
    }
    for (double& p : dist) p /= z;
    for (auto _ : state) benchmark::DoNotOptimize(nucleus_sample(dist, 0.9, rng));
}
BENCHMARK(NucleusSample);

static void MelodyDistance(benchmark::State& state) {
    const int bars = static_cast<int>(state.range(0));
    Segment a{decode(encode_bars(bench_bars(bars, 5), std::vector<int>(bars, 1), false)), bars};
    Segment b{decode(encode_bars(bench_bars(bars, 4), std::vector<int>(bars, 1), false)), bars};
    for (auto _ : state) benchmark::DoNotOptimize(melody_distance_D(a, b));
}
BENCHMARK(MelodyDistance)->Arg(2)->Arg(4)->Arg(8);

BENCHMARK_MAIN();
