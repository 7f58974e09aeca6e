#include <benchmark/benchmark.h>

#include "qrsdet/denoise.hpp"
#include "qrsdet/labeling.hpp"
#include "qrsdet/model.hpp"
#include "qrsdet/nn_ops.hpp"
#include "qrsdet/pan_tompkins.hpp"
#include "qrsdet/peak_picker.hpp"
#include "qrsdet/rng.hpp"
#include "qrsdet/synth.hpp"

using namespace qrsdet;

namespace {

std::vector<double> thirty_second_strip(uint64_t seed) {
    SynthConfig cfg;
    cfg.duration_s = 30;
    cfg.white_noise_std_mv = 0.05;
    cfg.baseline_amplitude_mv = 0.2;
    cfg.rng_seed = seed;
    auto [rec, ann] = synthesize_ecg(cfg);
    return rec.channel_mv(0);
}

void BM_RemoveBaseline(benchmark::State& state) {
    auto mv = thirty_second_strip(1);
    for (auto _ : state)
        benchmark::DoNotOptimize(remove_baseline(mv, 360.0));
}
BENCHMARK(BM_RemoveBaseline);

void BM_DwtDenoise(benchmark::State& state) {
    auto mv = thirty_second_strip(2);
    for (auto _ : state)
        benchmark::DoNotOptimize(denoise(mv));
}
BENCHMARK(BM_DwtDenoise);

void BM_PanTompkins(benchmark::State& state) {
    auto mv = thirty_second_strip(3);
    for (auto _ : state)
        benchmark::DoNotOptimize(pt_detect(mv, 360.0));
}
BENCHMARK(BM_PanTompkins);

void BM_PeakPick(benchmark::State& state) {
    Rng rng(4);
    std::vector<double> p(3600, 0.0);
    for (int b = 0; b < 12; ++b) {
        const std::size_t c = rng.below(3600);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = static_cast<double>(i) - static_cast<double>(c);
            p[i] = std::max(p[i], 0.9 * std::exp(-d * d / 50.0));
        }
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(pick(p, 360.0));
}
BENCHMARK(BM_PeakPick);

void BM_Conv1dBottleneck(benchmark::State& state) {
    nn::Conv1d conv(256, 256, 3, Rng(5));
    Tensor x({1, 256, 113});
    Rng rng(6);
    for (auto& v : x.data)
        v = rng.normal();
    for (auto _ : state)
        benchmark::DoNotOptimize(conv.forward(x));
}
BENCHMARK(BM_Conv1dBottleneck);

void BM_ModelForward(benchmark::State& state) {
    ModelConfig cfg; // full-size configuration
    cfg.batch_size = 1;
    UNetBiLstm model(cfg);
    SynthConfig scfg;
    scfg.duration_s = 10;
    scfg.rng_seed = 7;
    auto [rec, ann] = synthesize_ecg(scfg);
    auto segs = make_segments(rec.channel_mv(0), ann.r_peak_indices(), 360.0, "b",
                              LabelConfig{});
    for (auto _ : state)
        benchmark::DoNotOptimize(model.forward(segs));
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
