#include "qrsdet/synth.hpp"

#include <cmath>
#include <vector>

#include <json.hpp>

#include "qrsdet/errors.hpp"
#include "qrsdet/rng.hpp"

namespace qrsdet {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

// Bump geometry relative to the nominal RR interval. Scaling with RR keeps
// the morphology valid across 20-300 bpm (a T wave 300 ms after the R peak
// would collide with the next beat at high rates).
constexpr double kQrsSigmaFrac = 0.022;
constexpr double kPOffsetFrac = -0.25;
constexpr double kPSigmaFrac = 0.040;
constexpr double kTOffsetFrac = 0.32;
constexpr double kTSigmaFrac = 0.070;

constexpr double kGain = 200.0;
constexpr int kAdcZero = 1024;
} // namespace

void SynthConfig::validate() const {
    if (duration_s <= 0)
        throw ConfigError("duration_s must be positive");
    if (sampling_rate_hz <= 0)
        throw ConfigError("sampling_rate_hz must be positive");
    if (heart_rate_bpm < 20 || heart_rate_bpm > 300)
        throw ConfigError("heart_rate_bpm must be in [20, 300]");
    if (rr_jitter_fraction < 0 || rr_jitter_fraction >= 1)
        throw ConfigError("rr_jitter_fraction must be in [0, 1)");
    for (double a : {qrs_amplitude_mv, p_amplitude_mv, t_amplitude_mv, baseline_amplitude_mv,
                     powerline_amplitude_mv, white_noise_std_mv})
        if (a < 0)
            throw ConfigError("amplitudes must be non-negative");
}

std::pair<EcgRecord, AnnotationSet> synthesize_ecg(const SynthConfig& config,
                                                   const std::string& record_id) {
    config.validate();
    const double fs = config.sampling_rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::llround(config.duration_s * fs));
    const double rr = 60.0 / config.heart_rate_bpm;

    Rng master(config.rng_seed);
    Rng jitter_rng = master.stream(1);
    Rng noise_rng = master.stream(2);

    // Beat centers snapped to integer samples so each annotation is exactly
    // the argmax of its (noise-free) QRS bump.
    std::vector<int64_t> beat_samples;
    double center = 0.5 * rr;
    const double margin = 0.3 * rr;
    while (center <= config.duration_s - margin) {
        const int64_t idx = std::llround(center * fs);
        if (idx >= 0 && idx < static_cast<int64_t>(n))
            beat_samples.push_back(idx);
        double step = rr;
        if (config.rr_jitter_fraction > 0)
            step *= 1.0 + config.rr_jitter_fraction * jitter_rng.uniform(-1.0, 1.0);
        center += step;
    }

    std::vector<double> mv(n, 0.0);
    auto add_bump = [&](double mu_s, double sigma_s, double amplitude) {
        if (amplitude == 0)
            return;
        const double half_width = 4.0 * sigma_s;
        const int64_t lo = std::max<int64_t>(0, static_cast<int64_t>((mu_s - half_width) * fs));
        const int64_t hi =
            std::min<int64_t>(static_cast<int64_t>(n) - 1,
                              static_cast<int64_t>((mu_s + half_width) * fs) + 1);
        for (int64_t i = lo; i <= hi; ++i) {
            const double dt = i / fs - mu_s;
            mv[static_cast<std::size_t>(i)] +=
                amplitude * std::exp(-dt * dt / (2.0 * sigma_s * sigma_s));
        }
    };

    for (int64_t b : beat_samples) {
        const double mu = b / fs;
        add_bump(mu + kPOffsetFrac * rr, kPSigmaFrac * rr, config.p_amplitude_mv);
        add_bump(mu, kQrsSigmaFrac * rr, config.qrs_amplitude_mv);
        add_bump(mu + kTOffsetFrac * rr, kTSigmaFrac * rr, config.t_amplitude_mv);
    }

    if (config.baseline_amplitude_mv > 0)
        for (std::size_t i = 0; i < n; ++i)
            mv[i] += config.baseline_amplitude_mv *
                     std::sin(kTwoPi * config.baseline_frequency_hz * i / fs);
    if (config.powerline_amplitude_mv > 0)
        for (std::size_t i = 0; i < n; ++i)
            mv[i] += config.powerline_amplitude_mv *
                     std::sin(kTwoPi * config.powerline_frequency_hz * i / fs);
    if (config.white_noise_std_mv > 0)
        for (std::size_t i = 0; i < n; ++i)
            mv[i] += config.white_noise_std_mv * noise_rng.normal();

    if (config.invert_polarity)
        for (auto& v : mv)
            v = -v;

    EcgRecord rec;
    rec.record_id = record_id;
    rec.sampling_rate_hz = fs;
    ChannelInfo ch;
    ch.name = "synth";
    ch.gain_adu_per_mv = kGain;
    ch.adc_zero = kAdcZero;
    ch.adc_resolution_bits = 12;
    rec.channels.push_back(ch);
    rec.samples.emplace_back(n);
    for (std::size_t i = 0; i < n; ++i)
        rec.samples[0][i] = static_cast<int32_t>(std::lround(mv[i] * kGain)) + kAdcZero;
    rec.validate();

    AnnotationSet ann;
    ann.record_id = record_id;
    for (int64_t b : beat_samples)
        ann.beats.push_back({b, anncode::NORMAL});
    ann.validate(static_cast<int64_t>(n));
    return {std::move(rec), std::move(ann)};
}

SynthConfig synth_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    SynthConfig c;
    c.duration_s = j.value("duration_s", c.duration_s);
    c.sampling_rate_hz = j.value("sampling_rate_hz", c.sampling_rate_hz);
    c.heart_rate_bpm = j.value("heart_rate_bpm", c.heart_rate_bpm);
    c.rr_jitter_fraction = j.value("rr_jitter_fraction", c.rr_jitter_fraction);
    c.qrs_amplitude_mv = j.value("qrs_amplitude_mv", c.qrs_amplitude_mv);
    c.p_amplitude_mv = j.value("p_amplitude_mv", c.p_amplitude_mv);
    c.t_amplitude_mv = j.value("t_amplitude_mv", c.t_amplitude_mv);
    c.baseline_amplitude_mv = j.value("baseline_amplitude_mv", c.baseline_amplitude_mv);
    c.baseline_frequency_hz = j.value("baseline_frequency_hz", c.baseline_frequency_hz);
    c.powerline_amplitude_mv = j.value("powerline_amplitude_mv", c.powerline_amplitude_mv);
    c.powerline_frequency_hz = j.value("powerline_frequency_hz", c.powerline_frequency_hz);
    c.white_noise_std_mv = j.value("white_noise_std_mv", c.white_noise_std_mv);
    c.invert_polarity = j.value("invert_polarity", c.invert_polarity);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.validate();
    return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
    nlohmann::json j{{"duration_s", c.duration_s},
                     {"sampling_rate_hz", c.sampling_rate_hz},
                     {"heart_rate_bpm", c.heart_rate_bpm},
                     {"rr_jitter_fraction", c.rr_jitter_fraction},
                     {"qrs_amplitude_mv", c.qrs_amplitude_mv},
                     {"p_amplitude_mv", c.p_amplitude_mv},
                     {"t_amplitude_mv", c.t_amplitude_mv},
                     {"baseline_amplitude_mv", c.baseline_amplitude_mv},
                     {"baseline_frequency_hz", c.baseline_frequency_hz},
                     {"powerline_amplitude_mv", c.powerline_amplitude_mv},
                     {"powerline_frequency_hz", c.powerline_frequency_hz},
                     {"white_noise_std_mv", c.white_noise_std_mv},
                     {"invert_polarity", c.invert_polarity},
                     {"rng_seed", c.rng_seed}};
    return j.dump(2);
}

} // namespace qrsdet
