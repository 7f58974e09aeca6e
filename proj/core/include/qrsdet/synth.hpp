#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "qrsdet/types.hpp"

namespace qrsdet {

/// Configuration of the synthetic ECG generator used as a ground-truth data
/// source in tests and demos. Beats are sums of Gaussian bumps (P, QRS, T)
/// whose offsets and widths scale with the RR interval; baseline wander and
/// powerline interference are sines, measurement noise is white Gaussian.
struct SynthConfig {
    double duration_s = 30.0;
    double sampling_rate_hz = 360.0;
    double heart_rate_bpm = 60.0;
    double rr_jitter_fraction = 0.0; // each RR drawn as RR*(1 +/- U[-j, j])
    double qrs_amplitude_mv = 1.5;
    double p_amplitude_mv = 0.15;
    double t_amplitude_mv = 0.3;
    double baseline_amplitude_mv = 0.0;
    double baseline_frequency_hz = 0.3;
    double powerline_amplitude_mv = 0.0;
    double powerline_frequency_hz = 50.0;
    double white_noise_std_mv = 0.0;
    bool invert_polarity = false;
    uint64_t rng_seed = 1;

    void validate() const;
};

/// Generate a record plus exact QRS-center annotations. Deterministic for a
/// fixed rng_seed. The record is quantized at 200 ADC units/mV around an
/// ADC zero of 1024, mirroring the MITDB encoding.
std::pair<EcgRecord, AnnotationSet> synthesize_ecg(const SynthConfig& config,
                                                   const std::string& record_id = "synth");

/// Parse a SynthConfig from a JSON document (all fields optional).
SynthConfig synth_config_from_json(const std::string& json_text);
std::string synth_config_to_json(const SynthConfig& config);

} // namespace qrsdet
