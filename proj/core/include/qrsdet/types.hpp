#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qrsdet {

/// One signal lead as declared in a WFDB header.
struct ChannelInfo {
    std::string name;
    double gain_adu_per_mv = 200.0;
    int adc_zero = 0;
    int adc_resolution_bits = 12;
    int initial_value = 0;
};

/// A multi-channel sampled ECG record. Samples are raw ADC units; use
/// channel_mv() to convert to millivolts via (sample - adc_zero) / gain.
struct EcgRecord {
    std::string record_id;
    double sampling_rate_hz = 360.0;
    std::vector<ChannelInfo> channels;
    std::vector<std::vector<int32_t>> samples; // one vector per channel, equal lengths

    std::size_t n_channels() const { return channels.size(); }
    std::size_t n_samples() const { return samples.empty() ? 0 : samples[0].size(); }

    std::vector<double> channel_mv(std::size_t channel) const;

    /// Throws ConfigError if channel lengths differ, gain is zero or fs <= 0.
    void validate() const;
};

// MIT annotation type codes (subset of the standard code table).
namespace anncode {
inline constexpr uint8_t NORMAL = 1;   // normal beat
inline constexpr uint8_t LBBB = 2;     // left bundle branch block beat
inline constexpr uint8_t RBBB = 3;     // right bundle branch block beat
inline constexpr uint8_t ABERR = 4;    // aberrated atrial premature beat
inline constexpr uint8_t PVC = 5;      // premature ventricular contraction
inline constexpr uint8_t FUSION = 6;   // fusion of ventricular and normal beat
inline constexpr uint8_t NPC = 7;      // nodal (junctional) premature beat
inline constexpr uint8_t APC = 8;      // atrial premature beat
inline constexpr uint8_t SVPB = 9;     // supraventricular premature beat
inline constexpr uint8_t VESC = 10;    // ventricular escape beat
inline constexpr uint8_t NESC = 11;    // nodal (junctional) escape beat
inline constexpr uint8_t PACE = 12;    // paced beat
inline constexpr uint8_t UNKNOWN = 13; // unclassifiable beat
inline constexpr uint8_t NOISE = 14;   // signal quality change
inline constexpr uint8_t ARFCT = 16;   // isolated artifact
inline constexpr uint8_t STCH = 18;    // ST segment change
inline constexpr uint8_t TCH = 19;     // T-wave change
inline constexpr uint8_t NOTE = 22;    // comment annotation
inline constexpr uint8_t BBB = 25;     // bundle branch block beat
inline constexpr uint8_t PWAVE = 24;   // P-wave peak
inline constexpr uint8_t TWAVE = 27;   // T-wave peak
inline constexpr uint8_t RHYTHM = 28;  // rhythm change
inline constexpr uint8_t FLWAV = 31;   // ventricular flutter wave
inline constexpr uint8_t VFON = 32;    // start of ventricular flutter/fibrillation
inline constexpr uint8_t VFOFF = 33;   // end of ventricular flutter/fibrillation
inline constexpr uint8_t AESC = 34;    // atrial escape beat
inline constexpr uint8_t SVESC = 35;   // supraventricular escape beat
inline constexpr uint8_t NAPC = 37;    // non-conducted P wave
inline constexpr uint8_t PFUS = 38;    // fusion of paced and normal beat
inline constexpr uint8_t RONT = 41;    // R-on-T premature ventricular contraction

/// True for annotation codes that mark a QRS complex (the standard WFDB
/// beat-code set). Rhythm, quality and wave annotations return false.
bool is_beat(uint8_t code);
} // namespace anncode

struct Annotation {
    int64_t sample_index = 0;
    uint8_t code = 0;
};

/// Ordered R-peak annotations for one record. Beat annotations carry the
/// QRS positions; non-beat annotations (rhythm, quality, comments) are kept
/// in a side list instead of being dropped.
struct AnnotationSet {
    std::string record_id;
    std::vector<Annotation> beats;      // strictly increasing sample_index
    std::vector<Annotation> non_beats;  // everything else, also ordered

    std::vector<int64_t> r_peak_indices() const;

    /// Throws ConfigError unless beat indices are strictly increasing,
    /// non-negative and (when record_length > 0) within the record.
    void validate(int64_t record_length = 0) const;
};

} // namespace qrsdet
