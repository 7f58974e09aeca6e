#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "qrsdet/eval.hpp"
#include "qrsdet/peak_picker.hpp"
#include "qrsdet/types.hpp"

namespace qrsdet {

/// Pan & Tompkins, "A Real-Time QRS Detection Algorithm", IEEE Trans.
/// Biomed. Eng. 32(3), 1985. The integer-coefficient filters are designed
/// for 200 Hz, so other rates are resampled first and detections mapped
/// back.
struct PtConfig {
    double sampling_rate_hz = 360.0; // default input rate (the fs argument wins)
    double mwi_window_ms = 150.0;    // moving-window integral
    double refractory_ms = 200.0;
    double twave_window_ms = 360.0;  // T-wave rejection window after a QRS
    double learning_seconds = 2.0;   // threshold initialization span

    void validate() const;
};

/// Detector state after a classification event; exposed for tracing the
/// threshold-update identities in tests.
struct PtState {
    enum class Event { Qrs, SearchbackQrs, Noise };
    Event event = Event::Noise;
    int64_t peak_index_200hz = 0;  // integrated-peak position at 200 Hz
    double peak_value = 0;
    double spki = 0, npki = 0; // integrated-signal signal/noise peak estimates
    double spkf = 0, npkf = 0; // filtered-signal counterparts
    double thr_i1 = 0, thr_i2 = 0;
    double thr_f1 = 0, thr_f2 = 0;
    std::deque<double> rr_recent;  // last 8 RR intervals
    std::deque<double> rr_limited; // last 8 RR intervals within limits
    double rr_low = 0, rr_high = 0, rr_missed = 0;
};

struct PtPreprocessed {
    std::vector<double> filtered;   // bandpass output (5-15 Hz cascade)
    std::vector<double> derivative; // 5-point derivative
    std::vector<double> squared;
    std::vector<double> integrated; // moving-window integral
};

/// Linear-interpolation resampling.
std::vector<double> resample_linear(std::span<const double> signal, double fs_in, double fs_out);

/// Filter cascade at 200 Hz: recursive integer-coefficient low-pass and
/// high-pass, 5-point derivative, squaring, 150 ms moving-window integral.
/// The signal must be longer than the combined filter delay.
PtPreprocessed pt_preprocess(std::span<const double> signal_mv, double sampling_rate_hz,
                             const PtConfig& config = {});

/// Full detector: 2 s learning phase initializes the signal/noise peak
/// estimates, the first two beats seed the RR averages, then peaks above
/// THR-I1 (confirmed against THR-F1 on the filtered signal) are beats;
/// gaps beyond 166% of the current RR average trigger a search-back at the
/// halved thresholds; candidates inside the 200 ms refractory are ignored
/// and peaks 200-360 ms after a beat with less than half its slope are
/// rejected as T waves. Detections are mapped back to the raw signal and
/// refined to the local extremum within +/-40 ms.
PeakList pt_detect(std::span<const double> signal_mv, double sampling_rate_hz,
                   const PtConfig& config = {}, std::vector<PtState>* trace = nullptr);

struct PtLengthResult {
    double window_s = 0;
    DetectionReport report;
};

/// Split each record into independent windows of every requested length,
/// run pt_detect per window with no state carry-over and aggregate counts
/// per length.
std::vector<PtLengthResult> pt_segment_protocol(const std::vector<EcgRecord>& records,
                                                const std::vector<AnnotationSet>& annotations,
                                                std::span<const double> window_lengths_s,
                                                const PtConfig& config = {},
                                                std::size_t channel = 0,
                                                double match_window_ms = 75.0);

} // namespace qrsdet
