#include "qrsdet/pan_tompkins.hpp"

#include <algorithm>
#include <cmath>

#include "qrsdet/errors.hpp"

namespace qrsdet {

namespace {
constexpr double kInternalFs = 200.0;
constexpr std::size_t kLowPassDelay = 5;
constexpr std::size_t kHighPassDelay = 16;
constexpr std::size_t kBandpassDelay = kLowPassDelay + kHighPassDelay;
constexpr std::size_t kDerivativeDelay = 2;
} // namespace

void PtConfig::validate() const {
    if (sampling_rate_hz <= 0)
        throw ConfigError("sampling_rate_hz must be positive");
    if (mwi_window_ms <= 0 || refractory_ms <= 0 || twave_window_ms <= 0 ||
        learning_seconds <= 0)
        throw ConfigError("PT windows must be positive");
}

std::vector<double> resample_linear(std::span<const double> signal, double fs_in, double fs_out) {
    if (fs_in <= 0 || fs_out <= 0)
        throw ConfigError("sampling rates must be positive");
    if (signal.empty())
        return {};
    if (fs_in == fs_out)
        return {signal.begin(), signal.end()};
    const std::size_t n_out =
        static_cast<std::size_t>(std::floor(static_cast<double>(signal.size() - 1) * fs_out /
                                            fs_in)) + 1;
    std::vector<double> out(n_out);
    for (std::size_t k = 0; k < n_out; ++k) {
        const double t = static_cast<double>(k) * fs_in / fs_out;
        const std::size_t i = std::min(static_cast<std::size_t>(t), signal.size() - 1);
        const double frac = t - static_cast<double>(i);
        const std::size_t j = std::min(i + 1, signal.size() - 1);
        out[k] = signal[i] + frac * (signal[j] - signal[i]);
    }
    return out;
}

PtPreprocessed pt_preprocess(std::span<const double> signal_mv, double sampling_rate_hz,
                             const PtConfig& config) {
    config.validate();
    if (sampling_rate_hz <= 0)
        throw ConfigError("sampling rate must be positive");

    std::vector<double> x = resample_linear(signal_mv, sampling_rate_hz, kInternalFs);
    const std::size_t n = x.size();
    const std::size_t mwi =
        static_cast<std::size_t>(std::lround(config.mwi_window_ms * kInternalFs / 1000.0));
    const std::size_t min_len = kBandpassDelay + kDerivativeDelay + mwi;
    if (n <= min_len)
        throw ConfigError("signal shorter than the combined filter delay (" +
                          std::to_string(n) + " <= " + std::to_string(min_len) +
                          " samples at 200 Hz)");

    PtPreprocessed out;
    auto at = [](const std::vector<double>& v, long long i) {
        return i < 0 ? 0.0 : v[static_cast<std::size_t>(i)];
    };

    // low-pass: y[n] = 2y[n-1] - y[n-2] + x[n] - 2x[n-6] + x[n-12]  (gain 36)
    std::vector<double> lp(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const long long s = static_cast<long long>(i);
        lp[i] = 2.0 * at(lp, s - 1) - at(lp, s - 2) + x[i] - 2.0 * at(x, s - 6) +
                at(x, s - 12);
    }
    for (auto& v : lp)
        v /= 36.0;

    // high-pass as delay minus 32-point moving average: y[n] = x[n-16] - ma32[n]
    std::vector<double> hp(n, 0.0);
    double running = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const long long s = static_cast<long long>(i);
        running += lp[i] - at(lp, s - 32);
        hp[i] = at(lp, s - 16) - running / 32.0;
    }
    out.filtered = std::move(hp);

    // 5-point derivative: y[n] = (2x[n] + x[n-1] - x[n-3] - 2x[n-4]) / 8
    out.derivative.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const long long s = static_cast<long long>(i);
        out.derivative[i] = (2.0 * out.filtered[i] + at(out.filtered, s - 1) -
                             at(out.filtered, s - 3) - 2.0 * at(out.filtered, s - 4)) /
                            8.0;
    }

    out.squared.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        out.squared[i] = out.derivative[i] * out.derivative[i];

    // moving-window integral over mwi samples
    out.integrated.assign(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += out.squared[i];
        if (i >= mwi)
            acc -= out.squared[i - mwi];
        out.integrated[i] = acc / static_cast<double>(mwi);
    }
    return out;
}

namespace {

struct IntegratedPeak {
    std::size_t index;     // leftmost sample of the plateau
    double value;          // integrated amplitude
    double filtered_peak;  // max of the filtered signal in the preceding window
    double max_slope;      // max squared derivative in the preceding window
};

std::vector<IntegratedPeak> find_integrated_peaks(const PtPreprocessed& pre, std::size_t mwi) {
    const auto& s = pre.integrated;
    std::vector<IntegratedPeak> peaks;
    std::size_t i = 1;
    while (i < s.size()) {
        if (s[i] > s[i - 1]) {
            // rising edge; find the end of the plateau
            std::size_t j = i;
            while (j + 1 < s.size() && s[j + 1] == s[i])
                ++j;
            if (j + 1 >= s.size() || s[j + 1] < s[i]) {
                IntegratedPeak p;
                p.index = i;
                p.value = s[i];
                const std::size_t w0 = i >= mwi ? i - mwi : 0;
                p.filtered_peak = pre.filtered[w0];
                p.max_slope = pre.squared[w0];
                for (std::size_t k = w0; k <= i; ++k) {
                    p.filtered_peak = std::max(p.filtered_peak, pre.filtered[k]);
                    p.max_slope = std::max(p.max_slope, pre.squared[k]);
                }
                peaks.push_back(p);
                i = j + 1;
                continue;
            }
            i = j + 1;
            continue;
        }
        ++i;
    }
    return peaks;
}

struct RrTracker {
    std::deque<double> recent;  // last 8 RR intervals
    std::deque<double> limited; // last 8 RR intervals within limits
    double rr_low = 0, rr_high = 0, rr_missed = 0;
    bool limits_valid = false;

    static double mean(const std::deque<double>& q) {
        double s = 0;
        for (double v : q)
            s += v;
        return q.empty() ? 0.0 : s / static_cast<double>(q.size());
    }

    void push(double rr) {
        recent.push_back(rr);
        if (recent.size() > 8)
            recent.pop_front();
        // before limits exist every interval counts as regular
        if (!limits_valid || (rr >= rr_low && rr <= rr_high)) {
            limited.push_back(rr);
            if (limited.size() > 8)
                limited.pop_front();
            const double avg2 = mean(limited);
            rr_low = 0.92 * avg2;
            rr_high = 1.16 * avg2;
            rr_missed = 1.66 * avg2;
            limits_valid = true;
        }
    }
};

struct Thresholds {
    double spki = 0, npki = 0, spkf = 0, npkf = 0;
    double thr_i1 = 0, thr_i2 = 0, thr_f1 = 0, thr_f2 = 0;

    void recompute() {
        thr_i1 = npki + 0.25 * (spki - npki);
        thr_i2 = 0.5 * thr_i1;
        thr_f1 = npkf + 0.25 * (spkf - npkf);
        thr_f2 = 0.5 * thr_f1;
    }
};

} // namespace

PeakList pt_detect(std::span<const double> signal_mv, double sampling_rate_hz,
                   const PtConfig& config, std::vector<PtState>* trace) {
    config.validate();
    if (static_cast<double>(signal_mv.size()) <
        config.learning_seconds * sampling_rate_hz)
        throw ConfigError("pt_detect needs at least " +
                          std::to_string(config.learning_seconds) + " s of signal");

    const PtPreprocessed pre = pt_preprocess(signal_mv, sampling_rate_hz, config);
    const std::size_t n200 = pre.integrated.size();
    const std::size_t mwi =
        static_cast<std::size_t>(std::lround(config.mwi_window_ms * kInternalFs / 1000.0));
    const auto peaks = find_integrated_peaks(pre, mwi);

    const std::size_t refr200 =
        static_cast<std::size_t>(std::floor(config.refractory_ms * kInternalFs / 1000.0));
    const std::size_t twave200 =
        static_cast<std::size_t>(std::lround(config.twave_window_ms * kInternalFs / 1000.0));
    const std::size_t learn_end = std::min(
        n200, static_cast<std::size_t>(std::lround(config.learning_seconds * kInternalFs)));

    Thresholds thr;
    // learning phase 1: seed the running estimates from the first 2 s
    {
        double max_i = 0, mean_i = 0, max_f = 0, mean_f = 0;
        for (std::size_t i = 0; i < learn_end; ++i) {
            max_i = std::max(max_i, pre.integrated[i]);
            mean_i += pre.integrated[i];
            max_f = std::max(max_f, pre.filtered[i]);
            mean_f += pre.filtered[i];
        }
        mean_i /= static_cast<double>(learn_end);
        mean_f /= static_cast<double>(learn_end);
        thr.spki = max_i / 3.0;
        thr.npki = mean_i / 2.0;
        thr.spkf = max_f / 3.0;
        thr.npkf = mean_f / 2.0;
        thr.recompute();
    }

    RrTracker rr;
    std::vector<std::size_t> detected200; // integrated-peak indices of beats
    std::vector<double> detected_value;
    long long last_qrs = -1;
    double last_slope = 0.0;

    auto snapshot = [&](PtState::Event event, const IntegratedPeak& p) {
        if (!trace)
            return;
        PtState s;
        s.event = event;
        s.peak_index_200hz = static_cast<int64_t>(p.index);
        s.peak_value = p.value;
        s.spki = thr.spki;
        s.npki = thr.npki;
        s.spkf = thr.spkf;
        s.npkf = thr.npkf;
        s.thr_i1 = thr.thr_i1;
        s.thr_i2 = thr.thr_i2;
        s.thr_f1 = thr.thr_f1;
        s.thr_f2 = thr.thr_f2;
        s.rr_recent = rr.recent;
        s.rr_limited = rr.limited;
        s.rr_low = rr.rr_low;
        s.rr_high = rr.rr_high;
        s.rr_missed = rr.rr_missed;
        trace->push_back(std::move(s));
    };

    auto accept_qrs = [&](const IntegratedPeak& p, bool via_searchback) {
        const double wf = via_searchback ? 0.25 : 0.125;
        if (via_searchback) {
            thr.spki = wf * p.value + (1 - wf) * thr.spki;
            thr.spkf = wf * p.filtered_peak + (1 - wf) * thr.spkf;
        } else {
            thr.spki = 0.125 * p.value + 0.875 * thr.spki;
            thr.spkf = 0.125 * p.filtered_peak + 0.875 * thr.spkf;
        }
        thr.recompute();
        if (last_qrs >= 0)
            rr.push(static_cast<double>(static_cast<long long>(p.index) - last_qrs));
        last_qrs = static_cast<long long>(p.index);
        last_slope = p.max_slope;
        detected200.push_back(p.index);
        detected_value.push_back(p.value);
        snapshot(via_searchback ? PtState::Event::SearchbackQrs : PtState::Event::Qrs, p);
    };

    auto classify_noise = [&](const IntegratedPeak& p) {
        thr.npki = 0.125 * p.value + 0.875 * thr.npki;
        thr.npkf = 0.125 * p.filtered_peak + 0.875 * thr.npkf;
        thr.recompute();
        snapshot(PtState::Event::Noise, p);
    };

    for (std::size_t pi = 0; pi < peaks.size(); ++pi) {
        const auto& p = peaks[pi];

        // search-back: the gap to this peak exceeds the missed limit. The
        // confirmation runs on the filtered channel: a beat at a fraction a
        // of normal amplitude keeps a of the filtered peak but only a^2 of
        // the integrated energy, so the halved integrated threshold would
        // still reject exactly the low beats search-back exists to recover.
        if (last_qrs >= 0 && rr.limits_valid && rr.rr_missed > 0 &&
            static_cast<double>(static_cast<long long>(p.index) - last_qrs) > rr.rr_missed) {
            const IntegratedPeak* best = nullptr;
            for (std::size_t pj = 0; pj < pi; ++pj) {
                const auto& q = peaks[pj];
                if (static_cast<long long>(q.index) <=
                    last_qrs + static_cast<long long>(refr200))
                    continue;
                if (q.index >= p.index)
                    break;
                if (q.filtered_peak > thr.thr_f2 && (!best || q.value > best->value))
                    best = &q;
            }
            if (best)
                accept_qrs(*best, /*via_searchback=*/true);
        }

        // refractory blanking
        if (last_qrs >= 0 &&
            static_cast<long long>(p.index) - last_qrs <
                static_cast<long long>(refr200))
            continue;

        // T-wave rejection between 200 and 360 ms after the last beat
        if (last_qrs >= 0 &&
            static_cast<long long>(p.index) - last_qrs <
                static_cast<long long>(twave200) &&
            p.max_slope < 0.5 * last_slope) {
            classify_noise(p);
            continue;
        }

        if (p.value > thr.thr_i1 && p.filtered_peak > thr.thr_f1)
            accept_qrs(p, /*via_searchback=*/false);
        else
            classify_noise(p);
    }

    // map integrated fiducials back to the raw record: locate the bandpass
    // peak in the window feeding the integrator, undo the filter delay, then
    // refine to the raw extremum within +/-40 ms
    PeakList out;
    const long long refine =
        std::max<long long>(1, std::llround(0.040 * sampling_rate_hz));
    for (std::size_t k = 0; k < detected200.size(); ++k) {
        const std::size_t c = detected200[k];
        const std::size_t w0 = c >= mwi ? c - mwi : 0;
        std::size_t f200 = w0;
        for (std::size_t j = w0; j <= c; ++j)
            if (pre.filtered[j] > pre.filtered[f200])
                f200 = j;
        const long long r200 =
            std::max<long long>(0, static_cast<long long>(f200) -
                                       static_cast<long long>(kBandpassDelay));
        long long r_orig = std::llround(static_cast<double>(r200) * sampling_rate_hz /
                                        kInternalFs);
        r_orig = std::clamp<long long>(r_orig, 0,
                                       static_cast<long long>(signal_mv.size()) - 1);
        const long long lo = std::max<long long>(0, r_orig - refine);
        const long long hi = std::min<long long>(
            static_cast<long long>(signal_mv.size()) - 1, r_orig + refine);
        // deviation baseline: median over a window wider than any QRS, so
        // the apex dominates regardless of polarity
        const long long base_half = std::max<long long>(refine, std::llround(0.150 * sampling_rate_hz));
        const long long blo = std::max<long long>(0, r_orig - base_half);
        const long long bhi = std::min<long long>(
            static_cast<long long>(signal_mv.size()) - 1, r_orig + base_half);
        std::vector<double> window(signal_mv.begin() + blo, signal_mv.begin() + bhi + 1);
        std::nth_element(window.begin(), window.begin() + window.size() / 2, window.end());
        const double baseline = window[window.size() / 2];
        long long best = lo;
        double best_dev = std::abs(signal_mv[static_cast<std::size_t>(lo)] - baseline);
        for (long long i = lo + 1; i <= hi; ++i) {
            const double dev = std::abs(signal_mv[static_cast<std::size_t>(i)] - baseline);
            if (dev > best_dev) {
                best_dev = dev;
                best = i;
            }
        }
        out.indices.push_back(best);
        out.probabilities.push_back(detected_value[k]);
    }

    // refinement may nudge neighbors together; re-impose the refractory gap
    const int64_t refr_orig = static_cast<int64_t>(
        std::floor(config.refractory_ms * sampling_rate_hz / 1000.0));
    std::size_t at = 0;
    while (out.indices.size() >= 2 && at + 1 < out.indices.size()) {
        if (out.indices[at + 1] - out.indices[at] < refr_orig) {
            const std::size_t drop =
                out.probabilities[at + 1] > out.probabilities[at] ? at : at + 1;
            out.indices.erase(out.indices.begin() + static_cast<std::ptrdiff_t>(drop));
            out.probabilities.erase(out.probabilities.begin() +
                                    static_cast<std::ptrdiff_t>(drop));
            if (at > 0)
                --at;
        } else {
            ++at;
        }
    }
    return out;
}

std::vector<PtLengthResult> pt_segment_protocol(const std::vector<EcgRecord>& records,
                                                const std::vector<AnnotationSet>& annotations,
                                                std::span<const double> window_lengths_s,
                                                const PtConfig& config, std::size_t channel,
                                                double match_window_ms) {
    if (records.size() != annotations.size())
        throw ConfigError("records/annotations count mismatch");
    std::vector<PtLengthResult> results;
    for (const double window_s : window_lengths_s) {
        std::vector<RecordResult> rows;
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto mv = records[r].channel_mv(channel);
            const double fs = records[r].sampling_rate_hz;
            const auto window = static_cast<std::size_t>(std::llround(window_s * fs));
            std::vector<int64_t> detections;
            for (std::size_t start = 0; start < mv.size(); start += window) {
                const std::size_t stop = std::min(mv.size(), start + window);
                const std::span<const double> piece(mv.data() + start, stop - start);
                // windows too short for the detector contribute no detections
                if (static_cast<double>(piece.size()) <
                    std::max(config.learning_seconds * fs, 0.5 * fs))
                    continue;
                try {
                    const PeakList found = pt_detect(piece, fs, config);
                    for (int64_t idx : found.indices)
                        detections.push_back(idx + static_cast<int64_t>(start));
                } catch (const ConfigError&) {
                    // window below the filter minimum: no detections
                }
            }
            std::sort(detections.begin(), detections.end());
            RecordResult row;
            row.record_id = records[r].record_id;
            row.counts = match(detections, annotations[r].r_peak_indices(), fs,
                               match_window_ms);
            rows.push_back(std::move(row));
        }
        PtLengthResult lr;
        lr.window_s = window_s;
        if (rows.empty())
            lr.report.split_name = "pt-" + std::to_string(window_s) + "s";
        else
            lr.report = make_report(std::move(rows), "pt-" + std::to_string(window_s) + "s");
        results.push_back(std::move(lr));
    }
    return results;
}

} // namespace qrsdet
