#include "qrsdet/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "qrsdet/errors.hpp"

namespace qrsdet {

void LabelConfig::validate() const {
    if (sigma_samples <= 0)
        throw ConfigError("sigma_samples must be positive");
}

void Segment::validate() const {
    const std::size_t n = channels[0].size();
    if (channels[1].size() != n || target.size() != n)
        throw ConfigError("segment channel/target lengths differ");
    for (std::size_t i = 0; i < n; ++i)
        if (channels[1][i] != -channels[0][i])
            throw ConfigError("segment channel 2 must be the exact negation of channel 1");
    for (double t : target)
        if (!(t >= 0.0 && t <= 1.0))
            throw ConfigError("segment target values must lie in [0, 1]");
    for (int64_t p : r_peaks)
        if (p < 0 || p >= static_cast<int64_t>(n))
            throw ConfigError("segment r_peak index out of range");
}

std::vector<SegmentWindow> segment_record(std::span<const double> signal_mv,
                                          std::span<const int64_t> r_peaks,
                                          double sampling_rate_hz, const std::string& record_id,
                                          double window_s) {
    if (sampling_rate_hz <= 0 || window_s <= 0)
        throw ConfigError("sampling rate and window must be positive");
    const double exact = window_s * sampling_rate_hz;
    const int64_t window = std::llround(exact);
    if (std::abs(exact - window) > 1e-9)
        throw ConfigError("window_s * fs must be an integer sample count");

    const int64_t n_windows = static_cast<int64_t>(signal_mv.size()) / window;
    std::vector<SegmentWindow> out;
    out.reserve(static_cast<std::size_t>(n_windows));
    std::size_t peak_cursor = 0;
    for (int64_t w = 0; w < n_windows; ++w) {
        SegmentWindow seg;
        seg.record_id = record_id;
        seg.start_sample = w * window;
        seg.samples_mv.assign(signal_mv.begin() + seg.start_sample,
                              signal_mv.begin() + seg.start_sample + window);
        while (peak_cursor < r_peaks.size() && r_peaks[peak_cursor] < seg.start_sample + window) {
            const int64_t local = r_peaks[peak_cursor] - seg.start_sample;
            if (local >= 0)
                seg.r_peaks.push_back(local);
            ++peak_cursor;
        }
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<double> normalize_channel(std::span<const double> channel) {
    const std::size_t n = channel.size();
    std::vector<double> out(n, 0.0);
    if (n == 0)
        return out;
    double mean = 0.0;
    for (double v : channel)
        mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : channel)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double std_dev = std::sqrt(var);
    if (std_dev < 1e-8)
        return out; // degenerate channel is defined to map to zeros
    const double inv = 1.0 / std_dev;
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (channel[i] - mean) * inv;
    return out;
}

std::array<std::vector<double>, 2> make_dual_channel(std::vector<double> normalized) {
    std::vector<double> mirrored(normalized.size());
    for (std::size_t i = 0; i < normalized.size(); ++i)
        mirrored[i] = -normalized[i];
    return {std::move(normalized), std::move(mirrored)};
}

std::vector<double> make_target(std::span<const int64_t> r_peaks, std::size_t length,
                                const LabelConfig& config) {
    config.validate();
    std::vector<double> target(length, 0.0);
    for (int64_t p : r_peaks) {
        if (p < 0 || p >= static_cast<int64_t>(length))
            throw ConfigError("r_peak index " + std::to_string(p) + " outside [0, " +
                              std::to_string(length) + ")");
        if (config.mode == LabelMode::Binary) {
            target[static_cast<std::size_t>(p)] = 1.0;
            continue;
        }
        const double sigma = config.sigma_samples;
        // beyond ~7 sigma the bump underflows any float comparison we do
        const int64_t radius = static_cast<int64_t>(std::ceil(7.0 * sigma));
        const int64_t lo = std::max<int64_t>(0, p - radius);
        const int64_t hi = std::min<int64_t>(static_cast<int64_t>(length) - 1, p + radius);
        for (int64_t i = lo; i <= hi; ++i) {
            const double d = static_cast<double>(i - p);
            const double bump = std::exp(-d * d / (2.0 * sigma * sigma));
            auto& cell = target[static_cast<std::size_t>(i)];
            cell = std::max(cell, bump); // overlapping bumps combine by max
        }
    }
    return target;
}

std::vector<Segment> make_segments(std::span<const double> signal_mv,
                                   std::span<const int64_t> r_peaks, double sampling_rate_hz,
                                   const std::string& record_id, const LabelConfig& config,
                                   double window_s) {
    auto windows = segment_record(signal_mv, r_peaks, sampling_rate_hz, record_id, window_s);
    std::vector<Segment> out;
    out.reserve(windows.size());
    for (auto& w : windows) {
        Segment seg;
        seg.record_id = w.record_id;
        seg.start_sample = w.start_sample;
        seg.channels = make_dual_channel(normalize_channel(w.samples_mv));
        seg.target = make_target(w.r_peaks, w.samples_mv.size(), config);
        seg.r_peaks = std::move(w.r_peaks);
        out.push_back(std::move(seg));
    }
    return out;
}

namespace {
const std::vector<std::string> kTrainIds = {
    "101", "106", "108", "109", "112", "114", "115", "116", "118", "119", "122",
    "124", "201", "203", "205", "207", "208", "209", "215", "220", "223", "230"};
const std::vector<std::string> kTestIds = {
    "100", "103", "105", "111", "113", "117", "121", "123", "200", "202", "210",
    "212", "213", "214", "219", "221", "222", "228", "231", "232", "233", "234"};
const std::vector<std::string> kExcludedIds = {"102", "104", "107", "217"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}
} // namespace

bool SplitSpec::is_train(const std::string& id) const { return contains(train_ids, id); }
bool SplitSpec::is_test(const std::string& id) const { return contains(test_ids, id); }
bool SplitSpec::is_excluded(const std::string& id) const { return contains(excluded_ids, id); }

void SplitSpec::validate() const {
    std::set<std::string> seen;
    for (const auto& id : train_ids)
        if (!seen.insert(id).second)
            throw ConfigError("duplicate record id in split: " + id);
    for (const auto& id : test_ids)
        if (!seen.insert(id).second)
            throw ConfigError("record id in both sides of the split: " + id);
    for (const auto& id : excluded_ids)
        if (!seen.insert(id).second)
            throw ConfigError("excluded record id also assigned: " + id);
}

SplitSpec aami_split() {
    SplitSpec s;
    s.train_ids = kTrainIds;
    s.test_ids = kTestIds;
    s.excluded_ids = kExcludedIds;
    s.validate();
    return s;
}

SplitSide split_side(const SplitSpec& split, const std::string& record_id) {
    if (split.is_excluded(record_id))
        return SplitSide::Excluded;
    if (split.is_train(record_id))
        return SplitSide::Train;
    if (split.is_test(record_id))
        return SplitSide::Test;
    return SplitSide::Unknown;
}

} // namespace qrsdet
