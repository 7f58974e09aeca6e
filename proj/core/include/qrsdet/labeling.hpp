#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrsdet/types.hpp"

namespace qrsdet {

enum class LabelMode { Binary, Smooth };

struct LabelConfig {
    LabelMode mode = LabelMode::Smooth;
    double sigma_samples = 5.0; // Gaussian bump width of the smooth targets

    void validate() const;
};

/// A 10-s training window: two channels (the normalized signal and its exact
/// negation), the target sequence in [0,1] and the local R-peak indices.
struct Segment {
    std::string record_id;
    int64_t start_sample = 0;
    std::array<std::vector<double>, 2> channels;
    std::vector<double> target;
    std::vector<int64_t> r_peaks; // local indices in [0, length)

    std::size_t length() const { return channels[0].size(); }
    void validate() const;
};

/// A raw (pre-normalization) window produced by segment_record.
struct SegmentWindow {
    std::string record_id;
    int64_t start_sample = 0;
    std::vector<double> samples_mv;
    std::vector<int64_t> r_peaks; // local indices
};

/// Cut a signal into consecutive non-overlapping windows of window_s
/// seconds; the trailing partial window is dropped. Annotations landing on a
/// window boundary belong to the window containing their sample.
std::vector<SegmentWindow> segment_record(std::span<const double> signal_mv,
                                          std::span<const int64_t> r_peaks,
                                          double sampling_rate_hz, const std::string& record_id,
                                          double window_s = 10.0);

/// Per-segment z-score; channels with standard deviation below 1e-8 map to
/// all zeros.
std::vector<double> normalize_channel(std::span<const double> channel);

/// Row 0 = the channel, row 1 = its elementwise negation.
std::array<std::vector<double>, 2> make_dual_channel(std::vector<double> normalized);

/// Build the target sequence. Smooth mode places a unit-height Gaussian bump
/// exp(-(i-p)^2 / (2 sigma^2)) at each peak, combining overlaps by
/// elementwise max; binary mode marks the peak samples only.
std::vector<double> make_target(std::span<const int64_t> r_peaks, std::size_t length,
                                const LabelConfig& config);

/// segment -> normalize -> mirror -> label, for a whole record.
std::vector<Segment> make_segments(std::span<const double> signal_mv,
                                   std::span<const int64_t> r_peaks, double sampling_rate_hz,
                                   const std::string& record_id, const LabelConfig& config,
                                   double window_s = 10.0);

/// The patient-disjoint MIT-BIH train/test partition with the four
/// paced-beat records excluded.
struct SplitSpec {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::vector<std::string> excluded_ids;

    bool is_train(const std::string& id) const;
    bool is_test(const std::string& id) const;
    bool is_excluded(const std::string& id) const;
    void validate() const;
};

SplitSpec aami_split();

enum class SplitSide { Train, Test, Excluded, Unknown };
SplitSide split_side(const SplitSpec& split, const std::string& record_id);

} // namespace qrsdet
