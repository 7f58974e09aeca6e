#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qrsdet {

struct PickerConfig {
    double screening_threshold = 0.1;      // stage 1 region threshold
    double searchback_rr_factor = 1.5;     // gap >= factor * mean RR triggers search-back
    double searchback_threshold_factor = 0.5; // second threshold = factor * first
    double refractory_ms = 200.0;

    void validate() const;
};

struct PeakList {
    std::vector<int64_t> indices;       // strictly increasing sample positions
    std::vector<double> probabilities;  // score at each index

    std::size_t size() const { return indices.size(); }
};

/// Probability-sequence peak picking in three stages:
///  1. contiguous regions above the screening threshold contribute their
///     (leftmost) argmax as candidates;
///  2. every candidate gap of at least searchback_rr_factor times the mean
///     candidate RR is re-scanned at the halved threshold, excluding the
///     refractory neighborhood of both flanks;
///  3. while any adjacent pair is closer than the refractory period the
///     lower-probability member is removed (ties keep the earlier peak).
PeakList pick(std::span<const double> probabilities, double sampling_rate_hz,
              const PickerConfig& config = {});

/// Brute-force restatement of the same three rules (linear region scan,
/// explicit gap enumeration, refractory by iterated full rescans), kept as
/// an independent reference for equivalence fuzzing.
PeakList pick_oracle(std::span<const double> probabilities, double sampling_rate_hz,
                     const PickerConfig& config = {});

} // namespace qrsdet
