#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qrsdet {

struct MatchCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;

    MatchCounts& operator+=(const MatchCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

/// Percentages; a metric whose denominator is zero is reported as undefined.
struct Metrics {
    std::optional<double> sensitivity;
    std::optional<double> positive_predictivity;
    std::optional<double> accuracy;
};

/// Greedy one-to-one matching: sweep the references in order, pair each with
/// the nearest unmatched detection within half the window (ties prefer the
/// earlier detection). Both lists must be sorted ascending.
MatchCounts match(std::span<const int64_t> detections, std::span<const int64_t> references,
                  double sampling_rate_hz, double window_ms = 75.0);

/// Se = TP/(TP+FN), +P = TP/(TP+FP), Accuracy = TP/(TP+FP+FN), as percent.
Metrics metrics(const MatchCounts& counts);

struct RecordResult {
    std::string record_id;
    MatchCounts counts;
    Metrics scores;
};

/// Per-record rows sorted by id plus an aggregate row whose metrics are
/// recomputed from the summed counts (never averaged percentages).
struct DetectionReport {
    std::vector<RecordResult> records;
    MatchCounts aggregate_counts;
    Metrics aggregate;
    std::string split_name;
    std::string config_hash;

    std::string to_json() const;
    std::string to_csv() const; // column order: TP, FP, FN, Se, +P, Accuracy
};

DetectionReport make_report(std::vector<RecordResult> rows, const std::string& split_name = {},
                            const std::string& config_hash = {});

} // namespace qrsdet
