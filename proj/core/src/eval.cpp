#include "qrsdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "qrsdet/errors.hpp"

namespace qrsdet {

MatchCounts match(std::span<const int64_t> detections, std::span<const int64_t> references,
                  double sampling_rate_hz, double window_ms) {
    if (!std::is_sorted(detections.begin(), detections.end()))
        throw ConfigError("match: detections must be sorted");
    if (!std::is_sorted(references.begin(), references.end()))
        throw ConfigError("match: references must be sorted");
    if (sampling_rate_hz <= 0)
        throw ConfigError("match: sampling rate must be positive");

    // half of the window, in samples (window is centered on the reference)
    const double half_window = window_ms * sampling_rate_hz / 2000.0;

    std::vector<char> used(detections.size(), 0);
    MatchCounts counts;
    std::size_t cursor = 0;
    for (const int64_t ref : references) {
        // advance to the first detection that could still match
        while (cursor < detections.size() &&
               (used[cursor] ||
                static_cast<double>(ref - detections[cursor]) > half_window))
            ++cursor;
        // nearest unmatched detection within the window; scan the local
        // neighborhood (detections are sorted)
        std::optional<std::size_t> best;
        double best_dist = 0.0;
        for (std::size_t j = cursor; j < detections.size(); ++j) {
            const double dist = std::abs(static_cast<double>(detections[j] - ref));
            if (static_cast<double>(detections[j] - ref) > half_window)
                break;
            if (used[j] || dist > half_window)
                continue;
            if (!best || dist < best_dist) { // ties keep the earlier detection
                best = j;
                best_dist = dist;
            }
        }
        if (best) {
            used[*best] = 1;
            ++counts.tp;
        } else {
            ++counts.fn;
        }
    }
    for (std::size_t j = 0; j < detections.size(); ++j)
        if (!used[j])
            ++counts.fp;
    return counts;
}

Metrics metrics(const MatchCounts& c) {
    Metrics m;
    if (c.tp + c.fn > 0)
        m.sensitivity = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tp + c.fp > 0)
        m.positive_predictivity =
            100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fp + c.fn > 0)
        m.accuracy =
            100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
    return m;
}

DetectionReport make_report(std::vector<RecordResult> rows, const std::string& split_name,
                            const std::string& config_hash) {
    if (rows.empty())
        throw ConfigError("report needs at least one record");
    std::sort(rows.begin(), rows.end(), [](const RecordResult& a, const RecordResult& b) {
        return a.record_id < b.record_id;
    });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].record_id == rows[i - 1].record_id)
            throw ConfigError("duplicate record id in report: " + rows[i].record_id);

    DetectionReport report;
    for (auto& r : rows) {
        r.scores = metrics(r.counts);
        report.aggregate_counts += r.counts;
    }
    report.records = std::move(rows);
    report.aggregate = metrics(report.aggregate_counts);
    report.split_name = split_name;
    report.config_hash = config_hash;
    return report;
}

namespace {
std::string fmt_metric(const std::optional<double>& v) {
    if (!v)
        return "undefined";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << *v;
    return os.str();
}

nlohmann::json metric_json(const std::optional<double>& v) {
    if (!v)
        return nullptr;
    return *v;
}
} // namespace

std::string DetectionReport::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    if (!split_name.empty())
        j["split"] = split_name;
    if (!config_hash.empty())
        j["config_hash"] = config_hash;
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json row;
        row["record"] = r.record_id;
        row["tp"] = r.counts.tp;
        row["fp"] = r.counts.fp;
        row["fn"] = r.counts.fn;
        row["se"] = metric_json(r.scores.sensitivity);
        row["ppv"] = metric_json(r.scores.positive_predictivity);
        row["accuracy"] = metric_json(r.scores.accuracy);
        j["records"].push_back(std::move(row));
    }
    j["aggregate"] = {{"tp", aggregate_counts.tp},
                      {"fp", aggregate_counts.fp},
                      {"fn", aggregate_counts.fn},
                      {"se", metric_json(aggregate.sensitivity)},
                      {"ppv", metric_json(aggregate.positive_predictivity)},
                      {"accuracy", metric_json(aggregate.accuracy)}};
    return j.dump(2);
}

std::string DetectionReport::to_csv() const {
    std::ostringstream os;
    os << "record,tp,fp,fn,se,ppv,accuracy\n";
    for (const auto& r : records)
        os << r.record_id << "," << r.counts.tp << "," << r.counts.fp << "," << r.counts.fn
           << "," << fmt_metric(r.scores.sensitivity) << ","
           << fmt_metric(r.scores.positive_predictivity) << ","
           << fmt_metric(r.scores.accuracy) << "\n";
    os << "overall," << aggregate_counts.tp << "," << aggregate_counts.fp << ","
       << aggregate_counts.fn << "," << fmt_metric(aggregate.sensitivity) << ","
       << fmt_metric(aggregate.positive_predictivity) << "," << fmt_metric(aggregate.accuracy)
       << "\n";
    return os.str();
}

} // namespace qrsdet
