#include "qrsdet/peak_picker.hpp"

#include <algorithm>
#include <cmath>

#include "qrsdet/errors.hpp"

namespace qrsdet {

void PickerConfig::validate() const {
    if (!(screening_threshold > 0.0 && screening_threshold < 1.0))
        throw ConfigError("screening_threshold must be in (0, 1)");
    if (searchback_rr_factor <= 0.0 || searchback_threshold_factor <= 0.0)
        throw ConfigError("search-back factors must be positive");
    if (refractory_ms < 0.0)
        throw ConfigError("refractory_ms must be non-negative");
}

namespace {

struct Candidate {
    int64_t index;
    double probability;
};

int64_t refractory_samples(double refractory_ms, double fs) {
    return static_cast<int64_t>(std::floor(refractory_ms * fs / 1000.0));
}

/// Mean candidate RR in samples; both implementations share this exact
/// expression so their floating-point comparisons agree bit for bit.
double mean_rr(const std::vector<Candidate>& candidates) {
    const int64_t total = candidates.back().index - candidates.front().index;
    return static_cast<double>(total) / static_cast<double>(candidates.size() - 1);
}

PeakList to_peak_list(const std::vector<Candidate>& candidates) {
    PeakList out;
    out.indices.reserve(candidates.size());
    out.probabilities.reserve(candidates.size());
    for (const auto& c : candidates) {
        out.indices.push_back(c.index);
        out.probabilities.push_back(c.probability);
    }
    return out;
}

} // namespace

PeakList pick(std::span<const double> probabilities, double sampling_rate_hz,
              const PickerConfig& config) {
    config.validate();
    if (sampling_rate_hz <= 0)
        throw ConfigError("sampling rate must be positive");
    const int64_t n = static_cast<int64_t>(probabilities.size());
    const int64_t refr = refractory_samples(config.refractory_ms, sampling_rate_hz);

    // stage 1: one pass, regions strictly above the screening threshold,
    // leftmost argmax per region
    std::vector<Candidate> candidates;
    const double thr = config.screening_threshold;
    int64_t i = 0;
    while (i < n) {
        if (probabilities[static_cast<std::size_t>(i)] > thr) {
            int64_t best_at = i;
            double best = probabilities[static_cast<std::size_t>(i)];
            int64_t j = i + 1;
            while (j < n && probabilities[static_cast<std::size_t>(j)] > thr) {
                if (probabilities[static_cast<std::size_t>(j)] > best) {
                    best = probabilities[static_cast<std::size_t>(j)];
                    best_at = j;
                }
                ++j;
            }
            candidates.push_back({best_at, best});
            i = j;
        } else {
            ++i;
        }
    }

    // stage 2: re-scan long gaps at the lowered threshold
    if (candidates.size() >= 2) {
        const double gap_limit = config.searchback_rr_factor * mean_rr(candidates);
        const double thr2 = config.searchback_threshold_factor * config.screening_threshold;
        std::vector<Candidate> found;
        for (std::size_t c = 0; c + 1 < candidates.size(); ++c) {
            const int64_t left = candidates[c].index;
            const int64_t right = candidates[c + 1].index;
            if (static_cast<double>(right - left) < gap_limit)
                continue;
            // open interval minus the refractory neighborhood of each flank
            const int64_t lo = left + refr + 1;
            const int64_t hi = right - refr - 1;
            int64_t k = std::max<int64_t>(lo, 0);
            while (k <= hi) {
                if (probabilities[static_cast<std::size_t>(k)] > thr2) {
                    int64_t best_at = k;
                    double best = probabilities[static_cast<std::size_t>(k)];
                    int64_t j = k + 1;
                    while (j <= hi && probabilities[static_cast<std::size_t>(j)] > thr2) {
                        if (probabilities[static_cast<std::size_t>(j)] > best) {
                            best = probabilities[static_cast<std::size_t>(j)];
                            best_at = j;
                        }
                        ++j;
                    }
                    found.push_back({best_at, best});
                    k = j;
                } else {
                    ++k;
                }
            }
        }
        if (!found.empty()) {
            candidates.insert(candidates.end(), found.begin(), found.end());
            std::sort(candidates.begin(), candidates.end(),
                      [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
        }
    }

    // stage 3: refractory elimination; processing left to right with a
    // single back-step after each removal visits violations in the same
    // order as a full restart (earlier pairs are unchanged and stay legal)
    std::size_t at = 0;
    while (candidates.size() >= 2 && at + 1 < candidates.size()) {
        const int64_t gap = candidates[at + 1].index - candidates[at].index;
        if (gap < refr) {
            // remove the lower-probability member; ties keep the earlier peak
            if (candidates[at + 1].probability > candidates[at].probability)
                candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(at));
            else
                candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(at) + 1);
            if (at > 0)
                --at;
        } else {
            ++at;
        }
    }
    return to_peak_list(candidates);
}

PeakList pick_oracle(std::span<const double> probabilities, double sampling_rate_hz,
                     const PickerConfig& config) {
    config.validate();
    if (sampling_rate_hz <= 0)
        throw ConfigError("sampling rate must be positive");
    const std::size_t n = probabilities.size();
    const int64_t refr = refractory_samples(config.refractory_ms, sampling_rate_hz);

    // stage 1, literal form: mark everything above the threshold, then walk
    // the mask run by run
    std::vector<char> above(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        above[i] = probabilities[i] > config.screening_threshold ? 1 : 0;

    auto region_maxima = [&](int64_t lo, int64_t hi, double threshold) {
        std::vector<Candidate> out;
        int64_t run_start = -1;
        for (int64_t i = lo; i <= hi + 1; ++i) {
            const bool in_run =
                i <= hi && probabilities[static_cast<std::size_t>(i)] > threshold;
            if (in_run && run_start < 0)
                run_start = i;
            if (!in_run && run_start >= 0) {
                int64_t best_at = run_start;
                for (int64_t j = run_start; j < i; ++j)
                    if (probabilities[static_cast<std::size_t>(j)] >
                        probabilities[static_cast<std::size_t>(best_at)])
                        best_at = j;
                out.push_back({best_at, probabilities[static_cast<std::size_t>(best_at)]});
                run_start = -1;
            }
        }
        return out;
    };

    std::vector<Candidate> candidates;
    if (n > 0)
        candidates =
            region_maxima(0, static_cast<int64_t>(n) - 1, config.screening_threshold);

    // stage 2 by explicit gap enumeration over the stage-1 candidates
    if (candidates.size() >= 2) {
        const double gap_limit = config.searchback_rr_factor * mean_rr(candidates);
        const double thr2 = config.searchback_threshold_factor * config.screening_threshold;
        std::vector<Candidate> merged = candidates;
        for (std::size_t c = 0; c + 1 < candidates.size(); ++c) {
            const int64_t left = candidates[c].index;
            const int64_t right = candidates[c + 1].index;
            if (static_cast<double>(right - left) < gap_limit)
                continue;
            const int64_t lo = std::max<int64_t>(left + refr + 1, 0);
            const int64_t hi = std::min<int64_t>(right - refr - 1, static_cast<int64_t>(n) - 1);
            if (lo > hi)
                continue;
            const auto extra = region_maxima(lo, hi, thr2);
            merged.insert(merged.end(), extra.begin(), extra.end());
        }
        std::sort(merged.begin(), merged.end(),
                  [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
        candidates = std::move(merged);
    }

    // stage 3 by iterated full rescans
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
            if (candidates[i + 1].index - candidates[i].index < refr) {
                if (candidates[i + 1].probability > candidates[i].probability)
                    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(i));
                else
                    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                changed = true;
                break;
            }
        }
    }
    return to_peak_list(candidates);
}

} // namespace qrsdet
