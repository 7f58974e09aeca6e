#include <doctest.h>

#include <cmath>

#include "qrsdet/errors.hpp"
#include "qrsdet/peak_picker.hpp"
#include "qrsdet/rng.hpp"

using namespace qrsdet;

namespace {
void add_bump(std::vector<double>& p, std::size_t center, double height, double sigma = 8.0) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(center);
        p[i] = std::max(p[i], height * std::exp(-d * d / (2.0 * sigma * sigma)));
    }
}

/// Piecewise-smooth random probability sequences for equivalence fuzzing:
/// a random count of random-height bumps plus occasional uniform noise.
std::vector<double> fuzz_sequence(Rng& rng) {
    const std::size_t n = 200 + rng.below(3400);
    std::vector<double> p(n, 0.0);
    const std::size_t bumps = rng.below(14);
    for (std::size_t b = 0; b < bumps; ++b)
        add_bump(p, rng.below(n), rng.uniform(0.02, 1.0), rng.uniform(2.0, 15.0));
    if (rng.bernoulli(0.3))
        for (auto& v : p)
            v = std::min(1.0, std::max(0.0, v + rng.uniform(0.0, 0.06)));
    return p;
}

bool equal_picks(const PeakList& a, const PeakList& b) {
    return a.indices == b.indices;
}
} // namespace

TEST_CASE("sub-threshold sequences yield no peaks") {
    std::vector<double> p(1000, 0.09);
    CHECK(pick(p, 360.0).indices.empty());
    CHECK(pick_oracle(p, 360.0).indices.empty());
    CHECK(pick({}, 360.0).indices.empty());
}

TEST_CASE("two clear bumps are located at their maxima") {
    std::vector<double> p(1100, 0.0);
    add_bump(p, 360, 0.9);
    add_bump(p, 720, 0.9);
    auto peaks = pick(p, 360.0);
    REQUIRE(peaks.indices.size() == 2);
    CHECK(peaks.indices[0] == 360);
    CHECK(peaks.indices[1] == 720);
    CHECK(equal_picks(peaks, pick_oracle(p, 360.0)));
}

TEST_CASE("refractory keeps the higher-probability peak") {
    // 50 samples apart at 360 Hz is 139 ms, inside the 200 ms refractory
    std::vector<double> p(800, 0.0);
    add_bump(p, 400, 0.9, 5.0);
    add_bump(p, 450, 0.6, 5.0);
    auto peaks = pick(p, 360.0);
    REQUIRE(peaks.indices.size() == 1);
    CHECK(peaks.indices[0] == 400);
    CHECK(equal_picks(peaks, pick_oracle(p, 360.0)));
}

TEST_CASE("search-back recovers a low bump inside a long gap") {
    // stage-1 candidates at 360, 720 and 1800: mean RR = 720, so the
    // 1080-sample gap reaches the 1.5x limit and is re-scanned at 0.05
    std::vector<double> p(2200, 0.0);
    add_bump(p, 360, 0.9, 6.0);
    add_bump(p, 720, 0.9, 6.0);
    add_bump(p, 1260, 0.07, 6.0);
    add_bump(p, 1800, 0.9, 6.0);
    auto stage1_only = std::vector<int64_t>{360, 720, 1800};
    auto peaks = pick(p, 360.0);
    REQUIRE(peaks.indices.size() == 4);
    CHECK(peaks.indices == std::vector<int64_t>{360, 720, 1260, 1800});
    CHECK(equal_picks(peaks, pick_oracle(p, 360.0)));

    // without the low bump only the stage-1 candidates remain
    std::vector<double> q(2200, 0.0);
    add_bump(q, 360, 0.9, 6.0);
    add_bump(q, 720, 0.9, 6.0);
    add_bump(q, 1800, 0.9, 6.0);
    CHECK(pick(q, 360.0).indices == stage1_only);
}

TEST_CASE("plateau ties resolve to the leftmost index in both implementations") {
    std::vector<double> p(500, 0.0);
    for (std::size_t i = 200; i < 230; ++i)
        p[i] = 0.8;
    auto a = pick(p, 360.0);
    auto b = pick_oracle(p, 360.0);
    REQUIRE(a.indices.size() == 1);
    CHECK(a.indices[0] == 200);
    CHECK(equal_picks(a, b));
}

TEST_CASE("raising the screening threshold never adds a stage-1 candidate") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = fuzz_sequence(rng);
        PickerConfig low, high;
        low.screening_threshold = 0.08;
        high.screening_threshold = 0.2;
        // compare stage-1 candidate counts with search-back disabled
        low.searchback_rr_factor = 1e9;
        high.searchback_rr_factor = 1e9;
        CHECK(pick(p, 360.0, high).size() <= pick(p, 360.0, low).size());
    }
}

TEST_CASE("picker output is strictly increasing with refractory gaps") {
    Rng rng(123);
    const int64_t refr = 72; // floor(0.2 * 360)
    for (int trial = 0; trial < 100; ++trial) {
        auto p = fuzz_sequence(rng);
        auto peaks = pick(p, 360.0);
        for (std::size_t i = 1; i < peaks.indices.size(); ++i)
            CHECK(peaks.indices[i] - peaks.indices[i - 1] >= refr);
        // every peak is the max of its neighborhood above the threshold
        for (std::size_t i = 0; i < peaks.indices.size(); ++i)
            CHECK(peaks.probabilities[i] ==
                  p[static_cast<std::size_t>(peaks.indices[i])]);
    }
}

TEST_CASE("pick equals pick_oracle on seeded fuzz sequences") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        auto p = fuzz_sequence(rng);
        auto fast = pick(p, 360.0);
        auto slow = pick_oracle(p, 360.0);
        REQUIRE(equal_picks(fast, slow));
        REQUIRE(fast.probabilities == slow.probabilities);
    }
}

TEST_CASE("picker config validation") {
    PickerConfig bad;
    bad.screening_threshold = 0.0;
    CHECK_THROWS_AS(pick(std::vector<double>(10, 0.5), 360.0, bad), ConfigError);
    bad = {};
    bad.searchback_rr_factor = -1;
    CHECK_THROWS_AS(pick(std::vector<double>(10, 0.5), 360.0, bad), ConfigError);
}
