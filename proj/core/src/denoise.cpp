#include "qrsdet/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qrsdet/errors.hpp"

namespace qrsdet {

namespace {

// Daubechies-4 scaling coefficients obtained by spectral factorization of
// the degree-3 half-band polynomial; rounded to nearest double, so the
// orthonormality identities hold to machine precision.
constexpr std::array<double, 8> kDb4RecLo = {
    0.2303778133088965,    0.7148465705529157,   0.6308807679298589,
    -0.027983769416859854, -0.18703481171909309, 0.030841381835560764,
    0.0328830116668852,    -0.010597401785069032};

constexpr std::array<double, 8> make_reversed(const std::array<double, 8>& f) {
    std::array<double, 8> r{};
    for (std::size_t i = 0; i < 8; ++i)
        r[i] = f[7 - i];
    return r;
}

constexpr std::array<double, 8> make_qmf(const std::array<double, 8>& f) {
    std::array<double, 8> g{};
    for (std::size_t i = 0; i < 8; ++i)
        g[i] = (i % 2 == 0 ? 1.0 : -1.0) * f[7 - i];
    return g;
}

constexpr std::array<double, 8> kDb4DecLo = make_reversed(kDb4RecLo);
constexpr std::array<double, 8> kDb4RecHi = make_qmf(kDb4RecLo);
constexpr std::array<double, 8> kDb4DecHi = make_reversed(kDb4RecHi);

constexpr std::size_t kTaps = 8;

// Fold an extended index into [0, n) by half-sample symmetric reflection.
std::size_t fold_symmetric(long long i, long long n) {
    while (i < 0 || i >= n) {
        if (i < 0)
            i = -i - 1;
        else
            i = 2 * n - i - 1;
    }
    return static_cast<std::size_t>(i);
}

} // namespace

std::span<const double, 8> db4_dec_lo() { return kDb4DecLo; }
std::span<const double, 8> db4_dec_hi() { return kDb4DecHi; }
std::span<const double, 8> db4_rec_lo() { return kDb4RecLo; }
std::span<const double, 8> db4_rec_hi() { return kDb4RecHi; }

void DenoiseConfig::validate() const {
    if (levels < 1)
        throw ConfigError("denoise levels must be >= 1");
    if (baseline_windows_ms[0] <= 0 || baseline_windows_ms[1] <= 0)
        throw ConfigError("baseline windows must be positive");
}

int odd_window_samples(int window_ms, double sampling_rate_hz) {
    if (window_ms <= 0 || sampling_rate_hz <= 0)
        throw ConfigError("window and sampling rate must be positive");
    int w = static_cast<int>(std::lround(window_ms * sampling_rate_hz / 1000.0));
    if (w < 1)
        w = 1;
    if (w % 2 == 0)
        ++w;
    return w;
}

std::vector<double> moving_mean(std::span<const double> signal, int window) {
    const std::size_t n = signal.size();
    if (window < 1 || window % 2 == 0)
        throw ConfigError("moving_mean window must be odd and positive");
    if (static_cast<std::size_t>(window) > n)
        throw ConfigError("window exceeds signal");

    const int half = window / 2;
    // prefix sums over the edge-replicated extension
    std::vector<double> prefix(n + 2 * half + 1, 0.0);
    for (std::size_t i = 0; i < n + 2 * half; ++i) {
        const long long src = static_cast<long long>(i) - half;
        const double v = signal[static_cast<std::size_t>(
            std::clamp<long long>(src, 0, static_cast<long long>(n) - 1))];
        prefix[i + 1] = prefix[i] + v;
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (prefix[i + window] - prefix[i]) / window;
    return out;
}

std::vector<double> remove_baseline(std::span<const double> signal_mv, double sampling_rate_hz,
                                    std::array<int, 2> windows_ms) {
    if (signal_mv.empty())
        throw ConfigError("remove_baseline: empty signal");
    const int w1 = odd_window_samples(windows_ms[0], sampling_rate_hz);
    const int w2 = odd_window_samples(windows_ms[1], sampling_rate_hz);
    const auto stage1 = moving_mean(signal_mv, w1);
    const auto baseline = moving_mean(stage1, w2);
    std::vector<double> out(signal_mv.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = signal_mv[i] - baseline[i];
    return out;
}

namespace {

// One analysis level. Output length floor((n + taps - 1) / 2) per band.
void dwt_single(std::span<const double> x, std::vector<double>& approx,
                std::vector<double>& detail) {
    const long long n = static_cast<long long>(x.size());
    const std::size_t out_len = static_cast<std::size_t>((n + kTaps - 1) / 2);
    approx.assign(out_len, 0.0);
    detail.assign(out_len, 0.0);
    // valid convolution on the extended signal, odd output phase:
    //   c[m] = sum_k f[k] * ext[m + taps - 1 - k],  output[i] = c[2i + 1]
    for (std::size_t i = 0; i < out_len; ++i) {
        const long long m = 2 * static_cast<long long>(i) + 1;
        double a = 0.0, d = 0.0;
        for (std::size_t k = 0; k < kTaps; ++k) {
            // ext index m + taps - 1 - k maps to signal index the same minus
            // the left extension of (taps - 1)
            const long long src = m - static_cast<long long>(k);
            const double v = x[fold_symmetric(src, n)];
            a += kDb4DecLo[k] * v;
            d += kDb4DecHi[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

// One synthesis level: zero-stuff both bands, convolve with the synthesis
// filters, crop n samples starting at offset taps - 2.
std::vector<double> idwt_single(std::span<const double> approx, std::span<const double> detail,
                                std::size_t n) {
    const std::size_t len = approx.size();
    if (detail.size() != len)
        throw ConfigError("idwt: approximation/detail length mismatch");
    const std::size_t up_len = 2 * len;
    std::vector<double> out(n, 0.0);
    const std::size_t offset = kTaps - 2;
    // full convolution value at position offset + j, j in [0, n)
    for (std::size_t j = 0; j < n; ++j) {
        const long long m = static_cast<long long>(offset + j);
        double acc = 0.0;
        for (std::size_t k = 0; k < kTaps; ++k) {
            const long long u = m - static_cast<long long>(k);
            if (u < 0 || u >= static_cast<long long>(up_len) || (u & 1))
                continue;
            const std::size_t ci = static_cast<std::size_t>(u >> 1);
            acc += kDb4RecLo[k] * approx[ci] + kDb4RecHi[k] * detail[ci];
        }
        out[j] = acc;
    }
    return out;
}

} // namespace

DwtDecomposition dwt_forward(std::span<const double> signal, Wavelet wavelet, int levels,
                             BoundaryMode boundary_mode) {
    if (wavelet != Wavelet::Db4)
        throw ConfigError("only the db4 wavelet is implemented");
    if (levels < 1)
        throw ConfigError("levels must be >= 1");
    if (signal.size() < kTaps)
        throw ConfigError("signal shorter than the wavelet filter");

    DwtDecomposition dec;
    dec.boundary_mode = boundary_mode;
    std::vector<double> current(signal.begin(), signal.end());
    for (int level = 0; level < levels; ++level) {
        if (current.size() < kTaps)
            throw ConfigError("level " + std::to_string(level + 1) +
                              " too deep for signal length " +
                              std::to_string(signal.size()));
        dec.level_lengths.push_back(current.size());
        std::vector<double> approx, detail;
        dwt_single(current, approx, detail);
        dec.details.push_back(std::move(detail));
        current = std::move(approx);
    }
    dec.approximation = std::move(current);
    return dec;
}

std::vector<double> dwt_inverse(const DwtDecomposition& decomposition) {
    if (decomposition.details.empty())
        throw ConfigError("empty decomposition");
    std::vector<double> current = decomposition.approximation;
    for (int level = decomposition.levels() - 1; level >= 0; --level) {
        current = idwt_single(current, decomposition.details[static_cast<std::size_t>(level)],
                              decomposition.level_lengths[static_cast<std::size_t>(level)]);
    }
    return current;
}

std::vector<double> soft_threshold(std::span<const double> coefficients, double lambda) {
    std::vector<double> out(coefficients.begin(), coefficients.end());
    soft_threshold_inplace(out, lambda);
    return out;
}

void soft_threshold_inplace(std::vector<double>& coefficients, double lambda) {
    if (lambda < 0)
        throw ConfigError("soft threshold lambda must be non-negative");
    for (auto& c : coefficients) {
        const double mag = std::abs(c) - lambda;
        c = mag > 0 ? (c > 0 ? mag : -mag) : 0.0;
    }
}

namespace {
double median_abs(const std::vector<double>& v) {
    if (v.empty())
        return 0.0;
    std::vector<double> mags(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        mags[i] = std::abs(v[i]);
    std::sort(mags.begin(), mags.end());
    const std::size_t mid = mags.size() / 2;
    if (mags.size() % 2 == 1)
        return mags[mid];
    return 0.5 * (mags[mid - 1] + mags[mid]);
}
} // namespace

std::vector<double> denoise(std::span<const double> signal_mv, const DenoiseConfig& config) {
    config.validate();
    auto dec = dwt_forward(signal_mv, config.wavelet, config.levels, config.boundary_mode);

    // Donoho universal threshold with the level-1 MAD noise estimate; one
    // lambda shared across all detail levels.
    const double sigma = median_abs(dec.details[0]) / 0.6745;
    const double lambda =
        sigma * std::sqrt(2.0 * std::log(static_cast<double>(signal_mv.size())));
    for (auto& level : dec.details)
        soft_threshold_inplace(level, lambda);
    return dwt_inverse(dec);
}

} // namespace qrsdet
