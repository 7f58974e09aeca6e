#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace qrsdet {

enum class BoundaryMode { Symmetric };

enum class Wavelet { Db4 };

enum class ThresholdRule { Universal };

struct DenoiseConfig {
    Wavelet wavelet = Wavelet::Db4;
    int levels = 5;
    ThresholdRule threshold_rule = ThresholdRule::Universal;
    std::array<int, 2> baseline_windows_ms = {200, 600};
    BoundaryMode boundary_mode = BoundaryMode::Symmetric;

    void validate() const;
};

/// Multi-level analysis output. `details[k]` holds the level-(k+1) detail
/// coefficients; `level_lengths[k]` is the signal length entering level k+1,
/// which the inverse transform needs to undo the expansive symmetric border.
struct DwtDecomposition {
    std::vector<double> approximation;        // level `levels`
    std::vector<std::vector<double>> details; // levels 1..levels
    std::vector<std::size_t> level_lengths;   // level_lengths[0] = original length
    BoundaryMode boundary_mode = BoundaryMode::Symmetric;

    std::size_t original_length() const {
        return level_lengths.empty() ? 0 : level_lengths[0];
    }
    int levels() const { return static_cast<int>(details.size()); }
};

/// The four db4 filter banks (8 taps, stored to full double precision).
/// rec_lo is the scaling filter; dec_* are its time-reversed analysis pair
/// and the quadrature-mirror highpass.
std::span<const double, 8> db4_dec_lo();
std::span<const double, 8> db4_dec_hi();
std::span<const double, 8> db4_rec_lo();
std::span<const double, 8> db4_rec_hi();

/// Centered moving mean with edge-replicated padding; window must be odd and
/// no longer than the signal.
std::vector<double> moving_mean(std::span<const double> signal, int window);

/// Convert a window from milliseconds to an odd sample count (>= 1).
int odd_window_samples(int window_ms, double sampling_rate_hz);

/// Baseline wander removal: the baseline estimate is a cascade of two
/// centered moving means (default 200 ms then 600 ms) and is subtracted
/// from the signal.
std::vector<double> remove_baseline(std::span<const double> signal_mv, double sampling_rate_hz,
                                    std::array<int, 2> windows_ms = {200, 600});

/// One analysis step: symmetric extension by (taps-1), full convolution with
/// the analysis pair, downsample by two (odd phase). Coefficient length is
/// floor((n + taps - 1) / 2).
DwtDecomposition dwt_forward(std::span<const double> signal, Wavelet wavelet = Wavelet::Db4,
                             int levels = 5,
                             BoundaryMode boundary_mode = BoundaryMode::Symmetric);

/// Inverse transform: zero-stuff, convolve with the synthesis pair, crop to
/// the recorded per-level length. Without coefficient modification this
/// reproduces the input to ~1e-12.
std::vector<double> dwt_inverse(const DwtDecomposition& decomposition);

/// sign(x) * max(|x| - lambda, 0), elementwise.
std::vector<double> soft_threshold(std::span<const double> coefficients, double lambda);
void soft_threshold_inplace(std::vector<double>& coefficients, double lambda);

/// Universal-threshold wavelet denoising: lambda = sigma * sqrt(2 ln N) with
/// sigma estimated as median(|level-1 details|) / 0.6745; all detail levels
/// are soft-thresholded with the shared lambda, the approximation is kept.
std::vector<double> denoise(std::span<const double> signal_mv, const DenoiseConfig& config = {});

} // namespace qrsdet
