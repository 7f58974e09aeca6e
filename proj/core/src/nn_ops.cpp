#include "qrsdet/nn_ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "qrsdet/errors.hpp"

namespace qrsdet::nn {

namespace {

std::atomic<int> g_num_threads{0}; // 0 = hardware concurrency

int resolved_threads() {
    const int n = g_num_threads.load(std::memory_order_relaxed);
    if (n > 0)
        return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Run fn(begin, end) over a contiguous partition of [0, n). Workers write
/// disjoint ranges; any cross-range reduction is the caller's job and must
/// happen in a fixed order.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(resolved_threads()), n);
    if (t <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(t - 1);
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t k = 1; k < t; ++k) {
        const std::size_t lo = k * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo < hi)
            workers.emplace_back(fn, lo, hi);
    }
    fn(0, std::min(n, chunk));
    for (auto& w : workers)
        w.join();
}

inline void axpy(double alpha, const double* __restrict__ x, double* __restrict__ y,
                 std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        y[i] += alpha * x[i];
}

inline double dot(const double* __restrict__ a, const double* __restrict__ b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

void check_bcl(const Tensor& x, const char* who) {
    if (x.shape.size() != 3)
        throw ConfigError(std::string(who) + ": expected a {batch, channels, length} tensor");
}

} // namespace

void set_num_threads(int n) { g_num_threads.store(n, std::memory_order_relaxed); }
int num_threads() { return resolved_threads(); }

double sigmoid(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void relu_forward(std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = in[i] > 0 ? in[i] : 0.0;
}

void sigmoid_forward(std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = sigmoid(in[i]);
}

// ---------------------------------------------------------------------------
// Conv1d

Conv1d::Conv1d(std::size_t c_in, std::size_t c_out, std::size_t kernel, Rng rng)
    : weight({c_out, c_in, kernel}), bias({c_out}), c_in_(c_in), c_out_(c_out), k_(kernel) {
    if (kernel % 2 == 0)
        throw ConfigError("Conv1d kernel must be odd for same padding");
    const double bound = std::sqrt(6.0 / static_cast<double>(c_in * kernel));
    for (auto& w : weight.data)
        w = rng.uniform(-bound, bound);
    weight.ensure_grad();
    bias.ensure_grad();
}

Tensor Conv1d::forward(const Tensor& x) {
    check_bcl(x, "Conv1d");
    if (x.dim(1) != c_in_)
        throw ConfigError("Conv1d: input has " + std::to_string(x.dim(1)) +
                          " channels, layer expects " + std::to_string(c_in_));
    const std::size_t batch = x.dim(0), len = x.dim(2);
    const long long pad = static_cast<long long>(k_ / 2);

    Tensor y({batch, c_out_, len});
    x_cache_ = x;
    parallel_chunks(batch, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < c_out_; ++co) {
                double* __restrict__ out = y.ptr() + (b * c_out_ + co) * len;
                std::fill(out, out + len, bias.data[co]);
                for (std::size_t ci = 0; ci < c_in_; ++ci) {
                    const double* __restrict__ in = x.ptr() + (b * c_in_ + ci) * len;
                    const double* w = weight.ptr() + (co * c_in_ + ci) * k_;
                    for (std::size_t k = 0; k < k_; ++k) {
                        const long long shift = static_cast<long long>(k) - pad;
                        const std::size_t lo =
                            static_cast<std::size_t>(std::max<long long>(0, -shift));
                        const std::size_t hi = static_cast<std::size_t>(
                            std::min<long long>(static_cast<long long>(len),
                                                static_cast<long long>(len) - shift));
                        const double wk = w[k];
                        for (std::size_t l = lo; l < hi; ++l)
                            out[l] += wk * in[static_cast<std::size_t>(
                                           static_cast<long long>(l) + shift)];
                    }
                }
            }
        }
    });
    return y;
}

Tensor Conv1d::backward(const Tensor& dy) {
    const Tensor& x = x_cache_;
    const std::size_t batch = x.dim(0), len = x.dim(2);
    const long long pad = static_cast<long long>(k_ / 2);
    weight.ensure_grad();
    bias.ensure_grad();

    Tensor dx({batch, c_in_, len});
    // input gradient: disjoint per batch element
    parallel_chunks(batch, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < c_out_; ++co) {
                const double* __restrict__ g = dy.ptr() + (b * c_out_ + co) * len;
                for (std::size_t ci = 0; ci < c_in_; ++ci) {
                    double* __restrict__ dxp = dx.ptr() + (b * c_in_ + ci) * len;
                    const double* w = weight.ptr() + (co * c_in_ + ci) * k_;
                    for (std::size_t k = 0; k < k_; ++k) {
                        const long long shift = static_cast<long long>(k) - pad;
                        const std::size_t lo =
                            static_cast<std::size_t>(std::max<long long>(0, -shift));
                        const std::size_t hi = static_cast<std::size_t>(
                            std::min<long long>(static_cast<long long>(len),
                                                static_cast<long long>(len) - shift));
                        const double wk = w[k];
                        for (std::size_t l = lo; l < hi; ++l)
                            dxp[static_cast<std::size_t>(static_cast<long long>(l) + shift)] +=
                                wk * g[l];
                    }
                }
            }
        }
    });
    // weight/bias gradients: disjoint per output channel
    parallel_chunks(c_out_, [&](std::size_t co0, std::size_t co1) {
        for (std::size_t co = co0; co < co1; ++co) {
            double* dw_row = weight.grad_ptr() + co * c_in_ * k_;
            double db = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* g = dy.ptr() + (b * c_out_ + co) * len;
                for (std::size_t l = 0; l < len; ++l)
                    db += g[l];
                for (std::size_t ci = 0; ci < c_in_; ++ci) {
                    const double* in = x.ptr() + (b * c_in_ + ci) * len;
                    for (std::size_t k = 0; k < k_; ++k) {
                        const long long shift = static_cast<long long>(k) - pad;
                        const std::size_t lo =
                            static_cast<std::size_t>(std::max<long long>(0, -shift));
                        const std::size_t hi = static_cast<std::size_t>(
                            std::min<long long>(static_cast<long long>(len),
                                                static_cast<long long>(len) - shift));
                        dw_row[ci * k_ + k] +=
                            dot(g + lo, in + static_cast<std::size_t>(
                                                 static_cast<long long>(lo) + shift),
                                hi - lo);
                    }
                }
            }
            bias.grad[co] += db;
        }
    });
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm1d

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma({channels}), beta({channels}), running_mean(channels, 0.0),
      running_var(channels, 1.0), channels_(channels) {
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    gamma.ensure_grad();
    beta.ensure_grad();
}

void BatchNorm1d::init_running_stats() {
    std::fill(running_mean.begin(), running_mean.end(), 0.0);
    std::fill(running_var.begin(), running_var.end(), 1.0);
    running_initialized_ = true;
}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
    check_bcl(x, "BatchNorm1d");
    if (x.dim(1) != channels_)
        throw ConfigError("BatchNorm1d: channel mismatch");
    const std::size_t batch = x.dim(0), len = x.dim(2);
    Tensor y(x.shape);
    cached_training_ = training;

    if (!training) {
        if (!running_initialized_)
            throw TrainingError("running stats uninitialized");
        x_hat_ = Tensor(x.shape);
        inv_std_.assign(channels_, 0.0);
        for (std::size_t c = 0; c < channels_; ++c) {
            const double inv = 1.0 / std::sqrt(running_var[c] + eps);
            inv_std_[c] = inv;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* in = x.ptr() + (b * channels_ + c) * len;
                double* xh = x_hat_.ptr() + (b * channels_ + c) * len;
                double* out = y.ptr() + (b * channels_ + c) * len;
                for (std::size_t l = 0; l < len; ++l) {
                    xh[l] = (in[l] - running_mean[c]) * inv;
                    out[l] = gamma.data[c] * xh[l] + beta.data[c];
                }
            }
        }
        return y;
    }

    const double m = static_cast<double>(batch * len);
    x_hat_ = Tensor(x.shape);
    inv_std_.assign(channels_, 0.0);
    min_batch_var_ = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < channels_; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* in = x.ptr() + (b * channels_ + c) * len;
            for (std::size_t l = 0; l < len; ++l)
                mean += in[l];
        }
        mean /= m;
        double var = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* in = x.ptr() + (b * channels_ + c) * len;
            for (std::size_t l = 0; l < len; ++l)
                var += (in[l] - mean) * (in[l] - mean);
        }
        var /= m;
        // exactly-constant (dead) channels are flat in the parameters, not
        // curved, so only positive variances matter for probe selection
        if (var > 0.0)
            min_batch_var_ = std::min(min_batch_var_, var);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std_[c] = inv;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* in = x.ptr() + (b * channels_ + c) * len;
            double* xh = x_hat_.ptr() + (b * channels_ + c) * len;
            double* out = y.ptr() + (b * channels_ + c) * len;
            for (std::size_t l = 0; l < len; ++l) {
                xh[l] = (in[l] - mean) * inv;
                out[l] = gamma.data[c] * xh[l] + beta.data[c];
            }
        }
        running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * mean;
        running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var;
    }
    running_initialized_ = true;
    return y;
}

Tensor BatchNorm1d::backward(const Tensor& dy) {
    const std::size_t batch = dy.dim(0), len = dy.dim(2);
    Tensor dx(dy.shape);
    gamma.ensure_grad();
    beta.ensure_grad();

    if (!cached_training_) {
        // inference: fixed affine map per channel
        for (std::size_t c = 0; c < channels_; ++c) {
            const double scale = gamma.data[c] * inv_std_[c];
            double dgamma = 0.0, dbeta = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* g = dy.ptr() + (b * channels_ + c) * len;
                const double* xh = x_hat_.ptr() + (b * channels_ + c) * len;
                double* out = dx.ptr() + (b * channels_ + c) * len;
                for (std::size_t l = 0; l < len; ++l) {
                    out[l] = g[l] * scale;
                    dgamma += g[l] * xh[l];
                    dbeta += g[l];
                }
            }
            gamma.grad[c] += dgamma;
            beta.grad[c] += dbeta;
        }
        return dx;
    }

    const double m = static_cast<double>(batch * len);
    for (std::size_t c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = dy.ptr() + (b * channels_ + c) * len;
            const double* xh = x_hat_.ptr() + (b * channels_ + c) * len;
            for (std::size_t l = 0; l < len; ++l) {
                sum_dy += g[l];
                sum_dy_xhat += g[l] * xh[l];
            }
        }
        gamma.grad[c] += sum_dy_xhat;
        beta.grad[c] += sum_dy;
        const double scale = gamma.data[c] * inv_std_[c] / m;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = dy.ptr() + (b * channels_ + c) * len;
            const double* xh = x_hat_.ptr() + (b * channels_ + c) * len;
            double* out = dx.ptr() + (b * channels_ + c) * len;
            for (std::size_t l = 0; l < len; ++l)
                out[l] = scale * (m * g[l] - sum_dy - xh[l] * sum_dy_xhat);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x) {
    Tensor y(x.shape);
    relu_forward(x.data, y.data);
    min_abs_input_ = std::numeric_limits<double>::infinity();
    for (double v : x.data)
        min_abs_input_ = std::min(min_abs_input_, std::abs(v));
    x_cache_ = x;
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.size(); ++i)
        dx.data[i] = x_cache_.data[i] > 0 ? dy.data[i] : 0.0;
    return dx;
}

namespace {
inline uint64_t hash_step(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}
} // namespace

uint64_t ReLU::activation_signature() const {
    uint64_t h = 0x243f6a8885a308d3ULL;
    uint64_t word = 0;
    int bit = 0;
    for (double v : x_cache_.data) {
        word = (word << 1) | (v > 0 ? 1u : 0u);
        if (++bit == 64) {
            h = hash_step(h, word);
            word = 0;
            bit = 0;
        }
    }
    return hash_step(h, word);
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate, Rng rng) : rate_(rate), rng_(rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, bool training) {
    cached_training_ = training && rate_ > 0.0;
    if (!cached_training_)
        return x;
    const double keep = 1.0 - rate_;
    const double scale = 1.0 / keep;
    mask_.assign(x.size(), 0);
    // mask drawn serially so the stream is schedule-independent
    for (auto& m : mask_)
        m = rng_.uniform() >= rate_ ? 1 : 0;
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i)
        y.data[i] = mask_[i] ? x.data[i] * scale : 0.0;
    return y;
}

Tensor Dropout::backward(const Tensor& dy) {
    if (!cached_training_)
        return dy;
    const double scale = 1.0 / (1.0 - rate_);
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.size(); ++i)
        dx.data[i] = mask_[i] ? dy.data[i] * scale : 0.0;
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool1d

MaxPool1d::MaxPool1d(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}

Tensor MaxPool1d::forward(const Tensor& x) {
    check_bcl(x, "MaxPool1d");
    const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    const std::size_t out_len = (len + stride_ - 1) / stride_;
    Tensor y({batch, channels, out_len});
    argmax_.assign(batch * channels * out_len, 0);
    in_shape_ = x.shape;
    min_top2_gap_ = std::numeric_limits<double>::infinity();

    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double* in = x.ptr() + bc * len;
        double* out = y.ptr() + bc * out_len;
        std::size_t* am = argmax_.data() + bc * out_len;
        for (std::size_t i = 0; i < out_len; ++i) {
            const std::size_t start = i * stride_;
            const std::size_t stop = std::min(start + window_, len); // right pad is -inf
            double best = in[start];
            double second = -std::numeric_limits<double>::infinity();
            std::size_t best_at = start;
            for (std::size_t j = start + 1; j < stop; ++j) {
                if (in[j] > best) { // ties keep the leftmost
                    second = best;
                    best = in[j];
                    best_at = j;
                } else {
                    second = std::max(second, in[j]);
                }
            }
            // windows whose max is <= 0 are flat under small perturbations
            // when fed by a ReLU (ties between clamped zeros route zero
            // gradient), so only positive maxima count toward the margin
            if (std::isfinite(second) && best > 0.0)
                min_top2_gap_ = std::min(min_top2_gap_, best - second);
            out[i] = best;
            am[i] = best_at;
        }
    }
    return y;
}

uint64_t MaxPool1d::activation_signature() const {
    uint64_t h = 0x13198a2e03707344ULL;
    for (std::size_t a : argmax_)
        h = hash_step(h, static_cast<uint64_t>(a));
    return h;
}

Tensor MaxPool1d::backward(const Tensor& dy) {
    Tensor dx(in_shape_);
    const std::size_t out_len = dy.dim(2);
    const std::size_t len = in_shape_[2];
    for (std::size_t bc = 0; bc < dy.dim(0) * dy.dim(1); ++bc) {
        const double* g = dy.ptr() + bc * out_len;
        double* out = dx.ptr() + bc * len;
        const std::size_t* am = argmax_.data() + bc * out_len;
        for (std::size_t i = 0; i < out_len; ++i)
            out[am[i]] += g[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Upsample2

Tensor Upsample2::forward(const Tensor& x) {
    check_bcl(x, "Upsample2");
    const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    in_shape_ = x.shape;
    Tensor y({batch, channels, 2 * len});
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double* in = x.ptr() + bc * len;
        double* out = y.ptr() + bc * 2 * len;
        for (std::size_t l = 0; l < len; ++l) {
            out[2 * l] = in[l];
            out[2 * l + 1] = in[l];
        }
    }
    return y;
}

Tensor Upsample2::backward(const Tensor& dy) {
    Tensor dx(in_shape_);
    const std::size_t len = in_shape_[2];
    for (std::size_t bc = 0; bc < dy.dim(0) * dy.dim(1); ++bc) {
        const double* g = dy.ptr() + bc * 2 * len;
        double* out = dx.ptr() + bc * len;
        for (std::size_t l = 0; l < len; ++l)
            out[l] = g[2 * l] + g[2 * l + 1];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// LSTM

Lstm::Lstm(std::size_t input_dim, std::size_t hidden, bool reverse, Rng rng)
    : w({4 * hidden, input_dim}), u({4 * hidden, hidden}), b({4 * hidden}),
      input_dim_(input_dim), hidden_(hidden), reverse_(reverse) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& v : w.data)
        v = rng.uniform(-bound, bound);
    for (auto& v : u.data)
        v = rng.uniform(-bound, bound);
    // biases start at zero: with zero input the cell state stays exactly zero
    w.ensure_grad();
    u.ensure_grad();
    b.ensure_grad();
}

void lstm_cell_step(std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, std::span<const double> w,
                    std::span<const double> u, std::span<const double> b, std::size_t hidden,
                    std::span<double> h_out, std::span<double> c_out) {
    const std::size_t d = x.size();
    const std::size_t rows = 4 * hidden;
    std::vector<double> pre(b.begin(), b.end());
    for (std::size_t r = 0; r < rows; ++r) {
        pre[r] += dot(w.data() + r * d, x.data(), d);
        pre[r] += dot(u.data() + r * hidden, h_prev.data(), hidden);
    }
    for (std::size_t hh = 0; hh < hidden; ++hh) {
        const double ig = sigmoid(pre[hh]);
        const double fg = sigmoid(pre[hidden + hh]);
        const double gg = std::tanh(pre[2 * hidden + hh]);
        const double og = sigmoid(pre[3 * hidden + hh]);
        c_out[hh] = fg * c_prev[hh] + ig * gg;
        h_out[hh] = og * std::tanh(c_out[hh]);
    }
}

Tensor Lstm::forward(const Tensor& x) {
    check_bcl(x, "Lstm");
    if (x.dim(1) != input_dim_)
        throw ConfigError("Lstm: feature dimension mismatch");
    const std::size_t batch = x.dim(0), len = x.dim(2);
    const std::size_t rows = 4 * hidden_;

    // refresh column-major weight copies for the contiguous axpy kernels
    wt_.assign(input_dim_ * rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t d = 0; d < input_dim_; ++d)
            wt_[d * rows + r] = w.data[r * input_dim_ + d];
    ut_.assign(hidden_ * rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t hh = 0; hh < hidden_; ++hh)
            ut_[hh * rows + r] = u.data[r * hidden_ + hh];

    x_cache_ = x;
    gates_.assign(batch * len * rows, 0.0);
    cells_.assign(batch * len * hidden_, 0.0);
    tanh_c_.assign(batch * len * hidden_, 0.0);
    hidden_all_.assign(batch * len * hidden_, 0.0);
    Tensor y({batch, hidden_, len});

    parallel_chunks(batch, [&](std::size_t b0, std::size_t b1) {
        std::vector<double> pre(rows);
        std::vector<double> h_prev(hidden_, 0.0), c_prev(hidden_, 0.0);
        for (std::size_t bb = b0; bb < b1; ++bb) {
            std::fill(h_prev.begin(), h_prev.end(), 0.0);
            std::fill(c_prev.begin(), c_prev.end(), 0.0);
            for (std::size_t step = 0; step < len; ++step) {
                const std::size_t t = reverse_ ? len - 1 - step : step;
                std::copy(b.data.begin(), b.data.end(), pre.begin());
                for (std::size_t d = 0; d < input_dim_; ++d) {
                    const double xv = x.data[(bb * input_dim_ + d) * len + t];
                    if (xv != 0.0)
                        axpy(xv, wt_.data() + d * rows, pre.data(), rows);
                }
                for (std::size_t hh = 0; hh < hidden_; ++hh) {
                    const double hv = h_prev[hh];
                    if (hv != 0.0)
                        axpy(hv, ut_.data() + hh * rows, pre.data(), rows);
                }
                double* gate = gates_.data() + (bb * len + t) * rows;
                double* cell = cells_.data() + (bb * len + t) * hidden_;
                double* tc = tanh_c_.data() + (bb * len + t) * hidden_;
                double* hall = hidden_all_.data() + (bb * len + t) * hidden_;
                for (std::size_t hh = 0; hh < hidden_; ++hh) {
                    const double ig = sigmoid(pre[hh]);
                    const double fg = sigmoid(pre[hidden_ + hh]);
                    const double gg = std::tanh(pre[2 * hidden_ + hh]);
                    const double og = sigmoid(pre[3 * hidden_ + hh]);
                    gate[hh] = ig;
                    gate[hidden_ + hh] = fg;
                    gate[2 * hidden_ + hh] = gg;
                    gate[3 * hidden_ + hh] = og;
                    const double c = fg * c_prev[hh] + ig * gg;
                    cell[hh] = c;
                    const double tch = std::tanh(c);
                    tc[hh] = tch;
                    const double h = og * tch;
                    hall[hh] = h;
                    h_prev[hh] = h;
                    c_prev[hh] = c;
                    y.data[(bb * hidden_ + hh) * len + t] = h;
                }
            }
        }
    });
    return y;
}

Tensor Lstm::backward(const Tensor& dy) {
    const Tensor& x = x_cache_;
    const std::size_t batch = x.dim(0), len = x.dim(2);
    const std::size_t rows = 4 * hidden_;
    w.ensure_grad();
    u.ensure_grad();
    b.ensure_grad();

    Tensor dx({batch, input_dim_, len});
    const std::size_t t_count =
        std::min<std::size_t>(static_cast<std::size_t>(resolved_threads()), batch);
    // per-worker weight-gradient buffers, reduced in worker order afterwards
    std::vector<std::vector<double>> dwt(t_count), dut(t_count), dbias(t_count);
    const std::size_t chunk = (batch + t_count - 1) / t_count;

    auto worker = [&](std::size_t widx) {
        auto& dwt_l = dwt[widx];
        auto& dut_l = dut[widx];
        auto& db_l = dbias[widx];
        dwt_l.assign(input_dim_ * rows, 0.0);
        dut_l.assign(hidden_ * rows, 0.0);
        db_l.assign(rows, 0.0);
        std::vector<double> dh(hidden_), dc(hidden_), dpre(rows);
        const std::size_t b_lo = widx * chunk;
        const std::size_t b_hi = std::min(batch, b_lo + chunk);
        for (std::size_t bb = b_lo; bb < b_hi; ++bb) {
            std::fill(dh.begin(), dh.end(), 0.0);
            std::fill(dc.begin(), dc.end(), 0.0);
            for (std::size_t step = len; step-- > 0;) {
                const std::size_t t = reverse_ ? len - 1 - step : step;
                const std::size_t prev_t = reverse_ ? t + 1 : t - 1; // valid when step > 0
                const double* gate = gates_.data() + (bb * len + t) * rows;
                const double* tc = tanh_c_.data() + (bb * len + t) * hidden_;
                const double* c_prev =
                    step == 0 ? nullptr : cells_.data() + (bb * len + prev_t) * hidden_;
                const double* h_prev =
                    step == 0 ? nullptr : hidden_all_.data() + (bb * len + prev_t) * hidden_;

                for (std::size_t hh = 0; hh < hidden_; ++hh) {
                    const double ig = gate[hh];
                    const double fg = gate[hidden_ + hh];
                    const double gg = gate[2 * hidden_ + hh];
                    const double og = gate[3 * hidden_ + hh];
                    const double dht = dh[hh] + dy.data[(bb * hidden_ + hh) * len + t];
                    const double dog = dht * tc[hh];
                    const double dct = dc[hh] + dht * og * (1.0 - tc[hh] * tc[hh]);
                    const double cp = step == 0 ? 0.0 : c_prev[hh];
                    const double dig = dct * gg;
                    const double dfg = dct * cp;
                    const double dgg = dct * ig;
                    dc[hh] = dct * fg;
                    dpre[hh] = dig * ig * (1.0 - ig);
                    dpre[hidden_ + hh] = dfg * fg * (1.0 - fg);
                    dpre[2 * hidden_ + hh] = dgg * (1.0 - gg * gg);
                    dpre[3 * hidden_ + hh] = dog * og * (1.0 - og);
                }

                for (std::size_t r = 0; r < rows; ++r)
                    db_l[r] += dpre[r];
                for (std::size_t d = 0; d < input_dim_; ++d) {
                    const double xv = x.data[(bb * input_dim_ + d) * len + t];
                    if (xv != 0.0)
                        axpy(xv, dpre.data(), dwt_l.data() + d * rows, rows);
                    dx.data[(bb * input_dim_ + d) * len + t] =
                        dot(wt_.data() + d * rows, dpre.data(), rows);
                }
                if (step > 0) {
                    for (std::size_t hh = 0; hh < hidden_; ++hh) {
                        const double hv = h_prev[hh];
                        if (hv != 0.0)
                            axpy(hv, dpre.data(), dut_l.data() + hh * rows, rows);
                        dh[hh] = dot(ut_.data() + hh * rows, dpre.data(), rows);
                    }
                }
            }
        }
    };

    if (t_count <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> workers;
        for (std::size_t k = 1; k < t_count; ++k)
            workers.emplace_back(worker, k);
        worker(0);
        for (auto& th : workers)
            th.join();
    }

    for (std::size_t widx = 0; widx < t_count; ++widx) {
        for (std::size_t d = 0; d < input_dim_; ++d)
            for (std::size_t r = 0; r < rows; ++r)
                w.grad[r * input_dim_ + d] += dwt[widx][d * rows + r];
        for (std::size_t hh = 0; hh < hidden_; ++hh)
            for (std::size_t r = 0; r < rows; ++r)
                u.grad[r * hidden_ + hh] += dut[widx][hh * rows + r];
        for (std::size_t r = 0; r < rows; ++r)
            b.grad[r] += dbias[widx][r];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BiLstm

BiLstm::BiLstm(std::size_t input_dim, std::size_t hidden, Rng rng)
    : fwd(input_dim, hidden, false, rng.stream(0)), bwd(input_dim, hidden, true, rng.stream(1)) {}

Tensor BiLstm::forward(const Tensor& x) {
    Tensor yf = fwd.forward(x);
    Tensor yb = bwd.forward(x);
    for (std::size_t i = 0; i < yf.size(); ++i)
        yf.data[i] += yb.data[i];
    return yf;
}

Tensor BiLstm::backward(const Tensor& dy) {
    Tensor dxf = fwd.backward(dy);
    Tensor dxb = bwd.backward(dy);
    for (std::size_t i = 0; i < dxf.size(); ++i)
        dxf.data[i] += dxb.data[i];
    return dxf;
}

// ---------------------------------------------------------------------------
// Losses

LossResult bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.size() != targets.size())
        throw ConfigError("loss: logits/targets size mismatch");
    const double n = static_cast<double>(logits.size());
    LossResult res;
    res.dlogits = Tensor(logits.shape);
    double acc = 0.0;
    constexpr double clamp = 1e-7;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p_raw = sigmoid(logits.data[i]);
        const double p = std::min(1.0 - clamp, std::max(clamp, p_raw));
        const double t = targets.data[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        res.dlogits.data[i] = (p_raw - t) / n;
    }
    res.value = acc / n;
    return res;
}

LossResult mse_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.size() != targets.size())
        throw ConfigError("loss: logits/targets size mismatch");
    const double n = static_cast<double>(logits.size());
    LossResult res;
    res.dlogits = Tensor(logits.shape);
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = sigmoid(logits.data[i]);
        const double t = targets.data[i];
        const double e = p - t;
        acc += e * e;
        res.dlogits.data[i] = 2.0 * e * p * (1.0 - p) / n;
    }
    res.value = acc / n;
    return res;
}

LossResult loss_with_logits(LossKind kind, const Tensor& logits, const Tensor& targets) {
    return kind == LossKind::BinaryCrossEntropy ? bce_with_logits(logits, targets)
                                                : mse_with_logits(logits, targets);
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           std::vector<std::pair<std::string, Tensor*>> tensors, double h,
                           std::size_t max_coords, uint64_t coord_seed,
                           const std::function<uint64_t()>& signature,
                           double refine_tolerance) {
    compute_grads();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(tensors.size());
    for (auto& [name, t] : tensors)
        analytic.push_back(t->grad);

    GradCheckReport report;
    Rng coord_rng(coord_seed ^ 0x5bd1e995);
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        Tensor* t = tensors[ti].second;
        GradCheckEntry entry;
        entry.name = tensors[ti].first;

        std::vector<std::size_t> coords;
        if (max_coords == 0 || t->size() <= max_coords) {
            coords.resize(t->size());
            for (std::size_t i = 0; i < coords.size(); ++i)
                coords[i] = i;
        } else {
            for (std::size_t i = 0; i < max_coords; ++i)
                coords.push_back(static_cast<std::size_t>(coord_rng.below(t->size())));
        }

        for (std::size_t i : coords) {
            const double orig = t->data[i];
            const double a = analytic[ti][i];
            bool measured = false;
            double rel = 0.0;
            for (const double step : {h, h / 4.0, h / 16.0, h / 64.0, h / 256.0}) {
                t->data[i] = orig + step;
                const double lp = loss();
                const uint64_t sig_plus = signature ? signature() : 0;
                t->data[i] = orig - step;
                const double lm = loss();
                const uint64_t sig_minus = signature ? signature() : 0;
                t->data[i] = orig;
                if (signature && sig_plus != sig_minus)
                    continue; // the probe segment crosses a ReLU/pooling kink
                const double fd = (lp - lm) / (2.0 * step);
                rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
                measured = true;
                if (refine_tolerance <= 0.0 || rel <= refine_tolerance)
                    break; // accept; otherwise halve the step and retry
            }
            if (!measured) {
                ++entry.coords_skipped;
                continue;
            }
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
            ++entry.coords_checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.coords_checked += entry.coords_checked;
        report.coords_skipped += entry.coords_skipped;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace qrsdet::nn
