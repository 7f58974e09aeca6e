#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qrsdet/rng.hpp"
#include "qrsdet/tensor.hpp"

namespace qrsdet::nn {

// Activations (numerically stable branch form for sigmoid).
double sigmoid(double x);
void relu_forward(std::span<const double> in, std::span<double> out);
void sigmoid_forward(std::span<const double> in, std::span<double> out);

/// Set the worker count used by batched forward/backward loops (0 = one per
/// hardware thread). Parallel work is split over disjoint output ranges and
/// reduced in a fixed order, so results are schedule-independent.
void set_num_threads(int n);
int num_threads();

/// Same-padded 1-D cross-correlation, weights {C_out, C_in, K} with K odd,
/// bias {C_out}. Tensors are {B, C, L}.
class Conv1d {
public:
    Conv1d(std::size_t c_in, std::size_t c_out, std::size_t kernel, Rng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    Tensor weight; // {c_out, c_in, k}
    Tensor bias;   // {c_out}
    std::size_t c_in() const { return c_in_; }
    std::size_t c_out() const { return c_out_; }
    std::size_t kernel() const { return k_; }

private:
    std::size_t c_in_, c_out_, k_;
    Tensor x_cache_;
};

/// Per-channel batch normalization over batch x length. Training mode uses
/// the mini-batch statistics and maintains running averages with momentum
/// 0.9; inference mode uses the running averages and fails if they were
/// never initialized.
class BatchNorm1d {
public:
    explicit BatchNorm1d(std::size_t channels);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);

    /// Mark running statistics as valid (mean 0, variance 1); the model does
    /// this at build time so an untrained network can run inference.
    void init_running_stats();
    bool running_initialized() const { return running_initialized_; }

    /// Smallest strictly positive per-channel batch variance of the last
    /// training forward (infinity when every channel is constant).
    /// Near-zero variance makes 1/sqrt(var+eps) violently curved, which
    /// finite-difference probes must avoid; exactly-zero variance means a
    /// dead channel, which is flat and harmless.
    double min_batch_variance() const { return min_batch_var_; }

    Tensor gamma, beta;                    // {C}
    std::vector<double> running_mean, running_var;
    double momentum = 0.9;
    double eps = 1e-5;

private:
    std::size_t channels_;
    bool running_initialized_ = false;
    // cache of the last forward (either mode)
    Tensor x_hat_;
    std::vector<double> inv_std_;
    bool cached_training_ = false;
    double min_batch_var_ = 0.0;
};

class ReLU {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    /// Smallest |input| of the last forward; finite-difference checks
    /// re-sample when a pre-activation sits within 1e-4 of the kink.
    double min_abs_input() const { return min_abs_input_; }

    /// Hash of the sign pattern of the last forward (kink-crossing probe).
    uint64_t activation_signature() const;

private:
    Tensor x_cache_;
    double min_abs_input_ = 0.0;
};

/// Inverted dropout: training zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); inference is the identity.
class Dropout {
public:
    Dropout(double rate, Rng rng);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);

    double rate() const { return rate_; }

private:
    double rate_;
    Rng rng_;
    std::vector<uint8_t> mask_;
    bool cached_training_ = false;
};

/// Window-3 stride-2 max pooling with right -inf padding; output length is
/// ceil(L/2). Ties pick the leftmost sample; the stored argmax routes each
/// upstream gradient to exactly one input position.
class MaxPool1d {
public:
    MaxPool1d(std::size_t window = 3, std::size_t stride = 2);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    const std::vector<std::size_t>& argmax() const { return argmax_; }

    /// Smallest gap between the two largest values of any window in the last
    /// forward (infinity for single-element windows); used for kink
    /// avoidance in finite-difference checks.
    double min_top2_gap() const { return min_top2_gap_; }

    /// Hash of the argmax routing of the last forward (kink-crossing probe).
    uint64_t activation_signature() const;

private:
    std::size_t window_, stride_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_shape_;
    double min_top2_gap_ = 0.0;
};

/// Nearest-neighbor x2 upsampling along length.
class Upsample2 {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

private:
    std::vector<std::size_t> in_shape_;
};

/// Single LSTM direction over {B, D, L}; returns hidden states {B, H, L}.
/// Gate layout in the stacked weights is (input, forget, cell, output).
class Lstm {
public:
    Lstm(std::size_t input_dim, std::size_t hidden, bool reverse, Rng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    Tensor w; // {4H, D} input weights
    Tensor u; // {4H, H} recurrent weights
    Tensor b; // {4H}
    std::size_t hidden() const { return hidden_; }
    bool reverse() const { return reverse_; }

private:
    std::size_t input_dim_, hidden_;
    bool reverse_;
    // column-major copies for the forward matvec, refreshed per call
    std::vector<double> wt_, ut_;
    Tensor x_cache_;
    std::vector<double> gates_, cells_, tanh_c_, hidden_all_; // per (b, t)
};

/// One cell update; convenience entry point mirroring the layer math.
/// Weights are row-major {4H, D}, {4H, H}; x {D}, h/c {H}.
void lstm_cell_step(std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, std::span<const double> w,
                    std::span<const double> u, std::span<const double> b, std::size_t hidden,
                    std::span<double> h_out, std::span<double> c_out);

/// Forward and backward LSTM passes summed stepwise.
class BiLstm {
public:
    BiLstm(std::size_t input_dim, std::size_t hidden, Rng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    Lstm fwd, bwd;
};

enum class LossKind { BinaryCrossEntropy, MeanSquaredError };

struct LossResult {
    double value = 0.0;
    Tensor dlogits; // gradient with respect to the pre-sigmoid logits
};

/// Mean pointwise binary cross-entropy between sigmoid(logits) and soft
/// targets in [0,1]; probabilities are clamped at 1e-7. The logit gradient
/// is (p - t) / N.
LossResult bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Mean squared error on probabilities, as the ablation alternative.
LossResult mse_with_logits(const Tensor& logits, const Tensor& targets);

LossResult loss_with_logits(LossKind kind, const Tensor& logits, const Tensor& targets);

// ---------------------------------------------------------------------------
// Finite-difference validation harness.

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0; // kink crossings detected by signature
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0;
    bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

/// Compare analytic gradients against central differences (step h on 64-bit
/// values). `loss` must be a pure function of the tensors' current data;
/// `compute_grads` must populate tensor.grad for the same point. When
/// max_coords > 0, a seeded random subset of coordinates is probed. The
/// optional `signature` hook reports the piecewise-linear activation pattern
/// of the most recent loss() evaluation; a coordinate whose two probe points
/// disagree crossed a ReLU/pooling kink and is skipped rather than compared.
/// When refine_tolerance > 0, a coordinate that misses it at step h is
/// re-probed at successively quartered steps down to h/256: batch-norm
/// layers over tiny populations give the loss a large third derivative, and
/// a fixed step then dominates the central-difference error even though the
/// gradient is exact.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           std::vector<std::pair<std::string, Tensor*>> tensors,
                           double h = 1e-4, std::size_t max_coords = 0,
                           uint64_t coord_seed = 0,
                           const std::function<uint64_t()>& signature = {},
                           double refine_tolerance = 0.0);

} // namespace qrsdet::nn
