#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qrsdet/labeling.hpp"
#include "qrsdet/nn_ops.hpp"
#include "qrsdet/tensor.hpp"

namespace qrsdet {

struct ModelConfig {
    int input_channels = 2; // 1 = single-channel ablation
    int base_channels = 8;
    int depth = 5;
    int lstm_units = 256;
    bool use_bilstm = true;
    LabelMode label_mode = LabelMode::Smooth;
    nn::LossKind loss = nn::LossKind::BinaryCrossEntropy;
    double dropout_rate = 0.2;
    double lr = 1e-3;
    int batch_size = 16;
    int epochs = 50;
    int patience = 10;                 // early-stopping patience on validation loss
    double validation_fraction = 0.1;  // held out of the training set
    uint64_t seed = 42;
    /// Test-only escape hatch: skip the base_channels * 2^depth == lstm_units
    /// coupling so scaled-down configurations can be built.
    bool relax_invariants = false;

    void validate() const;
    /// Hash of the architecture-defining fields, stored in checkpoints and
    /// verified before loading.
    uint64_t hash() const;
};

struct NetworkOutput {
    std::vector<double> probabilities;
    std::vector<double> logits;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

/// Optional hooks for the training loop. on_epoch returning true stops
/// training and keeps the current parameters (no best-checkpoint rollback);
/// the hook must not touch the model's RNG state if bit-exact histories
/// matter.
struct TrainHooks {
    std::function<bool(const EpochStats&)> on_epoch;
};

/// Right-pad with edge replication to the next multiple of 2^depth.
std::vector<double> pad_for_depth(std::span<const double> channel, int depth,
                                  std::size_t* original_length = nullptr);
std::size_t padded_length(std::size_t length, int depth);

/// The dual-channel U-Net with a bidirectional LSTM over the bottleneck
/// sequence. Encoder stages double the channel count and halve the length;
/// decoder stages upsample, project with a 1x1 convolution, concatenate the
/// skip feature and apply the double convolution; a 1x1 convolution plus
/// sigmoid forms the per-sample probability head.
class UNetBiLstm {
public:
    explicit UNetBiLstm(const ModelConfig& config);
    ~UNetBiLstm();
    UNetBiLstm(UNetBiLstm&&) noexcept;
    UNetBiLstm& operator=(UNetBiLstm&&) noexcept;

    const ModelConfig& config() const;
    ParameterStore& parameters();

    /// Batch inference on segments; outputs are truncated back to each
    /// segment's original length.
    std::vector<NetworkOutput> forward(const std::vector<const Segment*>& batch);
    std::vector<NetworkOutput> forward(const std::vector<Segment>& batch);

    /// Low-level batched passes on {B, C, L} tensors (L a multiple of
    /// 2^depth). backward() consumes d(loss)/d(logits) and accumulates
    /// parameter gradients.
    Tensor forward_logits(const Tensor& x, bool training);
    Tensor backward(const Tensor& dlogits);

    /// Smallest |pre-activation| over every ReLU input and the smallest
    /// top-two gap over every pooling window of the most recent forward;
    /// finite-difference tests re-sample inputs when this is < 1e-4.
    double kink_margin() const;

    /// Combined hash of every ReLU sign pattern and pooling argmax of the
    /// most recent forward; finite-difference probes compare it across the
    /// two evaluation points to detect kink crossings.
    uint64_t activation_signature() const;

    /// Smallest per-channel batch variance across every norm layer of the
    /// most recent training forward.
    double min_batch_variance() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Mini-batch training with shuffled batches, the configured loss, adaptive
/// moment updates and best-validation checkpointing. When the validation
/// fraction rounds to zero segments, validation falls back to the training
/// set. Throws TrainingError (with batch id and loss value) on a non-finite
/// loss.
TrainHistory train(UNetBiLstm& model, const std::vector<Segment>& segments,
                   const TrainHooks& hooks = {});

/// Assemble the batch input tensor for a set of segments (padding included).
Tensor batch_input(const std::vector<const Segment*>& batch, const ModelConfig& config);
Tensor batch_target(const std::vector<const Segment*>& batch, int depth);

} // namespace qrsdet
