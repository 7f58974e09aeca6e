#include "qrsdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qrsdet/errors.hpp"
#include "qrsdet/rng.hpp"

namespace qrsdet {

void ModelConfig::validate() const {
    if (input_channels != 1 && input_channels != 2)
        throw ConfigError("input_channels must be 1 or 2");
    if (base_channels < 1 || depth < 1 || lstm_units < 1)
        throw ConfigError("base_channels, depth and lstm_units must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0, 1)");
    if (batch_size < 1 || epochs < 0)
        throw ConfigError("batch_size must be >= 1 and epochs >= 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw ConfigError("validation_fraction must be in [0, 1)");
    if (!relax_invariants && use_bilstm &&
        base_channels * (1 << depth) != lstm_units)
        throw ConfigError("base_channels * 2^depth must equal lstm_units (" +
                          std::to_string(base_channels * (1 << depth)) +
                          " != " + std::to_string(lstm_units) + ")");
}

uint64_t ModelConfig::hash() const {
    std::string canon = std::to_string(input_channels) + "|" + std::to_string(base_channels) +
                        "|" + std::to_string(depth) + "|" + std::to_string(lstm_units) + "|" +
                        (use_bilstm ? "bilstm" : "plain");
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::size_t padded_length(std::size_t length, int depth) {
    const std::size_t mult = std::size_t{1} << depth;
    return (length + mult - 1) / mult * mult;
}

std::vector<double> pad_for_depth(std::span<const double> channel, int depth,
                                  std::size_t* original_length) {
    if (original_length)
        *original_length = channel.size();
    const std::size_t target = padded_length(std::max<std::size_t>(channel.size(), 1), depth);
    std::vector<double> out(channel.begin(), channel.end());
    const double edge = channel.empty() ? 0.0 : channel.back();
    out.resize(target, edge);
    return out;
}

namespace {

struct DoubleConv {
    DoubleConv(std::size_t c_in, std::size_t c_out, double dropout_rate, Rng rng)
        : conv1(c_in, c_out, 3, rng.stream(0)), bn1(c_out),
          drop(dropout_rate, rng.stream(1)), conv2(c_out, c_out, 3, rng.stream(2)),
          bn2(c_out) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor t = relu1.forward(bn1.forward(conv1.forward(x), training));
        t = drop.forward(t, training);
        return relu2.forward(bn2.forward(conv2.forward(t), training));
    }

    Tensor backward(const Tensor& dy) {
        Tensor d = conv2.backward(bn2.backward(relu2.backward(dy)));
        d = drop.backward(d);
        return conv1.backward(bn1.backward(relu1.backward(d)));
    }

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.register_parameter(prefix + ".conv1.w", conv1.weight);
        store.register_parameter(prefix + ".conv1.b", conv1.bias);
        store.register_parameter(prefix + ".bn1.gamma", bn1.gamma);
        store.register_parameter(prefix + ".bn1.beta", bn1.beta);
        store.register_parameter(prefix + ".conv2.w", conv2.weight);
        store.register_parameter(prefix + ".conv2.b", conv2.bias);
        store.register_parameter(prefix + ".bn2.gamma", bn2.gamma);
        store.register_parameter(prefix + ".bn2.beta", bn2.beta);
        // running statistics are not optimized but must survive save/load
        store.register_buffer(prefix + ".bn1.running_mean", bn1.running_mean);
        store.register_buffer(prefix + ".bn1.running_var", bn1.running_var);
        store.register_buffer(prefix + ".bn2.running_mean", bn2.running_mean);
        store.register_buffer(prefix + ".bn2.running_var", bn2.running_var);
    }

    void init_running_stats() {
        bn1.init_running_stats();
        bn2.init_running_stats();
    }

    double kink_margin() const {
        return std::min(relu1.min_abs_input(), relu2.min_abs_input());
    }

    nn::Conv1d conv1;
    nn::BatchNorm1d bn1;
    nn::ReLU relu1;
    nn::Dropout drop;
    nn::Conv1d conv2;
    nn::BatchNorm1d bn2;
    nn::ReLU relu2;
};

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw ConfigError("concat: batch/length mismatch (" + std::to_string(a.dim(2)) +
                          " vs " + std::to_string(b.dim(2)) + ")");
    const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), len = a.dim(2);
    Tensor out({batch, ca + cb, len});
    for (std::size_t bb = 0; bb < batch; ++bb) {
        std::copy(a.ptr() + bb * ca * len, a.ptr() + (bb + 1) * ca * len,
                  out.ptr() + bb * (ca + cb) * len);
        std::copy(b.ptr() + bb * cb * len, b.ptr() + (bb + 1) * cb * len,
                  out.ptr() + (bb * (ca + cb) + ca) * len);
    }
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& d, std::size_t ca) {
    const std::size_t batch = d.dim(0), c = d.dim(1), len = d.dim(2);
    const std::size_t cb = c - ca;
    Tensor da({batch, ca, len}), db({batch, cb, len});
    for (std::size_t bb = 0; bb < batch; ++bb) {
        std::copy(d.ptr() + bb * c * len, d.ptr() + (bb * c + ca) * len,
                  da.ptr() + bb * ca * len);
        std::copy(d.ptr() + (bb * c + ca) * len, d.ptr() + (bb + 1) * c * len,
                  db.ptr() + bb * cb * len);
    }
    return {std::move(da), std::move(db)};
}

} // namespace

struct UNetBiLstm::Impl {
    explicit Impl(const ModelConfig& cfg) : config(cfg) {
        config.validate();
        Rng rng(config.seed);

        std::vector<std::size_t> enc_ch(static_cast<std::size_t>(config.depth));
        for (int s = 0; s < config.depth; ++s)
            enc_ch[static_cast<std::size_t>(s)] =
                static_cast<std::size_t>(config.base_channels) << s;
        const std::size_t bott_ch = static_cast<std::size_t>(config.base_channels)
                                    << config.depth;

        std::size_t in_ch = static_cast<std::size_t>(config.input_channels);
        for (int s = 0; s < config.depth; ++s) {
            encoders.emplace_back(in_ch, enc_ch[static_cast<std::size_t>(s)],
                                  config.dropout_rate,
                                  rng.stream(0x100 + static_cast<uint64_t>(s)));
            pools.emplace_back(3, 2);
            in_ch = enc_ch[static_cast<std::size_t>(s)];
        }
        bottleneck = std::make_unique<DoubleConv>(in_ch, bott_ch, config.dropout_rate,
                                                  rng.stream(0x200));
        if (config.use_bilstm)
            bilstm = std::make_unique<nn::BiLstm>(bott_ch,
                                                  static_cast<std::size_t>(config.lstm_units),
                                                  rng.stream(0x300));

        std::size_t up_in = config.use_bilstm ? static_cast<std::size_t>(config.lstm_units)
                                              : bott_ch;
        for (int s = config.depth - 1; s >= 0; --s) {
            const std::size_t skip_ch = enc_ch[static_cast<std::size_t>(s)];
            up_convs.emplace_back(up_in, skip_ch, 1,
                                  rng.stream(0x400 + static_cast<uint64_t>(s)));
            upsamples.emplace_back();
            decoders.emplace_back(2 * skip_ch, skip_ch, config.dropout_rate,
                                  rng.stream(0x500 + static_cast<uint64_t>(s)));
            up_in = skip_ch;
        }
        head = std::make_unique<nn::Conv1d>(up_in, 1, 1, rng.stream(0x600));

        for (std::size_t s = 0; s < encoders.size(); ++s)
            encoders[s].register_params(store, "enc" + std::to_string(s));
        bottleneck->register_params(store, "bottleneck");
        if (bilstm) {
            store.register_parameter("bilstm.fwd.w", bilstm->fwd.w);
            store.register_parameter("bilstm.fwd.u", bilstm->fwd.u);
            store.register_parameter("bilstm.fwd.b", bilstm->fwd.b);
            store.register_parameter("bilstm.bwd.w", bilstm->bwd.w);
            store.register_parameter("bilstm.bwd.u", bilstm->bwd.u);
            store.register_parameter("bilstm.bwd.b", bilstm->bwd.b);
        }
        for (std::size_t s = 0; s < decoders.size(); ++s) {
            store.register_parameter("up" + std::to_string(s) + ".w", up_convs[s].weight);
            store.register_parameter("up" + std::to_string(s) + ".b", up_convs[s].bias);
            decoders[s].register_params(store, "dec" + std::to_string(s));
        }
        store.register_parameter("head.w", head->weight);
        store.register_parameter("head.b", head->bias);
        store.rng_seed = config.seed;
        store.config_hash = config.hash();

        // an untrained network must still run inference (zero mean, unit
        // variance running stats)
        for (auto& e : encoders)
            e.init_running_stats();
        bottleneck->init_running_stats();
        for (auto& d : decoders)
            d.init_running_stats();
    }

    Tensor forward_logits(const Tensor& x, bool training) {
        if (x.dim(1) != static_cast<std::size_t>(config.input_channels))
            throw ConfigError("model expects " + std::to_string(config.input_channels) +
                              " input channels");
        if (x.dim(2) % (std::size_t{1} << config.depth) != 0)
            throw ConfigError("input length must be a multiple of 2^depth (use pad_for_depth)");
        Tensor cur = x;
        skip_cache.clear();
        for (std::size_t s = 0; s < encoders.size(); ++s) {
            cur = encoders[s].forward(cur, training);
            skip_cache.push_back(cur);
            cur = pools[s].forward(cur);
        }
        cur = bottleneck->forward(cur, training);
        if (bilstm)
            cur = bilstm->forward(cur);
        for (std::size_t d = 0; d < decoders.size(); ++d) {
            const std::size_t s = encoders.size() - 1 - d; // matching skip
            cur = up_convs[d].forward(upsamples[d].forward(cur));
            // shape law: upsampled map and its skip agree in channels/length
            const Tensor& skip = skip_cache[s];
            if (cur.dim(1) != skip.dim(1) || cur.dim(2) != skip.dim(2))
                throw ConfigError("skip connection shape mismatch at decoder stage " +
                                  std::to_string(d));
            cur = decoders[d].forward(concat_channels(cur, skip), training);
        }
        return head->forward(cur);
    }

    Tensor backward(const Tensor& dlogits) {
        Tensor d = head->backward(dlogits);
        std::vector<Tensor> skip_grads(encoders.size());
        for (std::size_t dd = decoders.size(); dd-- > 0;) {
            const std::size_t s = encoders.size() - 1 - dd;
            d = decoders[dd].backward(d);
            auto [d_up, d_skip] = split_channels(d, d.dim(1) / 2);
            skip_grads[s] = std::move(d_skip);
            d = upsamples[dd].backward(up_convs[dd].backward(d_up));
        }
        if (bilstm)
            d = bilstm->backward(d);
        d = bottleneck->backward(d);
        for (std::size_t s = encoders.size(); s-- > 0;) {
            d = pools[s].backward(d);
            Tensor& sg = skip_grads[s];
            for (std::size_t i = 0; i < d.size(); ++i)
                d.data[i] += sg.data[i];
            d = encoders[s].backward(d);
        }
        return d;
    }

    double kink_margin() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& e : encoders)
            m = std::min(m, e.kink_margin());
        m = std::min(m, bottleneck->kink_margin());
        for (const auto& d : decoders)
            m = std::min(m, d.kink_margin());
        for (const auto& p : pools)
            m = std::min(m, p.min_top2_gap());
        return m;
    }

    double min_batch_variance() const {
        double m = std::numeric_limits<double>::infinity();
        auto visit = [&m](const DoubleConv& dc) {
            m = std::min({m, dc.bn1.min_batch_variance(), dc.bn2.min_batch_variance()});
        };
        for (const auto& e : encoders)
            visit(e);
        visit(*bottleneck);
        for (const auto& d : decoders)
            visit(d);
        return m;
    }

    uint64_t activation_signature() const {
        uint64_t h = 0xa4093822299f31d0ULL;
        auto mix = [&h](uint64_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
        for (const auto& e : encoders) {
            mix(e.relu1.activation_signature());
            mix(e.relu2.activation_signature());
        }
        for (const auto& p : pools)
            mix(p.activation_signature());
        mix(bottleneck->relu1.activation_signature());
        mix(bottleneck->relu2.activation_signature());
        for (const auto& d : decoders) {
            mix(d.relu1.activation_signature());
            mix(d.relu2.activation_signature());
        }
        return h;
    }

    ModelConfig config;
    ParameterStore store;
    std::vector<DoubleConv> encoders;
    std::vector<nn::MaxPool1d> pools;
    std::unique_ptr<DoubleConv> bottleneck;
    std::unique_ptr<nn::BiLstm> bilstm;
    std::vector<nn::Upsample2> upsamples;
    std::vector<nn::Conv1d> up_convs;
    std::vector<DoubleConv> decoders;
    std::unique_ptr<nn::Conv1d> head;
    std::vector<Tensor> skip_cache;
};

UNetBiLstm::UNetBiLstm(const ModelConfig& config) : impl_(std::make_unique<Impl>(config)) {}
UNetBiLstm::~UNetBiLstm() = default;
UNetBiLstm::UNetBiLstm(UNetBiLstm&&) noexcept = default;
UNetBiLstm& UNetBiLstm::operator=(UNetBiLstm&&) noexcept = default;

const ModelConfig& UNetBiLstm::config() const { return impl_->config; }
ParameterStore& UNetBiLstm::parameters() { return impl_->store; }
Tensor UNetBiLstm::forward_logits(const Tensor& x, bool training) {
    return impl_->forward_logits(x, training);
}
Tensor UNetBiLstm::backward(const Tensor& dlogits) { return impl_->backward(dlogits); }
double UNetBiLstm::kink_margin() const { return impl_->kink_margin(); }
uint64_t UNetBiLstm::activation_signature() const { return impl_->activation_signature(); }
double UNetBiLstm::min_batch_variance() const { return impl_->min_batch_variance(); }

Tensor batch_input(const std::vector<const Segment*>& batch, const ModelConfig& config) {
    if (batch.empty())
        throw ConfigError("empty batch");
    const std::size_t len = batch[0]->length();
    const std::size_t padded = padded_length(len, config.depth);
    const std::size_t c_in = static_cast<std::size_t>(config.input_channels);
    Tensor x({batch.size(), c_in, padded});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b]->length() != len)
            throw ConfigError("segments in one batch must share a length");
        for (std::size_t c = 0; c < c_in; ++c) {
            const auto& src = batch[b]->channels[c];
            double* dst = x.ptr() + (b * c_in + c) * padded;
            std::copy(src.begin(), src.end(), dst);
            std::fill(dst + len, dst + padded, src.empty() ? 0.0 : src.back());
        }
    }
    return x;
}

Tensor batch_target(const std::vector<const Segment*>& batch, int depth) {
    const std::size_t len = batch[0]->length();
    const std::size_t padded = padded_length(len, depth);
    Tensor t({batch.size(), 1, padded});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& src = batch[b]->target;
        double* dst = t.ptr() + b * padded;
        std::copy(src.begin(), src.end(), dst);
        // pad region carries no supervision; the loss masks it out
        std::fill(dst + len, dst + padded, 0.0);
    }
    return t;
}

namespace {

/// Loss over the unpadded region only: the pad columns contribute nothing to
/// the value or the gradient.
nn::LossResult masked_loss(nn::LossKind kind, const Tensor& logits, const Tensor& targets,
                           std::size_t valid_len) {
    const std::size_t batch = logits.dim(0), padded = logits.dim(2);
    const double n = static_cast<double>(batch * valid_len);
    nn::LossResult res;
    res.dlogits = Tensor(logits.shape);
    double acc = 0.0;
    constexpr double clamp = 1e-7;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* z = logits.ptr() + b * padded;
        const double* t = targets.ptr() + b * padded;
        double* g = res.dlogits.ptr() + b * padded;
        for (std::size_t l = 0; l < valid_len; ++l) {
            const double p_raw = nn::sigmoid(z[l]);
            if (kind == nn::LossKind::BinaryCrossEntropy) {
                const double p = std::min(1.0 - clamp, std::max(clamp, p_raw));
                acc -= t[l] * std::log(p) + (1.0 - t[l]) * std::log(1.0 - p);
                g[l] = (p_raw - t[l]) / n;
            } else {
                const double e = p_raw - t[l];
                acc += e * e;
                g[l] = 2.0 * e * p_raw * (1.0 - p_raw) / n;
            }
        }
    }
    res.value = acc / n;
    return res;
}

} // namespace

std::vector<NetworkOutput> UNetBiLstm::forward(const std::vector<const Segment*>& batch) {
    const std::size_t len = batch.empty() ? 0 : batch[0]->length();
    Tensor x = batch_input(batch, impl_->config);
    Tensor logits = impl_->forward_logits(x, /*training=*/false);
    std::vector<NetworkOutput> out(batch.size());
    const std::size_t padded = logits.dim(2);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out[b].logits.assign(logits.ptr() + b * padded, logits.ptr() + b * padded + len);
        out[b].probabilities.resize(len);
        for (std::size_t l = 0; l < len; ++l)
            out[b].probabilities[l] = nn::sigmoid(out[b].logits[l]);
    }
    return out;
}

std::vector<NetworkOutput> UNetBiLstm::forward(const std::vector<Segment>& batch) {
    std::vector<const Segment*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& s : batch)
        ptrs.push_back(&s);
    return forward(ptrs);
}

TrainHistory train(UNetBiLstm& model, const std::vector<Segment>& segments,
                   const TrainHooks& hooks) {
    const ModelConfig& cfg = model.config();
    if (segments.empty())
        throw ConfigError("training needs at least one segment");

    Rng shuffle_rng = Rng(cfg.seed).stream(0xA11);

    // validation holdout (falls back to the training set when it rounds to 0)
    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    const std::size_t n_val =
        static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(segments.size()));
    std::vector<const Segment*> train_set, val_set;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(&segments[order[i]]);
    if (val_set.empty())
        val_set.assign(train_set.begin(), train_set.end());

    const std::size_t valid_len = segments[0].length();
    const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);

    auto eval_loss = [&](const std::vector<const Segment*>& set) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t at = 0; at < set.size(); at += batch_size) {
            std::vector<const Segment*> batch(
                set.begin() + static_cast<std::ptrdiff_t>(at),
                set.begin() + static_cast<std::ptrdiff_t>(std::min(set.size(), at + batch_size)));
            Tensor x = batch_input(batch, cfg);
            Tensor logits = model.forward_logits(x, /*training=*/false);
            Tensor targets = batch_target(batch, cfg.depth);
            acc += masked_loss(cfg.loss, logits, targets, valid_len).value * batch.size();
            count += batch.size();
        }
        return acc / static_cast<double>(count);
    };

    TrainHistory history;
    std::stringstream best_checkpoint;
    int epochs_since_best = 0;
    bool hook_stopped = false;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // seeded shuffle per epoch
        Rng erng = Rng(cfg.seed).stream(0xE000 + static_cast<uint64_t>(epoch));
        std::vector<const Segment*> shuffled = train_set;
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[erng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        std::size_t batch_id = 0;
        for (std::size_t at = 0; at < shuffled.size(); at += batch_size, ++batch_id) {
            std::vector<const Segment*> batch(
                shuffled.begin() + static_cast<std::ptrdiff_t>(at),
                shuffled.begin() +
                    static_cast<std::ptrdiff_t>(std::min(shuffled.size(), at + batch_size)));
            Tensor x = batch_input(batch, cfg);
            Tensor logits = model.forward_logits(x, /*training=*/true);
            Tensor targets = batch_target(batch, cfg.depth);
            auto loss = masked_loss(cfg.loss, logits, targets, valid_len);
            if (!std::isfinite(loss.value))
                throw TrainingError("non-finite loss " + std::to_string(loss.value) +
                                    " in epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_id));
            model.parameters().zero_grad();
            model.backward(loss.dlogits);
            adam_step(model.parameters(), cfg.lr);
            epoch_loss += loss.value * batch.size();
            seen += batch.size();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(seen);
        stats.val_loss = eval_loss(val_set);
        history.epochs.push_back(stats);

        if (history.best_epoch < 0 || stats.val_loss < history.best_val_loss) {
            history.best_epoch = epoch;
            history.best_val_loss = stats.val_loss;
            best_checkpoint.str({});
            best_checkpoint.clear();
            model.parameters().serialize(best_checkpoint);
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            break;
        }
        if (hooks.on_epoch && hooks.on_epoch(stats)) {
            hook_stopped = true;
            break;
        }
    }

    // retain the best-validation checkpoint; a hook-requested stop keeps the
    // state the hook just inspected
    if (!hook_stopped && history.best_epoch >= 0) {
        best_checkpoint.seekg(0);
        model.parameters().deserialize(best_checkpoint);
    }
    return history;
}

} // namespace qrsdet
