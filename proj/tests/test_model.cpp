#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "qrsdet/errors.hpp"
#include "qrsdet/eval.hpp"
#include "qrsdet/labeling.hpp"
#include "qrsdet/model.hpp"
#include "qrsdet/peak_picker.hpp"
#include "qrsdet/synth.hpp"

using namespace qrsdet;

namespace {

ModelConfig tiny_config(uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.input_channels = 2;
    cfg.base_channels = 2;
    cfg.depth = 3;
    cfg.lstm_units = 16; // 2 * 2^3 = 16
    cfg.dropout_rate = 0.1;
    cfg.batch_size = 4;
    cfg.seed = seed;
    return cfg;
}

std::vector<Segment> synth_segments(int records, double duration_s, uint64_t seed,
                                    bool invert = false, double noise = 0.02) {
    std::vector<Segment> all;
    for (int r = 0; r < records; ++r) {
        SynthConfig cfg;
        cfg.duration_s = duration_s;
        cfg.heart_rate_bpm = 55 + 13.0 * r;
        cfg.rr_jitter_fraction = 0.08;
        cfg.white_noise_std_mv = noise;
        cfg.invert_polarity = invert;
        cfg.rng_seed = seed + static_cast<uint64_t>(r);
        auto [rec, ann] = synthesize_ecg(cfg, "s" + std::to_string(r) + (invert ? "i" : "u"));
        auto mv = rec.channel_mv(0);
        auto segs = make_segments(mv, ann.r_peak_indices(), rec.sampling_rate_hz,
                                  rec.record_id, LabelConfig{});
        for (auto& s : segs)
            all.push_back(std::move(s));
    }
    return all;
}

} // namespace

TEST_CASE("pad_for_depth reaches the next multiple of 2^depth") {
    std::vector<double> x(3600, 1.0);
    std::size_t orig = 0;
    auto padded = pad_for_depth(x, 5, &orig);
    CHECK(orig == 3600);
    CHECK(padded.size() == 3616);
    CHECK(padded.back() == 1.0); // edge replication

    CHECK(pad_for_depth(std::vector<double>(3616, 0.0), 5).size() == 3616);
    CHECK(pad_for_depth(std::vector<double>(1, 2.0), 5).size() == 32);
    CHECK(padded_length(3600, 5) == 3616);
}

TEST_CASE("config invariant couples base channels and lstm units") {
    ModelConfig cfg; // 8 * 2^5 == 256 holds
    CHECK_NOTHROW(cfg.validate());
    cfg.base_channels = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.relax_invariants = true;
    CHECK_NOTHROW(cfg.validate());
    cfg = {};
    cfg.use_bilstm = false;
    cfg.base_channels = 4; // decoupled without the BiLSTM
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("forward output matches input length with values in (0,1)") {
    auto cfg = tiny_config();
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 20, 100);
    REQUIRE(segs.size() == 2);
    auto outs = model.forward(segs);
    REQUIRE(outs.size() == 2);
    for (const auto& out : outs) {
        CHECK(out.probabilities.size() == 3600);
        CHECK(out.logits.size() == 3600);
        for (std::size_t i = 0; i < out.probabilities.size(); ++i) {
            CHECK(out.probabilities[i] > 0.0);
            CHECK(out.probabilities[i] < 1.0);
            CHECK(out.probabilities[i] ==
                  doctest::Approx(1.0 / (1.0 + std::exp(-out.logits[i]))).epsilon(1e-9));
        }
    }
}

TEST_CASE("fresh network on zero input emits a constant sigmoid(bias)") {
    auto cfg = tiny_config(3);
    UNetBiLstm model(cfg);
    Segment zero;
    zero.record_id = "z";
    zero.channels[0].assign(3600, 0.0);
    zero.channels[1].assign(3600, 0.0);
    zero.target.assign(3600, 0.0);
    auto out = model.forward(std::vector<Segment>{zero});
    // zero input propagates to the head, whose bias starts at zero
    for (double p : out[0].probabilities)
        CHECK(p == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("identical segments in one batch produce identical outputs") {
    auto cfg = tiny_config(5);
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 10, 200);
    std::vector<Segment> batch = {segs[0], segs[0]};
    auto outs = model.forward(batch);
    CHECK(outs[0].probabilities == outs[1].probabilities);
}

TEST_CASE("single-channel and no-bilstm ablations run the same topology") {
    auto cfg = tiny_config(9);
    cfg.input_channels = 1;
    UNetBiLstm single(cfg);
    auto segs = synth_segments(1, 10, 300);
    CHECK(single.forward(segs)[0].probabilities.size() == 3600);

    auto cfg2 = tiny_config(9);
    cfg2.use_bilstm = false;
    UNetBiLstm plain(cfg2);
    CHECK(plain.forward(segs)[0].probabilities.size() == 3600);
}

TEST_CASE("output length equals input length for arbitrary segment lengths") {
    auto cfg = tiny_config(21);
    UNetBiLstm model(cfg);
    Rng rng(31);
    for (std::size_t len : {1ul, 7ul, 37ul, 100ul, 1000ul, 3600ul}) {
        Segment s;
        s.record_id = "len" + std::to_string(len);
        s.channels[0].resize(len);
        for (auto& v : s.channels[0])
            v = rng.normal();
        s.channels[1].resize(len);
        for (std::size_t i = 0; i < len; ++i)
            s.channels[1][i] = -s.channels[0][i];
        s.target.assign(len, 0.0);
        auto out = model.forward(std::vector<Segment>{s});
        CHECK(out[0].probabilities.size() == len);
        CHECK(out[0].logits.size() == len);
    }
}

TEST_CASE("forward rejects unpadded lengths and wrong channel counts") {
    auto cfg = tiny_config();
    UNetBiLstm model(cfg);
    Tensor bad({1, 2, 100}); // not a multiple of 2^3
    CHECK_THROWS_AS(model.forward_logits(bad, false), ConfigError);
    Tensor wrong({1, 3, 64});
    CHECK_THROWS_AS(model.forward_logits(wrong, false), ConfigError);
}

TEST_CASE("lr = 0 leaves parameters unchanged after an epoch") {
    auto cfg = tiny_config(11);
    cfg.lr = 0.0;
    cfg.epochs = 1;
    cfg.validation_fraction = 0.0;
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 20, 400);

    std::vector<std::vector<double>> before;
    for (auto& slot : model.parameters().slots())
        before.push_back(slot.tensor->data);
    train(model, segs);
    std::size_t i = 0;
    for (auto& slot : model.parameters().slots())
        CHECK(slot.tensor->data == before[i++]);
}

TEST_CASE("same seed and data give a bit-identical loss history") {
    auto cfg = tiny_config(13);
    cfg.epochs = 3;
    auto segs = synth_segments(2, 20, 500);

    UNetBiLstm m1(cfg), m2(cfg);
    auto h1 = train(m1, segs);
    auto h2 = train(m2, segs);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
        CHECK(h1.epochs[e].train_loss == h2.epochs[e].train_loss);
        CHECK(h1.epochs[e].val_loss == h2.epochs[e].val_loss);
    }
}

TEST_CASE("checkpoint round trip reproduces inference exactly") {
    auto cfg = tiny_config(19);
    cfg.epochs = 3;
    cfg.validation_fraction = 0.0;
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 20, 800);
    train(model, segs); // trains the weights and the running statistics
    auto before = model.forward(segs);

    const auto path = std::filesystem::temp_directory_path() / "qrsdet_model_rt.qck";
    model.parameters().save(path);
    UNetBiLstm twin(cfg);
    twin.parameters().load(path);
    auto after = twin.forward(segs);
    for (std::size_t s = 0; s < before.size(); ++s)
        CHECK(before[s].probabilities == after[s].probabilities);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    auto cfg = tiny_config(15);
    cfg.epochs = 1;
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 10, 600);
    // poison a weight so the forward pass explodes
    model.parameters().slots()[0].tensor->data[0] = std::nan("");
    CHECK_THROWS_AS(train(model, segs), TrainingError);
}

TEST_CASE("training a small model overfits a couple of segments") {
    // desk-scale smoke test of the full loop (the full-size overfit run is
    // acceptance criterion 5)
    auto cfg = tiny_config(17);
    cfg.epochs = 500;
    cfg.patience = 500;
    cfg.lr = 1e-2;
    cfg.batch_size = 2;
    cfg.dropout_rate = 0.0;
    cfg.validation_fraction = 0.0;
    UNetBiLstm model(cfg);
    auto segs = synth_segments(1, 20, 700, false, 0.01);
    REQUIRE(segs.size() == 2);
    int reached = 0;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochStats& st) {
        if (st.epoch % 10 != 9)
            return false;
        auto outs = model.forward(segs);
        int tp = 0, total = 0;
        for (std::size_t s = 0; s < segs.size(); ++s) {
            auto peaks = pick(outs[s].probabilities, 360.0);
            auto counts = match(peaks.indices, segs[s].r_peaks, 360.0);
            tp += static_cast<int>(counts.tp);
            total += static_cast<int>(counts.tp + counts.fn);
        }
        if (tp >= (3 * total) / 4) {
            reached = 1;
            return true;
        }
        return false;
    };
    auto history = train(model, segs, hooks);
    CHECK(history.epochs.front().train_loss > history.epochs.back().train_loss);
    // the trained model locates most of the seeded peaks well before the cap
    CHECK(reached == 1);
}
