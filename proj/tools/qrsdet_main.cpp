// qrsdet command-line tool: prepare -> train -> detect -> evaluate, plus the
// Pan-Tompkins length protocol and the numeric self-checks.

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "qrsdet/denoise.hpp"
#include "qrsdet/errors.hpp"
#include "qrsdet/eval.hpp"
#include "qrsdet/labeling.hpp"
#include "qrsdet/model.hpp"
#include "qrsdet/nn_ops.hpp"
#include "qrsdet/pan_tompkins.hpp"
#include "qrsdet/peak_picker.hpp"
#include "qrsdet/segment_io.hpp"
#include "qrsdet/synth.hpp"
#include "qrsdet/tensor.hpp"
#include "qrsdet/wfdb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qrsdet;

namespace {

struct ErrorSink {
    bool json_errors = false;
    std::vector<std::string> errors;

    void add(const std::string& message) { errors.push_back(message); }

    int finish() {
        if (errors.empty())
            return 0;
        if (json_errors) {
            json j = json::array();
            for (const auto& e : errors)
                j.push_back(e);
            std::cerr << j.dump() << "\n";
        } else {
            for (const auto& e : errors)
                std::cerr << "error: " << e << "\n";
        }
        return 1;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot open " + path.string() + " for writing");
    out << text;
}

/// Timestamps live only here, never in data outputs.
void write_run_log(const fs::path& dir, const std::string& command) {
    const std::time_t now = std::time(nullptr);
    char stamp[64];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    std::ofstream log(dir / "run.log", std::ios::app);
    log << stamp << " " << command << "\n";
}

/// Deterministic record-level parallel map: output order follows input order.
template <typename Fn>
void parallel_records(std::size_t count, unsigned jobs, Fn&& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1))
            fn(i);
    };
    std::vector<std::thread> pool;
    const unsigned n = std::min<unsigned>(jobs, static_cast<unsigned>(count));
    for (unsigned t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
}

struct LoadedRecord {
    EcgRecord record;
    AnnotationSet annotations;
};

std::vector<LoadedRecord> load_corpus(const std::string& data_dir, const std::string& csv,
                                      double csv_fs, const std::string& synth_cfg_path,
                                      int synth_records, ErrorSink& sink, bool strict) {
    std::vector<LoadedRecord> corpus;
    if (!synth_cfg_path.empty()) {
        std::ifstream in(synth_cfg_path);
        if (!in)
            throw ParseError("cannot open " + synth_cfg_path);
        std::stringstream buf;
        buf << in.rdbuf();
        SynthConfig base = synth_config_from_json(buf.str());
        for (int r = 0; r < synth_records; ++r) {
            SynthConfig cfg = base;
            cfg.rng_seed = base.rng_seed + static_cast<uint64_t>(r);
            char id[16];
            std::snprintf(id, sizeof id, "synth%03d", r);
            auto [rec, ann] = synthesize_ecg(cfg, id);
            corpus.push_back({std::move(rec), std::move(ann)});
        }
        return corpus;
    }
    if (!csv.empty()) {
        auto loaded = wfdb::read_csv(csv, csv_fs);
        corpus.push_back({std::move(loaded.record), std::move(loaded.annotations)});
        return corpus;
    }
    if (data_dir.empty())
        throw ConfigError("one of --data-dir, --csv or --synthetic is required");
    const auto names = wfdb::discover_records(data_dir);
    if (names.empty())
        throw ConfigError("no .hea records found in " + data_dir);
    for (const auto& name : names) {
        try {
            LoadedRecord lr;
            lr.record = wfdb::read_record(data_dir, name);
            lr.annotations = wfdb::read_annotations(data_dir, name);
            corpus.push_back(std::move(lr));
        } catch (const std::exception& e) {
            sink.add("record " + name + ": " + e.what());
            if (strict)
                throw;
        }
    }
    return corpus;
}

json model_config_json(const ModelConfig& cfg) {
    return json{{"input_channels", cfg.input_channels},
                {"base_channels", cfg.base_channels},
                {"depth", cfg.depth},
                {"lstm_units", cfg.lstm_units},
                {"use_bilstm", cfg.use_bilstm},
                {"label_mode", cfg.label_mode == LabelMode::Binary ? "binary" : "smooth"},
                {"loss", cfg.loss == nn::LossKind::BinaryCrossEntropy ? "bce" : "mse"},
                {"dropout_rate", cfg.dropout_rate},
                {"lr", cfg.lr},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"patience", cfg.patience},
                {"validation_fraction", cfg.validation_fraction},
                {"seed", cfg.seed}};
}

// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& data_dir, const std::string& csv, double csv_fs,
                const std::string& synth_cfg, int synth_records, const std::string& out,
                const std::string& label_mode, double sigma, double window_s, int channel,
                bool no_denoise, bool strict, unsigned jobs, ErrorSink& sink) {
    auto corpus = load_corpus(data_dir, csv, csv_fs, synth_cfg, synth_records, sink, strict);
    if (corpus.empty())
        throw ConfigError("no readable records");

    LabelConfig label;
    label.mode = label_mode == "binary" ? LabelMode::Binary : LabelMode::Smooth;
    label.sigma_samples = sigma;

    SegmentArchive archive;
    archive.sampling_rate_hz = corpus[0].record.sampling_rate_hz;
    archive.label_config = label;
    archive.window_s = window_s;

    std::vector<std::vector<Segment>> per_record(corpus.size());
    parallel_records(corpus.size(), jobs, [&](std::size_t i) {
        const auto& rec = corpus[i].record;
        const std::size_t ch =
            std::min(static_cast<std::size_t>(channel), rec.n_channels() - 1);
        auto mv = rec.channel_mv(ch);
        auto cleaned = no_denoise
                           ? mv
                           : denoise(remove_baseline(mv, rec.sampling_rate_hz),
                                     DenoiseConfig{});
        per_record[i] = make_segments(cleaned, corpus[i].annotations.r_peak_indices(),
                                      rec.sampling_rate_hz, rec.record_id, label, window_s);
    });
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (auto& s : per_record[i])
            archive.segments.push_back(std::move(s));
        archive.references[corpus[i].record.record_id] =
            corpus[i].annotations.r_peak_indices();
    }

    write_segment_archive(out, archive);
    json cfg{{"command", "prepare"},
             {"label_mode", label_mode},
             {"sigma_samples", sigma},
             {"window_s", window_s},
             {"channel", channel},
             {"denoise", !no_denoise},
             {"n_records", corpus.size()},
             {"n_segments", archive.segments.size()}};
    write_text(fs::path(out) / "config.json", cfg.dump(2) + "\n");
    write_run_log(out, "prepare");
    std::cout << "prepared " << archive.segments.size() << " segments from " << corpus.size()
              << " records into " << out << "\n";
    return 0;
}

ModelConfig model_config_from_flags(const std::string& ablation, const std::string& label_mode,
                                    const std::string& loss, int epochs, int batch, double lr,
                                    double dropout, uint64_t seed, int base_channels,
                                    int lstm_units, int patience, double val_fraction) {
    ModelConfig cfg;
    cfg.base_channels = base_channels;
    cfg.lstm_units = lstm_units;
    if (ablation == "single-channel")
        cfg.input_channels = 1;
    else if (ablation == "no-bilstm")
        cfg.use_bilstm = false;
    else if (ablation != "none")
        throw ConfigError("unknown ablation '" + ablation + "'");
    if (label_mode == "binary")
        cfg.label_mode = LabelMode::Binary;
    cfg.loss = loss == "mse" ? nn::LossKind::MeanSquaredError
                             : nn::LossKind::BinaryCrossEntropy;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.lr = lr;
    cfg.dropout_rate = dropout;
    cfg.seed = seed;
    cfg.patience = patience;
    cfg.validation_fraction = val_fraction;
    cfg.validate();
    return cfg;
}

int cmd_train(const std::string& archive_dir, const std::string& out,
              const std::string& ablation, const std::string& label_mode,
              const std::string& loss, const std::string& split_name, int epochs, int batch,
              double lr, double dropout, uint64_t seed, int base_channels, int lstm_units,
              int patience, double val_fraction) {
    auto archive = read_segment_archive(archive_dir);
    ModelConfig cfg = model_config_from_flags(ablation, label_mode, loss, epochs, batch, lr,
                                              dropout, seed, base_channels, lstm_units,
                                              patience, val_fraction);

    // choose training records: Table-style split when requested and known
    std::vector<Segment> segments;
    const SplitSpec split = aami_split();
    for (auto& seg : archive.segments) {
        if (split_name == "train" && split_side(split, seg.record_id) != SplitSide::Train)
            continue;
        if (split_name == "test" && split_side(split, seg.record_id) != SplitSide::Test)
            continue;
        segments.push_back(seg);
    }
    if (segments.empty())
        throw ConfigError("no segments selected for training");

    // optional relabeling straight from the stored peak indices
    if (label_mode != "archive") {
        LabelConfig relabel = archive.label_config;
        relabel.mode = label_mode == "binary" ? LabelMode::Binary : LabelMode::Smooth;
        for (auto& seg : segments)
            seg.target = make_target(seg.r_peaks, seg.length(), relabel);
    }

    UNetBiLstm model(cfg);
    auto history = train(model, segments);

    fs::create_directories(out);
    model.parameters().save(fs::path(out) / "checkpoint.qck");
    std::ostringstream hist_csv;
    hist_csv << "epoch,train_loss,val_loss\n";
    hist_csv.precision(12);
    for (const auto& e : history.epochs)
        hist_csv << e.epoch << "," << e.train_loss << "," << e.val_loss << "\n";
    write_text(fs::path(out) / "history.csv", hist_csv.str());
    json cfg_json = model_config_json(cfg);
    cfg_json["command"] = "train";
    cfg_json["ablation"] = ablation;
    cfg_json["split"] = split_name;
    cfg_json["best_epoch"] = history.best_epoch;
    cfg_json["best_val_loss"] = history.best_val_loss;
    cfg_json["config_hash"] = cfg.hash();
    write_text(fs::path(out) / "config.json", cfg_json.dump(2) + "\n");
    write_run_log(out, "train");
    std::cout << "trained " << history.epochs.size() << " epochs (best "
              << history.best_epoch << ", val loss " << history.best_val_loss
              << "); checkpoint in " << out << "\n";
    return 0;
}

ModelConfig model_config_from_checkpoint_json(const fs::path& config_path) {
    std::ifstream in(config_path);
    if (!in)
        throw ParseError("cannot open " + config_path.string() +
                         " (needed to rebuild the network)");
    json j = json::parse(in);
    ModelConfig cfg;
    cfg.input_channels = j.value("input_channels", cfg.input_channels);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.depth = j.value("depth", cfg.depth);
    cfg.lstm_units = j.value("lstm_units", cfg.lstm_units);
    cfg.use_bilstm = j.value("use_bilstm", cfg.use_bilstm);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    return cfg;
}

int cmd_detect(const std::string& checkpoint, const std::string& archive_dir,
               const std::string& out, const std::string& detector, double threshold,
               bool emit_probabilities) {
    auto archive = read_segment_archive(archive_dir);
    fs::create_directories(out);

    PickerConfig picker;
    picker.screening_threshold = threshold;

    std::ostringstream peaks_csv;
    peaks_csv << "segment_id,local_index,global_index,probability\n";
    peaks_csv.precision(8);
    std::ostringstream prob_csv;
    if (emit_probabilities)
        prob_csv << "segment_id,local_index,probability\n";

    if (detector == "pt") {
        // Pan-Tompkins on the stored (denoised) segment signal
        PtConfig pt;
        for (std::size_t i = 0; i < archive.segments.size(); ++i) {
            const auto& seg = archive.segments[i];
            PeakList found;
            try {
                found = pt_detect(seg.channels[0], archive.sampling_rate_hz, pt);
            } catch (const ConfigError&) {
                // segment shorter than the learning minimum: no detections
            }
            for (std::size_t k = 0; k < found.indices.size(); ++k)
                peaks_csv << seg.record_id << "#" << seg.start_sample << ","
                          << found.indices[k] << ","
                          << seg.start_sample + found.indices[k] << ","
                          << found.probabilities[k] << "\n";
        }
    } else if (detector == "unet") {
        if (checkpoint.empty())
            throw ConfigError("--checkpoint is required for the unet detector");
        ModelConfig cfg = model_config_from_checkpoint_json(
            fs::path(checkpoint).parent_path() / "config.json");
        // config/checkpoint compatibility check before loading weights
        const uint64_t stored_hash = checkpoint_config_hash(checkpoint);
        if (stored_hash != cfg.hash())
            throw ConfigError("checkpoint/config hash mismatch: checkpoint " +
                              std::to_string(stored_hash) + " vs config " +
                              std::to_string(cfg.hash()));
        UNetBiLstm model(cfg);
        model.parameters().load(checkpoint);

        const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t at = 0; at < archive.segments.size(); at += batch_size) {
            std::vector<const Segment*> batch;
            for (std::size_t i = at;
                 i < std::min(archive.segments.size(), at + batch_size); ++i)
                batch.push_back(&archive.segments[i]);
            auto outs = model.forward(batch);
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const auto& seg = *batch[b];
                auto found =
                    pick(outs[b].probabilities, archive.sampling_rate_hz, picker);
                for (std::size_t k = 0; k < found.indices.size(); ++k)
                    peaks_csv << seg.record_id << "#" << seg.start_sample << ","
                              << found.indices[k] << ","
                              << seg.start_sample + found.indices[k] << ","
                              << found.probabilities[k] << "\n";
                if (emit_probabilities)
                    for (std::size_t l = 0; l < outs[b].probabilities.size(); ++l)
                        prob_csv << seg.record_id << "#" << seg.start_sample << "," << l
                                 << "," << outs[b].probabilities[l] << "\n";
            }
        }
    } else {
        throw ConfigError("unknown detector '" + detector + "'");
    }

    write_text(fs::path(out) / "peaks.csv", peaks_csv.str());
    if (emit_probabilities)
        write_text(fs::path(out) / "probabilities.csv", prob_csv.str());
    json cfg{{"command", "detect"},
             {"detector", detector},
             {"screening_threshold", threshold},
             {"archive", archive_dir}};
    write_text(fs::path(out) / "config.json", cfg.dump(2) + "\n");
    write_run_log(out, "detect");
    std::cout << "peaks written to " << (fs::path(out) / "peaks.csv").string() << "\n";
    return 0;
}

std::map<std::string, std::vector<int64_t>> read_peaks_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path.string());
    std::map<std::string, std::vector<int64_t>> by_record;
    std::string line;
    std::getline(in, line); // header
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        std::string segment_id;
        int64_t local = 0, global = 0;
        if (!(is >> segment_id >> local >> global))
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": expected segment_id,local,global,probability");
        const auto hash_at = segment_id.find('#');
        by_record[segment_id.substr(0, hash_at)].push_back(global);
    }
    for (auto& [id, v] : by_record)
        std::sort(v.begin(), v.end());
    return by_record;
}

int cmd_evaluate(const std::string& peaks_path, const std::string& archive_dir,
                 const std::string& split_name, const std::string& out, double window_ms,
                 bool table, bool strict, ErrorSink& sink) {
    auto archive = read_segment_archive(archive_dir);
    auto detections = read_peaks_csv(peaks_path);
    const SplitSpec split = aami_split();

    std::vector<RecordResult> rows;
    for (const auto& record_id : archive.record_ids()) {
        if (split_name == "train" && split_side(split, record_id) != SplitSide::Train)
            continue;
        if (split_name == "test" && split_side(split, record_id) != SplitSide::Test)
            continue;
        auto ref_it = archive.references.find(record_id);
        if (ref_it == archive.references.end()) {
            sink.add("no reference annotations for record " + record_id + "; skipped");
            if (strict)
                throw ConfigError("missing annotations for record " + record_id);
            continue;
        }
        RecordResult row;
        row.record_id = record_id;
        auto det_it = detections.find(record_id);
        static const std::vector<int64_t> kNone;
        const auto& det = det_it == detections.end() ? kNone : det_it->second;
        row.counts = match(det, ref_it->second, archive.sampling_rate_hz, window_ms);
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw ConfigError("no records to evaluate");
    auto report = make_report(std::move(rows), split_name);

    fs::create_directories(out);
    write_text(fs::path(out) / "report.json", report.to_json() + "\n");
    write_text(fs::path(out) / "report.csv", report.to_csv());
    write_run_log(out, "evaluate");
    if (table)
        std::cout << report.to_csv();
    else {
        std::cout << "TP=" << report.aggregate_counts.tp << " FP=" << report.aggregate_counts.fp
                  << " FN=" << report.aggregate_counts.fn;
        if (report.aggregate.sensitivity)
            std::cout << " Se=" << *report.aggregate.sensitivity;
        if (report.aggregate.positive_predictivity)
            std::cout << " +P=" << *report.aggregate.positive_predictivity;
        if (report.aggregate.accuracy)
            std::cout << " Acc=" << *report.aggregate.accuracy;
        std::cout << "\n";
    }
    return 0;
}

int cmd_gradcheck(int seeds) {
    using namespace qrsdet::nn;
    int failures = 0;
    auto project = [](const Tensor& y, const Tensor& proj) {
        double acc = 0;
        for (std::size_t i = 0; i < y.size(); ++i)
            acc += proj.data[i] * y.data[i];
        return acc;
    };
    auto fill_normal = [](Tensor& t, uint64_t seed) {
        Rng rng(seed);
        for (auto& v : t.data)
            v = rng.normal();
    };
    auto run_case = [&](const char* name, int seed, double worst) {
        const bool ok = worst < 1e-5;
        failures += !ok;
        std::cout << name << " seed " << seed << ": max rel err " << worst
                  << (ok ? " ok" : " FAIL") << "\n";
    };

    for (int seed = 0; seed < seeds; ++seed) {
        const auto u = static_cast<uint64_t>(seed);
        {
            Conv1d conv(2, 3, 3, Rng(u));
            Tensor x({2, 2, 11}), proj({2, 3, 11});
            fill_normal(x, u + 1);
            fill_normal(proj, u + 2);
            auto loss = [&] { return project(conv.forward(x), proj); };
            auto grads = [&] {
                conv.weight.zero_grad();
                conv.bias.zero_grad();
                conv.forward(x);
                conv.backward(proj);
            };
            run_case("conv1d", seed,
                     grad_check(loss, grads, {{"w", &conv.weight}, {"b", &conv.bias}})
                         .max_rel_error);
        }
        {
            BatchNorm1d bn(2);
            Tensor x({3, 2, 7}), proj({3, 2, 7});
            fill_normal(x, u + 11);
            fill_normal(proj, u + 12);
            auto loss = [&] { return project(bn.forward(x, true), proj); };
            auto grads = [&] {
                bn.gamma.zero_grad();
                bn.beta.zero_grad();
                bn.forward(x, true);
                bn.backward(proj);
            };
            run_case("batchnorm", seed,
                     grad_check(loss, grads, {{"gamma", &bn.gamma}, {"beta", &bn.beta}})
                         .max_rel_error);
        }
        {
            BiLstm bi(2, 3, Rng(u + 21));
            Tensor x({1, 2, 5}), proj({1, 3, 5});
            fill_normal(x, u + 22);
            fill_normal(proj, u + 23);
            auto loss = [&] { return project(bi.forward(x), proj); };
            auto grads = [&] {
                for (auto* t :
                     {&bi.fwd.w, &bi.fwd.u, &bi.fwd.b, &bi.bwd.w, &bi.bwd.u, &bi.bwd.b})
                    t->zero_grad();
                bi.forward(x);
                bi.backward(proj);
            };
            run_case("bilstm", seed,
                     grad_check(loss, grads,
                                {{"fw", &bi.fwd.w}, {"fu", &bi.fwd.u}, {"bw", &bi.bwd.w}})
                         .max_rel_error);
        }
    }
    std::cout << (failures == 0 ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return failures == 0 ? 0 : 1;
}

int cmd_fuzz_picker(int n, uint64_t seed) {
    Rng rng(seed);
    int mismatches = 0;
    for (int trial = 0; trial < n; ++trial) {
        const std::size_t len = 200 + rng.below(3400);
        std::vector<double> p(len, 0.0);
        const std::size_t bumps = rng.below(14);
        for (std::size_t b = 0; b < bumps; ++b) {
            const std::size_t center = rng.below(len);
            const double height = rng.uniform(0.02, 1.0);
            const double sg = rng.uniform(2.0, 15.0);
            for (std::size_t i = 0; i < len; ++i) {
                const double d = static_cast<double>(i) - static_cast<double>(center);
                p[i] = std::max(p[i], height * std::exp(-d * d / (2 * sg * sg)));
            }
        }
        auto fast = pick(p, 360.0);
        auto slow = pick_oracle(p, 360.0);
        if (fast.indices != slow.indices) {
            ++mismatches;
            std::cout << "mismatch at trial " << trial << "\n";
        }
    }
    std::cout << n << " sequences, " << mismatches << " mismatches\n";
    return mismatches == 0 ? 0 : 1;
}

int cmd_pt_lengths(const std::string& data_dir, const std::string& synth_cfg, int synth_records,
                   const std::string& out, std::vector<double> lengths, ErrorSink& sink,
                   bool strict) {
    auto corpus = load_corpus(data_dir, "", 0.0, synth_cfg, synth_records, sink, strict);
    std::vector<EcgRecord> records;
    std::vector<AnnotationSet> annotations;
    for (auto& lr : corpus) {
        records.push_back(std::move(lr.record));
        annotations.push_back(std::move(lr.annotations));
    }
    auto results = pt_segment_protocol(records, annotations, lengths);

    json j = json::array();
    std::ostringstream csv;
    csv << "window_s,tp,fp,fn,se,ppv,accuracy\n";
    for (const auto& r : results) {
        json row{{"window_s", r.window_s},
                 {"tp", r.report.aggregate_counts.tp},
                 {"fp", r.report.aggregate_counts.fp},
                 {"fn", r.report.aggregate_counts.fn}};
        if (r.report.aggregate.sensitivity)
            row["se"] = *r.report.aggregate.sensitivity;
        if (r.report.aggregate.positive_predictivity)
            row["ppv"] = *r.report.aggregate.positive_predictivity;
        if (r.report.aggregate.accuracy)
            row["accuracy"] = *r.report.aggregate.accuracy;
        j.push_back(std::move(row));
        csv << r.window_s << "," << r.report.aggregate_counts.tp << ","
            << r.report.aggregate_counts.fp << "," << r.report.aggregate_counts.fn;
        auto put = [&](const std::optional<double>& v) {
            csv << ",";
            if (v)
                csv << *v;
            else
                csv << "undefined";
        };
        put(r.report.aggregate.sensitivity);
        put(r.report.aggregate.positive_predictivity);
        put(r.report.aggregate.accuracy);
        csv << "\n";
    }
    fs::create_directories(out);
    write_text(fs::path(out) / "pt_lengths.json", j.dump(2) + "\n");
    write_text(fs::path(out) / "pt_lengths.csv", csv.str());
    write_run_log(out, "pt-lengths");
    std::cout << csv.str();
    return 0;
}

int cmd_denoise_dump(const std::string& data_dir, const std::string& record_id,
                     const std::string& csv, double csv_fs, int channel,
                     const std::string& out) {
    EcgRecord rec;
    if (!csv.empty()) {
        rec = wfdb::read_csv(csv, csv_fs).record;
    } else {
        if (data_dir.empty() || record_id.empty())
            throw ConfigError("denoise-dump needs --csv or --data-dir plus --record");
        rec = wfdb::read_record(data_dir, record_id);
    }
    const std::size_t ch = std::min(static_cast<std::size_t>(channel), rec.n_channels() - 1);
    auto raw = rec.channel_mv(ch);
    auto without_baseline = remove_baseline(raw, rec.sampling_rate_hz);
    auto cleaned = denoise(without_baseline);

    std::ostringstream os;
    os << "sample_index,raw_mv,baseline_removed_mv,denoised_mv\n";
    os.precision(9);
    for (std::size_t i = 0; i < raw.size(); ++i)
        os << i << "," << raw[i] << "," << without_baseline[i] << "," << cleaned[i] << "\n";
    write_text(out, os.str());
    std::cout << "denoise dump written to " << out << "\n";
    return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out, int records,
              const std::string& format) {
    SynthConfig base;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in)
            throw ParseError("cannot open " + config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        base = synth_config_from_json(buf.str());
    }
    fs::create_directories(out);
    for (int r = 0; r < records; ++r) {
        SynthConfig cfg = base;
        cfg.rng_seed = base.rng_seed + static_cast<uint64_t>(r);
        char id[16];
        std::snprintf(id, sizeof id, "synth%03d", r);
        auto [rec, ann] = synthesize_ecg(cfg, id);
        if (format == "csv")
            wfdb::write_csv(fs::path(out) / (std::string(id) + ".csv"), rec, &ann);
        else
            wfdb::write_record(out, rec, &ann);
    }
    write_text(fs::path(out) / "synth_config.json", synth_config_to_json(base) + "\n");
    std::cout << "wrote " << records << " synthetic records to " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"QRS detection pipeline: WFDB ingestion, denoising, U-Net+BiLSTM "
                 "segmentation, peak picking, Pan-Tompkins baseline and evaluation"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand name

    ErrorSink sink;
    app.add_flag("--json-errors", sink.json_errors,
                 "emit the error list as JSON on stderr");
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--jobs", jobs, "worker threads for record-level parallelism");
    int nn_threads = 0;
    app.add_option("--nn-threads", nn_threads,
                   "threads for tensor ops (0 = hardware concurrency)");

    // prepare -----------------------------------------------------------
    auto* prepare = app.add_subcommand("prepare", "denoise, segment and label a corpus");
    std::string data_dir, csv, synth_cfg, out_dir, label_mode = "smooth";
    double csv_fs = 360.0, sigma = 5.0, window_s = 10.0;
    int synth_records = 1, channel = 0;
    bool no_denoise = false, strict = false;
    prepare->add_option("--data-dir", data_dir, "directory with WFDB records");
    prepare->add_option("--csv", csv, "CSV fallback input (sample_index,value_mv[,flag])");
    prepare->add_option("--csv-fs", csv_fs, "sampling rate of the CSV input");
    prepare->add_option("--synthetic", synth_cfg, "synthetic generator config (JSON)");
    prepare->add_option("--records", synth_records, "number of synthetic records");
    prepare->add_option("--out", out_dir, "output archive directory")->required();
    prepare->add_option("--label-mode", label_mode, "smooth|binary")
        ->check(CLI::IsMember({"smooth", "binary"}));
    prepare->add_option("--sigma", sigma, "Gaussian label width in samples");
    prepare->add_option("--window-s", window_s, "segment length in seconds");
    prepare->add_option("--channel", channel, "signal channel to use (default: first)");
    prepare->add_flag("--no-denoise", no_denoise, "skip baseline removal and wavelet denoising");
    prepare->add_flag("--strict", strict, "fail on the first unreadable record");

    // train ---------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train the segmenter on an archive");
    std::string archive_dir, train_out, ablation = "none", train_label_mode = "archive";
    std::string loss = "bce", train_split = "all";
    int epochs = 50, batch = 16, base_channels = 8, lstm_units = 256, patience = 10;
    double lr = 1e-3, dropout = 0.2, val_fraction = 0.1;
    uint64_t seed = 42;
    train_cmd->add_option("--archive", archive_dir, "prepared archive")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--ablation", ablation, "none|single-channel|no-bilstm")
        ->check(CLI::IsMember({"none", "single-channel", "no-bilstm"}));
    train_cmd->add_option("--label-mode", train_label_mode,
                          "archive|binary|smooth (relabel from stored peaks)")
        ->check(CLI::IsMember({"archive", "binary", "smooth"}));
    train_cmd->add_option("--loss", loss, "bce|mse")->check(CLI::IsMember({"bce", "mse"}));
    train_cmd->add_option("--split", train_split, "train|test|all records of the archive")
        ->check(CLI::IsMember({"train", "test", "all"}));
    train_cmd->add_option("--epochs", epochs, "maximum epochs");
    train_cmd->add_option("--batch", batch, "mini-batch size");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--dropout", dropout, "dropout rate");
    train_cmd->add_option("--seed", seed, "master RNG seed");
    train_cmd->add_option("--base-channels", base_channels, "first-stage feature maps");
    train_cmd->add_option("--lstm-units", lstm_units, "BiLSTM hidden units");
    train_cmd->add_option("--patience", patience, "early-stopping patience");
    train_cmd->add_option("--val-fraction", val_fraction, "validation holdout fraction");

    // detect --------------------------------------------------------------
    auto* detect = app.add_subcommand("detect", "run a detector over an archive");
    std::string checkpoint, detect_archive, detect_out, detector = "unet";
    double threshold = 0.1;
    bool emit_probabilities = false;
    detect->add_option("--checkpoint", checkpoint, "trained checkpoint (.qck)");
    detect->add_option("--archive", detect_archive, "prepared archive")->required();
    detect->add_option("--out", detect_out, "output directory")->required();
    detect->add_option("--detector", detector, "unet|pt")
        ->check(CLI::IsMember({"unet", "pt"}));
    detect->add_option("--threshold", threshold, "screening threshold");
    detect->add_flag("--emit-probabilities", emit_probabilities,
                     "also write raw probability sequences");

    // evaluate --------------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "score detections against references");
    std::string peaks_path, eval_archive, eval_split = "all", eval_out;
    double window_ms = 75.0;
    bool table = false, eval_strict = false;
    evaluate->add_option("--peaks", peaks_path, "peaks.csv from detect")->required();
    evaluate->add_option("--archive", eval_archive, "archive with reference annotations")
        ->required();
    evaluate->add_option("--split", eval_split, "train|test|all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    evaluate->add_option("--out", eval_out, "output directory")->required();
    evaluate->add_option("--window-ms", window_ms, "matching window width");
    evaluate->add_flag("--table", table, "print the per-record table");
    evaluate->add_flag("--strict", eval_strict, "fail when a record lacks annotations");

    // numeric self-checks ---------------------------------------------------
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference spot check");
    int gc_seeds = 20;
    gradcheck->add_option("--seeds", gc_seeds, "number of random cases");

    auto* fuzz = app.add_subcommand("fuzz-picker", "pick vs pick_oracle equivalence fuzz");
    int fuzz_n = 1000;
    uint64_t fuzz_seed = 2024;
    fuzz->add_option("--n", fuzz_n, "number of sequences");
    fuzz->add_option("--seed", fuzz_seed, "RNG seed");

    // pt-lengths --------------------------------------------------------------
    auto* ptl = app.add_subcommand("pt-lengths",
                                   "Pan-Tompkins accuracy across segment lengths");
    std::string ptl_data_dir, ptl_synth, ptl_out;
    int ptl_records = 4;
    std::vector<double> lengths = {5, 10, 20, 30, 300};
    bool ptl_strict = false;
    ptl->add_option("--data-dir", ptl_data_dir, "directory with WFDB records");
    ptl->add_option("--synthetic", ptl_synth, "synthetic generator config (JSON)");
    ptl->add_option("--records", ptl_records, "number of synthetic records");
    ptl->add_option("--out", ptl_out, "output directory")->required();
    ptl->add_option("--lengths", lengths, "window lengths in seconds");
    ptl->add_flag("--strict", ptl_strict, "fail on the first unreadable record");

    // denoise-dump -----------------------------------------------------------
    auto* dump = app.add_subcommand("denoise-dump",
                                    "write raw/baseline-removed/denoised traces as CSV");
    std::string dump_data_dir, dump_record, dump_csv, dump_out;
    double dump_csv_fs = 360.0;
    int dump_channel = 0;
    dump->add_option("--data-dir", dump_data_dir, "directory with WFDB records");
    dump->add_option("--record", dump_record, "record id");
    dump->add_option("--csv", dump_csv, "CSV fallback input");
    dump->add_option("--csv-fs", dump_csv_fs, "sampling rate of the CSV input");
    dump->add_option("--channel", dump_channel, "signal channel");
    dump->add_option("--out", dump_out, "output CSV path")->required();

    // synth -------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "write synthetic WFDB/CSV records");
    std::string synth_config_path, synth_out, synth_format = "wfdb";
    int synth_n = 1;
    synth->add_option("--config", synth_config_path, "generator config (JSON)");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--records", synth_n, "number of records");
    synth->add_option("--format", synth_format, "wfdb|csv")
        ->check(CLI::IsMember({"wfdb", "csv"}));

    CLI11_PARSE(app, argc, argv);
    nn::set_num_threads(nn_threads);

    try {
        int rc = 0;
        if (prepare->parsed())
            rc = cmd_prepare(data_dir, csv, csv_fs, synth_cfg, synth_records, out_dir,
                             label_mode, sigma, window_s, channel, no_denoise, strict, jobs,
                             sink);
        else if (train_cmd->parsed())
            rc = cmd_train(archive_dir, train_out, ablation, train_label_mode, loss,
                           train_split, epochs, batch, lr, dropout, seed, base_channels,
                           lstm_units, patience, val_fraction);
        else if (detect->parsed())
            rc = cmd_detect(checkpoint, detect_archive, detect_out, detector, threshold,
                            emit_probabilities);
        else if (evaluate->parsed())
            rc = cmd_evaluate(peaks_path, eval_archive, eval_split, eval_out, window_ms,
                              table, eval_strict, sink);
        else if (gradcheck->parsed())
            rc = cmd_gradcheck(gc_seeds);
        else if (fuzz->parsed())
            rc = cmd_fuzz_picker(fuzz_n, fuzz_seed);
        else if (ptl->parsed())
            rc = cmd_pt_lengths(ptl_data_dir, ptl_synth, ptl_records, ptl_out, lengths, sink,
                                ptl_strict);
        else if (dump->parsed())
            rc = cmd_denoise_dump(dump_data_dir, dump_record, dump_csv, dump_csv_fs,
                                  dump_channel, dump_out);
        else if (synth->parsed())
            rc = cmd_synth(synth_config_path, synth_out, synth_n, synth_format);
        const int sink_rc = sink.finish();
        return rc != 0 ? rc : sink_rc;
    } catch (const std::exception& e) {
        sink.add(e.what());
        sink.finish();
        return 1;
    }
}
