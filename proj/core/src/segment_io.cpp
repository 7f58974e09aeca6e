#include "qrsdet/segment_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "qrsdet/errors.hpp"

namespace qrsdet {

namespace {

constexpr char kMagic[4] = {'Q', 'S', 'G', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in)
        throw ParseError("segment archive truncated");
    return value;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& in, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in)
        throw ParseError("segment archive truncated");
}

} // namespace

std::vector<std::string> SegmentArchive::record_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : segments)
        if (ids.empty() || ids.back() != s.record_id)
            if (std::find(ids.begin(), ids.end(), s.record_id) == ids.end())
                ids.push_back(s.record_id);
    return ids;
}

std::vector<const Segment*> SegmentArchive::segments_of(const std::string& record_id) const {
    std::vector<const Segment*> out;
    for (const auto& s : segments)
        if (s.record_id == record_id)
            out.push_back(&s);
    return out;
}

void write_segment_archive(const std::filesystem::path& dir, const SegmentArchive& archive) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "segments.bin", std::ios::binary);
    if (!out)
        throw ParseError("cannot open " + (dir / "segments.bin").string() + " for writing");

    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<double>(out, archive.sampling_rate_hz);
    put<uint8_t>(out, archive.label_config.mode == LabelMode::Binary ? 0 : 1);
    put<double>(out, archive.label_config.sigma_samples);
    put<double>(out, archive.window_s);
    put<uint64_t>(out, archive.segments.size());
    for (const auto& seg : archive.segments) {
        put<uint32_t>(out, static_cast<uint32_t>(seg.record_id.size()));
        out.write(seg.record_id.data(), static_cast<std::streamsize>(seg.record_id.size()));
        put<int64_t>(out, seg.start_sample);
        put<uint32_t>(out, static_cast<uint32_t>(seg.length()));
        put_doubles(out, seg.channels[0]);
        put_doubles(out, seg.channels[1]);
        put_doubles(out, seg.target);
        put<uint32_t>(out, static_cast<uint32_t>(seg.r_peaks.size()));
        for (int64_t p : seg.r_peaks)
            put<int64_t>(out, p);
    }
    out.close();

    std::ofstream manifest(dir / "manifest.json");
    manifest << manifest_json(archive) << "\n";
}

SegmentArchive read_segment_archive(const std::filesystem::path& dir) {
    std::ifstream in(dir / "segments.bin", std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + (dir / "segments.bin").string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a segment archive (bad magic)");
    const auto version = get<uint32_t>(in);
    if (version != kVersion)
        throw ParseError("unsupported segment archive version " + std::to_string(version));

    SegmentArchive archive;
    archive.sampling_rate_hz = get<double>(in);
    archive.label_config.mode = get<uint8_t>(in) == 0 ? LabelMode::Binary : LabelMode::Smooth;
    archive.label_config.sigma_samples = get<double>(in);
    archive.window_s = get<double>(in);
    const auto n_segments = get<uint64_t>(in);
    archive.segments.reserve(n_segments);
    for (uint64_t i = 0; i < n_segments; ++i) {
        Segment seg;
        const auto id_len = get<uint32_t>(in);
        if (id_len > 4096)
            throw ParseError("segment archive corrupt: record id length " +
                             std::to_string(id_len));
        seg.record_id.resize(id_len);
        in.read(seg.record_id.data(), id_len);
        seg.start_sample = get<int64_t>(in);
        const auto length = get<uint32_t>(in);
        get_doubles(in, seg.channels[0], length);
        get_doubles(in, seg.channels[1], length);
        get_doubles(in, seg.target, length);
        const auto n_peaks = get<uint32_t>(in);
        seg.r_peaks.resize(n_peaks);
        for (auto& p : seg.r_peaks)
            p = get<int64_t>(in);
        archive.segments.push_back(std::move(seg));
    }

    // manifest carries the global reference annotations
    std::ifstream mf(dir / "manifest.json");
    if (mf) {
        nlohmann::json j = nlohmann::json::parse(mf, nullptr, /*allow_exceptions=*/false);
        if (!j.is_discarded() && j.contains("records"))
            for (const auto& rec : j["records"])
                if (rec.contains("id") && rec.contains("reference_r_peaks"))
                    archive.references[rec["id"].get<std::string>()] =
                        rec["reference_r_peaks"].get<std::vector<int64_t>>();
    }
    return archive;
}

std::string manifest_json(const SegmentArchive& archive) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["sampling_rate_hz"] = archive.sampling_rate_hz;
    j["label_mode"] = archive.label_config.mode == LabelMode::Binary ? "binary" : "smooth";
    j["sigma_samples"] = archive.label_config.sigma_samples;
    j["window_s"] = archive.window_s;
    j["n_segments"] = archive.segments.size();
    j["records"] = nlohmann::json::array();
    for (const auto& id : archive.record_ids()) {
        nlohmann::json rec;
        rec["id"] = id;
        const auto segs = archive.segments_of(id);
        rec["n_segments"] = segs.size();
        nlohmann::json offsets = nlohmann::json::array();
        for (const auto* s : segs)
            offsets.push_back(s->start_sample);
        rec["segment_offsets"] = std::move(offsets);
        if (auto it = archive.references.find(id); it != archive.references.end())
            rec["reference_r_peaks"] = it->second;
        j["records"].push_back(std::move(rec));
    }
    return j.dump(2);
}

} // namespace qrsdet
