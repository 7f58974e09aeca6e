#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qrsdet/labeling.hpp"

namespace qrsdet {

/// On-disk segment container. Layout of segments.bin (all little-endian):
///   magic "QSG1" | u32 version=1 | f64 fs | u8 label_mode | f64 sigma
///   | f64 window_s | u64 n_segments, then per segment:
///   u32 id_len | id bytes | i64 start_sample | u32 length
///   | length f64 (channel 1) | length f64 (channel 2) | length f64 (target)
///   | u32 n_peaks | n_peaks i64 (local indices).
/// The companion manifest.json lists per-record segment counts plus the
/// global reference R-peak indices so evaluation can run from the archive
/// alone.
struct SegmentArchive {
    double sampling_rate_hz = 360.0;
    LabelConfig label_config;
    double window_s = 10.0;
    std::vector<Segment> segments;
    // global reference annotations per record (order follows first appearance)
    std::map<std::string, std::vector<int64_t>> references;

    std::vector<std::string> record_ids() const;
    std::vector<const Segment*> segments_of(const std::string& record_id) const;
};

void write_segment_archive(const std::filesystem::path& dir, const SegmentArchive& archive);
SegmentArchive read_segment_archive(const std::filesystem::path& dir);

std::string manifest_json(const SegmentArchive& archive);

} // namespace qrsdet
