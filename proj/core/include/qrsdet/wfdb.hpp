#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qrsdet/types.hpp"

namespace qrsdet::wfdb {

/// Metadata parsed from a WFDB header (.hea) file.
struct HeaderInfo {
    std::string record_name;
    std::size_t n_channels = 0;
    double sampling_rate_hz = 250.0; // WFDB default when the field is absent
    int64_t n_samples = 0;           // 0 when the header does not declare it
    int format = 0;                  // storage format tag, 212 for MITDB
    std::vector<ChannelInfo> channels;
    std::vector<std::string> signal_files; // per channel
};

/// Parse the text of a .hea file.
///
/// Grammar (the subset used by the public MITDB distribution):
///   record line:  NAME NSIG [FS [COUNTER [NSAMPLES [TIME [DATE]]]]]
///   signal line:  FILE FORMAT [GAIN[(BASELINE)][/UNITS] [ADCRES [ADCZERO
///                 [INITVAL [CHECKSUM [BLOCKSIZE [DESCRIPTION]]]]]]]
/// '#' starts a comment. Malformed lines raise ParseError naming the line
/// number; a storage format other than 212 raises "unsupported format".
HeaderInfo parse_header(const std::string& text);

/// Decode format-212 packed samples: each 3-byte group holds two 12-bit
/// two's-complement samples,
///   s1 = b0 | (low nibble of b1) << 8,   s2 = b2 | (high nibble of b1) << 8,
/// sign-extended from bit 11. Decoded samples are distributed round-robin
/// over n_channels. A trailing partial group raises ParseError with the
/// offending byte offset.
std::vector<std::vector<int32_t>> parse_format212(std::span<const uint8_t> bytes,
                                                  std::size_t n_channels = 2);

/// Inverse of parse_format212. All channels must have equal length and every
/// sample must fit in 12 bits ([-2048, 2047]); the final group is
/// zero-padded when the total sample count is odd.
std::vector<uint8_t> encode_format212(const std::vector<std::vector<int32_t>>& channels);

/// Decode a MIT-format annotation stream (.atr).
///
/// The stream is a sequence of little-endian 16-bit words; the high 6 bits
/// are the annotation type code, the low 10 bits the sample increment from
/// the previous annotation. Pseudo-annotation codes handled: 59 (SKIP, a
/// 4-byte long interval follows, high word first), 60/61/62 (NUM/SUB/CHN,
/// field modifiers, ignored here), 63 (AUX, a length-prefixed string padded
/// to even length). A zero word terminates the stream. Beat codes go to
/// AnnotationSet::beats, everything else to non_beats.
AnnotationSet parse_annotations(std::span<const uint8_t> bytes,
                                const std::string& record_id = {});

/// Inverse of parse_annotations (merges beats and non_beats by time).
std::vector<uint8_t> encode_annotations(const AnnotationSet& annotations);

/// Read <record>.hea and <record>.dat from a directory.
EcgRecord read_record(const std::filesystem::path& dir, const std::string& record_name);

/// Read <record>.atr from a directory.
AnnotationSet read_annotations(const std::filesystem::path& dir, const std::string& record_name);

/// Write <record>.hea, <record>.dat and (when annotations are present)
/// <record>.atr.
void write_record(const std::filesystem::path& dir, const EcgRecord& record,
                  const AnnotationSet* annotations = nullptr);

/// CSV fallback so pipelines run without the binary corpus. Column layout:
/// sample_index,value_mv[,annotation_flag]; an optional header row is
/// skipped. Values are quantized at `gain` ADC units per millivolt.
struct CsvRecord {
    EcgRecord record;
    AnnotationSet annotations;
};
CsvRecord read_csv(const std::filesystem::path& path, double sampling_rate_hz,
                   double gain = 1000.0);
void write_csv(const std::filesystem::path& path, const EcgRecord& record,
               const AnnotationSet* annotations = nullptr, std::size_t channel = 0);

/// Record names of the 48-record MITDB corpus that exist in a directory.
std::vector<std::string> discover_records(const std::filesystem::path& dir);

} // namespace qrsdet::wfdb
