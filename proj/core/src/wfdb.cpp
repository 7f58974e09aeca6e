#include "qrsdet/wfdb.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "qrsdet/errors.hpp"

namespace qrsdet {

std::vector<double> EcgRecord::channel_mv(std::size_t channel) const {
    if (channel >= samples.size())
        throw ConfigError("channel index " + std::to_string(channel) + " out of range");
    const auto& info = channels[channel];
    std::vector<double> mv(samples[channel].size());
    const double inv_gain = 1.0 / info.gain_adu_per_mv;
    for (std::size_t i = 0; i < mv.size(); ++i)
        mv[i] = (samples[channel][i] - info.adc_zero) * inv_gain;
    return mv;
}

void EcgRecord::validate() const {
    if (sampling_rate_hz <= 0.0)
        throw ConfigError("sampling_rate_hz must be positive");
    if (channels.size() != samples.size())
        throw ConfigError("channel descriptor count does not match sample vectors");
    for (const auto& c : channels)
        if (c.gain_adu_per_mv == 0.0)
            throw ConfigError("channel gain must be nonzero");
    for (const auto& s : samples)
        if (s.size() != samples[0].size())
            throw ConfigError("all channels must have the same length");
}

namespace anncode {
bool is_beat(uint8_t code) {
    switch (code) {
    case NORMAL:
    case LBBB:
    case RBBB:
    case ABERR:
    case PVC:
    case FUSION:
    case NPC:
    case APC:
    case SVPB:
    case VESC:
    case NESC:
    case PACE:
    case UNKNOWN:
    case BBB:
    case FLWAV:
    case AESC:
    case SVESC:
    case NAPC:
    case PFUS:
    case RONT:
        return true;
    default:
        return false;
    }
}
} // namespace anncode

std::vector<int64_t> AnnotationSet::r_peak_indices() const {
    std::vector<int64_t> idx(beats.size());
    for (std::size_t i = 0; i < beats.size(); ++i)
        idx[i] = beats[i].sample_index;
    return idx;
}

void AnnotationSet::validate(int64_t record_length) const {
    int64_t prev = -1;
    for (const auto& a : beats) {
        if (a.sample_index <= prev)
            throw ConfigError("annotation indices must be strictly increasing");
        if (record_length > 0 && a.sample_index >= record_length)
            throw ConfigError("annotation index " + std::to_string(a.sample_index) +
                              " beyond record length " + std::to_string(record_length));
        prev = a.sample_index;
    }
}

} // namespace qrsdet

namespace qrsdet::wfdb {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok)
        out.push_back(tok);
    return out;
}

[[noreturn]] void header_error(std::size_t line_no, const std::string& msg) {
    throw ParseError("header line " + std::to_string(line_no) + ": " + msg);
}

double parse_number(const std::string& tok, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used == 0)
            header_error(line_no, std::string("invalid ") + what + " '" + tok + "'");
        return v;
    } catch (const ParseError&) {
        throw;
    } catch (...) {
        header_error(line_no, std::string("invalid ") + what + " '" + tok + "'");
    }
}

long parse_long(const std::string& tok, std::size_t line_no, const char* what) {
    try {
        return std::stol(tok);
    } catch (...) {
        header_error(line_no, std::string("invalid ") + what + " '" + tok + "'");
    }
}

} // namespace

HeaderInfo parse_header(const std::string& text) {
    HeaderInfo info;
    std::istringstream stream(text);
    std::string line;
    std::size_t line_no = 0;
    bool have_record_line = false;
    std::size_t signals_parsed = 0;

    while (std::getline(stream, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;

        auto tokens = split_ws(line);
        if (!have_record_line) {
            // NAME NSIG [FS[/CF[(BC)]] [NSAMPLES [BASETIME [BASEDATE]]]]
            if (tokens.size() < 2)
                header_error(line_no, "record line needs at least a name and a signal count");
            info.record_name = tokens[0].substr(0, tokens[0].find('/'));
            const long nsig = parse_long(tokens[1], line_no, "signal count");
            if (nsig <= 0)
                header_error(line_no, "record declares no signals");
            info.n_channels = static_cast<std::size_t>(nsig);
            if (tokens.size() > 2) {
                // the sampling rate field may carry a /counter-frequency suffix
                info.sampling_rate_hz =
                    parse_number(tokens[2].substr(0, tokens[2].find('/')), line_no, "sampling rate");
                if (info.sampling_rate_hz <= 0)
                    header_error(line_no, "sampling rate must be positive");
            }
            if (tokens.size() > 3)
                info.n_samples = parse_long(tokens[3], line_no, "sample count");
            have_record_line = true;
            continue;
        }
        if (signals_parsed == info.n_channels)
            break; // info section / trailing comments

        // FILE FORMAT [GAIN[(BASELINE)][/UNITS] [ADCRES [ADCZERO [INITVAL ...]]]]
        if (tokens.size() < 2)
            header_error(line_no, "signal line needs a file name and a format");
        ChannelInfo ch;
        info.signal_files.push_back(tokens[0]);

        std::string fmt = tokens[1];
        // strip xN samples-per-frame / :skew / +offset suffixes
        fmt = fmt.substr(0, fmt.find_first_of("x:+"));
        const long format = parse_long(fmt, line_no, "format");
        if (format != 212)
            header_error(line_no, "unsupported format " + std::to_string(format));
        info.format = static_cast<int>(format);

        bool have_baseline = false;
        long baseline = 0;
        if (tokens.size() > 2) {
            std::string gain_tok = tokens[2];
            const auto slash = gain_tok.find('/');
            if (slash != std::string::npos)
                gain_tok = gain_tok.substr(0, slash);
            const auto paren = gain_tok.find('(');
            if (paren != std::string::npos) {
                const auto close = gain_tok.find(')', paren);
                if (close == std::string::npos)
                    header_error(line_no, "unbalanced baseline parenthesis");
                baseline = parse_long(gain_tok.substr(paren + 1, close - paren - 1), line_no,
                                      "baseline");
                have_baseline = true;
                gain_tok = gain_tok.substr(0, paren);
            }
            ch.gain_adu_per_mv = parse_number(gain_tok, line_no, "gain");
            if (ch.gain_adu_per_mv == 0.0)
                ch.gain_adu_per_mv = 200.0; // WFDB convention: 0 means the default gain
        }
        if (tokens.size() > 3)
            ch.adc_resolution_bits = static_cast<int>(parse_long(tokens[3], line_no, "ADC resolution"));
        if (tokens.size() > 4)
            ch.adc_zero = static_cast<int>(parse_long(tokens[4], line_no, "ADC zero"));
        if (have_baseline)
            ch.adc_zero = static_cast<int>(baseline); // explicit baseline wins
        if (tokens.size() > 5)
            ch.initial_value = static_cast<int>(parse_long(tokens[5], line_no, "initial value"));
        if (tokens.size() > 8) {
            std::string desc = tokens[8];
            for (std::size_t t = 9; t < tokens.size(); ++t)
                desc += " " + tokens[t];
            ch.name = desc;
        }
        info.channels.push_back(std::move(ch));
        ++signals_parsed;
    }

    if (!have_record_line)
        throw ParseError("header contains no record line");
    if (signals_parsed != info.n_channels)
        throw ParseError("header declares " + std::to_string(info.n_channels) +
                         " signals but defines " + std::to_string(signals_parsed));
    return info;
}

namespace {
inline int32_t sign_extend_12(uint32_t v) {
    return (v & 0x800u) ? static_cast<int32_t>(v) - 0x1000 : static_cast<int32_t>(v);
}
} // namespace

std::vector<std::vector<int32_t>> parse_format212(std::span<const uint8_t> bytes,
                                                  std::size_t n_channels) {
    if (n_channels == 0)
        throw ConfigError("n_channels must be positive");
    if (bytes.size() % 3 != 0)
        throw ParseError("format 212: trailing partial group at byte offset " +
                         std::to_string(bytes.size() - bytes.size() % 3));

    const std::size_t n_groups = bytes.size() / 3;
    std::vector<std::vector<int32_t>> channels(n_channels);
    for (auto& c : channels)
        c.reserve((2 * n_groups + n_channels - 1) / n_channels);

    std::size_t ch = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        const uint32_t b0 = bytes[3 * g];
        const uint32_t b1 = bytes[3 * g + 1];
        const uint32_t b2 = bytes[3 * g + 2];
        const int32_t s1 = sign_extend_12(b0 | ((b1 & 0x0Fu) << 8));
        const int32_t s2 = sign_extend_12(b2 | ((b1 & 0xF0u) << 4));
        channels[ch].push_back(s1);
        ch = (ch + 1) % n_channels;
        channels[ch].push_back(s2);
        ch = (ch + 1) % n_channels;
    }
    return channels;
}

std::vector<uint8_t> encode_format212(const std::vector<std::vector<int32_t>>& channels) {
    if (channels.empty())
        throw ConfigError("encode_format212: no channels");
    const std::size_t n = channels[0].size();
    for (const auto& c : channels)
        if (c.size() != n)
            throw ConfigError("encode_format212: channels must have equal length");

    std::vector<int32_t> flat;
    flat.reserve(n * channels.size());
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& c : channels)
            flat.push_back(c[i]);
    if (flat.size() % 2 != 0)
        flat.push_back(0);

    std::vector<uint8_t> bytes;
    bytes.reserve(flat.size() / 2 * 3);
    for (std::size_t i = 0; i < flat.size(); i += 2) {
        for (int j = 0; j < 2; ++j)
            if (flat[i + j] < -2048 || flat[i + j] > 2047)
                throw ConfigError("encode_format212: sample " + std::to_string(flat[i + j]) +
                                  " does not fit in 12 bits");
        const uint32_t s1 = static_cast<uint32_t>(flat[i]) & 0xFFFu;
        const uint32_t s2 = static_cast<uint32_t>(flat[i + 1]) & 0xFFFu;
        bytes.push_back(static_cast<uint8_t>(s1 & 0xFFu));
        bytes.push_back(static_cast<uint8_t>(((s1 >> 8) & 0x0Fu) | ((s2 >> 4) & 0xF0u)));
        bytes.push_back(static_cast<uint8_t>(s2 & 0xFFu));
    }
    return bytes;
}

namespace {
// Pseudo-annotation codes of the MIT annotation format.
constexpr uint8_t kSkip = 59;
constexpr uint8_t kNum = 60;
constexpr uint8_t kSub = 61;
constexpr uint8_t kChn = 62;
constexpr uint8_t kAux = 63;
constexpr uint8_t kMaxRealCode = 49;
} // namespace

AnnotationSet parse_annotations(std::span<const uint8_t> bytes, const std::string& record_id) {
    AnnotationSet set;
    set.record_id = record_id;

    std::size_t pos = 0;
    int64_t time = 0;
    auto read_word = [&]() -> uint16_t {
        if (pos + 2 > bytes.size())
            throw ParseError("annotation stream truncated at byte offset " + std::to_string(pos));
        const uint16_t w = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return w;
    };

    while (pos + 2 <= bytes.size()) {
        const std::size_t word_pos = pos;
        const uint16_t word = read_word();
        if (word == 0)
            break; // terminator
        const uint8_t code = static_cast<uint8_t>(word >> 10);
        const uint16_t data = word & 0x3FFu;

        if (code == kSkip) {
            // long interval: two more words, high half first
            const uint16_t hi = read_word();
            const uint16_t lo = read_word();
            time += (static_cast<int32_t>(static_cast<int16_t>(hi)) << 16) |
                    static_cast<int32_t>(lo);
            continue;
        }
        if (code == kNum || code == kSub || code == kChn)
            continue; // field modifiers for the preceding annotation
        if (code == kAux) {
            pos += data + (data & 1u); // aux string, padded to even length
            if (pos > bytes.size())
                throw ParseError("annotation aux string overruns stream at byte offset " +
                                 std::to_string(word_pos));
            continue;
        }
        if (code > kMaxRealCode)
            throw ParseError("unknown annotation escape code " + std::to_string(code) +
                             " at byte offset " + std::to_string(word_pos));

        time += data;
        if (anncode::is_beat(code))
            set.beats.push_back({time, code});
        else
            set.non_beats.push_back({time, code});
    }
    return set;
}

std::vector<uint8_t> encode_annotations(const AnnotationSet& annotations) {
    std::vector<Annotation> all;
    all.reserve(annotations.beats.size() + annotations.non_beats.size());
    all.insert(all.end(), annotations.beats.begin(), annotations.beats.end());
    all.insert(all.end(), annotations.non_beats.begin(), annotations.non_beats.end());
    std::stable_sort(all.begin(), all.end(),
                     [](const Annotation& a, const Annotation& b) {
                         return a.sample_index < b.sample_index;
                     });

    std::vector<uint8_t> bytes;
    auto put_word = [&](uint16_t w) {
        bytes.push_back(static_cast<uint8_t>(w & 0xFFu));
        bytes.push_back(static_cast<uint8_t>(w >> 8));
    };

    int64_t time = 0;
    for (const auto& a : all) {
        if (a.code == 0 || a.code > kMaxRealCode)
            throw ConfigError("cannot encode annotation code " + std::to_string(a.code));
        int64_t delta = a.sample_index - time;
        if (delta < 0)
            throw ConfigError("annotations must be time-ordered for encoding");
        if (delta > 0x3FF) {
            put_word(static_cast<uint16_t>(kSkip << 10));
            put_word(static_cast<uint16_t>((delta >> 16) & 0xFFFFu));
            put_word(static_cast<uint16_t>(delta & 0xFFFFu));
            delta = 0;
        }
        put_word(static_cast<uint16_t>((a.code << 10) | static_cast<uint16_t>(delta)));
        time = a.sample_index;
    }
    put_word(0);
    return bytes;
}

namespace {
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}
} // namespace

EcgRecord read_record(const std::filesystem::path& dir, const std::string& record_name) {
    const auto hea_path = dir / (record_name + ".hea");
    std::ifstream hea(hea_path);
    if (!hea)
        throw ParseError("cannot open " + hea_path.string());
    std::stringstream buf;
    buf << hea.rdbuf();
    HeaderInfo info = parse_header(buf.str());

    // MITDB records store all channels in one .dat file
    const auto dat = read_file_bytes(dir / info.signal_files[0]);
    auto channels = parse_format212(dat, info.n_channels);

    EcgRecord rec;
    rec.record_id = info.record_name;
    rec.sampling_rate_hz = info.sampling_rate_hz;
    rec.channels = info.channels;
    rec.samples = std::move(channels);
    if (info.n_samples > 0)
        for (auto& c : rec.samples)
            if (c.size() > static_cast<std::size_t>(info.n_samples))
                c.resize(static_cast<std::size_t>(info.n_samples));
    rec.validate();
    return rec;
}

AnnotationSet read_annotations(const std::filesystem::path& dir, const std::string& record_name) {
    const auto bytes = read_file_bytes(dir / (record_name + ".atr"));
    return parse_annotations(bytes, record_name);
}

void write_record(const std::filesystem::path& dir, const EcgRecord& record,
                  const AnnotationSet* annotations) {
    record.validate();
    std::filesystem::create_directories(dir);

    std::ofstream hea(dir / (record.record_id + ".hea"));
    hea << record.record_id << " " << record.n_channels() << " " << record.sampling_rate_hz
        << " " << record.n_samples() << "\n";
    for (const auto& ch : record.channels) {
        hea << record.record_id << ".dat 212 " << ch.gain_adu_per_mv << " "
            << ch.adc_resolution_bits << " " << ch.adc_zero << " 0 0 0 "
            << (ch.name.empty() ? "ch" : ch.name) << "\n";
    }
    hea.close();

    const auto bytes = encode_format212(record.samples);
    std::ofstream dat(dir / (record.record_id + ".dat"), std::ios::binary);
    dat.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    dat.close();

    if (annotations) {
        const auto atr = encode_annotations(*annotations);
        std::ofstream out(dir / (record.record_id + ".atr"), std::ios::binary);
        out.write(reinterpret_cast<const char*>(atr.data()),
                  static_cast<std::streamsize>(atr.size()));
    }
}

CsvRecord read_csv(const std::filesystem::path& path, double sampling_rate_hz, double gain) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path.string());
    if (sampling_rate_hz <= 0)
        throw ConfigError("CSV reader needs a positive sampling rate");
    if (gain == 0)
        throw ConfigError("CSV reader needs a nonzero gain");

    CsvRecord out;
    out.record.record_id = path.stem().string();
    out.record.sampling_rate_hz = sampling_rate_hz;
    ChannelInfo ch;
    ch.name = "csv";
    ch.gain_adu_per_mv = gain;
    ch.adc_zero = 0;
    out.record.channels.push_back(ch);
    out.record.samples.emplace_back();
    out.annotations.record_id = out.record.record_id;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        int64_t idx = 0;
        double mv = 0;
        if (!(is >> idx)) {
            if (line_no == 1)
                continue; // header row
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": expected a sample index");
        }
        if (!(is >> mv))
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": expected a millivolt value");
        int flag = 0;
        is >> flag;
        if (idx != static_cast<int64_t>(out.record.samples[0].size()))
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": sample indices must be consecutive from 0");
        out.record.samples[0].push_back(static_cast<int32_t>(std::lround(mv * gain)));
        if (flag != 0)
            out.annotations.beats.push_back({idx, anncode::NORMAL});
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const EcgRecord& record,
               const AnnotationSet* annotations, std::size_t channel) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot open " + path.string() + " for writing");
    const auto mv = record.channel_mv(channel);
    std::set<int64_t> beat_at;
    if (annotations)
        for (const auto& a : annotations->beats)
            beat_at.insert(a.sample_index);
    out << "sample_index,value_mv,annotation_flag\n";
    out.precision(9);
    for (std::size_t i = 0; i < mv.size(); ++i)
        out << i << "," << mv[i] << "," << (beat_at.count(static_cast<int64_t>(i)) ? 1 : 0)
            << "\n";
}

std::vector<std::string> discover_records(const std::filesystem::path& dir) {
    std::vector<std::string> names;
    if (!std::filesystem::exists(dir))
        return names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".hea")
            names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace qrsdet::wfdb
