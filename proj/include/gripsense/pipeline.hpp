#pragma once
// end-to-end plumbing: one sectioned key/value config file for every stage,
// line-delimited json for truth/instance/event records, per-pulse feature
// files on disk, and the glue that turns a stereo recording into fused
// per-pulse scores ready for the status monitor.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gripsense/audio.hpp"
#include "gripsense/common.hpp"
#include "gripsense/features.hpp"
#include "gripsense/monitor.hpp"
#include "gripsense/nn.hpp"
#include "gripsense/preprocess.hpp"
#include "gripsense/signal.hpp"
#include "gripsense/simulate.hpp"
#include "gripsense/train.hpp"

namespace gripsense {

// ---------------- pipeline config ----------------
struct PipelineConfig {
    PulseConfig pulse;
    StftConfig stft;
    MonitorConfig monitor;
    TrainConfig train;
    BandpassSpec bandpass;
    uint64_t seed = 1;

    void validate() const {
        pulse.validate();
        stft.validate();
        monitor.validate();
        train.validate();
        bandpass.validate(pulse.sample_rate);
        // status samples arrive once per pulse, so the monitor clock must
        // tick at the pulse period
        double period_s = double(pulse.period_samples()) / pulse.sample_rate;
        if (std::abs(period_s - monitor.sample_period) > 1e-6)
            throw ValidationError("config: pulse period (" + std::to_string(period_s) +
                                  " s) and monitor sample_period disagree");
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
    const char* b = value.c_str();
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(b, &end);
    if (end == b || *end != '\0' || errno == ERANGE)
        throw FormatError("config: bad number for " + key + ": '" + value + "'");
    return v;
}

inline long long parse_ll(const std::string& key, const std::string& value) {
    const char* b = value.c_str();
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(b, &end, 10);
    if (end == b || *end != '\0' || errno == ERANGE)
        throw FormatError("config: bad integer for " + key + ": '" + value + "'");
    return v;
}

inline uint64_t parse_u64(const std::string& key, const std::string& value) {
    const char* b = value.c_str();
    char* end = nullptr;
    errno = 0;
    unsigned long long v = std::strtoull(b, &end, 10);
    if (end == b || *end != '\0' || errno == ERANGE || value.find('-') != std::string::npos)
        throw FormatError("config: bad unsigned integer for " + key + ": '" + value + "'");
    return static_cast<uint64_t>(v);
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        out.push_back(static_cast<int>(parse_ll(key, item)));
    }
    if (out.empty()) throw FormatError("config: empty list for " + key);
    return out;
}

}  // namespace detail

inline std::string format_config(const PipelineConfig& c) {
    using detail::fmt_double;
    std::string s;
    s += "[general]\n";
    s += "seed = " + std::to_string(c.seed) + "\n\n";
    s += "[pulse]\n";
    s += "f_start = " + fmt_double(c.pulse.f_start) + "\n";
    s += "f_end = " + fmt_double(c.pulse.f_end) + "\n";
    s += "pulse_len = " + fmt_double(c.pulse.pulse_len) + "\n";
    s += "gap_len = " + fmt_double(c.pulse.gap_len) + "\n";
    s += "taper_len = " + fmt_double(c.pulse.taper_len) + "\n";
    s += "sample_rate = " + std::to_string(c.pulse.sample_rate) + "\n";
    s += "amplitude = " + fmt_double(c.pulse.amplitude) + "\n\n";
    s += "[bandpass]\n";
    s += "f_lo = " + fmt_double(c.bandpass.f_lo) + "\n";
    s += "f_hi = " + fmt_double(c.bandpass.f_hi) + "\n";
    s += std::string("design = ") +
         (c.bandpass.design == BandpassDesign::fir_window ? "fir_window" : "biquad_cascade") +
         "\n";
    s += "taps = " + std::to_string(c.bandpass.taps) + "\n";
    s += "order = " + std::to_string(c.bandpass.order) + "\n";
    s += "min_stop_atten_db = " + fmt_double(c.bandpass.min_stop_atten_db) + "\n\n";
    s += "[stft]\n";
    s += "window_len = " + std::to_string(c.stft.window_len) + "\n";
    s += "hop = " + std::to_string(c.stft.hop) + "\n";
    s += "fft_len = " + std::to_string(c.stft.fft_len) + "\n";
    s += "crop_lo_hz = " + fmt_double(c.stft.crop_lo_hz) + "\n";
    s += "crop_hi_hz = " + fmt_double(c.stft.crop_hi_hz) + "\n";
    s += "out_size = " + std::to_string(c.stft.out_size) + "\n";
    s += "log_floor_db = " + fmt_double(c.stft.log_floor_db) + "\n\n";
    s += "[monitor]\n";
    s += "th1 = " + std::to_string(c.monitor.th1) + "\n";
    s += "th2 = " + std::to_string(c.monitor.th2) + "\n";
    s += "sample_period = " + fmt_double(c.monitor.sample_period) + "\n\n";
    s += "[train]\n";
    s += "epochs = " + std::to_string(c.train.epochs) + "\n";
    s += "batch_size = " + std::to_string(c.train.batch_size) + "\n";
    s += "learning_rate = " + fmt_double(c.train.learning_rate) + "\n";
    s += "beta1 = " + fmt_double(c.train.beta1) + "\n";
    s += "beta2 = " + fmt_double(c.train.beta2) + "\n";
    s += "epsilon = " + fmt_double(c.train.epsilon) + "\n";
    s += "dropout_rate = " + fmt_double(c.train.dropout_rate) + "\n";
    s += "conv_filters = " + detail::fmt_int_list(c.train.conv_filters) + "\n";
    s += "dense_sizes = " + detail::fmt_int_list(c.train.dense_sizes) + "\n";
    s += "seed = " + std::to_string(c.train.seed) + "\n";
    return s;
}

// parses the sectioned key/value format emitted by format_config.  unknown
// sections or keys are rejected rather than ignored so that typos surface
// immediately; the parsed config is validated before being returned.
inline PipelineConfig parse_config(const std::string& text) {
    using detail::parse_double;
    using detail::parse_int_list;
    using detail::parse_ll;
    using detail::parse_u64;
    PipelineConfig c;
    std::istringstream in(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw FormatError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "general" && section != "pulse" && section != "bandpass" &&
                section != "stft" && section != "monitor" && section != "train")
                throw FormatError("config line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw FormatError("config line " + std::to_string(lineno) +
                              ": key outside any section");
        if (key.empty() || value.empty())
            throw FormatError("config line " + std::to_string(lineno) +
                              ": empty key or value");
        const std::string qual = section + "." + key;
        if (section == "general") {
            if (key == "seed") c.seed = parse_u64(qual, value);
            else throw FormatError("config: unknown key " + qual);
        } else if (section == "pulse") {
            if (key == "f_start") c.pulse.f_start = parse_double(qual, value);
            else if (key == "f_end") c.pulse.f_end = parse_double(qual, value);
            else if (key == "pulse_len") c.pulse.pulse_len = parse_double(qual, value);
            else if (key == "gap_len") c.pulse.gap_len = parse_double(qual, value);
            else if (key == "taper_len") c.pulse.taper_len = parse_double(qual, value);
            else if (key == "sample_rate")
                c.pulse.sample_rate = static_cast<int>(parse_ll(qual, value));
            else if (key == "amplitude") c.pulse.amplitude = parse_double(qual, value);
            else throw FormatError("config: unknown key " + qual);
        } else if (section == "bandpass") {
            if (key == "f_lo") c.bandpass.f_lo = parse_double(qual, value);
            else if (key == "f_hi") c.bandpass.f_hi = parse_double(qual, value);
            else if (key == "design") {
                if (value == "fir_window") c.bandpass.design = BandpassDesign::fir_window;
                else if (value == "biquad_cascade")
                    c.bandpass.design = BandpassDesign::biquad_cascade;
                else
                    throw FormatError("config: bandpass.design must be fir_window or "
                                      "biquad_cascade, got '" + value + "'");
            } else if (key == "taps") c.bandpass.taps = static_cast<int>(parse_ll(qual, value));
            else if (key == "order")
                c.bandpass.order = static_cast<int>(parse_ll(qual, value));
            else if (key == "min_stop_atten_db")
                c.bandpass.min_stop_atten_db = parse_double(qual, value);
            else throw FormatError("config: unknown key " + qual);
        } else if (section == "stft") {
            if (key == "window_len") c.stft.window_len = parse_ll(qual, value);
            else if (key == "hop") c.stft.hop = parse_ll(qual, value);
            else if (key == "fft_len") c.stft.fft_len = parse_ll(qual, value);
            else if (key == "crop_lo_hz") c.stft.crop_lo_hz = parse_double(qual, value);
            else if (key == "crop_hi_hz") c.stft.crop_hi_hz = parse_double(qual, value);
            else if (key == "out_size")
                c.stft.out_size = static_cast<int>(parse_ll(qual, value));
            else if (key == "log_floor_db") c.stft.log_floor_db = parse_double(qual, value);
            else throw FormatError("config: unknown key " + qual);
        } else if (section == "monitor") {
            if (key == "th1") c.monitor.th1 = static_cast<int>(parse_ll(qual, value));
            else if (key == "th2") c.monitor.th2 = static_cast<int>(parse_ll(qual, value));
            else if (key == "sample_period")
                c.monitor.sample_period = parse_double(qual, value);
            else throw FormatError("config: unknown key " + qual);
        } else {  // train
            if (key == "epochs") c.train.epochs = static_cast<int>(parse_ll(qual, value));
            else if (key == "batch_size")
                c.train.batch_size = static_cast<int>(parse_ll(qual, value));
            else if (key == "learning_rate") c.train.learning_rate = parse_double(qual, value);
            else if (key == "beta1") c.train.beta1 = parse_double(qual, value);
            else if (key == "beta2") c.train.beta2 = parse_double(qual, value);
            else if (key == "epsilon") c.train.epsilon = parse_double(qual, value);
            else if (key == "dropout_rate") c.train.dropout_rate = parse_double(qual, value);
            else if (key == "conv_filters") c.train.conv_filters = parse_int_list(qual, value);
            else if (key == "dense_sizes") c.train.dense_sizes = parse_int_list(qual, value);
            else if (key == "seed") c.train.seed = parse_u64(qual, value);
            else throw FormatError("config: unknown key " + qual);
        }
    }
    c.validate();
    return c;
}

inline void write_config(const std::string& path, const PipelineConfig& c) {
    write_file_atomic(path, format_config(c));
}

inline PipelineConfig read_config(const std::string& path) {
    return parse_config(read_file(path));
}

// ---------------- line-delimited json records ----------------
namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::string& path,
                                       size_t lineno) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
}

template <typename Fn>
inline void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::string data = read_file(path);
    std::istringstream in(data);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        nlohmann::json j = parse_jsonl_line(line, path, lineno);
        try {
            fn(j, lineno);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline int status_to_label(const std::string& s, const std::string& path, size_t lineno) {
    if (s == "handheld") return 1;
    if (s == "handsfree") return 0;
    throw FormatError(path + " line " + std::to_string(lineno) +
                      ": status must be handheld or handsfree, got '" + s + "'");
}

}  // namespace detail

inline const char* label_name(int label) { return label == 1 ? "handheld" : "handsfree"; }

// truth stream: {"t": seconds, "status": "handheld"|"handsfree"}, one per line
inline void write_truth(const std::string& path, const TruthTrack& truth) {
    std::string out;
    for (size_t i = 0; i < truth.labels.size(); ++i) {
        nlohmann::json j;
        j["t"] = double(i) * truth.dt_s;
        j["status"] = label_name(truth.labels[i]);
        out += j.dump();
        out += "\n";
    }
    write_file_atomic(path, out);
}

inline TruthTrack read_truth(const std::string& path) {
    std::vector<double> ts;
    std::vector<int> labels;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, size_t lineno) {
        ts.push_back(j.at("t").get<double>());
        labels.push_back(
            detail::status_to_label(j.at("status").get<std::string>(), path, lineno));
    });
    if (ts.empty()) throw ValidationError(path + ": empty truth stream");
    TruthTrack t;
    t.labels = std::move(labels);
    if (ts.size() >= 2) {
        double dt = ts[1] - ts[0];
        if (!(dt > 0)) throw ValidationError(path + ": truth times must increase");
        for (size_t i = 1; i < ts.size(); ++i)
            if (std::abs(ts[i] - ts[i - 1] - dt) > 1e-6)
                throw ValidationError(path + ": truth samples must be evenly spaced");
        t.dt_s = dt;
    }
    return t;
}

// instances: {"kind", "start", "end", "duration"} plus "open": true while the
// final instance may still be growing
inline void write_instances(const std::string& path,
                            const std::vector<PhoneUseInstance>& instances) {
    std::string out;
    for (const auto& ins : instances) {
        nlohmann::json j;
        j["kind"] = label_name(ins.kind);
        j["start"] = ins.start;
        j["end"] = ins.end;
        j["duration"] = ins.duration;
        if (ins.open) j["open"] = true;
        out += j.dump();
        out += "\n";
    }
    write_file_atomic(path, out);
}

inline std::vector<PhoneUseInstance> read_instances(const std::string& path) {
    std::vector<PhoneUseInstance> out;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, size_t lineno) {
        PhoneUseInstance ins;
        ins.kind = detail::status_to_label(j.at("kind").get<std::string>(), path, lineno);
        ins.start = j.at("start").get<double>();
        ins.end = j.at("end").get<double>();
        ins.duration = j.at("duration").get<double>();
        ins.open = j.contains("open") && j.at("open").get<bool>();
        out.push_back(ins);
    });
    return out;
}

// events: {"event": "handheld_start"|"handheld_end", "sample": n, "t": seconds}
inline void write_events(const std::string& path, const std::vector<MonitorEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        nlohmann::json j;
        j["event"] = e.kind == MonitorEvent::Kind::handheld_start ? "handheld_start"
                                                                  : "handheld_end";
        j["sample"] = e.sample_index;
        j["t"] = e.t;
        out += j.dump();
        out += "\n";
    }
    write_file_atomic(path, out);
}

inline std::vector<MonitorEvent> read_events(const std::string& path) {
    std::vector<MonitorEvent> out;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, size_t lineno) {
        MonitorEvent e;
        std::string kind = j.at("event").get<std::string>();
        if (kind == "handheld_start") e.kind = MonitorEvent::Kind::handheld_start;
        else if (kind == "handheld_end") e.kind = MonitorEvent::Kind::handheld_end;
        else
            throw FormatError(path + " line " + std::to_string(lineno) +
                              ": unknown event '" + kind + "'");
        e.sample_index = j.at("sample").get<long>();
        e.t = j.at("t").get<double>();
        out.push_back(e);
    });
    return out;
}

// ---------------- per-pulse score table ----------------
struct ScoreRow {
    long index = 0;
    double score = 0.0;
    int truth = 0;
};

inline void write_scores_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    std::string out = "index,score,truth\n";
    for (const auto& r : rows) {
        out += std::to_string(r.index);
        out += ",";
        out += detail::fmt_double(r.score);
        out += ",";
        out += std::to_string(r.truth);
        out += "\n";
    }
    write_file_atomic(path, out);
}

inline std::vector<ScoreRow> read_scores_csv(const std::string& path) {
    std::string data = read_file(path);
    std::istringstream in(data);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "index,score,truth")
        throw FormatError(path + ": expected header 'index,score,truth'");
    std::vector<ScoreRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::istringstream ls(line);
        std::string a, b, c;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c))
            throw FormatError(path + " line " + std::to_string(lineno) +
                              ": expected index,score,truth");
        ScoreRow r;
        const std::string where = path + " line " + std::to_string(lineno);
        r.index = static_cast<long>(detail::parse_ll(where, detail::trim(a)));
        r.score = detail::parse_double(where, detail::trim(b));
        r.truth = static_cast<int>(detail::parse_ll(where, detail::trim(c)));
        if (r.truth != 0 && r.truth != 1)
            throw FormatError(where + ": truth must be 0 or 1");
        rows.push_back(r);
    }
    return rows;
}

// ---------------- per-pulse feature files ----------------
struct PulseImages {
    size_t pulse_index = 0;
    std::array<SpectrogramImage, 2> mics;
};

inline SpectrogramImage image_from_feature_matrix(const FeatureMatrix& fm) {
    if (fm.channels != 3 || fm.rows != fm.cols)
        throw ValidationError("feature matrix: expected a square 3-channel image, got " +
                              std::to_string(fm.rows) + "x" + std::to_string(fm.cols) + "x" +
                              std::to_string(fm.channels));
    SpectrogramImage img;
    img.size = static_cast<int>(fm.rows);
    img.pixels = fm.data;
    return img;
}

inline std::string feature_file_name(size_t pulse_index, int mic) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "pulse_%06zu_mic%d.gsim", pulse_index, mic);
    return buf;
}

inline void write_feature_dir(const std::string& dir, const std::vector<PulseImages>& pulses) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
    for (const auto& p : pulses)
        for (int mic = 0; mic < 2; ++mic)
            write_feature_matrix(dir + "/" + feature_file_name(p.pulse_index, mic),
                                 feature_matrix_from_image(p.mics[static_cast<size_t>(mic)]));
}

inline std::vector<PulseImages> read_feature_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::directory_iterator it(dir, ec);
    if (ec) throw IoError("cannot read directory " + dir + ": " + ec.message());
    std::map<size_t, std::array<bool, 2>> seen;
    std::map<size_t, PulseImages> by_index;
    for (const auto& entry : it) {
        std::string name = entry.path().filename().string();
        size_t idx = 0;
        int mic = 0;
        // expected shape: pulse_NNNNNN_micM.gsim
        if (std::sscanf(name.c_str(), "pulse_%zu_mic%d.gsim", &idx, &mic) != 2) continue;
        if (mic != 0 && mic != 1)
            throw ValidationError(dir + "/" + name + ": mic must be 0 or 1");
        SpectrogramImage img =
            image_from_feature_matrix(read_feature_matrix(entry.path().string()));
        auto& pi = by_index[idx];
        pi.pulse_index = idx;
        pi.mics[static_cast<size_t>(mic)] = std::move(img);
        seen[idx][static_cast<size_t>(mic)] = true;
    }
    if (by_index.empty()) throw ValidationError(dir + ": no feature files found");
    std::vector<PulseImages> out;
    for (auto& [idx, pi] : by_index) {
        if (!seen[idx][0] || !seen[idx][1])
            throw ValidationError(dir + ": pulse " + std::to_string(idx) +
                                  " is missing one microphone's features");
        out.push_back(std::move(pi));
    }
    return out;
}

// ---------------- recording -> aligned per-pulse images ----------------
struct FeaturizeResult {
    std::vector<PulseImages> pulses;
    long initial_delay = 0;
    // (pulse index, corrected delay) for every drift correction applied
    std::vector<std::pair<size_t, long>> resyncs;
};

// alignment bookkeeping returned by the streaming featurizer, which hands
// each pulse's images to a sink instead of retaining them
struct AlignmentSummary {
    size_t aligned = 0;
    long initial_delay = 0;
    std::vector<std::pair<size_t, long>> resyncs;
};

namespace detail {
constexpr size_t kResyncInterval = 50;  // pulses between drift checks
constexpr long kResyncMargin = 8;       // samples searched either side
constexpr long kResyncTolerance = 2;    // drift below this is left alone
}  // namespace detail

// bandpass both channels, locate the first pulse with the matched filter,
// then walk the schedule extracting one segment per pulse per mic.  every
// kResyncInterval pulses the template is re-correlated in a small window
// around the expected position and the running delay is corrected when the
// drift exceeds kResyncTolerance samples.  pulses whose window falls outside
// the recording are dropped.  each aligned pulse's images are passed to
// sink(PulseImages&&) and not retained, so arbitrarily long recordings can
// be processed in constant memory.
template <typename Sink>
inline AlignmentSummary featurize_session_stream(const AudioBuffer& recording,
                                                 const PulseSchedule& schedule,
                                                 const PipelineConfig& cfg, Sink&& sink) {
    cfg.validate();
    recording.validate();
    if (recording.channels.size() != 2)
        throw ValidationError("featurize: expected a stereo (dual-mic) recording, got " +
                              std::to_string(recording.channels.size()) + " channel(s)");
    if (recording.sample_rate != schedule.sample_rate)
        throw ValidationError("featurize: recording and schedule sample rates disagree");
    if (schedule.starts.empty()) throw ValidationError("featurize: empty pulse schedule");

    AudioBuffer filtered = bandpass(recording, cfg.bandpass);
    const std::vector<float> tmpl =
        apply_edge_taper(linear_chirp(cfg.pulse), cfg.pulse.taper_samples());
    const long plen = schedule.pulse_len_samples;
    const long total = static_cast<long>(filtered.frames());
    if (static_cast<long>(tmpl.size()) != plen)
        throw ValidationError("featurize: schedule pulse length does not match the pulse "
                              "configuration");
    const std::vector<float>& ch0 = filtered.channels[0];

    // initial lock: search from the start of the recording up to one sample
    // short of a full period past the first scheduled pulse, so at most one
    // pulse onset falls inside the candidate range (the train is periodic and
    // a window spanning a whole period would admit the next pulse too)
    long wend = std::min<long>(total, schedule.starts[0] + schedule.period_samples + plen - 1);
    if (wend < static_cast<long>(tmpl.size()))
        throw ValidationError("featurize: recording is shorter than one pulse");
    std::vector<float> head(ch0.begin(), ch0.begin() + wend);
    SyncResult lock = find_delay(head, tmpl, wend - plen);
    long delay = lock.delay - schedule.starts[0];

    AlignmentSummary res;
    res.initial_delay = delay;

    for (size_t pi = 0; pi < schedule.starts.size(); ++pi) {
        if (pi > 0 && pi % detail::kResyncInterval == 0) {
            const long margin = detail::kResyncMargin;
            long base = schedule.starts[pi] + delay;
            long ws = std::max<long>(0, base - margin);
            long we = std::min<long>(total, base + plen + margin);
            if (we - ws >= plen) {
                std::vector<float> win(ch0.begin() + ws, ch0.begin() + we);
                SyncResult r = find_delay(win, tmpl, (we - ws) - plen);
                long cand = ws + r.delay - schedule.starts[pi];
                if (std::labs(cand - delay) > detail::kResyncTolerance) {
                    delay = cand;
                    res.resyncs.emplace_back(pi, delay);
                }
            }
        }
        long base = schedule.starts[pi] + delay;
        if (base < 0 || base + plen > total) continue;  // window leaves the recording
        PulseImages imgs;
        imgs.pulse_index = pi;
        for (int mic = 0; mic < 2; ++mic) {
            const std::vector<float>& ch = filtered.channels[static_cast<size_t>(mic)];
            std::vector<float> seg(ch.begin() + base, ch.begin() + base + plen);
            NormalizedSegment ns = normalize(std::move(seg));
            Stft s = dtstft(ns.samples, cfg.stft);
            CroppedSpectrogram cs = crop_band(s, cfg.stft, cfg.pulse.sample_rate);
            imgs.mics[static_cast<size_t>(mic)] = to_image(cs, cfg.stft);
        }
        ++res.aligned;
        sink(std::move(imgs));
    }
    if (res.aligned == 0)
        throw ValidationError("featurize: no pulse fit inside the recording");
    return res;
}

inline FeaturizeResult featurize_session(const AudioBuffer& recording,
                                         const PulseSchedule& schedule,
                                         const PipelineConfig& cfg) {
    FeaturizeResult res;
    AlignmentSummary info = featurize_session_stream(
        recording, schedule, cfg,
        [&](PulseImages&& p) { res.pulses.push_back(std::move(p)); });
    res.initial_delay = info.initial_delay;
    res.resyncs = std::move(info.resyncs);
    return res;
}

// ---------------- scoring and status streams ----------------
struct PulseScore {
    size_t pulse_index = 0;
    std::array<double, 2> mic = {0.0, 0.0};  // per-mic handheld probability
    double fused = 0.0;
    bool handheld = false;
};

inline PulseScore score_pulse(const PulseImages& p, const Cnn<float>& mic0_model,
                              const Cnn<float>& mic1_model) {
    PulseScore s;
    s.pulse_index = p.pulse_index;
    s.mic[0] = mic0_model.infer(tensor_from_image<float>(p.mics[0]))[1];
    s.mic[1] = mic1_model.infer(tensor_from_image<float>(p.mics[1]))[1];
    FusedDecision d = fuse(s.mic[0], s.mic[1]);
    s.fused = d.score;
    s.handheld = d.handheld;
    return s;
}

inline std::vector<PulseScore> score_pulses(const std::vector<PulseImages>& pulses,
                                            const Cnn<float>& mic0_model,
                                            const Cnn<float>& mic1_model) {
    std::vector<PulseScore> out;
    out.reserve(pulses.size());
    for (const auto& p : pulses) out.push_back(score_pulse(p, mic0_model, mic1_model));
    return out;
}

// one status sample per scored pulse; indices are renumbered consecutively so
// the stream satisfies the monitor's contiguity requirement
inline std::vector<StatusSample> to_status_samples(const std::vector<PulseScore>& scores,
                                                   const MonitorConfig& cfg) {
    cfg.validate();
    std::vector<StatusSample> out;
    out.reserve(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        StatusSample s;
        s.index = static_cast<long>(i);
        s.t = double(i) * cfg.sample_period;
        s.label = scores[i].handheld ? 1 : 0;
        s.score = scores[i].fused;
        out.push_back(s);
    }
    return out;
}

// truth label active at each pulse's scheduled start time
inline std::vector<int> labels_at_pulses(const TruthTrack& truth, const PulseSchedule& schedule,
                                         const std::vector<size_t>& pulse_indices) {
    if (truth.labels.empty()) throw ValidationError("labels_at_pulses: empty truth track");
    if (!(truth.dt_s > 0)) throw ValidationError("labels_at_pulses: dt must be positive");
    std::vector<int> out;
    out.reserve(pulse_indices.size());
    for (size_t pi : pulse_indices) {
        if (pi >= schedule.starts.size())
            throw ValidationError("labels_at_pulses: pulse index beyond schedule");
        double t = double(schedule.starts[pi]) / schedule.sample_rate;
        auto idx = static_cast<size_t>(std::floor(t / truth.dt_s + 1e-9));
        idx = std::min(idx, truth.labels.size() - 1);
        out.push_back(truth.labels[idx]);
    }
    return out;
}

// ground-truth handheld intervals: maximal runs of label 1 in the 10 Hz track
inline std::vector<PhoneUseInstance> truth_instances(const TruthTrack& truth) {
    std::vector<PhoneUseInstance> out;
    const auto& l = truth.labels;
    for (size_t i = 0; i < l.size();) {
        size_t j = i;
        while (j < l.size() && l[j] == l[i]) ++j;
        if (l[i] == 1) {
            PhoneUseInstance ins;
            ins.kind = 1;
            ins.start = double(i) * truth.dt_s;
            ins.end = double(j) * truth.dt_s;
            ins.duration = ins.end - ins.start;
            out.push_back(ins);
        }
        i = j;
    }
    return out;
}

}  // namespace gripsense
