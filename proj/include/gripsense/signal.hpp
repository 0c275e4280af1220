#pragma once
// ultrasonic probe pulses: linear chirp, edge taper, periodic pulse train

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gripsense/common.hpp"

namespace gripsense {

struct PulseConfig {
    double f_start = 18000.0;    // Hz, sweep start
    double f_end = 22000.0;      // Hz, sweep end
    double pulse_len = 0.025;    // s
    double gap_len = 0.075;      // s of silence after each pulse
    double taper_len = 0.002;    // s, half-Hamming ramp at each pulse edge
    int sample_rate = 48000;     // Hz
    double amplitude = 0.8;      // linear peak, in (0, 1]

    long pulse_len_samples() const { return std::llround(pulse_len * sample_rate); }
    long period_samples() const { return std::llround((pulse_len + gap_len) * sample_rate); }
    int taper_samples() const { return static_cast<int>(std::llround(taper_len * sample_rate)); }

    void validate() const {
        if (sample_rate <= 0) throw ValidationError("pulse config: sample_rate must be positive");
        if (!(f_start > 0.0) || !(f_start < f_end))
            throw ValidationError("pulse config: need 0 < f_start < f_end");
        if (f_end > sample_rate / 2.0)
            throw ValidationError("pulse config: f_end exceeds nyquist");
        if (!(pulse_len > 0.0)) throw ValidationError("pulse config: pulse_len must be positive");
        if (gap_len < 0.0) throw ValidationError("pulse config: gap_len must be non-negative");
        if (!(amplitude > 0.0) || amplitude > 1.0)
            throw ValidationError("pulse config: amplitude must be in (0, 1]");
        if (taper_len < 0.0) throw ValidationError("pulse config: taper_len must be non-negative");
        if (2 * taper_samples() > pulse_len_samples())
            throw ValidationError("pulse config: taper longer than half the pulse");
    }
};

struct PulseSchedule {
    int sample_rate = 0;
    long pulse_len_samples = 0;
    long period_samples = 0;
    std::vector<long> starts;  // sample index of each pulse onset
};

struct PulseTrain {
    std::vector<float> samples;
    PulseSchedule schedule;
};

// s(n) = amplitude * sin(2*pi*phi(n/fs)), phi(t) = f_start*t + (f_end-f_start)*t^2/(2*T)
inline std::vector<float> linear_chirp(const PulseConfig& cfg) {
    cfg.validate();
    const long n = cfg.pulse_len_samples();
    std::vector<float> out(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / cfg.sample_rate;
        double phase = cfg.f_start * t +
                       (cfg.f_end - cfg.f_start) * t * t / (2.0 * cfg.pulse_len);
        out[static_cast<size_t>(i)] =
            static_cast<float>(cfg.amplitude * std::sin(2.0 * std::numbers::pi * phase));
    }
    return out;
}

// multiply the first and last taper_samples by a half-Hamming ramp:
// w(i) = 0.54 - 0.46*cos(pi*i/(L-1)), rising from 0.08 to 1
inline std::vector<float> apply_edge_taper(std::vector<float> samples, int taper_samples) {
    if (taper_samples < 0) throw ValidationError("edge taper: negative length");
    if (taper_samples == 0) return samples;
    if (2 * static_cast<size_t>(taper_samples) > samples.size())
        throw ValidationError("edge taper: ramps longer than the pulse");
    const int L = taper_samples;
    for (int i = 0; i < L; ++i) {
        double w = (L == 1) ? 0.08
                            : 0.54 - 0.46 * std::cos(std::numbers::pi * i / (L - 1));
        samples[static_cast<size_t>(i)] = static_cast<float>(samples[static_cast<size_t>(i)] * w);
        size_t j = samples.size() - 1 - static_cast<size_t>(i);
        samples[j] = static_cast<float>(samples[j] * w);
    }
    return samples;
}

// pulse timing for a session of the given length: one pulse per period while
// it fits completely; a trailing partial pulse is omitted
inline PulseSchedule make_schedule(const PulseConfig& cfg, double duration_s) {
    cfg.validate();
    if (!(duration_s > 0.0)) throw ValidationError("pulse schedule: duration must be positive");
    const long total = std::llround(duration_s * cfg.sample_rate);
    PulseSchedule s;
    s.sample_rate = cfg.sample_rate;
    s.pulse_len_samples = cfg.pulse_len_samples();
    s.period_samples = cfg.period_samples();
    for (long start = 0; start + s.pulse_len_samples <= total; start += s.period_samples)
        s.starts.push_back(start);
    return s;
}

// tapered chirp repeated every pulse_len + gap_len; a trailing pulse that
// does not fit completely is omitted
inline PulseTrain pulse_train(const PulseConfig& cfg, double duration_s) {
    PulseTrain train;
    train.schedule = make_schedule(cfg, duration_s);
    const long total = std::llround(duration_s * cfg.sample_rate);
    const long plen = train.schedule.pulse_len_samples;
    std::vector<float> pulse = apply_edge_taper(linear_chirp(cfg), cfg.taper_samples());
    train.samples.assign(static_cast<size_t>(total), 0.0f);
    for (long start : train.schedule.starts)
        for (long i = 0; i < plen; ++i)
            train.samples[static_cast<size_t>(start + i)] = pulse[static_cast<size_t>(i)];
    return train;
}

inline void write_schedule(const std::string& path, const PulseSchedule& s) {
    nlohmann::json j;
    j["sample_rate"] = s.sample_rate;
    j["pulse_len_samples"] = s.pulse_len_samples;
    j["period_samples"] = s.period_samples;
    j["starts"] = s.starts;
    write_file_atomic(path, j.dump(2) + "\n");
}

inline PulseSchedule read_schedule(const std::string& path) {
    std::string data = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": invalid schedule json: " + e.what());
    }
    PulseSchedule s;
    try {
        s.sample_rate = j.at("sample_rate").get<int>();
        s.pulse_len_samples = j.at("pulse_len_samples").get<long>();
        s.period_samples = j.at("period_samples").get<long>();
        s.starts = j.at("starts").get<std::vector<long>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": schedule json missing fields: " + e.what());
    }
    if (s.sample_rate <= 0 || s.pulse_len_samples <= 0 || s.period_samples <= 0)
        throw FormatError(path + ": schedule json has non-positive sizes");
    return s;
}

}  // namespace gripsense
