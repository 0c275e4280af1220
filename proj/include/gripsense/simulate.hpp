#pragma once
// parametric acoustic channel: per-surface band gains with jitter, echoes,
// grab/drop crossfades, and in-vehicle noise. produces stereo sessions with
// a pulse schedule and a ground-truth label track.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gripsense/audio.hpp"
#include "gripsense/common.hpp"
#include "gripsense/features.hpp"
#include "gripsense/preprocess.hpp"
#include "gripsense/signal.hpp"

namespace gripsense {

// ---------------- surface models ----------------
struct BandGain {
    double f_lo_hz = 0.0;
    double f_hi_hz = 0.0;
    double gain_db = 0.0;
};

struct SurfaceModel {
    std::string name;
    std::vector<BandGain> band_gains;  // must partition [18 kHz, 22 kHz]
    double echo_gain_db = -std::numeric_limits<double>::infinity();
    double echo_delay_s = 0.0;
    double jitter_db = 0.0;  // per-realization gain stddev

    bool handheld() const { return name.rfind("hand_", 0) == 0; }

    void validate() const {
        if (name.empty()) throw ValidationError("surface: empty name");
        if (band_gains.empty()) throw ValidationError("surface: no bands");
        if (band_gains.front().f_lo_hz != 18000.0 || band_gains.back().f_hi_hz != 22000.0)
            throw ValidationError("surface " + name + ": bands must cover [18 kHz, 22 kHz]");
        for (size_t i = 0; i < band_gains.size(); ++i) {
            if (!(band_gains[i].f_lo_hz < band_gains[i].f_hi_hz))
                throw ValidationError("surface " + name + ": empty band");
            if (i > 0 && band_gains[i].f_lo_hz != band_gains[i - 1].f_hi_hz)
                throw ValidationError("surface " + name + ": bands must tile without gaps");
        }
        if (jitter_db < 0) throw ValidationError("surface " + name + ": negative jitter");
        if (echo_delay_s < 0) throw ValidationError("surface " + name + ": negative echo delay");
    }
};

// the eleven phone-resting scenarios. handheld surfaces share a family:
// strong suppression of 20-22 kHz plus a mild boost near 19 kHz; handsfree
// surfaces stay within a few dB of flat.
inline std::vector<SurfaceModel> default_surfaces() {
    auto make = [](std::string name, double g0, double g1, double g2, double g3,
                   double jitter, double echo_delay_ms, double echo_db) {
        SurfaceModel s;
        s.name = std::move(name);
        s.band_gains = {{18000.0, 19000.0, g0},
                        {19000.0, 20000.0, g1},
                        {20000.0, 21000.0, g2},
                        {21000.0, 22000.0, g3}};
        s.jitter_db = jitter;
        s.echo_delay_s = echo_delay_ms * 1e-3;
        s.echo_gain_db = echo_db;
        return s;
    };
    return {
        make("hand_still", 0, 2, -18, -20, 0.5, 0.8, -12),
        make("hand_texting", -1, 3, -16, -22, 1.5, 0.6, -14),
        make("hand_scrolling", 0, 2, -17, -21, 1.2, 0.7, -13),
        make("hand_calling", -2, 1, -20, -23, 1.0, 0.5, -11),
        make("coat_pocket", -3, -2, -1, -2, 0.8, 1.5, -18),
        make("pant_pocket", -4, -3, -2, -3, 0.8, 1.2, -17),
        make("cup_holder", 1, 0, 2, 1, 0.4, 2.0, -9),
        make("console", 0, 1, 1, 2, 0.3, 2.5, -10),
        make("mount", 0, 0, 1, 1, 0.3, 3.0, -12),
        make("mount_charging", 0, 0, 1, 2, 0.5, 3.0, -12),
        make("seat", -2, -1, 0, -1, 0.6, 1.8, -15),
    };
}

inline const SurfaceModel& find_surface(const std::vector<SurfaceModel>& surfaces,
                                        const std::string& name) {
    for (const auto& s : surfaces)
        if (s.name == name) return s;
    throw ValidationError("unknown surface: " + name);
}

// the second microphone sits next to the speaker, so its echo path is hotter
inline SurfaceModel mic2_variant(SurfaceModel s) {
    s.echo_gain_db += 3.0;  // -inf stays -inf
    return s;
}

// ---------------- channel response ----------------
// per-band gains drawn as gain + N(0, jitter), applied by multiplying the
// pulse's own-length dft bin by bin; then a delayed scaled copy for the echo.
// deterministic given the seed.
inline std::vector<float> surface_response(const SurfaceModel& surface,
                                           const std::vector<float>& pulse,
                                           uint64_t rng_seed, int sample_rate = 48000) {
    surface.validate();
    if (sample_rate <= 0) throw ValidationError("surface response: bad sample rate");
    if (pulse.empty()) return {};

    Rng rng(rng_seed);
    std::vector<double> gain_lin(surface.band_gains.size());
    bool identity_bands = true;
    for (size_t i = 0; i < surface.band_gains.size(); ++i) {
        double db = surface.band_gains[i].gain_db + rng.normal() * surface.jitter_db;
        gain_lin[i] = std::pow(10.0, db / 20.0);
        if (db != 0.0) identity_bands = false;
    }

    std::vector<float> z;
    if (identity_bands) {
        z = pulse;  // exact passthrough (unit channel)
    } else {
        const size_t n = pulse.size();
        std::vector<std::complex<double>> spec(n);
        for (size_t i = 0; i < n; ++i) spec[i] = double(pulse[i]);
        detail::fft_any(spec);
        const double bin_hz = double(sample_rate) / double(n);
        for (size_t k = 0; k < n; ++k) {
            double f = double(std::min(k, n - k)) * bin_hz;
            double g = 1.0;  // bins outside the probe band pass through
            for (size_t b = 0; b < surface.band_gains.size(); ++b) {
                const BandGain& bg = surface.band_gains[b];
                bool inside = f >= bg.f_lo_hz &&
                              (f < bg.f_hi_hz ||
                               (b + 1 == surface.band_gains.size() && f == bg.f_hi_hz));
                if (inside) {
                    g = gain_lin[b];
                    break;
                }
            }
            spec[k] *= g;
        }
        detail::ifft_any(spec);
        z.resize(n);
        for (size_t i = 0; i < n; ++i) z[i] = static_cast<float>(spec[i].real());
    }

    const double echo_lin = std::pow(10.0, surface.echo_gain_db / 20.0);
    if (echo_lin > 0.0) {
        const long d = std::llround(surface.echo_delay_s * sample_rate);
        if (d >= 0 && static_cast<size_t>(d) < z.size()) {
            std::vector<float> src = z;  // echo of the band-shaped signal
            for (size_t i = static_cast<size_t>(d); i < z.size(); ++i)
                z[i] += static_cast<float>(echo_lin * src[i - static_cast<size_t>(d)]);
        }
    }
    return z;
}

// ---------------- noise ----------------
struct NoiseModel {
    double lowband_level = 0.0;   // engine/road/wind, band-limited below 6 kHz
    double wideband_level = 0.0;  // white
    double music_level = 0.0;     // tonal mixture below 16 kHz

    void validate() const {
        if (lowband_level < 0 || wideband_level < 0 || music_level < 0)
            throw ValidationError("noise model: levels must be >= 0");
    }
};

namespace detail {

inline double rms(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return v.empty() ? 0.0 : std::sqrt(acc / double(v.size()));
}

// scale a generated component to an exact target rms, then add it in
inline void add_scaled(std::vector<float>& dst, const std::vector<double>& src,
                       double target_rms) {
    double r = rms(src);
    if (r <= 0.0) return;
    double s = target_rms / r;
    for (size_t i = 0; i < dst.size(); ++i)
        dst[i] += static_cast<float>(src[i] * s);
}

}  // namespace detail

// adds the three noise components to every channel; channels draw from
// independent streams so the mics do not hear identical noise
inline AudioBuffer add_noise(const AudioBuffer& buffer, const NoiseModel& noise,
                             uint64_t rng_seed) {
    buffer.validate();
    noise.validate();
    if (noise.lowband_level == 0 && noise.wideband_level == 0 && noise.music_level == 0)
        return buffer;

    AudioBuffer out = buffer;
    const size_t n = buffer.frames();
    for (size_t ch = 0; ch < out.channels.size(); ++ch) {
        Rng rng(mix_seed(rng_seed, ch));
        std::vector<float>& dst = out.channels[ch];

        if (noise.lowband_level > 0) {
            std::vector<double> white(n);
            for (auto& v : white) v = rng.normal();
            // 8th-order butterworth lowpass at 5 kHz keeps >=99% of the
            // energy below 6 kHz
            auto lp = detail::butterworth_sections(5000.0, buffer.sample_rate, 8, false);
            detail::run_cascade(white, lp);
            detail::add_scaled(dst, white, noise.lowband_level);
        }
        if (noise.wideband_level > 0) {
            std::vector<double> white(n);
            for (auto& v : white) v = rng.normal();
            detail::add_scaled(dst, white, noise.wideband_level);
        }
        if (noise.music_level > 0) {
            // tonal mixture: eight random tones below 16 kHz, synthesized
            // with second-order resonators
            std::vector<double> mix(n, 0.0);
            for (int tone = 0; tone < 8; ++tone) {
                double f = rng.uniform(200.0, 15500.0);
                double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                double w = 2.0 * std::numbers::pi * f / buffer.sample_rate;
                double s_prev2 = std::sin(phase);
                double s_prev1 = std::sin(phase + w);
                double c = 2.0 * std::cos(w);
                if (n > 0) mix[0] += s_prev2;
                if (n > 1) mix[1] += s_prev1;
                for (size_t i = 2; i < n; ++i) {
                    double s = c * s_prev1 - s_prev2;
                    mix[i] += s;
                    s_prev2 = s_prev1;
                    s_prev1 = s;
                }
            }
            detail::add_scaled(dst, mix, noise.music_level);
        }
    }
    return out;
}

// ---------------- session scripts ----------------
struct SessionEvent {
    double time_s = 0.0;
    std::string surface;
};

struct SessionScript {
    std::vector<SessionEvent> events;
    double duration_s = 0.0;
    NoiseModel noise;
    double transient_len_s = 0.3;

    void validate(const std::vector<SurfaceModel>& surfaces) const {
        if (!(duration_s > 0)) throw ValidationError("script: duration must be positive");
        if (events.empty()) throw ValidationError("script: needs at least one event");
        if (events.front().time_s != 0.0)
            throw ValidationError("script: first event must be at time 0");
        for (size_t i = 0; i < events.size(); ++i) {
            if (i > 0 && !(events[i].time_s > events[i - 1].time_s))
                throw ValidationError("script: event times must be strictly increasing");
            if (!(events[i].time_s < duration_s))
                throw ValidationError("script: event times must fall inside the session");
            find_surface(surfaces, events[i].surface);  // throws on unknown name
        }
        if (transient_len_s < 0) throw ValidationError("script: negative transient length");
        noise.validate();
    }
};

inline void write_script(const std::string& path, const SessionScript& script) {
    nlohmann::json j;
    j["duration"] = script.duration_s;
    j["transient_len"] = script.transient_len_s;
    j["noise"] = {{"lowband_level", script.noise.lowband_level},
                  {"wideband_level", script.noise.wideband_level},
                  {"music_level", script.noise.music_level}};
    j["events"] = nlohmann::json::array();
    for (const auto& e : script.events)
        j["events"].push_back({{"time", e.time_s}, {"surface", e.surface}});
    write_file_atomic(path, j.dump(2) + "\n");
}

inline SessionScript read_script(const std::string& path) {
    std::string data = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("script " + path + ": " + e.what());
    }
    SessionScript s;
    try {
        s.duration_s = j.at("duration").get<double>();
        if (j.contains("transient_len")) s.transient_len_s = j.at("transient_len").get<double>();
        if (j.contains("noise")) {
            const auto& nj = j.at("noise");
            if (nj.contains("lowband_level"))
                s.noise.lowband_level = nj.at("lowband_level").get<double>();
            if (nj.contains("wideband_level"))
                s.noise.wideband_level = nj.at("wideband_level").get<double>();
            if (nj.contains("music_level"))
                s.noise.music_level = nj.at("music_level").get<double>();
        }
        for (const auto& ej : j.at("events")) {
            SessionEvent e;
            e.time_s = ej.at("time").get<double>();
            e.surface = ej.at("surface").get<std::string>();
            s.events.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("script " + path + ": " + e.what());
    }
    return s;
}

// ---------------- whole-session synthesis ----------------
struct TruthTrack {
    double dt_s = 0.1;
    std::vector<int> labels;  // 0 = handsfree, 1 = handheld
};

struct SimResult {
    AudioBuffer audio;  // stereo
    PulseSchedule schedule;
    TruthTrack truth;
};

// every pulse is passed through the surface active at each sample, with a
// linear crossfade from the previous surface over transient_len after each
// event; mic 2 hears a +3 dB echo variant; truth labels (10 per second)
// switch to the destination class at the event time
inline SimResult simulate_session(const SessionScript& script, const PulseConfig& pulse_cfg,
                                  uint64_t rng_seed,
                                  const std::vector<SurfaceModel>& surfaces = default_surfaces()) {
    script.validate(surfaces);
    pulse_cfg.validate();

    SimResult res;
    res.schedule = make_schedule(pulse_cfg, script.duration_s);
    const int fs = pulse_cfg.sample_rate;
    const long total = std::llround(script.duration_s * fs);
    const long plen = res.schedule.pulse_len_samples;
    const double L = script.transient_len_s;

    std::vector<const SurfaceModel*> ev_surf;
    for (const auto& e : script.events) ev_surf.push_back(&find_surface(surfaces, e.surface));

    const std::vector<float> base =
        apply_edge_taper(linear_chirp(pulse_cfg), pulse_cfg.taper_samples());

    res.audio.sample_rate = fs;
    res.audio.channels.assign(2, std::vector<float>(static_cast<size_t>(total), 0.0f));

    // last event at or before time t
    auto event_at = [&](double t) {
        size_t j = 0;
        while (j + 1 < script.events.size() && script.events[j + 1].time_s <= t) ++j;
        return j;
    };

    for (int mic = 0; mic < 2; ++mic) {
        std::vector<float>& out = res.audio.channels[static_cast<size_t>(mic)];
        for (size_t pi = 0; pi < res.schedule.starts.size(); ++pi) {
            const long start = res.schedule.starts[pi];
            std::map<size_t, std::vector<float>> responses;
            auto response = [&](size_t ev_idx) -> const std::vector<float>& {
                auto it = responses.find(ev_idx);
                if (it == responses.end()) {
                    uint64_t seed =
                        mix_seed(mix_seed(mix_seed(rng_seed, pi), static_cast<uint64_t>(mic)),
                                 ev_idx);
                    SurfaceModel surf = *ev_surf[ev_idx];
                    if (mic == 1) surf = mic2_variant(surf);
                    it = responses.emplace(ev_idx, surface_response(surf, base, seed, fs))
                             .first;
                }
                return it->second;
            };
            size_t j = event_at(double(start) / fs);
            for (long i = 0; i < plen; ++i) {
                const long nidx = start + i;
                const double t = double(nidx) / fs;
                while (j + 1 < script.events.size() && script.events[j + 1].time_s <= t) ++j;
                float v;
                double since = t - script.events[j].time_s;
                if (j > 0 && L > 0 && since < L) {
                    double alpha = since / L;
                    v = static_cast<float>((1.0 - alpha) * response(j - 1)[static_cast<size_t>(i)] +
                                           alpha * response(j)[static_cast<size_t>(i)]);
                } else {
                    v = response(j)[static_cast<size_t>(i)];
                }
                out[static_cast<size_t>(nidx)] = v;
            }
        }
    }

    res.audio = add_noise(res.audio, script.noise, mix_seed(rng_seed, 0x6e6f6973ULL));

    const long n_labels = static_cast<long>(std::floor(script.duration_s / res.truth.dt_s));
    res.truth.labels.resize(static_cast<size_t>(n_labels));
    for (long k = 0; k < n_labels; ++k) {
        double t = double(k) * res.truth.dt_s + 1e-9;
        res.truth.labels[static_cast<size_t>(k)] = ev_surf[event_at(t)]->handheld() ? 1 : 0;
    }
    return res;
}

}  // namespace gripsense
