#pragma once
// recording-side conditioning: probe-band bandpass, pulse synchronisation by
// cross-correlation, segment extraction, per-segment normalisation

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "gripsense/audio.hpp"
#include "gripsense/common.hpp"
#include "gripsense/signal.hpp"

namespace gripsense {

enum class BandpassDesign { fir_window, biquad_cascade };

struct BandpassSpec {
    double f_lo = 18000.0;  // Hz
    double f_hi = 22000.0;  // Hz
    BandpassDesign design = BandpassDesign::fir_window;
    int taps = 201;                  // fir_window: tap count (odd)
    int order = 8;                   // biquad_cascade: butterworth order per edge (even)
    double min_stop_atten_db = 40.0; // required attenuation at and below 6 kHz

    void validate(int sample_rate) const {
        if (!(f_lo > 0.0) || !(f_lo < f_hi))
            throw ValidationError("bandpass: need 0 < f_lo < f_hi");
        if (f_hi >= sample_rate / 2.0)
            throw ValidationError("bandpass: f_hi must be below nyquist");
        if (design == BandpassDesign::fir_window) {
            if (taps < 3 || taps % 2 == 0)
                throw ValidationError("bandpass: fir taps must be odd and >= 3");
        } else {
            if (order < 2 || order % 2 != 0)
                throw ValidationError("bandpass: biquad order must be even and >= 2");
        }
    }
};

namespace detail {

// the fir transition band is centred this far outside [f_lo, f_hi] so the
// passband edges stay flat
constexpr double kFirCutoffShiftHz = 400.0;
// the recursive design needs its corners pushed further out to keep the
// probe band within ~2 dB
constexpr double kBiquadCutoffShiftHz = 1200.0;

inline double sinc(double x) {
    if (x == 0.0) return 1.0;
    double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// windowed-sinc bandpass: difference of two hamming-windowed lowpass kernels
inline std::vector<double> design_fir(const BandpassSpec& spec, int fs) {
    const int taps = spec.taps;
    const int M = (taps - 1) / 2;
    const double f1 = (spec.f_lo - kFirCutoffShiftHz) / fs;
    const double f2 = (spec.f_hi + kFirCutoffShiftHz) / fs;
    std::vector<double> h(static_cast<size_t>(taps));
    for (int k = 0; k < taps; ++k) {
        double lp2 = 2.0 * f2 * sinc(2.0 * f2 * (k - M));
        double lp1 = 2.0 * f1 * sinc(2.0 * f1 * (k - M));
        double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * k / (taps - 1));
        h[static_cast<size_t>(k)] = (lp2 - lp1) * w;
    }
    return h;
}

// symmetric kernel applied centred: zero phase, no group delay
inline std::vector<float> convolve_centered(const std::vector<float>& x,
                                            const std::vector<double>& h) {
    const long n = static_cast<long>(x.size());
    const long taps = static_cast<long>(h.size());
    const long M = (taps - 1) / 2;
    std::vector<float> out(x.size());
    for (long i = 0; i < n; ++i) {
        long k_lo = std::max<long>(0, M - i);
        long k_hi = std::min<long>(taps, n + M - i);
        double acc = 0.0;
        const long base = i - M;
        for (long k = k_lo; k < k_hi; ++k)
            acc += h[static_cast<size_t>(k)] * x[static_cast<size_t>(base + k)];
        out[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    return out;
}

struct Biquad {
    double b0, b1, b2, a1, a2;
};

// RBJ cookbook second-order sections with butterworth Q spacing
inline std::vector<Biquad> butterworth_sections(double fc, int fs, int order, bool highpass) {
    std::vector<Biquad> sections;
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double cw = std::cos(w0);
    const double sw = std::sin(w0);
    for (int k = 0; k < order / 2; ++k) {
        double q = 1.0 / (2.0 * std::sin((2.0 * k + 1.0) * std::numbers::pi / (2.0 * order)));
        double alpha = sw / (2.0 * q);
        double a0 = 1.0 + alpha;
        Biquad s{};
        if (highpass) {
            s.b0 = (1.0 + cw) / 2.0 / a0;
            s.b1 = -(1.0 + cw) / a0;
            s.b2 = (1.0 + cw) / 2.0 / a0;
        } else {
            s.b0 = (1.0 - cw) / 2.0 / a0;
            s.b1 = (1.0 - cw) / a0;
            s.b2 = (1.0 - cw) / 2.0 / a0;
        }
        s.a1 = -2.0 * cw / a0;
        s.a2 = (1.0 - alpha) / a0;
        sections.push_back(s);
    }
    return sections;
}

inline void run_cascade(std::vector<double>& x, const std::vector<Biquad>& sections) {
    for (const Biquad& s : sections) {
        double z1 = 0.0, z2 = 0.0;  // direct form II transposed
        for (double& v : x) {
            double in = v;
            double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
}

// forward-backward cascade: magnitude squared response, exactly zero phase
inline std::vector<float> filtfilt(const std::vector<float>& x, const BandpassSpec& spec,
                                   int fs) {
    std::vector<Biquad> hp = butterworth_sections(spec.f_lo - kBiquadCutoffShiftHz, fs,
                                                  spec.order, true);
    std::vector<Biquad> lp = butterworth_sections(spec.f_hi + kBiquadCutoffShiftHz, fs,
                                                  spec.order, false);
    std::vector<double> work(x.begin(), x.end());
    run_cascade(work, hp);
    run_cascade(work, lp);
    std::reverse(work.begin(), work.end());
    run_cascade(work, hp);
    run_cascade(work, lp);
    std::reverse(work.begin(), work.end());
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(work[i]);
    return out;
}

}  // namespace detail

inline std::vector<float> bandpass_channel(const std::vector<float>& x,
                                           const BandpassSpec& spec, int sample_rate) {
    spec.validate(sample_rate);
    if (spec.design == BandpassDesign::fir_window)
        return detail::convolve_centered(x, detail::design_fir(spec, sample_rate));
    return detail::filtfilt(x, spec, sample_rate);
}

inline AudioBuffer bandpass(const AudioBuffer& buf, const BandpassSpec& spec) {
    buf.validate();
    spec.validate(buf.sample_rate);
    AudioBuffer out;
    out.sample_rate = buf.sample_rate;
    out.channels.reserve(buf.channels.size());
    for (const auto& ch : buf.channels)
        out.channels.push_back(bandpass_channel(ch, spec, buf.sample_rate));
    return out;
}

struct SyncResult {
    long delay = 0;               // sample shift of the first template match
    double peak = 0.0;            // raw correlation at the chosen shift
    double normalized_peak = 0.0; // peak / (|template| * |aligned window|), in [0, 1]
};

// delay = argmax over m in [0, max_shift] of sum_n recorded(n+m)*template(n);
// ties resolve toward the smaller shift
inline SyncResult find_delay(const std::vector<float>& recorded,
                             const std::vector<float>& pulse_template, long max_shift) {
    const long rec_len = static_cast<long>(recorded.size());
    const long tmp_len = static_cast<long>(pulse_template.size());
    if (tmp_len == 0 || tmp_len > rec_len)
        throw ValidationError("find_delay: template must be non-empty and no longer than the recording");
    if (max_shift < 0 || max_shift > rec_len - tmp_len)
        throw ValidationError("find_delay: max_shift must be in [0, recorded - template]");

    SyncResult best;
    best.peak = -std::numeric_limits<double>::infinity();
    for (long m = 0; m <= max_shift; ++m) {
        double s = 0.0;
        const float* r = recorded.data() + m;
        for (long n = 0; n < tmp_len; ++n)
            s += static_cast<double>(r[n]) * pulse_template[static_cast<size_t>(n)];
        if (s > best.peak) {
            best.peak = s;
            best.delay = m;
        }
    }

    double tmp_norm = 0.0, win_norm = 0.0;
    for (long n = 0; n < tmp_len; ++n) {
        tmp_norm += double(pulse_template[static_cast<size_t>(n)]) *
                    pulse_template[static_cast<size_t>(n)];
        double w = recorded[static_cast<size_t>(best.delay + n)];
        win_norm += w * w;
    }
    double denom = std::sqrt(tmp_norm) * std::sqrt(win_norm);
    best.normalized_peak = denom > 0.0 ? std::clamp(best.peak / denom, 0.0, 1.0) : 0.0;
    return best;
}

struct ExtractedSegments {
    std::vector<size_t> pulse_indices;              // schedule index of each kept pulse
    std::vector<long> starts;                       // buffer offset of each kept window
    std::vector<std::vector<std::vector<float>>> segments;  // [pulse][channel][sample]
};

// cut pulse_len windows at schedule.starts[k] + delay; windows that run past
// the buffer end are dropped
inline ExtractedSegments extract_segments(const AudioBuffer& buf, const PulseSchedule& schedule,
                                          long delay) {
    buf.validate();
    if (delay < 0) throw ValidationError("extract_segments: delay must be non-negative");
    if (schedule.pulse_len_samples <= 0)
        throw ValidationError("extract_segments: schedule has no pulse length");
    const long len = static_cast<long>(buf.frames());
    const long plen = schedule.pulse_len_samples;

    ExtractedSegments out;
    for (size_t k = 0; k < schedule.starts.size(); ++k) {
        long begin = schedule.starts[k] + delay;
        if (begin < 0 || begin + plen > len) continue;
        out.pulse_indices.push_back(k);
        out.starts.push_back(begin);
        std::vector<std::vector<float>> per_channel;
        per_channel.reserve(buf.channels.size());
        for (const auto& ch : buf.channels)
            per_channel.emplace_back(ch.begin() + begin, ch.begin() + begin + plen);
        out.segments.push_back(std::move(per_channel));
    }
    return out;
}

struct NormalizedSegment {
    std::vector<float> samples;
    bool all_zero = false;
};

// scale so the absolute peak is 1; an all-zero segment is returned unchanged
// and flagged
inline NormalizedSegment normalize(std::vector<float> samples) {
    float peak = 0.0f;
    for (float v : samples) peak = std::max(peak, std::abs(v));
    NormalizedSegment out;
    if (peak == 0.0f) {
        out.samples = std::move(samples);
        out.all_zero = true;
        return out;
    }
    for (float& v : samples) v /= peak;
    out.samples = std::move(samples);
    return out;
}

}  // namespace gripsense
