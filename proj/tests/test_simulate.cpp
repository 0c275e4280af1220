#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "gripsense/common.hpp"
#include "gripsense/features.hpp"
#include "gripsense/preprocess.hpp"
#include "gripsense/signal.hpp"
#include "gripsense/simulate.hpp"

using namespace gripsense;

namespace {

// textbook O(n^2) dft, the oracle for the fast transform and for band-energy
// measurements
std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> X(n, {0.0, 0.0});
    for (size_t k = 0; k < n; ++k)
        for (size_t t = 0; t < n; ++t) {
            double ang = -2.0 * std::numbers::pi * double(k) * double(t) / double(n);
            X[k] += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
    return X;
}

std::vector<std::complex<double>> to_complex(const std::vector<float>& x) {
    std::vector<std::complex<double>> c(x.size());
    for (size_t i = 0; i < x.size(); ++i) c[i] = double(x[i]);
    return c;
}

// energy summed over half-spectrum bins whose frequency falls in [lo, hi),
// hi inclusive only at the 22 kHz top edge (same convention as the channel)
double band_energy(const std::vector<float>& sig, double lo, double hi, int fs) {
    auto X = direct_dft(to_complex(sig));
    const size_t n = sig.size();
    double acc = 0.0;
    for (size_t k = 0; k <= n / 2; ++k) {
        double f = double(k) * fs / double(n);
        bool inside = f >= lo && (f < hi || (hi == 22000.0 && f == hi));
        if (inside) acc += std::norm(X[k]);
    }
    return acc;
}

std::vector<float> test_pulse() {
    PulseConfig cfg;
    return apply_edge_taper(linear_chirp(cfg), cfg.taper_samples());
}

SurfaceModel flat_surface(double g0, double g1, double g2, double g3) {
    SurfaceModel s;
    s.name = "custom";
    s.band_gains = {{18000.0, 19000.0, g0},
                    {19000.0, 20000.0, g1},
                    {20000.0, 21000.0, g2},
                    {21000.0, 22000.0, g3}};
    s.jitter_db = 0.0;
    return s;  // echo defaults to -inf dB (absent)
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Simulate, ArbitraryLengthFftMatchesDirectDft) {
    Rng rng(42);
    for (size_t n : {2u, 3u, 7u, 96u, 360u, 1200u}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

        std::vector<std::complex<double>> fast = x;
        detail::fft_any(fast);
        auto ref = direct_dft(x);
        double max_err = 0.0, scale = 0.0;
        for (size_t k = 0; k < n; ++k) {
            max_err = std::max(max_err, std::abs(fast[k] - ref[k]));
            scale = std::max(scale, std::abs(ref[k]));
        }
        EXPECT_LT(max_err, 1e-9 * std::max(scale, 1.0)) << "length " << n;

        detail::ifft_any(fast);  // back to the input
        double rt = 0.0;
        for (size_t k = 0; k < n; ++k) rt = std::max(rt, std::abs(fast[k] - x[k]));
        EXPECT_LT(rt, 1e-10) << "round trip, length " << n;
    }
}

TEST(Simulate, DefaultSurfacesCoverElevenScenarios) {
    auto surfaces = default_surfaces();
    ASSERT_EQ(surfaces.size(), 11u);
    const std::vector<std::string> names = {
        "hand_still", "hand_texting", "hand_scrolling", "hand_calling",
        "coat_pocket", "pant_pocket", "cup_holder",     "console",
        "mount",      "mount_charging", "seat"};
    int n_handheld = 0;
    for (const auto& name : names) {
        const SurfaceModel& s = find_surface(surfaces, name);
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(s.band_gains.front().f_lo_hz, 18000.0);
        EXPECT_EQ(s.band_gains.back().f_hi_hz, 22000.0);
        n_handheld += s.handheld();
    }
    EXPECT_EQ(n_handheld, 4);  // exactly the hand_* family
    EXPECT_TRUE(find_surface(surfaces, "hand_texting").handheld());
    EXPECT_FALSE(find_surface(surfaces, "cup_holder").handheld());
    EXPECT_THROW(find_surface(surfaces, "table"), ValidationError);
}

TEST(Simulate, UnitChannelIsExactIdentity) {
    SurfaceModel unit = flat_surface(0, 0, 0, 0);
    std::vector<float> pulse = test_pulse();
    std::vector<float> out = surface_response(unit, pulse, 123);
    EXPECT_EQ(out, pulse);  // bitwise
}

TEST(Simulate, BandGainScalesBandEnergyByConfiguredFactor) {
    // -20 dB on [20k, 22k]: output band energy = 0.01x input, +-10%
    SurfaceModel s = flat_surface(0, 0, -20, -20);
    std::vector<float> pulse = test_pulse();
    std::vector<float> out = surface_response(s, pulse, 5);
    ASSERT_EQ(out.size(), pulse.size());

    double e_in = band_energy(pulse, 20000.0, 22000.0, 48000);
    double e_out = band_energy(out, 20000.0, 22000.0, 48000);
    ASSERT_GT(e_in, 0.0);
    double ratio = e_out / e_in;
    EXPECT_NEAR(ratio, 0.01, 0.001);

    // untouched band passes through
    double lo_in = band_energy(pulse, 18000.0, 20000.0, 48000);
    double lo_out = band_energy(out, 18000.0, 20000.0, 48000);
    EXPECT_NEAR(lo_out / lo_in, 1.0, 0.02);
}

TEST(Simulate, ResponseDeterministicPerSeed) {
    auto surfaces = default_surfaces();
    const SurfaceModel& hand = find_surface(surfaces, "hand_texting");  // jitter 1.5 dB
    std::vector<float> pulse = test_pulse();

    auto a = surface_response(hand, pulse, 99);
    auto b = surface_response(hand, pulse, 99);
    EXPECT_EQ(a, b);

    auto c = surface_response(hand, pulse, 100);
    EXPECT_NE(a, c);  // jitter draws differ
}

TEST(Simulate, EchoAddsDelayedScaledCopy) {
    SurfaceModel s = flat_surface(0, 0, 0, 0);
    s.echo_gain_db = -6.0;
    s.echo_delay_s = 0.001;  // 48 samples
    std::vector<float> pulse = test_pulse();
    std::vector<float> out = surface_response(s, pulse, 7);

    const double g = std::pow(10.0, -6.0 / 20.0);
    const int d = 48;
    ASSERT_EQ(out.size(), pulse.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double want = pulse[i] + (i >= size_t(d) ? g * pulse[i - d] : 0.0);
        EXPECT_NEAR(out[i], want, 1e-6) << "sample " << i;
    }

    // delay beyond the segment end leaves the signal untouched
    s.echo_delay_s = 1.0;
    out = surface_response(s, pulse, 7);
    EXPECT_EQ(out, pulse);
}

TEST(Simulate, HandAndRestSurfacesSeparableWithZeroJitter) {
    auto surfaces = default_surfaces();
    SurfaceModel hand = find_surface(surfaces, "hand_still");
    SurfaceModel rest = find_surface(surfaces, "seat");
    hand.jitter_db = rest.jitter_db = 0.0;
    hand.echo_gain_db = rest.echo_gain_db = -std::numeric_limits<double>::infinity();

    std::vector<float> pulse = test_pulse();
    auto out_hand = surface_response(hand, pulse, 1);
    auto out_rest = surface_response(rest, pulse, 1);

    double max_gap_db = 0.0;
    for (int b = 0; b < 4; ++b) {
        double lo = 18000.0 + 1000.0 * b, hi = lo + 1000.0;
        double eh = band_energy(out_hand, lo, hi, 48000);
        double er = band_energy(out_rest, lo, hi, 48000);
        max_gap_db = std::max(max_gap_db, std::abs(10.0 * std::log10(eh / er)));
    }
    EXPECT_GE(max_gap_db, 15.0);  // wide margin between the two classes

    // the gap sits where it should: hand suppresses the top bands
    double top_hand = band_energy(out_hand, 21000.0, 22000.0, 48000);
    double top_rest = band_energy(out_rest, 21000.0, 22000.0, 48000);
    EXPECT_LT(top_hand, 0.1 * top_rest);
}

TEST(Simulate, SingleSurfaceSessionIsAllHandsfree) {
    SessionScript script;
    script.duration_s = 2.0;
    script.events = {{0.0, "seat"}};
    PulseConfig cfg;
    SimResult res = simulate_session(script, cfg, 11);

    ASSERT_EQ(res.truth.labels.size(), 20u);
    for (int l : res.truth.labels) EXPECT_EQ(l, 0);

    EXPECT_EQ(res.audio.channels.size(), 2u);
    EXPECT_EQ(res.audio.frames(), 96000u);
    EXPECT_EQ(res.schedule.starts.size(), 20u);

    // pulses land on schedule; gaps stay silent with zero noise
    EXPECT_NE(res.audio.channels[0][100], 0.0f);
    EXPECT_EQ(res.audio.channels[0][2000], 0.0f);  // inside the first gap

    // the mics hear different echo paths
    EXPECT_NE(res.audio.channels[0], res.audio.channels[1]);

    // determinism across runs
    SimResult again = simulate_session(script, cfg, 11);
    EXPECT_EQ(res.audio.channels[0], again.audio.channels[0]);
    EXPECT_EQ(res.audio.channels[1], again.audio.channels[1]);
}

TEST(Simulate, TruthTrackSwitchesToDestinationClassAtEventTime) {
    SessionScript script;
    script.duration_s = 8.0;
    script.events = {{0.0, "seat"}, {1.0, "hand_still"}, {6.0, "seat"}};
    PulseConfig cfg;
    SimResult res = simulate_session(script, cfg, 3);

    ASSERT_EQ(res.truth.labels.size(), 80u);
    for (size_t k = 0; k < 80; ++k) {
        int want = (k >= 10 && k < 60) ? 1 : 0;
        EXPECT_EQ(res.truth.labels[k], want) << "label " << k;
    }
}

TEST(Simulate, TruthTrackLengthIsFloorOfDurationOverDt) {
    PulseConfig cfg;
    SessionScript script;
    script.events = {{0.0, "mount"}};
    script.duration_s = 2.05;
    EXPECT_EQ(simulate_session(script, cfg, 1).truth.labels.size(), 20u);
    script.duration_s = 0.35;
    EXPECT_EQ(simulate_session(script, cfg, 1).truth.labels.size(), 3u);
}

TEST(Simulate, LowbandNoiseBarelyDegradesProbeBandSnr) {
    SessionScript clean;
    clean.duration_s = 2.0;
    clean.events = {{0.0, "seat"}};
    SessionScript noisy = clean;
    noisy.noise.lowband_level = 0.1;

    PulseConfig cfg;
    SimResult rc = simulate_session(clean, cfg, 21);
    SimResult rn = simulate_session(noisy, cfg, 21);

    BandpassSpec spec;  // fir design
    auto bp_clean = detail::convolve_centered(rc.audio.channels[0], detail::design_fir(spec, 48000));
    auto bp_noisy = detail::convolve_centered(rn.audio.channels[0], detail::design_fir(spec, 48000));
    double sig = 0.0, res = 0.0;
    for (size_t i = 0; i < bp_clean.size(); ++i) {
        sig += double(bp_clean[i]) * bp_clean[i];
        double d = double(bp_noisy[i]) - bp_clean[i];
        res += d * d;
    }
    double snr_drop_db = 10.0 * std::log10(1.0 + res / sig);
    EXPECT_LT(snr_drop_db, 1.0);
}

TEST(Simulate, AddNoiseZeroLevelsIsIdentity) {
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.channels = {std::vector<float>(1000, 0.25f)};
    AudioBuffer out = add_noise(buf, NoiseModel{}, 5);
    EXPECT_EQ(out.channels[0], buf.channels[0]);
}

TEST(Simulate, WidebandNoiseRmsMatchesLevel) {
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.channels = {std::vector<float>(48000, 0.0f)};
    NoiseModel noise;
    noise.wideband_level = 0.05;
    AudioBuffer out = add_noise(buf, noise, 9);
    double acc = 0.0;
    for (float v : out.channels[0]) acc += double(v) * v;
    double rms = std::sqrt(acc / out.frames());
    EXPECT_NEAR(rms, 0.05, 0.05 * 0.05);  // +-5%
}

TEST(Simulate, LowbandNoiseEnergyStaysBelow6kHz) {
    const size_t n = 32768;  // power of two for the spectrum check
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.channels = {std::vector<float>(n, 0.0f)};
    NoiseModel noise;
    noise.lowband_level = 0.1;
    AudioBuffer out = add_noise(buf, noise, 33);

    std::vector<std::complex<double>> spec(n);
    for (size_t i = 0; i < n; ++i) spec[i] = double(out.channels[0][i]);
    detail::fft_pow2(spec);
    double total = 0.0, below = 0.0;
    for (size_t k = 0; k <= n / 2; ++k) {
        double w = (k == 0 || k == n / 2) ? 1.0 : 2.0;
        double e = w * std::norm(spec[k]);
        total += e;
        if (double(k) * 48000.0 / double(n) < 6000.0) below += e;
    }
    EXPECT_GE(below / total, 0.99);

    double acc = 0.0;
    for (float v : out.channels[0]) acc += double(v) * v;
    EXPECT_NEAR(std::sqrt(acc / n), 0.1, 1e-3);  // exact rms scaling
}

TEST(Simulate, MusicNoiseEnergyStaysBelow16kHz) {
    const size_t n = 32768;
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.channels = {std::vector<float>(n, 0.0f)};
    NoiseModel noise;
    noise.music_level = 0.07;
    AudioBuffer out = add_noise(buf, noise, 44);

    std::vector<std::complex<double>> spec(n);
    for (size_t i = 0; i < n; ++i) spec[i] = double(out.channels[0][i]);
    detail::fft_pow2(spec);
    double total = 0.0, below = 0.0;
    for (size_t k = 0; k <= n / 2; ++k) {
        double w = (k == 0 || k == n / 2) ? 1.0 : 2.0;
        double e = w * std::norm(spec[k]);
        total += e;
        if (double(k) * 48000.0 / double(n) < 16000.0) below += e;
    }
    EXPECT_GE(below / total, 0.99);
}

TEST(Simulate, NoiseSeededAndChannelIndependent) {
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.channels = {std::vector<float>(4800, 0.0f), std::vector<float>(4800, 0.0f)};
    NoiseModel noise;
    noise.wideband_level = 0.02;
    noise.lowband_level = 0.05;

    AudioBuffer a = add_noise(buf, noise, 77);
    AudioBuffer b = add_noise(buf, noise, 77);
    EXPECT_EQ(a.channels[0], b.channels[0]);
    EXPECT_EQ(a.channels[1], b.channels[1]);
    EXPECT_NE(a.channels[0], a.channels[1]);  // per-channel streams

    AudioBuffer c = add_noise(buf, noise, 78);
    EXPECT_NE(a.channels[0], c.channels[0]);
}

TEST(Simulate, ScriptJsonRoundTripAndValidation) {
    SessionScript script;
    script.duration_s = 12.5;
    script.transient_len_s = 0.25;
    script.noise.lowband_level = 0.1;
    script.noise.music_level = 0.02;
    script.events = {{0.0, "seat"}, {3.0, "hand_texting"}, {9.5, "cup_holder"}};

    std::string path = temp_path("gs_script.json");
    write_script(path, script);
    SessionScript back = read_script(path);
    EXPECT_EQ(back.duration_s, script.duration_s);
    EXPECT_EQ(back.transient_len_s, script.transient_len_s);
    EXPECT_EQ(back.noise.lowband_level, script.noise.lowband_level);
    EXPECT_EQ(back.noise.wideband_level, script.noise.wideband_level);
    EXPECT_EQ(back.noise.music_level, script.noise.music_level);
    ASSERT_EQ(back.events.size(), script.events.size());
    for (size_t i = 0; i < back.events.size(); ++i) {
        EXPECT_EQ(back.events[i].time_s, script.events[i].time_s);
        EXPECT_EQ(back.events[i].surface, script.events[i].surface);
    }
    std::filesystem::remove(path);

    auto surfaces = default_surfaces();
    SessionScript bad = script;
    bad.events[1].surface = "desk";  // unknown name
    EXPECT_THROW(bad.validate(surfaces), ValidationError);

    bad = script;
    bad.events[0].time_s = 0.5;  // first event must pin the initial surface
    EXPECT_THROW(bad.validate(surfaces), ValidationError);

    bad = script;
    bad.events[2].time_s = 3.0;  // not strictly increasing
    EXPECT_THROW(bad.validate(surfaces), ValidationError);

    bad = script;
    bad.events[2].time_s = 12.5;  // at/after the end
    EXPECT_THROW(bad.validate(surfaces), ValidationError);

    bad = script;
    bad.noise.wideband_level = -0.1;
    EXPECT_THROW(bad.validate(surfaces), ValidationError);

    std::string bad_json = temp_path("gs_script_bad.json");
    write_file_atomic(bad_json, "{ not json");
    EXPECT_THROW(read_script(bad_json), FormatError);
    write_file_atomic(bad_json, "{\"duration\": 2.0}");  // missing events
    EXPECT_THROW(read_script(bad_json), FormatError);
    std::filesystem::remove(bad_json);
}
