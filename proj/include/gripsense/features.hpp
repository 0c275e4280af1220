#pragma once
// discrete-time STFT features: windowed transform with an absolute-time phase
// reference, probe-band crop to log magnitudes, square image for the net

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "gripsense/common.hpp"

namespace gripsense {

struct StftConfig {
    long window_len = 256;
    long hop = 64;
    long fft_len = 256;
    double crop_lo_hz = 18000.0;
    double crop_hi_hz = 22000.0;
    int out_size = 150;
    double log_floor_db = -80.0;

    void validate() const {
        if (window_len < 2) throw ValidationError("stft: window_len must be >= 2");
        if (hop < 1) throw ValidationError("stft: hop must be >= 1");
        if (fft_len < window_len)
            throw ValidationError("stft: fft_len must be >= window_len");
        if (fft_len % 2 != 0) throw ValidationError("stft: fft_len must be even");
        if (!(crop_lo_hz < crop_hi_hz))
            throw ValidationError("stft: crop_lo_hz must be below crop_hi_hz");
        if (out_size < 1) throw ValidationError("stft: out_size must be >= 1");
    }
};

// complex spectrogram, frames x non-negative bins
struct Stft {
    size_t n_bins = 0;
    std::vector<std::vector<std::complex<double>>> rows;

    size_t frames() const { return rows.size(); }
    size_t bins() const { return n_bins; }
    const std::complex<double>& at(size_t m, size_t f) const { return rows[m][f]; }
};

namespace detail {

// iterative radix-2 fft, in place
inline void fft_pow2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline bool is_pow2(long v) { return v > 0 && (v & (v - 1)) == 0; }

inline void ifft_pow2(std::vector<std::complex<double>>& a) {
    for (auto& v : a) v = std::conj(v);
    fft_pow2(a);
    const double inv = 1.0 / static_cast<double>(a.size());
    for (auto& v : a) v = std::conj(v) * inv;
}

// arbitrary-length dft via the bluestein chirp-z transform on top of the
// radix-2 kernel; exact phase from j^2 mod 2n to avoid large trig arguments
inline void fft_any(std::vector<std::complex<double>>& x, bool inverse = false) {
    const size_t n = x.size();
    if (n <= 1) return;
    if (is_pow2(static_cast<long>(n))) {
        if (inverse)
            ifft_pow2(x);
        else
            fft_pow2(x);
        return;
    }
    size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> w(n);
    for (size_t j = 0; j < n; ++j) {
        uint64_t j2 = static_cast<uint64_t>(j) * j % (2 * n);
        double ang = sign * std::numbers::pi * static_cast<double>(j2) / static_cast<double>(n);
        w[j] = {std::cos(ang), std::sin(ang)};
    }
    std::vector<std::complex<double>> a(m), b(m);
    for (size_t j = 0; j < n; ++j) a[j] = x[j] * w[j];
    b[0] = {1.0, 0.0};
    for (size_t j = 1; j < n; ++j) b[j] = b[m - j] = std::conj(w[j]);
    fft_pow2(a);
    fft_pow2(b);
    for (size_t j = 0; j < m; ++j) a[j] *= b[j];
    ifft_pow2(a);
    for (size_t k = 0; k < n; ++k) x[k] = a[k] * w[k];
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& v : x) v *= inv;
    }
}

inline void ifft_any(std::vector<std::complex<double>>& x) { fft_any(x, true); }

inline std::vector<double> hamming(long n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] =
            n == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
    return w;
}

}  // namespace detail

// X(m,f) = sum_n x(n) w(n - m*hop) exp(-j*2*pi*f*n/fft_len); only frames fully
// inside the segment are produced, and only bins 0..fft_len/2 are returned
inline Stft dtstft(const std::vector<float>& segment, const StftConfig& cfg) {
    cfg.validate();
    if (static_cast<long>(segment.size()) < cfg.window_len)
        throw ValidationError("stft: segment shorter than one window");
    const long frames = (static_cast<long>(segment.size()) - cfg.window_len) / cfg.hop + 1;
    const long F = cfg.fft_len;
    const std::vector<double> w = detail::hamming(cfg.window_len);
    const bool use_fft = detail::is_pow2(F);

    Stft out;
    out.n_bins = static_cast<size_t>(F / 2 + 1);
    out.rows.reserve(static_cast<size_t>(frames));
    std::vector<std::complex<double>> frame(static_cast<size_t>(F));
    for (long m = 0; m < frames; ++m) {
        const long off = m * cfg.hop;
        std::fill(frame.begin(), frame.end(), std::complex<double>(0.0, 0.0));
        for (long i = 0; i < cfg.window_len; ++i)
            frame[static_cast<size_t>(i)] =
                w[static_cast<size_t>(i)] * double(segment[static_cast<size_t>(off + i)]);
        std::vector<std::complex<double>> row(out.n_bins);
        if (use_fft) {
            detail::fft_pow2(frame);
            // the transform is referenced to absolute sample index, so each
            // frame's fft picks up a linear phase of exp(-j*2*pi*f*off/F)
            for (long f = 0; f <= F / 2; ++f) {
                double ang = -2.0 * std::numbers::pi * f * off / F;
                row[static_cast<size_t>(f)] =
                    frame[static_cast<size_t>(f)] *
                    std::complex<double>(std::cos(ang), std::sin(ang));
            }
        } else {
            for (long f = 0; f <= F / 2; ++f) {
                std::complex<double> acc(0.0, 0.0);
                for (long i = 0; i < cfg.window_len; ++i) {
                    double ang = -2.0 * std::numbers::pi * f * (off + i) / F;
                    acc += frame[static_cast<size_t>(i)] *
                           std::complex<double>(std::cos(ang), std::sin(ang));
                }
                row[static_cast<size_t>(f)] = acc;
            }
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

// log-magnitude matrix over the probe band, frames x kept bins
struct CroppedSpectrogram {
    size_t bin_lo = 0;
    size_t bin_hi = 0;  // inclusive
    std::vector<std::vector<double>> values;  // 20*log10|X|, clamped at the floor
};

inline CroppedSpectrogram crop_band(const Stft& s, const StftConfig& cfg, int sample_rate) {
    cfg.validate();
    if (sample_rate <= 0) throw ValidationError("crop_band: sample_rate must be positive");
    if (s.frames() == 0) throw ValidationError("crop_band: empty spectrogram");
    const double hz_per_bin = static_cast<double>(sample_rate) / cfg.fft_len;
    long lo = static_cast<long>(std::ceil(cfg.crop_lo_hz / hz_per_bin - 1e-9));
    long hi = static_cast<long>(std::floor(cfg.crop_hi_hz / hz_per_bin + 1e-9));
    lo = std::max<long>(lo, 0);
    hi = std::min<long>(hi, static_cast<long>(s.bins()) - 1);
    if (lo > hi) throw ValidationError("crop_band: crop band holds no bins");

    CroppedSpectrogram c;
    c.bin_lo = static_cast<size_t>(lo);
    c.bin_hi = static_cast<size_t>(hi);
    c.values.reserve(s.frames());
    for (size_t m = 0; m < s.frames(); ++m) {
        std::vector<double> row(static_cast<size_t>(hi - lo + 1));
        for (long f = lo; f <= hi; ++f) {
            double mag = std::abs(s.at(m, static_cast<size_t>(f)));
            double db = mag > 0.0 ? 20.0 * std::log10(mag)
                                  : -std::numeric_limits<double>::infinity();
            row[static_cast<size_t>(f - lo)] = std::max(db, cfg.log_floor_db);
        }
        c.values.push_back(std::move(row));
    }
    return c;
}

// square single-plane image replicated to three identical channels
struct SpectrogramImage {
    int size = 0;
    std::vector<float> pixels;  // size*size*3, row-major, channel-last

    float at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * size + x) * 3 + static_cast<size_t>(c)];
    }
    float& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * size + x) * 3 + static_cast<size_t>(c)];
    }
};

// min-max normalize to [0,1] (constant input maps to 0.5 everywhere), bilinear
// resize to out_size x out_size, replicate across three channels
inline SpectrogramImage to_image(const CroppedSpectrogram& c, const StftConfig& cfg) {
    cfg.validate();
    const size_t rows = c.values.size();
    if (rows == 0 || c.values[0].empty())
        throw ValidationError("to_image: empty feature matrix");
    const size_t cols = c.values[0].size();
    for (const auto& row : c.values)
        if (row.size() != cols) throw ValidationError("to_image: ragged feature matrix");

    double lo = c.values[0][0], hi = c.values[0][0];
    for (const auto& row : c.values)
        for (double v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const bool constant = (hi - lo) < 1e-12;

    const int S = cfg.out_size;
    SpectrogramImage img;
    img.size = S;
    img.pixels.assign(static_cast<size_t>(S) * S * 3, 0.0f);
    const double ry = S > 1 ? static_cast<double>(rows - 1) / (S - 1) : 0.0;
    const double rx = S > 1 ? static_cast<double>(cols - 1) / (S - 1) : 0.0;
    for (int y = 0; y < S; ++y) {
        double sy = y * ry;
        size_t y0 = std::min(static_cast<size_t>(sy), rows - 1);
        size_t y1 = std::min(y0 + 1, rows - 1);
        double fy = sy - static_cast<double>(y0);
        for (int x = 0; x < S; ++x) {
            float value;
            if (constant) {
                value = 0.5f;
            } else {
                double sx = x * rx;
                size_t x0 = std::min(static_cast<size_t>(sx), cols - 1);
                size_t x1 = std::min(x0 + 1, cols - 1);
                double fx = sx - static_cast<double>(x0);
                double v = (1.0 - fy) * ((1.0 - fx) * c.values[y0][x0] + fx * c.values[y0][x1]) +
                           fy * ((1.0 - fx) * c.values[y1][x0] + fx * c.values[y1][x1]);
                value = static_cast<float>((v - lo) / (hi - lo));
            }
            img.at(y, x, 0) = value;
            img.at(y, x, 1) = value;
            img.at(y, x, 2) = value;
        }
    }
    return img;
}

// ---------------- portable feature matrix files ----------------
// layout: magic "GSIM", u32 rows, u32 cols, u32 channels, then
// rows*cols*channels float32 little-endian, row-major, channel-last
struct FeatureMatrix {
    uint32_t rows = 0, cols = 0, channels = 0;
    std::vector<float> data;
};

inline void write_feature_matrix(const std::string& path, const FeatureMatrix& fm) {
    if (fm.rows == 0 || fm.cols == 0 || fm.channels == 0)
        throw ValidationError("feature matrix: empty dimensions");
    if (fm.data.size() != static_cast<size_t>(fm.rows) * fm.cols * fm.channels)
        throw ValidationError("feature matrix: data size does not match dimensions");
    std::string out;
    out.reserve(16 + fm.data.size() * 4);
    out += "GSIM";
    put_u32le(out, fm.rows);
    put_u32le(out, fm.cols);
    put_u32le(out, fm.channels);
    for (float v : fm.data) put_f32le(out, v);
    write_file_atomic(path, out);
}

inline FeatureMatrix read_feature_matrix(const std::string& path) {
    std::string data = read_file(path);
    ByteReader r(data, path);
    if (r.bytes(4) != "GSIM") throw FormatError(path + ": bad feature matrix magic");
    FeatureMatrix fm;
    fm.rows = r.u32le();
    fm.cols = r.u32le();
    fm.channels = r.u32le();
    const uint64_t count = static_cast<uint64_t>(fm.rows) * fm.cols * fm.channels;
    if (count == 0 || count > (1ull << 28))
        throw FormatError(path + ": unreasonable feature matrix dimensions");
    fm.data.resize(count);
    for (uint64_t i = 0; i < count; ++i) fm.data[i] = r.f32le();
    return fm;
}

inline FeatureMatrix feature_matrix_from_cropped(const CroppedSpectrogram& c) {
    FeatureMatrix fm;
    fm.rows = static_cast<uint32_t>(c.values.size());
    fm.cols = static_cast<uint32_t>(c.values.empty() ? 0 : c.values[0].size());
    fm.channels = 1;
    fm.data.reserve(static_cast<size_t>(fm.rows) * fm.cols);
    for (const auto& row : c.values)
        for (double v : row) fm.data.push_back(static_cast<float>(v));
    return fm;
}

inline CroppedSpectrogram cropped_from_feature_matrix(const FeatureMatrix& fm) {
    if (fm.channels != 1)
        throw ValidationError("feature matrix: expected a single-channel matrix");
    CroppedSpectrogram c;
    c.values.assign(fm.rows, std::vector<double>(fm.cols));
    for (uint32_t r = 0; r < fm.rows; ++r)
        for (uint32_t k = 0; k < fm.cols; ++k)
            c.values[r][k] = fm.data[static_cast<size_t>(r) * fm.cols + k];
    return c;
}

inline FeatureMatrix feature_matrix_from_image(const SpectrogramImage& img) {
    FeatureMatrix fm;
    fm.rows = static_cast<uint32_t>(img.size);
    fm.cols = static_cast<uint32_t>(img.size);
    fm.channels = 3;
    fm.data = img.pixels;
    return fm;
}

}  // namespace gripsense
