#pragma once
// WAV container io: 16-bit PCM and 32-bit IEEE float, little-endian

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gripsense/common.hpp"

namespace gripsense {

struct AudioBuffer {
    int sample_rate = 0;
    std::vector<std::vector<float>> channels;  // non-interleaved, equal lengths

    size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }

    void validate() const {
        if (sample_rate <= 0) throw ValidationError("audio buffer: sample_rate must be positive");
        if (channels.empty()) throw ValidationError("audio buffer: no channels");
        for (const auto& ch : channels)
            if (ch.size() != channels[0].size())
                throw ValidationError("audio buffer: channel lengths differ");
    }
};

enum class WavFormat { pcm16, float32 };

namespace detail {

// clamp to [-1, 1 - 1/32768], scale by 32768, round to nearest
inline int16_t encode_pcm16(float v) {
    double d = v;
    const double hi = 1.0 - 1.0 / 32768.0;
    if (d < -1.0) d = -1.0;
    if (d > hi) d = hi;
    long q = std::lround(d * 32768.0);
    if (q < -32768) q = -32768;
    if (q > 32767) q = 32767;
    return static_cast<int16_t>(q);
}

inline float decode_pcm16(int16_t q) { return static_cast<float>(q / 32768.0); }

}  // namespace detail

inline void write_wav(const std::string& path, const AudioBuffer& buf, WavFormat format) {
    buf.validate();
    const auto n_channels = static_cast<uint16_t>(buf.channels.size());
    const size_t n_frames = buf.frames();
    const uint16_t bytes_per_sample = (format == WavFormat::pcm16) ? 2 : 4;
    const uint16_t block_align = static_cast<uint16_t>(n_channels * bytes_per_sample);
    const auto data_size = static_cast<uint32_t>(n_frames * block_align);

    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_u32le(out, 4 + 8 + 16 + 8 + data_size);
    out += "WAVE";
    out += "fmt ";
    put_u32le(out, 16);
    put_u16le(out, format == WavFormat::pcm16 ? 1 : 3);
    put_u16le(out, n_channels);
    put_u32le(out, static_cast<uint32_t>(buf.sample_rate));
    put_u32le(out, static_cast<uint32_t>(buf.sample_rate) * block_align);
    put_u16le(out, block_align);
    put_u16le(out, static_cast<uint16_t>(bytes_per_sample * 8));
    out += "data";
    put_u32le(out, data_size);
    for (size_t i = 0; i < n_frames; ++i) {
        for (uint16_t c = 0; c < n_channels; ++c) {
            if (format == WavFormat::pcm16)
                put_i16le(out, detail::encode_pcm16(buf.channels[c][i]));
            else
                put_f32le(out, buf.channels[c][i]);
        }
    }
    write_file_atomic(path, out);
}

inline AudioBuffer read_wav(const std::string& path) {
    std::string data = read_file(path);
    ByteReader r(data, path);
    if (r.bytes(4) != "RIFF") throw FormatError(path + ": not a RIFF file");
    r.u32le();  // declared riff size; tolerated if inconsistent
    if (r.bytes(4) != "WAVE") throw FormatError(path + ": not a WAVE file");

    bool have_fmt = false;
    uint16_t audio_format = 0, n_channels = 0, bits = 0, block_align = 0;
    uint32_t sample_rate = 0;
    std::string payload;
    bool have_data = false;

    while (r.remaining() >= 8) {
        std::string id = r.bytes(4);
        uint32_t size = r.u32le();
        if (id == "fmt ") {
            if (size < 16) throw FormatError(path + ": fmt chunk too small");
            audio_format = r.u16le();
            n_channels = r.u16le();
            sample_rate = r.u32le();
            r.u32le();  // byte rate
            block_align = r.u16le();
            bits = r.u16le();
            r.skip(size - 16);
            have_fmt = true;
        } else if (id == "data") {
            if (r.remaining() < size)
                throw FormatError(path + ": data chunk declares " + std::to_string(size) +
                                  " bytes, only " + std::to_string(r.remaining()) +
                                  " available");
            payload = r.bytes(size);
            have_data = true;
        } else {
            if (r.remaining() < size)
                throw FormatError(path + ": chunk '" + id + "' declares " +
                                  std::to_string(size) + " bytes, only " +
                                  std::to_string(r.remaining()) + " available");
            r.skip(size);
        }
        if ((size & 1) != 0 && r.remaining() > 0) r.skip(1);  // chunks pad to even
    }
    if (!have_fmt) throw FormatError(path + ": missing fmt chunk");
    if (!have_data) throw FormatError(path + ": missing data chunk");
    if (n_channels == 0) throw FormatError(path + ": zero channels");

    const bool pcm16 = (audio_format == 1 && bits == 16);
    const bool f32 = (audio_format == 3 && bits == 32);
    if (!pcm16 && !f32)
        throw FormatError(path + ": unsupported sample format (format=" +
                          std::to_string(audio_format) + ", bits=" + std::to_string(bits) +
                          "); expected PCM16 or IEEE float32");
    const uint16_t bytes_per_sample = pcm16 ? 2 : 4;
    const uint32_t expected_align = n_channels * bytes_per_sample;
    if (block_align != 0 && block_align != expected_align)
        throw FormatError(path + ": block align " + std::to_string(block_align) +
                          " does not match format");
    if (payload.size() % expected_align != 0)
        throw FormatError(path + ": data size " + std::to_string(payload.size()) +
                          " is not a whole number of frames");

    AudioBuffer buf;
    buf.sample_rate = static_cast<int>(sample_rate);
    const size_t n_frames = payload.size() / expected_align;
    buf.channels.assign(n_channels, std::vector<float>(n_frames));
    ByteReader pr(payload, path + " (data)");
    for (size_t i = 0; i < n_frames; ++i)
        for (uint16_t c = 0; c < n_channels; ++c)
            buf.channels[c][i] = pcm16 ? detail::decode_pcm16(pr.i16le()) : pr.f32le();
    buf.validate();
    return buf;
}

}  // namespace gripsense
