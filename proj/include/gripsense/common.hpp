#pragma once
// shared plumbing: error types, deterministic rng, logging, little-endian
// binary helpers, atomic file writes

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gripsense {

// bad parameters, configs, or shapes (CLI exit code 1)
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// unreadable/unwritable files (CLI exit code 2)
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// structurally broken file content: bad magic, truncation, wrong layout (CLI exit code 2)
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------- rng ----------------
// mt19937_64 core with hand-rolled distribution transforms so that seeded
// output is identical across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    // standard normal via Box-Muller (no cached spare, so call order is simple)
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// splitmix64 mix step, used to derive independent per-item seeds
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---------------- logging ----------------
// level comes from the GRIPSENSE_LOG environment variable: error|info|debug
enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("GRIPSENSE_LOG");
        if (env == nullptr) return LogLevel::info;
        std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log_at(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
    if (lvl > log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, ap);
    std::fprintf(stderr, "\n");
}

inline void log_error(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::error, "error", fmt, ap);
    va_end(ap);
}

inline void log_info(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::info, "info", fmt, ap);
    va_end(ap);
}

inline void log_debug(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    log_at(LogLevel::debug, "debug", fmt, ap);
    va_end(ap);
}

// ---------------- little-endian binary helpers ----------------
inline void put_u16le(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i16le(std::string& out, int16_t v) { put_u16le(out, static_cast<uint16_t>(v)); }

inline void put_f32le(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

// cursor-based reader over an in-memory blob; throws FormatError on truncation
class ByteReader {
  public:
    ByteReader(const std::string& data, std::string name)
        : data_(data), name_(std::move(name)) {}

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

    void need(size_t n) const {
        if (remaining() < n)
            throw FormatError(name_ + ": truncated, need " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos_) + ", have " +
                              std::to_string(remaining()));
    }

    uint16_t u16le() {
        need(2);
        auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
        pos_ += 2;
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }

    uint32_t u32le() {
        need(4);
        auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
        pos_ += 4;
        return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    }

    int16_t i16le() { return static_cast<int16_t>(u16le()); }

    float f32le() {
        uint32_t bits = u32le();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void skip(size_t n) {
        need(n);
        pos_ += n;
    }

  private:
    const std::string& data_;
    std::string name_;
    size_t pos_ = 0;
};

// ---------------- file io ----------------
inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return data;
}

// write via temp file + rename so readers never observe partial content
inline void write_file_atomic(const std::string& path, const std::string& data) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) throw IoError("write failed on " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

}  // namespace gripsense
