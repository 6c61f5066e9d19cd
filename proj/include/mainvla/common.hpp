#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mainvla {

// Error taxonomy used across all modules. Configuration errors are caller
// mistakes in setup (bad dimensions, out-of-range knobs), data errors are
// malformed inputs at runtime, training errors abort a run.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

// Deterministic RNG wrapper. mt19937_64 is fully specified by the standard;
// the helpers below avoid std::uniform_*_distribution, whose output is
// implementation-defined, so streams are reproducible everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw ConfigError("next_below: n must be positive");
        // rejection sampling to kill modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    int next_int(int lo, int hi_inclusive) {
        if (hi_inclusive < lo) throw ConfigError("next_int: empty range");
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller, one value per call (spare discarded for stream simplicity)
    double next_gaussian() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // weighted choice over w[0..n), weights >= 0, sum > 0
    int next_weighted(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) {
            if (x < 0.0) throw ConfigError("next_weighted: negative weight");
            total += x;
        }
        if (total <= 0.0) throw ConfigError("next_weighted: weights sum to zero");
        const double r = next_double() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (r < acc) return static_cast<int>(i);
        }
        return static_cast<int>(w.size()) - 1;
    }

    std::mt19937_64& engine() { return engine_; }
    const std::mt19937_64& engine() const { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Little-endian binary IO, shared by the map, dataset and checkpoint formats.
inline void write_u16le(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline std::uint16_t read_u16le(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw DataError("unexpected end of stream reading u16");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("unexpected end of stream reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("unexpected end of stream reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64le(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64le(os, v);
}

inline double read_f64le(std::istream& is) {
    const std::uint64_t v = read_u64le(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

// FNV-1a, used for config/vocab hashes in dataset and checkpoint headers.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Derive an independent stream seed from a base seed and a purpose tag, so
// episode generation, texture noise, batch order etc. never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(purpose);
    h = fnv1a_u64(base, h);
    h = fnv1a_u64(index, h);
    // splitmix finalizer for avalanche
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace mainvla
