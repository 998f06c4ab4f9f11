#pragma once

#include <cstdint>
#include <cmath>

namespace dlspf {

// Counter-based random stream. Each (seed, stream_id) pair keys an
// independent sequence; draw i is a pure function of (key, i), so streams
// can be created per particle / per trajectory and parallel execution
// cannot reorder or interleave draws.
//
// The generator is the SplitMix64 finalizer applied to a Weyl sequence,
// keyed by a mix of seed and stream id.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : key_(derive_key(seed, stream_id)) {}

    std::uint64_t next_u64() {
        std::uint64_t x = key_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return x;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the spare value is cached so a
    // stream yields a fixed sequence independent of call sites.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream_id) {
        std::uint64_t x = seed ^ 0xD1B54A32D192ED03ULL;
        x ^= x >> 32;
        x *= 0xD6E8FEB86659FD93ULL;
        x ^= stream_id + 0x9E3779B97F4A7C15ULL + (x << 6) + (x >> 2);
        x ^= x >> 32;
        x *= 0xD6E8FEB86659FD93ULL;
        x ^= x >> 32;
        return x;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Deterministic stream-id construction for nested contexts such as
// (time step, particle index, purpose tag).
inline std::uint64_t substream_id(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ULL;
    x ^= b + 0xBF58476D1CE4E5B9ULL + (x << 6) + (x >> 2);
    x *= 0x94D049BB133111EBULL;
    x ^= c + 0xD6E8FEB86659FD93ULL + (x << 6) + (x >> 2);
    x ^= x >> 29;
    return x;
}

inline RngStream rng_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    return RngStream(master_seed, stream_id);
}

}  // namespace dlspf
