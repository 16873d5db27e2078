#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

namespace psyn {

// Counter-based generator keyed by (seed, stream_id). Every draw is a pure
// 64-bit integer hash of (seed, stream, counter), so identical keys replay the
// identical sequence on any platform and streams never alias each other.
class Rng {
public:
    Rng(uint64_t seed, uint64_t stream_id)
        : seed_(seed), stream_hash_(mix64(stream_id ^ 0x94d049bb133111ebull)) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        uint64_t x = mix64(seed_ + kGamma * ++counter_);
        return mix64(x ^ stream_hash_);
    }

    // Uniform in [0, 1), 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t next_below(uint64_t n) {
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal, Marsaglia polar method (no trig, stable across libms).
    double next_normal() {
        if (spare_) {
            double v = *spare_;
            spare_.reset();
            return v;
        }
        double u, v, s;
        do {
            u = 2.0 * next_double() - 1.0;
            v = 2.0 * next_double() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        return u * m;
    }

private:
    static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t stream_hash_;
    uint64_t counter_ = 0;
    std::optional<double> spare_;
};

// Fixed stream-id layout. One experiment seed fans out into independent
// streams; per-epoch shuffles get their own id space.
namespace streams {
constexpr uint64_t dataset_features = 1;
constexpr uint64_t dataset_weights = 2;
constexpr uint64_t dataset_noise = 3;
constexpr uint64_t dataset_labels = 4;
constexpr uint64_t dataset_teacher = 5;
constexpr uint64_t cv_split = 6;
constexpr uint64_t model_init = 7;
constexpr uint64_t shuffle_base = 1'000;           // + epoch index
constexpr uint64_t warmup_shuffle_base = 1'000'000;  // + warm-start epoch index
}  // namespace streams

}  // namespace psyn
