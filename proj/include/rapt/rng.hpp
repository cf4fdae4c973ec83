#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace rapt {

namespace detail {

/// 64-bit finalizer (splitmix64). Pure integer arithmetic, so the stream is
/// identical on every platform and compiler.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

/// Counter-based generator: output i of stream `key` is a hash of (key, i).
/// Same seed => same stream everywhere; no hidden global state. Substreams
/// are obtained with derive_seed, never by sharing a generator across
/// independent units of work.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() {
        counter_ += detail::kGolden;
        return detail::mix64(key_ ^ counter_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased uniform integer in [0, n) via rejection sampling.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal (Box-Muller; consumes two uniforms per call).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Deterministic substream key from a parent seed and up to two indices
/// (e.g. (seed, fold) or (seed, n, replication)).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t k = detail::mix64(seed ^ (a + detail::kGolden));
    if (b != 0) k = detail::mix64(k ^ (b * detail::kGolden + 0x3c6ef372fe94f82aULL));
    return k;
}

}  // namespace rapt
