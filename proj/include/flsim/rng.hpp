#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace flsim {

// splitmix64 step; used for seed derivation only, never as the main stream.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derives an independent substream seed from a master seed and up to three
/// tags (e.g. round index, client id). Order-sensitive.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag0,
                                 std::uint64_t tag1 = 0, std::uint64_t tag2 = 0) {
    std::uint64_t s = seed;
    for (std::uint64_t t : {tag0, tag1, tag2}) {
        s ^= splitmix64(t) + 0x9E3779B97F4A7C15ull + (s << 12) + (s >> 4);
        splitmix64(s);
    }
    return splitmix64(s);
}

/// Deterministic random source. The engine (mt19937_64) and every draw
/// helper below are fully specified, so identical seeds give identical
/// streams on any conforming platform; std::*_distribution is avoided on
/// purpose because its output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    /// Unbiased uniform integer in [0, n), n >= 1. Masked rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t mask = ~0ull >> std::countl_zero(n - 1);
        for (;;) {
            const std::uint64_t r = next_u64() & mask;
            if (r < n) return r;
        }
    }

    /// Standard normal via Box-Muller; caches the paired deviate.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - unit();  // (0, 1]
        const double u2 = unit();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * 3.14159265358979323846 * u2;
        spare_ = rad * std::sin(ang);
        have_spare_ = true;
        return rad * std::cos(ang);
    }

    /// In-place Fisher–Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct elements sampled without replacement (partial Fisher–Yates);
    /// returned in draw order.
    template <typename T>
    std::vector<T> sample(std::vector<T> pool, std::size_t k) {
        std::vector<T> out;
        out.reserve(k);
        std::size_t remaining = pool.size();
        for (std::size_t i = 0; i < k && remaining > 0; ++i, --remaining) {
            const std::size_t j = static_cast<std::size_t>(below(remaining));
            out.push_back(pool[j]);
            std::swap(pool[j], pool[remaining - 1]);
        }
        return out;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace flsim
