#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dpmil {

// FNV-1a over a string; used to derive named per-stage seed substreams.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Mix a base seed with a stream name so stages draw independent randomness.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
    std::uint64_t z = base ^ fnv1a64(stream);
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
    return derive_seed(derive_seed(base, stream) + index * 0x9e3779b97f4a7c15ull, stream);
}

// Deterministic RNG wrapper. Avoids std::uniform_real_distribution and
// std::normal_distribution, whose output sequences differ across standard
// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<std::size_t>(v % n);
    }

    // integer in [lo, hi] inclusive
    std::size_t range(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }

    // standard normal via Box-Muller; two uniforms per draw, no cached spare
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            using std::swap;
            swap(v[i], v[index(i + 1)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace dpmil
