#pragma once

// Deterministic randomness. All draws go through explicit derivations from
// raw mt19937_64 output so results do not depend on the standard library's
// distribution implementations. Substreams give each student (or each fold
// shuffle, trajectory, ...) an independent stream derived from the base seed,
// so per-entity results are stable under reordering.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace tsdr::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Independent-by-construction stream id: hash the (seed, stream) pair twice
// through splitmix so adjacent ids do not correlate.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x51BD2C61ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(substream_seed(seed, stream));
    }

    std::uint64_t bits() { return eng_(); }

    // uniform in [0,1) with 53-bit resolution
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // uniform integer in [0, n); multiply-shift (bias < n / 2^64, negligible)
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(eng_()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // standard normal via Box-Muller (no state caching: two draws per call)
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

private:
    std::mt19937_64 eng_;
};

} // namespace tsdr::rng
