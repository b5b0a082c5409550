#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace mat {

/// Purpose-keyed RNG streams. Two draws from the same (seed, stream) pair are
/// identical across platforms; distinct streams never share state, so adding
/// draws to one consumer cannot shift another's sequence.
enum class RngStream : std::uint64_t {
    Init = 1,
    Dropout = 2,
    Masking = 3,
    Split = 4,
    Data = 5,
    Sweep = 6,
    Check = 7,
};

/// splitmix64: counter-based, trivially seedable, statistically fine for the
/// desk-scale uses here (init, dropout, masking, splits). All derived draws
/// (uniform, normal, shuffles) are built on the raw 64-bit output so the
/// sequence does not depend on the standard library.
class Rng {
public:
    Rng(std::uint64_t seed, RngStream stream)
        : Rng(seed, static_cast<std::uint64_t>(stream)) {}

    Rng(std::uint64_t seed, std::uint64_t stream) {
        // fold the stream id into the seed with one mix round
        state_ = mix(seed + 0x9e3779b97f4a7c15ULL * (stream + 1));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        // 64-bit draw modulo-reduced; bias is negligible for desk-scale n
        return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    /// Standard normal via Box-Muller, one cached value.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates over an index vector.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mat
