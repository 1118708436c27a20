#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace tfex {

// splitmix64; used to derive independent stream seeds from (seed, index...).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(seed ^ mix64(a)) ^ mix64(b + 0x165667b19e3779f9ULL));
}

// Deterministic Gaussian stream. Box-Muller over explicit 53-bit uniforms so the
// draw sequence does not depend on the standard library's normal_distribution.
class GaussStream {
public:
    explicit GaussStream(std::uint64_t seed) : eng_(seed) {}

    double uniform() {  // (0,1)
        const std::uint64_t bits = eng_() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1p-53;
    }

    double gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t raw() { return eng_(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is irrelevant at the n << 2^64 scales used here
        return eng_() % n;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace tfex
