#pragma once
// Deterministic RNG for the whole project. Hand-rolled distributions so that
// identical seeds give identical streams across compilers and standard
// libraries (std::normal_distribution is implementation-defined).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace elec {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that small seeds (0, 1, 2, ...) diverge immediately.
        next_u64();
        next_u64();
    }

    // splitmix64
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n == 0 is a caller bug; returns 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Box-Muller without a cached spare: every call consumes exactly two
    // uniform draws, which keeps stream consumption easy to reason about.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Normal(0, std) resampled until within two standard deviations.
    double truncated_normal(double std_dev) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * std_dev;
    }

    // Derived independent stream; the parent stream is not advanced.
    Rng fork(std::uint64_t tag) const {
        Rng child(state_ ^ (0x632be59bd9b4e019ULL * (tag + 1)));
        return child;
    }

    template <class RandomIt>
    void shuffle(RandomIt first, RandomIt last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = uniform_below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace elec
