#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace tracemark {

// Seeded random stream with fully specified output mapping, so runs are
// reproducible across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint32_t next_u32() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0. Rejection-free 64-bit scaling.
    std::uint64_t uniform_index(std::uint64_t n) {
        std::uint64_t x = (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
        // multiply-shift; bias is negligible for n << 2^64
        unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller; one cached value.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Derives an independent stream for a named sub-task.
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = (static_cast<std::uint64_t>(next_u32()) << 32) ^ (salt * 0x9E3779B97F4A7C15ull);
        return Rng(s);
    }

private:
    std::mt19937 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace tracemark
