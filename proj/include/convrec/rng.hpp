#pragma once
// Seeded random source with self-contained distributions.
//
// std::mt19937_64 output is pinned by the standard, but the std distribution
// adapters are implementation-defined, so every draw here is derived from raw
// engine words. Identical seeds give identical streams on every platform,
// which is what makes whole-pipeline reruns byte-comparable.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace convrec {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform index in [0, n). Rejection sampling keeps it unbiased.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    // Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        return lo + static_cast<int>(uniform_index(static_cast<std::size_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Index draw proportional to non-negative weights (inverse CDF).
    std::size_t discrete(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw std::invalid_argument("discrete: negative weight");
            total += w;
        }
        if (total <= 0.0) throw std::invalid_argument("discrete: no positive weight");
        const double u = uniform() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            cum += weights[i];
            if (u < cum) return i;
        }
        // Round-off can push u past the last cumulative sum; return the last
        // positively weighted index.
        for (std::size_t i = weights.size(); i-- > 0;) {
            if (weights[i] > 0.0) return i;
        }
        return weights.size() - 1;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace convrec
