#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "partialfl/errors.hpp"

namespace partialfl {

// Deterministic RNG built on mt19937_64 raw output only. The standard pins the
// bit sequence of the engine but not of the <random> distributions, so every
// sampler here is hand-rolled; identical (seed, call sequence) gives identical
// values on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ValueError("Rng::uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Standard normal via Box-Muller (cosine branch).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Marsaglia-Tsang gamma sampler, unit scale.
    double gamma(double shape) {
        if (shape <= 0.0) throw ValueError("Rng::gamma: shape must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            while (u <= 0.0) u = uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    // Proportion vector drawn from Dir(concentration * 1_k).
    std::vector<double> dirichlet(double concentration, std::size_t k) {
        std::vector<double> p(k);
        double sum = 0.0;
        for (auto& v : p) {
            v = gamma(concentration);
            sum += v;
        }
        if (sum <= 0.0) {
            // All-zero gamma draws only happen at extreme concentrations; fall
            // back to a uniform split rather than dividing by zero.
            std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
            return p;
        }
        for (auto& v : p) v /= sum;
        return p;
    }

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        shuffle(idx);
        return idx;
    }

    // k of n without replacement, returned ascending.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw ValueError("Rng::sample_without_replacement: k > n");
        std::vector<std::size_t> idx = permutation(n);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    std::mt19937_64 engine_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// One master seed fans out into independent named streams (data, partition,
// sampling, init, batching, ...) so that changing one experiment factor leaves
// the draws of the others untouched. Extra indices isolate per-round and
// per-client streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = detail::splitmix64(master ^ detail::fnv1a(stream));
    h = detail::splitmix64(h ^ (a + 0x51ed2701a1b2c3d4ULL));
    h = detail::splitmix64(h ^ (b + 0x2545f4914f6cdd1dULL));
    return h;
}

inline Rng derive_rng(std::uint64_t master, std::string_view stream, std::uint64_t a = 0,
                      std::uint64_t b = 0) {
    return Rng(derive_seed(master, stream, a, b));
}

}  // namespace partialfl
