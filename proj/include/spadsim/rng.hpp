#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

// Deterministic random streams. Every stochastic process in the simulator
// draws from its own sub-stream, derived from (master seed, stream tag), so
// adding or removing one process never perturbs the samples of another and
// runs are reproducible bit-for-bit across platforms. The generator is
// xoshiro256++ seeded through splitmix64; all variate transforms are spelled
// out here instead of using std::<distribution>, whose output is
// implementation defined.

namespace spadsim {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a, used to hash stream tags into the seed.
inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a named sub-stream of `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t s = master ^ hash_tag(tag);
    return splitmix64(s);
}

/// Seed for the i-th point of a sweep run under `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index) {
    std::uint64_t s = master ^ hash_tag(tag);
    s ^= 0x9e3779b97f4a7c15ULL * (index + 1);
    return splitmix64(s);
}

class RandomStream {
  public:
    RandomStream(std::uint64_t master_seed, std::string_view tag) {
        std::uint64_t s = derive_seed(master_seed, tag);
        for (auto& word : state_) word = splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Exponential with the given mean; strictly positive.
    double exponential(double mean) {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return -mean * std::log(u);
    }

    /// Standard normal via the polar method, scaled by sigma.
    double gaussian(double sigma) {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return sigma * u * std::sqrt(-2.0 * std::log(s) / s);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Poisson by inversion of the product of uniforms. Exact and cheap for
    /// the moderate means used here; guarded against pathological inputs.
    std::uint32_t poisson(double mean) {
        if (mean < 0.0) throw std::domain_error("poisson mean: must be >= 0");
        if (mean == 0.0) return 0;
        if (mean > 500.0) throw std::domain_error("poisson mean: above supported range");
        const double limit = std::exp(-mean);
        std::uint32_t k = 0;
        double product = uniform();
        while (product > limit) {
            ++k;
            product *= uniform();
        }
        return k;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

}  // namespace spadsim
