#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace modfuser {

// Derives an independent stream seed from a base seed and stream tags
// (splitmix64 finalizer). Used so that per-epoch / per-slice streams are
// reproducible regardless of evaluation order or thread count.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag_a + 1) + 0xbf58476d1ce4e5b9ull * (tag_b + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

// Deterministic random source. All distributions are implemented here rather
// than with std::*_distribution, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; no cached spare so the stream position
    // is a fixed function of the number of calls
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace modfuser
