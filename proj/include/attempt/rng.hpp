#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "attempt/util.hpp"

namespace attempt {

// Deterministic random source. All sampling is implemented on top of raw
// mt19937_64 output so that draws are identical across standard libraries
// and platforms (std::uniform_*_distribution makes no such guarantee).
class Rng {
public:
    explicit Rng(uint64_t seed) : root_seed_(seed), gen_(mix(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // [0, n). n must be > 0. Multiply-shift bounded draw.
    size_t bounded(size_t n) {
        if (n == 0) fail("Rng::bounded: n must be > 0");
        return static_cast<size_t>((static_cast<__uint128_t>(gen_()) * n) >> 64);
    }

    // Standard normal via Box-Muller; one pair drawn per call, second half discarded.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = bounded(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream derived from the root seed and a tag. Does not
    // consume state from this generator.
    Rng child(std::string_view tag) const {
        return Rng(fnv1a64(tag, root_seed_ ^ 0x9e3779b97f4a7c15ull));
    }

    uint64_t root_seed() const { return root_seed_; }

private:
    // splitmix64 scrambling so nearby seeds give unrelated streams.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t root_seed_;
    std::mt19937_64 gen_;
};

}  // namespace attempt
