#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dmi {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// bit-reproducible across platforms and standard library versions; the
// std:: distributions are implementation-defined and would break the
// run-manifest reproducibility contract.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) si = splitmix64(x);
    }

    // Derived stream: same master seed, different purpose tag.
    Rng stream(uint64_t tag) const {
        Rng r(0);
        uint64_t x = s_[0] ^ (tag * 0x9E3779B97F4A7C15ull);
        for (auto& si : r.s_) si = splitmix64(x);
        return r;
    }

    Rng stream(std::string_view tag) const { return stream(fnv1a(tag)); }

    uint64_t next() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n >= 1.
    int uniform_int(int n) {
        return static_cast<int>(static_cast<uint64_t>(uniform() * static_cast<double>(n)) % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (no cached spare, keeps stream state a
    // pure function of the number of draws).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    template <class T>
    void fill_normal(T* p, int64_t n, double mean = 0.0, double stddev = 1.0) {
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(mean + stddev * normal());
    }

    template <class T>
    void fill_uniform(T* p, int64_t n, double lo = 0.0, double hi = 1.0) {
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(lo + (hi - lo) * uniform());
    }

    // Fisher-Yates over [0, n) index vector.
    void shuffle(std::vector<int>& idx) {
        for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

}  // namespace dmi
