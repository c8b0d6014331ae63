#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace histofuse {

/// Deterministic random source. Wraps std::mt19937 (whose output sequence is
/// fixed by the standard) and derives all variates itself, so streams are
/// bit-reproducible across standard-library implementations; the std
/// distribution classes are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
        : seed_(seed), gen_(static_cast<std::uint32_t>(mix(seed, 0x9e3779b97f4a7c15ULL))) {}

    std::uint32_t next_u32() { return gen_(); }

    /// Uniform in [0, 1) with 32-bit resolution.
    double uniform() { return static_cast<double>(next_u32()) * (1.0 / 4294967296.0); }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform index in [0, n). Rejection-sampled, unbiased. n must be > 0.
    std::size_t uniform_index(std::size_t n) {
        const std::uint32_t bound = static_cast<std::uint32_t>(n);
        const std::uint32_t limit = UINT32_MAX - UINT32_MAX % bound;
        std::uint32_t x;
        do {
            x = next_u32();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller, spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Fisher-Yates shuffle with this stream's index draws.
    template <typename V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Choose k distinct indices from [0, n), ascending (order-preserving
    /// subsampling).
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx);
        idx.resize(std::min(k, n));
        std::sort(idx.begin(), idx.end());
        return idx;
    }

    /// Derive an independent deterministic stream keyed on `stream`.
    /// Independent of how much this stream has already been consumed.
    Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

    /// FNV-1a, for keying substreams on strings without depending on
    /// std::hash (whose values are implementation-defined).
    static std::uint64_t stable_hash(const std::string& s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const unsigned char ch : s) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    /// splitmix64-style mixing, used to key substreams.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace histofuse
