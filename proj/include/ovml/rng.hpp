#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ovml/tensor.hpp"

namespace ovml {

// FNV-1a, used for deriving per-name parameter seeds and content hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// SplitMix64 stream. Fixed algorithm and fill order so that seeds
// reproduce across platforms and language ports.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n must be positive");
        return next_u64() % n;
    }

    // Box-Muller; pairs are always consumed together so the stream
    // position is a pure function of how many values were drawn.
    void normal_pair(double& z0, double& z1) {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        z0 = r * std::cos(a);
        z1 = r * std::sin(a);
    }

    double normal() {
        double z0, z1;
        normal_pair(z0, z1);
        return z0;
    }

    // Fisher-Yates over indices, deterministic order.
    template <typename V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name) {
    Rng r(base ^ fnv1a64(name));
    return r.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    Rng r(base ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    return r.next_u64();
}

enum class InitScheme { normal_scaled, zeros, ones };

inline InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "normal_scaled") return InitScheme::normal_scaled;
    if (s == "zeros") return InitScheme::zeros;
    if (s == "ones") return InitScheme::ones;
    throw std::invalid_argument("unknown init scheme: " + s);
}

// Deterministic initialization: values are generated in row-major order
// from a SplitMix64 stream seeded only by `seed`. normal_scaled draws
// N(0, 1/last_dim), the usual 1/sqrt(fan_in) scaling.
template <typename T>
Tensor<T> seeded_init(std::vector<int> dims, std::uint64_t seed, InitScheme scheme) {
    Tensor<T> t(std::move(dims));
    switch (scheme) {
        case InitScheme::zeros:
            return t;
        case InitScheme::ones:
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = T(1);
            return t;
        case InitScheme::normal_scaled: {
            const int fan = t.dims().empty() ? 1 : t.dims().back();
            const double scale = 1.0 / std::sqrt(static_cast<double>(fan > 0 ? fan : 1));
            Rng rng(seed);
            std::size_t i = 0;
            while (i + 1 < t.numel()) {
                double z0, z1;
                rng.normal_pair(z0, z1);
                t[i++] = static_cast<T>(z0 * scale);
                t[i++] = static_cast<T>(z1 * scale);
            }
            if (i < t.numel()) {
                double z0, z1;
                rng.normal_pair(z0, z1);
                t[i] = static_cast<T>(z0 * scale);
            }
            return t;
        }
    }
    throw std::invalid_argument("unknown init scheme");
}

}  // namespace ovml
