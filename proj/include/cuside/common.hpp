// Copyright 2026 the cuside authors
// Shared basics: error helpers, deterministic RNG, finiteness checks.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cuside {

using Real = double;

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

inline bool is_finite(Real x) { return std::isfinite(x); }

inline bool all_finite(const std::vector<Real>& v) {
    for (Real x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// splitmix64, used to derive independent sub-seeds from one master seed
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_str(const std::string& s) {
    // FNV-1a
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG. All distribution code is our own so that draws are
// identical across standard-library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    Real next_real() {
        return static_cast<Real>(next_u64() >> 11) * 0x1.0p-53;
    }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * next_real(); }

    // unbiased uniform integer in [lo, hi] inclusive
    long uniform_int(long lo, long hi) {
        require(lo <= hi, "uniform_int: empty range");
        uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
        if (n == 0) return static_cast<long>(next_u64());  // full 64-bit range
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<long>(x % n);
    }

    // Box-Muller with cached spare
    Real normal(Real mean = 0.0, Real stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        Real u1, u2;
        do {
            u1 = next_real();
        } while (u1 <= 0.0);
        u2 = next_real();
        Real r = std::sqrt(-2.0 * std::log(u1));
        Real a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<long>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    Rng derive(uint64_t salt) const { return Rng(mix_seed(base_seed_snapshot(), salt)); }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << " " << (has_spare_ ? 1 : 0) << " " << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> eng_ >> hs >> spare_;
        require(!is.fail(), "Rng::deserialize: malformed state");
        has_spare_ = hs != 0;
    }

  private:
    // derive() is keyed on a hash of the engine state text, so derived
    // streams differ when the parent has advanced
    uint64_t base_seed_snapshot() const {
        std::ostringstream os;
        os << eng_;
        return hash_str(os.str());
    }

    std::mt19937_64 eng_;
    bool has_spare_ = false;
    Real spare_ = 0.0;
};

}  // namespace cuside
