// Copyright 2026 the cuside authors
// Iterative radix-2 FFT plus real-input helpers.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <complex>
#include <vector>

#include "cuside/common.hpp"

namespace cuside::fft {

using Cplx = std::complex<Real>;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative Cooley-Tukey, size must be a power of two.
inline void fft_inplace(std::vector<Cplx>& a, bool inverse) {
    const size_t n = a.size();
    require(is_pow2(n), "fft: size must be a power of two");
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const Real ang = 2.0 * M_PI / static_cast<Real>(len) * (inverse ? 1.0 : -1.0);
        const Cplx wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            Cplx w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                Cplx u = a[i + k];
                Cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const Real inv = 1.0 / static_cast<Real>(n);
        for (auto& x : a) x *= inv;
    }
}

inline std::vector<Cplx> fft(std::vector<Cplx> a) {
    fft_inplace(a, false);
    return a;
}

inline std::vector<Cplx> ifft(std::vector<Cplx> a) {
    fft_inplace(a, true);
    return a;
}

// Real-input transform; returns bins 0..n/2 (n/2+1 values).
inline std::vector<Cplx> rfft(const std::vector<Real>& x) {
    const size_t n = x.size();
    std::vector<Cplx> a(n);
    for (size_t i = 0; i < n; ++i) a[i] = Cplx(x[i], 0.0);
    fft_inplace(a, false);
    a.resize(n / 2 + 1);
    return a;
}

// Inverse of rfft: reconstructs the full conjugate-symmetric spectrum.
inline std::vector<Real> irfft(const std::vector<Cplx>& half, size_t n) {
    require(half.size() == n / 2 + 1, "irfft: bin count does not match fft size");
    std::vector<Cplx> a(n);
    for (size_t k = 0; k <= n / 2; ++k) a[k] = half[k];
    for (size_t k = n / 2 + 1; k < n; ++k) a[k] = std::conj(half[n - k]);
    fft_inplace(a, true);
    std::vector<Real> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
    return out;
}

}  // namespace cuside::fft
