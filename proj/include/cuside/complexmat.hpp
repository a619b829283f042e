// Copyright 2026 the cuside authors
// Small dense complex matrices for per-bin spatial covariance work:
// LU inverse with partial pivoting and a Jacobi eigenvalue bound.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <complex>
#include <vector>

#include "cuside/common.hpp"

namespace cuside::cxmat {

using Cplx = std::complex<Real>;

struct CMat {
    size_t n = 0;
    std::vector<Cplx> a;  // row-major n x n

    CMat() = default;
    explicit CMat(size_t dim) : n(dim), a(dim * dim, Cplx(0, 0)) {}

    Cplx& at(size_t i, size_t j) { return a[i * n + j]; }
    Cplx at(size_t i, size_t j) const { return a[i * n + j]; }

    static CMat identity(size_t dim) {
        CMat m(dim);
        for (size_t i = 0; i < dim; ++i) m.at(i, i) = Cplx(1, 0);
        return m;
    }
};

inline void matmul_into(const CMat& x, const CMat& y, CMat& out) {
    require(x.n == y.n, "cxmat: size mismatch");
    if (out.n != x.n) out = CMat(x.n);
    std::fill(out.a.begin(), out.a.end(), Cplx(0, 0));
    for (size_t i = 0; i < x.n; ++i)
        for (size_t k = 0; k < x.n; ++k) {
            const Cplx v = x.at(i, k);
            if (v == Cplx(0, 0)) continue;
            for (size_t j = 0; j < x.n; ++j) out.at(i, j) += v * y.at(k, j);
        }
}

inline CMat matmul(const CMat& x, const CMat& y) {
    CMat out(x.n);
    matmul_into(x, y, out);
    return out;
}

inline CMat conj_transpose(const CMat& x) {
    CMat out(x.n);
    for (size_t i = 0; i < x.n; ++i)
        for (size_t j = 0; j < x.n; ++j) out.at(i, j) = std::conj(x.at(j, i));
    return out;
}

inline Cplx trace(const CMat& x) {
    Cplx t(0, 0);
    for (size_t i = 0; i < x.n; ++i) t += x.at(i, i);
    return t;
}

inline void hermitian_symmetrize(CMat& x) {
    for (size_t i = 0; i < x.n; ++i) {
        for (size_t j = i; j < x.n; ++j) {
            const Cplx v = 0.5 * (x.at(i, j) + std::conj(x.at(j, i)));
            x.at(i, j) = v;
            x.at(j, i) = std::conj(v);
        }
    }
}

// LU with partial pivoting; `lu` is destroyed and `inv` receives the result.
// Throws when a pivot vanishes.
inline void invert_in_place(CMat& lu, CMat& inv, const std::string& context = "") {
    const size_t n = lu.n;
    if (inv.n != n) inv = CMat(n);
    std::fill(inv.a.begin(), inv.a.end(), Cplx(0, 0));
    for (size_t i = 0; i < n; ++i) inv.at(i, i) = Cplx(1, 0);

    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        Real best = std::abs(lu.at(col, col));
        for (size_t r = col + 1; r < n; ++r) {
            const Real cand = std::abs(lu.at(r, col));
            if (cand > best) {
                best = cand;
                pivot = r;
            }
        }
        if (!(best > 1e-300))
            fail("cxmat: singular matrix" + (context.empty() ? "" : " " + context));
        if (pivot != col) {
            for (size_t j = 0; j < n; ++j) {
                std::swap(lu.at(col, j), lu.at(pivot, j));
                std::swap(inv.at(col, j), inv.at(pivot, j));
            }
        }
        const Cplx d = lu.at(col, col);
        for (size_t j = 0; j < n; ++j) {
            lu.at(col, j) /= d;
            inv.at(col, j) /= d;
        }
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const Cplx f = lu.at(r, col);
            if (f == Cplx(0, 0)) continue;
            for (size_t j = 0; j < n; ++j) {
                lu.at(r, j) -= f * lu.at(col, j);
                inv.at(r, j) -= f * inv.at(col, j);
            }
        }
    }
}

inline CMat inverse(const CMat& x, const std::string& context = "") {
    CMat lu = x;
    CMat inv(x.n);
    invert_in_place(lu, inv, context);
    return inv;
}

// Smallest eigenvalue of a Hermitian matrix via the real 2n x 2n embedding
// [Re -Im; Im Re] and cyclic Jacobi sweeps.
inline Real hermitian_min_eig(const CMat& x) {
    const size_t n = x.n;
    const size_t m = 2 * n;
    std::vector<Real> a(m * m, 0.0);
    auto at = [&](size_t i, size_t j) -> Real& { return a[i * m + j]; };
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            at(i, j) = x.at(i, j).real();
            at(i, n + j) = -x.at(i, j).imag();
            at(n + i, j) = x.at(i, j).imag();
            at(n + i, n + j) = x.at(i, j).real();
        }
    for (int sweep = 0; sweep < 50; ++sweep) {
        Real off = 0.0;
        for (size_t p = 0; p < m; ++p)
            for (size_t q = p + 1; q < m; ++q) off += at(p, q) * at(p, q);
        if (off < 1e-24) break;
        for (size_t p = 0; p < m; ++p) {
            for (size_t q = p + 1; q < m; ++q) {
                if (std::abs(at(p, q)) < 1e-15) continue;
                const Real theta = 0.5 * std::atan2(2.0 * at(p, q), at(q, q) - at(p, p));
                const Real c = std::cos(theta), s = std::sin(theta);
                for (size_t k = 0; k < m; ++k) {
                    const Real akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < m; ++k) {
                    const Real apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    Real min_eig = at(0, 0);
    for (size_t i = 1; i < m; ++i) min_eig = std::min(min_eig, at(i, i));
    return min_eig;
}

}  // namespace cuside::cxmat
