// Copyright 2026 the cuside authors
// Enhancement quality metrics: SI-SDR and power/SNR measurement.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "cuside/common.hpp"

namespace cuside::metrics {

inline Real signal_power(const std::vector<Real>& x, size_t begin = 0, size_t end = 0) {
    if (end == 0) end = x.size();
    require(begin <= end && end <= x.size(), "signal_power: bad range");
    Real p = 0.0;
    for (size_t i = begin; i < end; ++i) p += x[i] * x[i];
    const size_t n = end - begin;
    return n > 0 ? p / static_cast<Real>(n) : 0.0;
}

inline Real snr_db(const std::vector<Real>& signal, const std::vector<Real>& noise) {
    const Real ps = signal_power(signal);
    const Real pn = signal_power(noise);
    require(ps > 0 && pn > 0, "snr_db: zero-power input");
    return 10.0 * std::log10(ps / pn);
}

// Scale-invariant signal-to-distortion ratio of estimate vs reference,
// computed over [begin, end) (defaults to the whole signal).
inline Real si_sdr_db(const std::vector<Real>& estimate, const std::vector<Real>& reference,
                      size_t begin = 0, size_t end = 0) {
    require(estimate.size() == reference.size(), "si_sdr: length mismatch");
    if (end == 0) end = reference.size();
    require(begin < end && end <= reference.size(), "si_sdr: bad range");

    Real dot = 0.0, ref_energy = 0.0;
    for (size_t i = begin; i < end; ++i) {
        dot += estimate[i] * reference[i];
        ref_energy += reference[i] * reference[i];
    }
    require(ref_energy > 0, "si_sdr: zero-energy reference");
    const Real alpha = dot / ref_energy;

    Real target_energy = 0.0, error_energy = 0.0;
    for (size_t i = begin; i < end; ++i) {
        const Real s = alpha * reference[i];
        const Real e = estimate[i] - s;
        target_energy += s * s;
        error_energy += e * e;
    }
    require(error_energy >= 0, "si_sdr: negative error energy");
    if (error_energy == 0.0) return std::numeric_limits<Real>::infinity();
    return 10.0 * std::log10(target_energy / error_energy);
}

}  // namespace cuside::metrics
