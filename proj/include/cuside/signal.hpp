// Copyright 2026 the cuside authors
// STFT / iSTFT, mel filterbank and log-Fbank features.
//
// Frame t covers samples [t*hop, t*hop + window_size). The frame count is
// floor((len - window_size)/hop) + 1 full frames, plus one zero-padded tail
// frame when hop does not divide (len - window_size), so every sample is
// covered. Synthesis uses weighted overlap-add normalized by the squared
// window envelope, which reconstructs exactly wherever the envelope is
// positive regardless of the hop.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <complex>
#include <vector>

#include "cuside/common.hpp"
#include "cuside/fft.hpp"
#include "cuside/wav.hpp"

namespace cuside::signal {

using Cplx = std::complex<Real>;

enum class WindowKind { Hann, Rectangular };

struct StftConfig {
    size_t fft_size = 512;
    size_t window_size = 512;
    size_t hop = 160;  // 10 ms at 16 kHz
    WindowKind window = WindowKind::Hann;

    size_t num_bins() const { return fft_size / 2 + 1; }

    void validate() const {
        require(fft::is_pow2(fft_size), "StftConfig: fft_size must be a power of two");
        require(window_size <= fft_size, "StftConfig: window_size must be <= fft_size");
        require(hop >= 1 && hop <= window_size, "StftConfig: hop must be in [1, window_size]");
    }
};

inline std::vector<Real> make_window(const StftConfig& cfg) {
    std::vector<Real> w(cfg.window_size, 1.0);
    if (cfg.window == WindowKind::Hann) {
        // periodic Hann
        for (size_t n = 0; n < cfg.window_size; ++n)
            w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<Real>(n) /
                                        static_cast<Real>(cfg.window_size));
    }
    return w;
}

// Squared-window overlap envelope for num_frames frames at the given length.
inline std::vector<Real> overlap_envelope(const StftConfig& cfg, size_t num_frames, size_t length) {
    const auto w = make_window(cfg);
    std::vector<Real> env(length, 0.0);
    for (size_t t = 0; t < num_frames; ++t) {
        const size_t start = t * cfg.hop;
        for (size_t n = 0; n < cfg.window_size && start + n < length; ++n)
            env[start + n] += w[n] * w[n];
    }
    return env;
}

// A window/hop pair is usable when the squared-window envelope stays away
// from zero over the fully-overlapped interior (the overlap-add condition
// checked numerically).
inline bool overlap_add_ok(const StftConfig& cfg) {
    const size_t frames = 8 * (cfg.window_size / cfg.hop + 1);
    const size_t len = (frames - 1) * cfg.hop + cfg.window_size;
    const auto env = overlap_envelope(cfg, frames, len);
    Real lo = std::numeric_limits<Real>::max();
    for (size_t n = cfg.window_size; n + cfg.window_size < len; ++n) lo = std::min(lo, env[n]);
    return lo > 1e-6;
}

struct MultiChannelSpectrogram {
    // data[channel][frame*num_bins + bin]
    std::vector<std::vector<Cplx>> data;
    size_t num_frames = 0;
    StftConfig config;

    size_t num_channels() const { return data.size(); }
    size_t num_bins() const { return config.num_bins(); }

    Cplx at(size_t ch, size_t t, size_t k) const { return data[ch][t * num_bins() + k]; }
    Cplx& at(size_t ch, size_t t, size_t k) { return data[ch][t * num_bins() + k]; }
};

inline size_t stft_num_frames(size_t length, const StftConfig& cfg) {
    require(length >= cfg.window_size, "stft: input too short");
    size_t full = (length - cfg.window_size) / cfg.hop + 1;
    if ((length - cfg.window_size) % cfg.hop != 0) full += 1;  // zero-padded tail frame
    return full;
}

inline MultiChannelSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
    cfg.validate();
    wave.validate();
    require(wave.num_samples() >= cfg.window_size, "stft: input too short");

    const size_t frames = stft_num_frames(wave.num_samples(), cfg);
    const size_t bins = cfg.num_bins();
    const auto win = make_window(cfg);

    MultiChannelSpectrogram spec;
    spec.config = cfg;
    spec.num_frames = frames;
    spec.data.assign(wave.num_channels(), std::vector<Cplx>(frames * bins));

    std::vector<Real> buf(cfg.fft_size);
    for (size_t c = 0; c < wave.num_channels(); ++c) {
        const auto& x = wave.samples[c];
        for (size_t t = 0; t < frames; ++t) {
            const size_t start = t * cfg.hop;
            std::fill(buf.begin(), buf.end(), 0.0);
            for (size_t n = 0; n < cfg.window_size; ++n) {
                const size_t idx = start + n;
                if (idx < x.size()) buf[n] = x[idx] * win[n];
            }
            auto half = fft::rfft(buf);
            std::copy(half.begin(), half.end(), spec.data[c].begin() + static_cast<long>(t * bins));
        }
    }
    return spec;
}

inline Waveform istft(const MultiChannelSpectrogram& spec, int sample_rate = 16000,
                      size_t trim_length = 0) {
    const StftConfig& cfg = spec.config;
    cfg.validate();
    require(overlap_add_ok(cfg), "istft: window/hop pair does not satisfy overlap-add");
    require(spec.num_frames >= 1, "istft: empty spectrogram");

    const size_t bins = cfg.num_bins();
    const size_t full_len = (spec.num_frames - 1) * cfg.hop + cfg.window_size;
    const auto win = make_window(cfg);
    const auto env = overlap_envelope(cfg, spec.num_frames, full_len);

    Waveform out;
    out.sample_rate = sample_rate;
    out.samples.assign(spec.num_channels(), std::vector<Real>(full_len, 0.0));

    std::vector<Cplx> half(bins);
    for (size_t c = 0; c < spec.num_channels(); ++c) {
        auto& y = out.samples[c];
        for (size_t t = 0; t < spec.num_frames; ++t) {
            std::copy(spec.data[c].begin() + static_cast<long>(t * bins),
                      spec.data[c].begin() + static_cast<long>((t + 1) * bins), half.begin());
            auto frame = fft::irfft(half, cfg.fft_size);
            const size_t start = t * cfg.hop;
            for (size_t n = 0; n < cfg.window_size; ++n) y[start + n] += frame[n] * win[n];
        }
        for (size_t n = 0; n < full_len; ++n) y[n] = env[n] > 1e-12 ? y[n] / env[n] : 0.0;
        if (trim_length > 0 && trim_length <= full_len) y.resize(trim_length);
    }
    return out;
}

// Triangular mel filters, HTK mel scale, spanning 0 to Nyquist.
// Returned matrix is [mel_bins][num_bins].
inline std::vector<std::vector<Real>> mel_filterbank(size_t num_bins, size_t mel_bins,
                                                     int sample_rate) {
    require(mel_bins >= 1, "mel_filterbank: need at least one filter");
    require(mel_bins <= num_bins, "mel_filterbank: more filters than FFT bins");

    auto hz_to_mel = [](Real f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto mel_to_hz = [](Real m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

    const Real nyquist = static_cast<Real>(sample_rate) / 2.0;
    const Real mel_max = hz_to_mel(nyquist);
    std::vector<Real> edges(mel_bins + 2);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_max * static_cast<Real>(i) / static_cast<Real>(mel_bins + 1));

    const Real bin_hz = nyquist / static_cast<Real>(num_bins - 1);
    std::vector<std::vector<Real>> fb(mel_bins, std::vector<Real>(num_bins, 0.0));
    for (size_t m = 0; m < mel_bins; ++m) {
        const Real lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (size_t k = 0; k < num_bins; ++k) {
            const Real f = bin_hz * static_cast<Real>(k);
            if (f > lo && f <= mid)
                fb[m][k] = (f - lo) / (mid - lo);
            else if (f > mid && f < hi)
                fb[m][k] = (hi - f) / (hi - mid);
        }
        Real sum = 0.0;
        for (Real v : fb[m]) sum += v;
        require(sum > 0.0, "mel_filterbank: filter " + std::to_string(m) + " covers no bin");
    }
    return fb;
}

// Peak (center) frequencies of the filters above, strictly increasing.
inline std::vector<Real> mel_filter_centers(size_t mel_bins, int sample_rate) {
    auto hz_to_mel = [](Real f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto mel_to_hz = [](Real m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const Real mel_max = hz_to_mel(static_cast<Real>(sample_rate) / 2.0);
    std::vector<Real> centers(mel_bins);
    for (size_t m = 0; m < mel_bins; ++m)
        centers[m] = mel_to_hz(mel_max * static_cast<Real>(m + 1) / static_cast<Real>(mel_bins + 1));
    return centers;
}

constexpr Real kLogFloor = 1e-10;  // floor on mel-domain power

struct FbankFeatures {
    std::vector<std::vector<Real>> data;  // [frame][mel_bin]
    Real floor = kLogFloor;

    size_t num_frames() const { return data.size(); }
    size_t num_mels() const { return data.empty() ? 0 : data[0].size(); }
};

// out[t][m] = log(max(floor, sum_k fb[m][k] |X[t][k]|^2))
inline FbankFeatures logfbank(const MultiChannelSpectrogram& spec, size_t channel,
                              const std::vector<std::vector<Real>>& fb, Real floor = kLogFloor) {
    require(channel < spec.num_channels(), "logfbank: channel out of range");
    const size_t bins = spec.num_bins();
    require(!fb.empty() && fb[0].size() == bins, "logfbank: filterbank shape mismatch");

    FbankFeatures out;
    out.floor = floor;
    out.data.assign(spec.num_frames, std::vector<Real>(fb.size(), 0.0));
    std::vector<Real> power(bins);
    for (size_t t = 0; t < spec.num_frames; ++t) {
        for (size_t k = 0; k < bins; ++k) power[k] = std::norm(spec.at(channel, t, k));
        for (size_t m = 0; m < fb.size(); ++m) {
            Real acc = 0.0;
            for (size_t k = 0; k < bins; ++k) acc += fb[m][k] * power[k];
            out.data[t][m] = std::log(std::max(floor, acc));
        }
    }
    return out;
}

// Same mapping applied to a precomputed power matrix [frame][bin].
inline std::vector<std::vector<Real>> logfbank_power(const std::vector<std::vector<Real>>& power,
                                                     const std::vector<std::vector<Real>>& fb,
                                                     Real floor = kLogFloor) {
    std::vector<std::vector<Real>> out(power.size(), std::vector<Real>(fb.size(), 0.0));
    for (size_t t = 0; t < power.size(); ++t) {
        require(power[t].size() == fb[0].size(), "logfbank_power: bin mismatch");
        for (size_t m = 0; m < fb.size(); ++m) {
            Real acc = 0.0;
            for (size_t k = 0; k < power[t].size(); ++k) acc += fb[m][k] * power[t][k];
            out[t][m] = std::log(std::max(floor, acc));
        }
    }
    return out;
}

}  // namespace cuside::signal
