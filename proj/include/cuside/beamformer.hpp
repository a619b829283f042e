// Copyright 2026 the cuside authors
// Mask-based MVDR front-end. Spatial covariances are mask-weighted outer
// products per frequency bin; weights use the reference-channel closed form
//   w[k] = (PhiN'^{-1} PhiS u) / tr(PhiN'^{-1} PhiS),
// with diagonal loading PhiN' = PhiN + eps (tr PhiN / M) I. The enhancement
// chain is also available as a single autodiff node differentiable in the
// masks, so the ASR loss trains the mask estimator end to end.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <complex>
#include <memory>
#include <vector>

#include "cuside/chunking.hpp"
#include "cuside/complexmat.hpp"
#include "cuside/neural.hpp"
#include "cuside/signal.hpp"

namespace cuside::beamformer {

using Cplx = std::complex<Real>;
using cxmat::CMat;
using neural::Mat;
using neural::Var;

constexpr Real kLogMagFloor = 1e-10;

// Multichannel complex frames for one context-sensitive chunk, [t][m][k].
struct ChunkSpectra {
    size_t frames = 0, mics = 0, bins = 0;
    std::vector<Cplx> data;

    ChunkSpectra() = default;
    ChunkSpectra(size_t t, size_t m, size_t k)
        : frames(t), mics(m), bins(k), data(t * m * k, Cplx(0, 0)) {}

    Cplx& at(size_t t, size_t m, size_t k) { return data[(t * mics + m) * bins + k]; }
    Cplx at(size_t t, size_t m, size_t k) const { return data[(t * mics + m) * bins + k]; }
};

// Splice a context-sensitive chunk out of a spectrogram; padded frames are zero.
inline ChunkSpectra extract_chunk_spectra(const signal::MultiChannelSpectrogram& spec,
                                          const chunking::ChunkDescriptor& d) {
    require(d.right_ctx_end <= spec.num_frames, "extract_chunk_spectra: descriptor out of range");
    ChunkSpectra out(d.spliced_len(), spec.num_channels(), spec.num_bins());
    for (size_t t = d.left_ctx_start; t < d.right_ctx_end; ++t) {
        const size_t row = d.left_pad + (t - d.left_ctx_start);
        for (size_t m = 0; m < out.mics; ++m)
            for (size_t k = 0; k < out.bins; ++k) out.at(row, m, k) = spec.at(m, t, k);
    }
    return out;
}

inline ChunkSpectra whole_utterance_spectra(const signal::MultiChannelSpectrogram& spec) {
    chunking::ChunkDescriptor d;
    d.core_start = 0;
    d.core_end = spec.num_frames;
    d.left_ctx_start = 0;
    d.right_ctx_end = spec.num_frames;
    return extract_chunk_spectra(spec, d);
}

// Mask-network input: log-magnitude of the reference channel.
inline Mat log_magnitude(const ChunkSpectra& chunk, size_t ref) {
    require(ref < chunk.mics, "log_magnitude: bad reference channel");
    Mat out(chunk.frames, chunk.bins);
    for (size_t t = 0; t < chunk.frames; ++t)
        for (size_t k = 0; k < chunk.bins; ++k)
            out.at(t, k) = std::log(std::max(kLogMagFloor, std::abs(chunk.at(t, ref, k))));
    return out;
}

struct TimeFrequencyMask {
    Mat values;  // [frame][bin] in [0, 1]

    void validate() const {
        for (Real v : values.v)
            require(v >= 0.0 && v <= 1.0, "TimeFrequencyMask: value outside [0, 1]");
    }
};

struct SpatialCovariance {
    size_t bins = 0, mics = 0;
    std::vector<Cplx> m;  // (k*mics + i)*mics + j

    SpatialCovariance() = default;
    SpatialCovariance(size_t k, size_t mm) : bins(k), mics(mm), m(k * mm * mm, Cplx(0, 0)) {}

    Cplx& at(size_t k, size_t i, size_t j) { return m[(k * mics + i) * mics + j]; }
    Cplx at(size_t k, size_t i, size_t j) const { return m[(k * mics + i) * mics + j]; }

    void bin_into(size_t k, CMat& out) const {
        if (out.n != mics) out = CMat(mics);
        for (size_t i = 0; i < mics; ++i)
            for (size_t j = 0; j < mics; ++j) out.at(i, j) = at(k, i, j);
    }

    CMat bin(size_t k) const {
        CMat out(mics);
        bin_into(k, out);
        return out;
    }

    void set_bin(size_t k, const CMat& b) {
        for (size_t i = 0; i < mics; ++i)
            for (size_t j = 0; j < mics; ++j) at(k, i, j) = b.at(i, j);
    }
};

struct ScmStats {
    size_t zero_mask_bins = 0;  // bins that fell back to the unweighted mean
};

// Phi[k] = sum_t m[t][k] x_t x_t^H / sum_t m[t][k], Hermitian-symmetrized.
// An all-zero mask column falls back to the unweighted average and bumps the
// warning counter.
inline SpatialCovariance estimate_scm(const ChunkSpectra& chunk, const Mat& mask,
                                      ScmStats* stats = nullptr) {
    require(mask.rows == chunk.frames && mask.cols == chunk.bins,
            "estimate_scm: mask shape mismatch");
    const size_t M = chunk.mics;
    SpatialCovariance phi(chunk.bins, M);
    std::vector<Cplx> x(M);
    for (size_t k = 0; k < chunk.bins; ++k) {
        Real wsum = 0.0;
        for (size_t t = 0; t < chunk.frames; ++t) wsum += mask.at(t, k);
        const bool fallback = wsum <= 0.0;
        if (fallback && stats) ++stats->zero_mask_bins;
        const Real denom = fallback ? static_cast<Real>(chunk.frames) : wsum;
        for (size_t t = 0; t < chunk.frames; ++t) {
            const Real w = fallback ? 1.0 : mask.at(t, k);
            if (w == 0.0) continue;
            for (size_t m = 0; m < M; ++m) x[m] = chunk.at(t, m, k);
            for (size_t i = 0; i < M; ++i)
                for (size_t j = 0; j < M; ++j) phi.at(k, i, j) += w * x[i] * std::conj(x[j]);
        }
        for (size_t i = 0; i < M; ++i)
            for (size_t j = 0; j < M; ++j) phi.at(k, i, j) /= denom;
        CMat b = phi.bin(k);
        cxmat::hermitian_symmetrize(b);
        phi.set_bin(k, b);
    }
    return phi;
}

struct MvdrConfig {
    size_t reference_channel = 0;
    Real diagonal_loading = 1e-6;  // relative to tr(PhiN)/M
};

struct MvdrWeights {
    size_t bins = 0, mics = 0;
    std::vector<Cplx> w;  // k*mics + m

    MvdrWeights() = default;
    MvdrWeights(size_t k, size_t m) : bins(k), mics(m), w(k * m, Cplx(0, 0)) {}
    Cplx& at(size_t k, size_t m) { return w[k * mics + m]; }
    Cplx at(size_t k, size_t m) const { return w[k * mics + m]; }
};

// Per-bin intermediates kept for the differentiable enhancement node.
struct MvdrInternals {
    std::vector<CMat> inv_noise;  // B = PhiN'^{-1}
    std::vector<CMat> ratio;      // A = B PhiS
    std::vector<Cplx> tau;        // tr(A)
};

inline MvdrWeights mvdr_weights(const SpatialCovariance& phi_s, const SpatialCovariance& phi_n,
                                const MvdrConfig& cfg, MvdrInternals* internals = nullptr) {
    require(phi_s.bins == phi_n.bins && phi_s.mics == phi_n.mics,
            "mvdr_weights: covariance shape mismatch");
    const size_t M = phi_s.mics;
    require(cfg.reference_channel < M, "mvdr_weights: bad reference channel");
    require(cfg.diagonal_loading >= 0.0, "mvdr_weights: negative loading");

    MvdrWeights weights(phi_s.bins, M);
    if (internals) {
        internals->inv_noise.resize(phi_s.bins);
        internals->ratio.resize(phi_s.bins);
        internals->tau.resize(phi_s.bins);
    }
    CMat noise(M), speech(M), inv(M), ratio(M);
    for (size_t k = 0; k < phi_s.bins; ++k) {
        phi_n.bin_into(k, noise);
        const Real load = cfg.diagonal_loading * trace(noise).real() / static_cast<Real>(M);
        for (size_t i = 0; i < M; ++i) noise.at(i, i) += load;

        try {
            cxmat::invert_in_place(noise, inv);
        } catch (const std::exception&) {
            fail("mvdr_weights: singular noise covariance at bin " + std::to_string(k));
        }
        phi_s.bin_into(k, speech);
        cxmat::matmul_into(inv, speech, ratio);
        const Cplx tau = cxmat::trace(ratio);
        for (size_t m = 0; m < M; ++m) {
            const Cplx wm = ratio.at(m, cfg.reference_channel) / tau;
            if (!std::isfinite(wm.real()) || !std::isfinite(wm.imag()))
                fail("mvdr_weights: non-finite weight at bin " + std::to_string(k));
            weights.at(k, m) = wm;
        }
        if (internals) {
            internals->inv_noise[k] = inv;
            internals->ratio[k] = ratio;
            internals->tau[k] = tau;
        }
    }
    return weights;
}

struct EnhancedSpectra {
    size_t frames = 0, bins = 0;
    std::vector<Cplx> data;  // t*bins + k

    EnhancedSpectra() = default;
    EnhancedSpectra(size_t t, size_t k) : frames(t), bins(k), data(t * k, Cplx(0, 0)) {}
    Cplx& at(size_t t, size_t k) { return data[t * bins + k]; }
    Cplx at(size_t t, size_t k) const { return data[t * bins + k]; }
};

// y[t][k] = w[k]^H x_t[k]
inline EnhancedSpectra apply_beamformer(const MvdrWeights& weights, const ChunkSpectra& chunk) {
    require(weights.bins == chunk.bins && weights.mics == chunk.mics,
            "apply_beamformer: shape mismatch");
    EnhancedSpectra out(chunk.frames, chunk.bins);
    for (size_t t = 0; t < chunk.frames; ++t)
        for (size_t k = 0; k < chunk.bins; ++k) {
            Cplx acc(0, 0);
            for (size_t m = 0; m < chunk.mics; ++m)
                acc += std::conj(weights.at(k, m)) * chunk.at(t, m, k);
            out.at(t, k) = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Mask estimation network: BLSTM stack over the chunk, two sigmoid heads.

struct MaskNetConfig {
    size_t layers = 3;
    size_t hidden = 320;  // per direction
    Real dropout = 0.5;
    size_t num_bins = 257;

    std::string arch_string() const {
        return "masknet(layers=" + std::to_string(layers) + ",hidden=" + std::to_string(hidden) +
               ",bins=" + std::to_string(num_bins) + ")";
    }
};

struct MaskNet {
    MaskNetConfig cfg;

    static void init_params(neural::ModelParams& p, const MaskNetConfig& cfg, Rng& rng) {
        size_t in = cfg.num_bins;
        for (size_t l = 0; l < cfg.layers; ++l) {
            const std::string base = "masknet.l" + std::to_string(l);
            neural::init_lstm_dir(p, base + ".f", in, cfg.hidden, rng);
            neural::init_lstm_dir(p, base + ".b", in, cfg.hidden, rng);
            in = 2 * cfg.hidden;
        }
        neural::Linear::init(p, "masknet.head_s", in, cfg.num_bins, rng);
        neural::Linear::init(p, "masknet.head_n", in, cfg.num_bins, rng);
    }

    // features: [T][num_bins] log-magnitude. Returns (speech_mask, noise_mask)
    // in (0,1); the bidirectional recursion never crosses the chunk.
    std::pair<Var, Var> forward(const neural::ModelParams& p, const Var& features, bool train,
                                Rng* rng) const {
        require(features->value.cols == cfg.num_bins, "mask net: feature width mismatch");
        Var h = features;
        for (size_t l = 0; l < cfg.layers; ++l) {
            const std::string base = "masknet.l" + std::to_string(l);
            h = neural::blstm(h, neural::lstm_dir(p, base + ".f"), neural::lstm_dir(p, base + ".b"));
            if (train && cfg.dropout > 0.0) {
                require(rng != nullptr, "mask net: train mode needs an RNG");
                h = neural::dropout(h, cfg.dropout, *rng, true);
            }
        }
        auto speech = neural::sigmoid(neural::Linear(p, "masknet.head_s").forward(h));
        auto noise = neural::sigmoid(neural::Linear(p, "masknet.head_n").forward(h));
        return {speech, noise};
    }
};

// ---------------------------------------------------------------------------
// Plain (inference) chunk enhancement

struct EnhanceResult {
    EnhancedSpectra frames;  // all spliced frames, context included
    size_t core_offset = 0;  // index map: core rows are [core_offset, core_offset + core_len)
    size_t core_len = 0;
    ScmStats stats;
};

inline EnhanceResult enhance_chunk_with_masks(const ChunkSpectra& chunk, const Mat& speech_mask,
                                              const Mat& noise_mask, const MvdrConfig& cfg,
                                              size_t core_offset, size_t core_len) {
    EnhanceResult out;
    auto phi_s = estimate_scm(chunk, speech_mask, &out.stats);
    auto phi_n = estimate_scm(chunk, noise_mask, &out.stats);
    auto weights = mvdr_weights(phi_s, phi_n, cfg);
    out.frames = apply_beamformer(weights, chunk);
    out.core_offset = core_offset;
    out.core_len = core_len;
    return out;
}

// Mask net -> SCMs -> MVDR -> filter, over one context-sensitive chunk.
inline EnhanceResult enhance_chunk(const ChunkSpectra& chunk, const neural::ModelParams& params,
                                   const MaskNet& net, const MvdrConfig& cfg, size_t core_offset,
                                   size_t core_len) {
    auto features = neural::constant(log_magnitude(chunk, cfg.reference_channel));
    auto [speech, noise] = net.forward(params, features, false, nullptr);
    return enhance_chunk_with_masks(chunk, speech->value, noise->value, cfg, core_offset,
                                    core_len);
}

// ---------------------------------------------------------------------------
// Differentiable enhancement node.
//
// Output is the per-frame enhanced power |y|^2 (what the fbank front-end
// consumes); gradients flow into both masks through the SCMs, the loaded
// inverse, the trace normalization and the filter. The multichannel input is
// a constant. Complex spectra are exposed as a side product for audio export.

struct MvdrEnhanceOut {
    Var power;  // [T][K]
    std::shared_ptr<EnhancedSpectra> complex_frames;
    ScmStats stats;
};

inline MvdrEnhanceOut mvdr_enhance_node(const Var& speech_mask, const Var& noise_mask,
                                        std::shared_ptr<const ChunkSpectra> chunk,
                                        const MvdrConfig& cfg) {
    const size_t T = chunk->frames, M = chunk->mics, K = chunk->bins;
    require(speech_mask->value.rows == T && speech_mask->value.cols == K,
            "mvdr_enhance_node: speech mask shape mismatch");
    require(noise_mask->value.rows == T && noise_mask->value.cols == K,
            "mvdr_enhance_node: noise mask shape mismatch");

    MvdrEnhanceOut out;
    auto phi_s = std::make_shared<SpatialCovariance>(estimate_scm(*chunk, speech_mask->value,
                                                                  &out.stats));
    auto phi_n = std::make_shared<SpatialCovariance>(estimate_scm(*chunk, noise_mask->value,
                                                                  &out.stats));
    auto internals = std::make_shared<MvdrInternals>();
    auto weights = std::make_shared<MvdrWeights>(mvdr_weights(*phi_s, *phi_n, cfg, internals.get()));
    out.complex_frames = std::make_shared<EnhancedSpectra>(apply_beamformer(*weights, *chunk));

    Mat power(T, K);
    for (size_t t = 0; t < T; ++t)
        for (size_t k = 0; k < K; ++k) power.at(t, k) = std::norm(out.complex_frames->at(t, k));

    auto enhanced = out.complex_frames;
    auto node = neural::make_node(
        std::move(power), {speech_mask, noise_mask},
        [speech_mask, noise_mask, chunk, phi_s, phi_n, internals, weights, enhanced, cfg, T, M,
         K](neural::Node& n) {
            const Real eps = cfg.diagonal_loading;
            const size_t ref = cfg.reference_channel;
            std::vector<Cplx> g_w(M), g_A((M * M)), x(M), gx(M);
            for (size_t k = 0; k < K; ++k) {
                // d|y|^2 -> packed complex adjoint of y, then of w
                std::fill(g_w.begin(), g_w.end(), Cplx(0, 0));
                for (size_t t = 0; t < T; ++t) {
                    const Real gp = n.grad.at(t, k);
                    if (gp == 0.0) continue;
                    const Cplx g_y = 2.0 * gp * enhanced->at(t, k);
                    for (size_t m = 0; m < M; ++m)
                        g_w[m] += std::conj(g_y) * chunk->at(t, m, k);
                }
                bool any = false;
                for (const auto& v : g_w) any = any || v != Cplx(0, 0);
                if (!any) continue;

                const CMat& B = internals->inv_noise[k];
                const CMat& A = internals->ratio[k];
                const Cplx h = Cplx(1, 0) / internals->tau[k];

                // w = A u / tau
                Cplx g_h(0, 0);
                std::fill(g_A.begin(), g_A.end(), Cplx(0, 0));
                for (size_t m = 0; m < M; ++m) {
                    g_h += g_w[m] * std::conj(A.at(m, ref));
                    g_A[m * M + ref] += g_w[m] * std::conj(h);
                }
                const Cplx g_tau = -g_h * std::conj(h) * std::conj(h);
                for (size_t m = 0; m < M; ++m) g_A[m * M + m] += g_tau;

                // A = B PhiS
                CMat gA(M);
                for (size_t i = 0; i < M; ++i)
                    for (size_t j = 0; j < M; ++j) gA.at(i, j) = g_A[i * M + j];
                CMat Bh = cxmat::conj_transpose(B);
                CMat G_S = cxmat::matmul(Bh, gA);
                CMat phiS_h(M);
                for (size_t i = 0; i < M; ++i)
                    for (size_t j = 0; j < M; ++j)
                        phiS_h.at(i, j) = std::conj(phi_s->at(k, j, i));
                CMat g_B = cxmat::matmul(gA, phiS_h);

                // B = PhiN'^{-1}
                CMat G_Np = cxmat::matmul(cxmat::matmul(Bh, g_B), Bh);
                for (auto& v : G_Np.a) v = -v;

                // PhiN' = PhiN + eps tr(PhiN)/M I
                Real g_delta = 0.0;
                for (size_t m = 0; m < M; ++m) g_delta += G_Np.at(m, m).real();
                CMat G_N = G_Np;
                const Real diag_add = eps / static_cast<Real>(M) * g_delta;
                for (size_t m = 0; m < M; ++m) G_N.at(m, m) += Cplx(diag_add, 0);

                // PhiS = sum_t s_t x x^H / sum_t s_t (same for noise)
                auto mask_grads = [&](const CMat& G, const SpatialCovariance& phi,
                                      const Var& mask_var) {
                    Real wsum = 0.0;
                    for (size_t t = 0; t < T; ++t) wsum += mask_var->value.at(t, k);
                    if (wsum <= 0.0) return;  // fallback bin: no mask gradient
                    Cplx inner(0, 0);
                    for (size_t i = 0; i < M; ++i)
                        for (size_t j = 0; j < M; ++j)
                            inner += std::conj(G.at(i, j)) * phi.at(k, i, j);
                    auto& g = mask_var->ensure_grad();
                    for (size_t t = 0; t < T; ++t) {
                        for (size_t m = 0; m < M; ++m) x[m] = chunk->at(t, m, k);
                        for (size_t i = 0; i < M; ++i) {
                            Cplx acc(0, 0);
                            for (size_t j = 0; j < M; ++j) acc += G.at(i, j) * x[j];
                            gx[i] = acc;
                        }
                        Cplx dot(0, 0);
                        for (size_t i = 0; i < M; ++i) dot += x[i] * std::conj(gx[i]);
                        g.at(t, k) += (dot.real() - inner.real()) / wsum;
                    }
                };
                if (speech_mask->requires_grad) mask_grads(G_S, *phi_s, speech_mask);
                if (noise_mask->requires_grad) mask_grads(G_N, *phi_n, noise_mask);
            }
        });
    out.power = node;
    return out;
}

}  // namespace cuside::beamformer
