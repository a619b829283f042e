// Copyright 2026 the cuside authors
// The shared chunk pipeline: model configuration bundle plus the graph
// builders for the whole-utterance branch and the chunked branch (front-end
// enhancement per context-sensitive chunk, stitched core power, log-Fbank,
// per-chunk back-end encoding with none/real/simulated right context, and
// the future-context simulation thread). Both training and streaming decode
// run through these builders, so offline and online paths agree bit for bit.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <chrono>
#include <memory>
#include <vector>

#include "cuside/asr.hpp"
#include "cuside/beamformer.hpp"
#include "cuside/chunking.hpp"
#include "cuside/signal.hpp"
#include "cuside/simulation.hpp"

namespace cuside::pipeline {

using beamformer::EnhancedSpectra;
using chunking::ChunkPlan;
using chunking::ContextMode;
using neural::Mat;
using neural::Var;

struct ModelConfig {
    signal::StftConfig stft;
    size_t mel_bins = 80;
    beamformer::MaskNetConfig mask_net;
    asr::EncoderConfig encoder;
    simulation::SimNetConfig sim;
    beamformer::MvdrConfig mvdr;
    size_t chunk_frames = 40;  // 400 ms at a 10 ms hop
    size_t left_frames = 80;   // 800 ms
    size_t right_frames = 40;  // 400 ms
    int sample_rate = 16000;

    void validate() const {
        stft.validate();
        require(mask_net.num_bins == stft.num_bins(), "ModelConfig: mask net bins != stft bins");
        require(encoder.input_dim == mel_bins, "ModelConfig: encoder input != mel bins");
        require(sim.input_dim == mel_bins, "ModelConfig: sim net input != mel bins");
        require(sim.right_frames == right_frames, "ModelConfig: sim output != right context");
        require(chunk_frames >= 1, "ModelConfig: chunk_frames must be >= 1");
    }

    std::string arch_string() const {
        return mask_net.arch_string() + ";" + encoder.arch_string() + ";" + sim.arch_string() +
               ";mel=" + std::to_string(mel_bins) + ";fft=" + std::to_string(stft.fft_size) +
               ";hop=" + std::to_string(stft.hop);
    }

    void init_params(neural::ModelParams& p, Rng& rng) const {
        validate();
        p.arch_desc = arch_string();
        beamformer::MaskNet::init_params(p, mask_net, rng);
        asr::Encoder::init_params(p, encoder, rng);
        simulation::SimNet::init_params(p, sim, rng);
    }

    Real frame_ms() const {
        return 1000.0 * static_cast<Real>(stft.hop) / static_cast<Real>(sample_rate);
    }
};

// Mel filterbank transpose as a graph constant, [bins][mel].
inline Var make_fbank_constant(const ModelConfig& cfg) {
    auto fb = signal::mel_filterbank(cfg.stft.num_bins(), cfg.mel_bins, cfg.sample_rate);
    Mat fb_t(cfg.stft.num_bins(), cfg.mel_bins);
    for (size_t m = 0; m < cfg.mel_bins; ++m)
        for (size_t k = 0; k < cfg.stft.num_bins(); ++k) fb_t.at(k, m) = fb[m][k];
    return neural::constant(fb_t);
}

inline Var fbank_from_power(const Var& power, const Var& fb_t) {
    return neural::log_floor(neural::matmul(power, fb_t), signal::kLogFloor);
}

// Rows [a, b) of a [T][D] stream with zero rows outside the valid range.
inline Var gather_rows(const Var& stream, long a, long b) {
    const long T = static_cast<long>(stream->value.rows);
    const size_t D = stream->value.cols;
    require(a < b, "gather_rows: empty range");
    std::vector<Var> parts;
    if (a < 0) parts.push_back(neural::constant(Mat(static_cast<size_t>(-a), D)));
    const long lo = std::max<long>(a, 0), hi = std::min<long>(b, T);
    if (lo < hi)
        parts.push_back(neural::slice_rows(stream, static_cast<size_t>(lo), static_cast<size_t>(hi)));
    if (b > T) parts.push_back(neural::constant(Mat(static_cast<size_t>(b - T), D)));
    return parts.size() == 1 ? parts[0] : neural::concat_rows(parts);
}

inline Real elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Whole-utterance branch: no chunking anywhere.

struct WholeRun {
    Var fbank;   // [T][mel]
    Var logits;  // [T][V]
    std::shared_ptr<EnhancedSpectra> complex_frames;
    beamformer::ScmStats stats;
};

inline WholeRun run_whole(const neural::ModelParams& params, const ModelConfig& cfg,
                          const signal::MultiChannelSpectrogram& spec, const Var& fb_t,
                          bool train = false, Rng* rng = nullptr) {
    WholeRun out;
    auto chunk = std::make_shared<beamformer::ChunkSpectra>(beamformer::whole_utterance_spectra(spec));
    auto features = neural::constant(beamformer::log_magnitude(*chunk, cfg.mvdr.reference_channel));
    beamformer::MaskNet net{cfg.mask_net};
    auto [speech, noise] = net.forward(params, features, train, rng);
    auto enhanced = beamformer::mvdr_enhance_node(speech, noise, chunk, cfg.mvdr);
    out.stats = enhanced.stats;
    out.complex_frames = enhanced.complex_frames;
    out.fbank = fbank_from_power(enhanced.power, fb_t);
    out.logits = asr::Encoder{cfg.encoder}.forward(params, out.fbank);
    return out;
}

// ---------------------------------------------------------------------------
// Chunked branch.

struct ChunkedRun {
    ChunkPlan plan;
    Var fbank_stream;             // [T][mel], stitched core frames
    std::vector<Var> core_logits; // per chunk [core_len][V]
    std::vector<Var> sim_frames;  // per chunk [R][mel] when simulation ran
    Var l_simu;                   // masked L1 over all chunks, nullptr if !want_sim
    size_t sim_fully_masked = 0;
    beamformer::ScmStats scm_stats;
    // per-chunk enhanced complex core frames, for audio export
    std::vector<std::shared_ptr<EnhancedSpectra>> chunk_complex;
    std::vector<size_t> chunk_core_offset;
    // wall-clock per chunk (filled when timing == true)
    std::vector<Real> frontend_ms, sim_ms, backend_ms;
};

// Pass 1: per-chunk mask estimation + MVDR over the context-sensitive chunk
// (left context always, right context only when fe_use_right), keep core
// power rows, stitch, map to log-Fbank.
// Pass 2: per-chunk back-end with left context from the stitched stream and
// right context per be_mode; simulation thread runs over core frames in
// arrival order. Modes none/simulated never read past the current core.
inline ChunkedRun run_chunked(const neural::ModelParams& params, const ModelConfig& cfg,
                              const signal::MultiChannelSpectrogram& spec, const ChunkPlan& plan,
                              bool fe_use_right, ContextMode be_mode, bool want_sim,
                              const Var& fb_t, bool train = false, Rng* rng = nullptr,
                              bool timing = false, bool want_backend = true) {
    require(be_mode != ContextMode::Simulated || want_sim,
            "run_chunked: simulated context requires the simulation thread");
    ChunkedRun out;
    out.plan = plan;
    beamformer::MaskNet mask_net{cfg.mask_net};

    // front-end pass
    std::vector<Var> core_powers;
    for (const auto& d : plan.descriptors) {
        const auto t0 = std::chrono::steady_clock::now();
        auto fe_desc = d;
        if (!fe_use_right) {
            fe_desc.right_ctx_end = fe_desc.core_end;
            fe_desc.right_pad = 0;
        }
        auto chunk = std::make_shared<beamformer::ChunkSpectra>(
            beamformer::extract_chunk_spectra(spec, fe_desc));
        auto features =
            neural::constant(beamformer::log_magnitude(*chunk, cfg.mvdr.reference_channel));
        auto [speech, noise] = mask_net.forward(params, features, train, rng);
        auto enhanced = beamformer::mvdr_enhance_node(speech, noise, chunk, cfg.mvdr);
        out.scm_stats.zero_mask_bins += enhanced.stats.zero_mask_bins;
        const size_t off = fe_desc.core_offset();
        core_powers.push_back(neural::slice_rows(enhanced.power, off, off + d.core_len()));
        out.chunk_complex.push_back(enhanced.complex_frames);
        out.chunk_core_offset.push_back(off);
        if (timing) out.frontend_ms.push_back(elapsed_ms(t0));
    }
    auto power_stream =
        core_powers.size() == 1 ? core_powers[0] : neural::concat_rows(core_powers);
    out.fbank_stream = fbank_from_power(power_stream, fb_t);

    // back-end pass
    simulation::SimNet sim_net{cfg.sim};
    auto sim_state = sim_net.initial_state();
    asr::Encoder encoder{cfg.encoder};
    const size_t R = cfg.right_frames;
    const size_t mel = cfg.mel_bins;
    std::vector<Mat> sim_targets, sim_masks;

    for (const auto& d : plan.descriptors) {
        if (!want_backend && !want_sim) break;
        const long core_start = static_cast<long>(d.core_start);
        const long core_end = static_cast<long>(d.core_end);
        auto core_fbank = neural::slice_rows(out.fbank_stream, d.core_start, d.core_end);

        Var sim = nullptr;
        if (want_sim) {
            const auto t0 = std::chrono::steady_clock::now();
            auto [sim_out, next_state] = sim_net.forward(params, core_fbank, sim_state);
            sim = sim_out;
            sim_state = next_state;
            out.sim_frames.push_back(sim);
            if (timing) out.sim_ms.push_back(elapsed_ms(t0));

            // target: the frames that actually arrive next, zero-masked past the end
            Mat target(R, mel), mask(R, mel);
            const size_t T = out.fbank_stream->value.rows;
            for (size_t r = 0; r < R; ++r) {
                const size_t t = d.core_end + r;
                if (t >= T) continue;
                for (size_t mcol = 0; mcol < mel; ++mcol) {
                    target.at(r, mcol) = out.fbank_stream->value.at(t, mcol);
                    mask.at(r, mcol) = 1.0;
                }
            }
            sim_targets.push_back(std::move(target));
            sim_masks.push_back(std::move(mask));
        }

        if (!want_backend) continue;
        const auto t1 = std::chrono::steady_clock::now();
        std::vector<Var> parts;
        parts.push_back(gather_rows(out.fbank_stream, core_start - static_cast<long>(cfg.left_frames),
                                    core_start));
        parts.push_back(core_fbank);
        if (be_mode == ContextMode::Real)
            parts.push_back(gather_rows(out.fbank_stream, core_end, core_end + static_cast<long>(R)));
        else if (be_mode == ContextMode::Simulated)
            parts.push_back(sim);
        auto spliced = neural::concat_rows(parts);
        auto logits = encoder.forward(params, spliced);
        out.core_logits.push_back(
            neural::slice_rows(logits, cfg.left_frames, cfg.left_frames + d.core_len()));
        if (timing) out.backend_ms.push_back(elapsed_ms(t1));
    }

    if (want_sim) {
        // one masked L1 over every chunk's simulated block
        Mat target(sim_targets.size() * R, mel), mask(sim_targets.size() * R, mel);
        for (size_t i = 0; i < sim_targets.size(); ++i) {
            std::copy(sim_targets[i].v.begin(), sim_targets[i].v.end(),
                      target.v.begin() + static_cast<long>(i * R * mel));
            std::copy(sim_masks[i].v.begin(), sim_masks[i].v.end(),
                      mask.v.begin() + static_cast<long>(i * R * mel));
        }
        auto sims = out.sim_frames.size() == 1 ? out.sim_frames[0]
                                               : neural::concat_rows(out.sim_frames);
        out.l_simu = simulation::simulation_loss(sims, target, mask, &out.sim_fully_masked);
    }
    return out;
}

// Concatenated core logits for the chunk-branch CTC loss.
inline Var concat_core_logits(const ChunkedRun& run) {
    return run.core_logits.size() == 1 ? run.core_logits[0]
                                       : neural::concat_rows(run.core_logits);
}

}  // namespace cuside::pipeline
