// Copyright 2026 the cuside authors
// Streaming inference: consume audio chunk by chunk, run the front-end and
// back-end under a fixed right-context mode, emit append-only transcript
// deltas, and account latency as
//   algorithmic_latency_ms = chunk_ms + (right_ctx_ms if mode == real else 0)
// with measured compute reported separately. Modes none/simulated never read
// audio past the current core, so online and offline runs agree exactly.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <chrono>
#include <vector>

#include "cuside/metrics.hpp"
#include "cuside/pipeline.hpp"
#include "cuside/scene.hpp"

namespace cuside::streamer {

using chunking::ContextMode;
using neural::Mat;
using neural::Var;

struct StreamConfig {
    Real chunk_ms = 400.0;
    Real left_ctx_ms = 800.0;
    Real right_ctx_ms = 400.0;
    Real hop_ms = 10.0;
    ContextMode right_ctx_mode = ContextMode::None;

    void validate() const {
        require(hop_ms > 0, "StreamConfig: hop must be positive");
        auto divides = [&](Real ms) {
            const Real q = ms / hop_ms;
            return std::abs(q - std::round(q)) < 1e-9;
        };
        require(divides(chunk_ms) && divides(left_ctx_ms) && divides(right_ctx_ms),
                "StreamConfig: durations must be multiples of the hop");
    }

    size_t chunk_frames() const { return static_cast<size_t>(std::round(chunk_ms / hop_ms)); }
    size_t left_frames() const { return static_cast<size_t>(std::round(left_ctx_ms / hop_ms)); }
    size_t right_frames() const { return static_cast<size_t>(std::round(right_ctx_ms / hop_ms)); }

    Real algorithmic_latency_ms() const {
        return chunk_ms + (right_ctx_mode == ContextMode::Real ? right_ctx_ms : 0.0);
    }

    static StreamConfig from_model(const pipeline::ModelConfig& m, ContextMode mode) {
        StreamConfig s;
        s.hop_ms = m.frame_ms();
        s.chunk_ms = static_cast<Real>(m.chunk_frames) * s.hop_ms;
        s.left_ctx_ms = static_cast<Real>(m.left_frames) * s.hop_ms;
        s.right_ctx_ms = static_cast<Real>(m.right_frames) * s.hop_ms;
        s.right_ctx_mode = mode;
        return s;
    }
};

struct StreamEvent {
    size_t chunk_index = 0;
    asr::TokenSequence emitted;  // delta; the transcript is append-only
    Real algorithmic_latency_ms = 0.0;
    Real compute_ms = 0.0;
    Real sim_ms = 0.0;  // simulator share, meaningful in simulated mode
};

struct StreamResult {
    std::vector<StreamEvent> events;
    asr::TokenSequence transcript;
    bool short_input_padded = false;
};

// Greedy CTC decoding over per-chunk core logits with a collapse carry, so
// the emitted stream equals collapsing the concatenated frame argmaxes.
inline StreamResult stream_decode(const signal::Waveform& mixture,
                                  const neural::ModelParams& params,
                                  const pipeline::ModelConfig& mcfg, const StreamConfig& scfg,
                                  const Var& fb_t) {
    scfg.validate();
    mcfg.validate();
    require(scfg.chunk_frames() >= 1, "stream_decode: empty chunk");
    require(scfg.right_frames() == mcfg.right_frames,
            "stream_decode: right context differs from the model geometry");
    require(scfg.left_frames() == mcfg.left_frames,
            "stream_decode: left context differs from the model geometry");

    StreamResult out;
    signal::Waveform audio = mixture;
    const size_t min_samples =
        std::max(mcfg.stft.window_size,
                 scfg.chunk_frames() * mcfg.stft.hop + (mcfg.stft.window_size - mcfg.stft.hop));
    if (audio.num_samples() < min_samples) {
        for (auto& ch : audio.samples) ch.resize(min_samples, 0.0);
        out.short_input_padded = true;
    }

    auto spec = signal::stft(audio, mcfg.stft);
    auto plan = chunking::plan_chunks(spec.num_frames, scfg.chunk_frames(), scfg.left_frames(),
                                      scfg.right_frames());
    auto run = pipeline::run_chunked(params, mcfg, spec, plan,
                                     scfg.right_ctx_mode == ContextMode::Real,
                                     scfg.right_ctx_mode,
                                     scfg.right_ctx_mode == ContextMode::Simulated, fb_t,
                                     false, nullptr, true);

    int carry = -1;
    for (size_t i = 0; i < plan.descriptors.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto frames = asr::frame_argmax(run.core_logits[i]->value);
        auto delta = asr::collapse_ctc(frames, 0, carry);
        carry = frames.empty() ? carry : frames.back();
        const Real decode_ms = pipeline::elapsed_ms(t0);

        StreamEvent ev;
        ev.chunk_index = i;
        ev.emitted = delta;
        ev.algorithmic_latency_ms = scfg.algorithmic_latency_ms();
        ev.sim_ms = run.sim_ms.empty() ? 0.0 : run.sim_ms[i];
        ev.compute_ms = run.frontend_ms[i] + ev.sim_ms + run.backend_ms[i] + decode_ms;
        out.transcript.insert(out.transcript.end(), delta.begin(), delta.end());
        out.events.push_back(std::move(ev));
    }
    return out;
}

struct LatencyReport {
    size_t chunks = 0;
    Real algorithmic_ms = 0.0;  // identical for every event, asserted
    Real mean_compute_ms = 0.0;
    Real p95_compute_ms = 0.0;
    Real mean_sim_ms = 0.0;
};

inline LatencyReport latency_report(const std::vector<StreamEvent>& events,
                                    const StreamConfig& cfg) {
    require(!events.empty(), "latency_report: no events");
    LatencyReport rep;
    rep.chunks = events.size();
    rep.algorithmic_ms = cfg.algorithmic_latency_ms();
    std::vector<Real> compute;
    for (const auto& ev : events) {
        require(ev.algorithmic_latency_ms == rep.algorithmic_ms,
                "latency_report: event violates the latency formula");
        compute.push_back(ev.compute_ms);
        rep.mean_compute_ms += ev.compute_ms;
        rep.mean_sim_ms += ev.sim_ms;
    }
    rep.mean_compute_ms /= static_cast<Real>(events.size());
    rep.mean_sim_ms /= static_cast<Real>(events.size());
    std::sort(compute.begin(), compute.end());
    rep.p95_compute_ms = compute[static_cast<size_t>(0.95 * static_cast<Real>(compute.size() - 1))];
    return rep;
}

// ---------------------------------------------------------------------------
// Front-end-only streaming enhancement: stitched core spectra -> audio.

inline signal::Waveform stitch_enhanced(const pipeline::ChunkedRun& run,
                                        const pipeline::ModelConfig& mcfg, size_t trim_samples) {
    const size_t bins = mcfg.stft.num_bins();
    size_t total = 0;
    for (const auto& d : run.plan.descriptors) total += d.core_len();

    signal::MultiChannelSpectrogram spec;
    spec.config = mcfg.stft;
    spec.num_frames = total;
    spec.data.assign(1, std::vector<signal::Cplx>(total * bins));
    size_t row = 0;
    for (size_t i = 0; i < run.plan.descriptors.size(); ++i) {
        const auto& d = run.plan.descriptors[i];
        const auto& frames = *run.chunk_complex[i];
        const size_t off = run.chunk_core_offset[i];
        for (size_t t = 0; t < d.core_len(); ++t)
            for (size_t k = 0; k < bins; ++k)
                spec.data[0][(row + t) * bins + k] = frames.at(off + t, k);
        row += d.core_len();
    }
    return signal::istft(spec, mcfg.sample_rate, trim_samples);
}

inline signal::Waveform enhance_stream(const signal::Waveform& mixture,
                                       const neural::ModelParams& params,
                                       const pipeline::ModelConfig& mcfg,
                                       const StreamConfig& scfg, const Var& fb_t) {
    scfg.validate();
    auto spec = signal::stft(mixture, mcfg.stft);
    auto plan = chunking::plan_chunks(spec.num_frames, scfg.chunk_frames(), scfg.left_frames(),
                                      scfg.right_frames());
    auto run = pipeline::run_chunked(params, mcfg, spec, plan,
                                     scfg.right_ctx_mode == ContextMode::Real, ContextMode::None,
                                     false, fb_t, false, nullptr, false, false);
    return stitch_enhanced(run, mcfg, mixture.num_samples());
}

// Oracle-mask variant: masks come from ground-truth speech/noise images.
inline signal::Waveform enhance_stream_oracle(const signal::Waveform& mixture,
                                              const signal::Waveform& speech_image,
                                              const signal::Waveform& noise_image,
                                              const pipeline::ModelConfig& mcfg,
                                              const StreamConfig& scfg) {
    scfg.validate();
    auto mix_spec = signal::stft(mixture, mcfg.stft);
    auto speech_spec = signal::stft(speech_image, mcfg.stft);
    auto noise_spec = signal::stft(noise_image, mcfg.stft);
    auto masks = scene::oracle_irm(speech_spec, noise_spec, mcfg.mvdr.reference_channel);

    auto plan = chunking::plan_chunks(mix_spec.num_frames, scfg.chunk_frames(),
                                      scfg.left_frames(), scfg.right_frames());
    pipeline::ChunkedRun run;
    run.plan = plan;
    for (const auto& d : plan.descriptors) {
        auto fe_desc = d;
        if (scfg.right_ctx_mode != ContextMode::Real) {
            fe_desc.right_ctx_end = fe_desc.core_end;
            fe_desc.right_pad = 0;
        }
        auto chunk = beamformer::extract_chunk_spectra(mix_spec, fe_desc);
        Mat sm(chunk.frames, chunk.bins), nm(chunk.frames, chunk.bins);
        for (size_t t = fe_desc.left_ctx_start; t < fe_desc.right_ctx_end; ++t) {
            const size_t row = fe_desc.left_pad + (t - fe_desc.left_ctx_start);
            for (size_t k = 0; k < chunk.bins; ++k) {
                sm.at(row, k) = masks.speech[t][k];
                nm.at(row, k) = masks.noise[t][k];
            }
        }
        auto res = beamformer::enhance_chunk_with_masks(chunk, sm, nm, mcfg.mvdr,
                                                        fe_desc.core_offset(), d.core_len());
        run.chunk_complex.push_back(std::make_shared<beamformer::EnhancedSpectra>(res.frames));
        run.chunk_core_offset.push_back(res.core_offset);
    }
    return stitch_enhanced(run, mcfg, mixture.num_samples());
}

// Non-streaming decode: whole-utterance enhancement and greedy CTC.
inline asr::TokenSequence decode_non_streaming(const signal::Waveform& mixture,
                                               const neural::ModelParams& params,
                                               const pipeline::ModelConfig& mcfg,
                                               const Var& fb_t) {
    auto spec = signal::stft(mixture, mcfg.stft);
    auto whole = pipeline::run_whole(params, mcfg, spec, fb_t, false, nullptr);
    return asr::greedy_decode(whole.logits->value);
}

}  // namespace cuside::streamer
