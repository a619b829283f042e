// Copyright 2026 the cuside authors
// Context-sensitive chunk geometry: non-overlapping cores with spliced
// left/right context, training-time size jitter and right-context mode draws.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "cuside/common.hpp"

namespace cuside::chunking {

struct ChunkDescriptor {
    size_t core_start = 0;      // half-open [core_start, core_end)
    size_t core_end = 0;
    size_t left_ctx_start = 0;  // clipped to 0
    size_t right_ctx_end = 0;   // clipped to total_frames
    size_t left_pad = 0;        // synthetic frames needed before left_ctx_start
    size_t right_pad = 0;       // synthetic frames needed after right_ctx_end

    size_t core_len() const { return core_end - core_start; }
    // total spliced length including padding
    size_t spliced_len() const {
        return left_pad + (right_ctx_end - left_ctx_start) + right_pad;
    }
    // position of the core inside the spliced chunk
    size_t core_offset() const { return left_pad + (core_start - left_ctx_start); }
};

struct ChunkPlan {
    std::vector<ChunkDescriptor> descriptors;
    size_t total_frames = 0;
    size_t chunk_frames = 0;
    size_t left_frames = 0;
    size_t right_frames = 0;
};

inline ChunkPlan plan_chunks(size_t total_frames, size_t chunk_frames, size_t left_frames,
                             size_t right_frames) {
    require(chunk_frames >= 1, "plan_chunks: chunk size must be >= 1");
    require(total_frames >= 1, "plan_chunks: need at least one frame");

    ChunkPlan plan;
    plan.total_frames = total_frames;
    plan.chunk_frames = chunk_frames;
    plan.left_frames = left_frames;
    plan.right_frames = right_frames;

    for (size_t start = 0; start < total_frames; start += chunk_frames) {
        ChunkDescriptor d;
        d.core_start = start;
        d.core_end = std::min(start + chunk_frames, total_frames);
        d.left_ctx_start = start >= left_frames ? start - left_frames : 0;
        d.left_pad = left_frames - (start - d.left_ctx_start);
        d.right_ctx_end = std::min(d.core_end + right_frames, total_frames);
        d.right_pad = right_frames - (d.right_ctx_end - d.core_end);
        plan.descriptors.push_back(d);
    }
    return plan;
}

// One draw per utterance per epoch; uniform integer in [low, high].
inline size_t jitter_chunk_size(size_t base_frames, size_t low_frames, size_t high_frames,
                                Rng& rng) {
    require(low_frames <= base_frames && base_frames <= high_frames,
            "jitter_chunk_size: need low <= base <= high");
    return static_cast<size_t>(
        rng.uniform_int(static_cast<long>(low_frames), static_cast<long>(high_frames)));
}

enum class Stage { Frontend, Backend };
enum class ContextMode { None, Real, Simulated };

inline const char* to_string(ContextMode m) {
    switch (m) {
        case ContextMode::None: return "none";
        case ContextMode::Real: return "real";
        case ContextMode::Simulated: return "simulated";
    }
    return "?";
}

struct ContextPolicy {
    Stage stage = Stage::Backend;
    Real p_none = 1.0;
    Real p_real = 0.0;
    Real p_simulated = 0.0;

    void validate() const {
        require(p_none >= 0 && p_real >= 0 && p_simulated >= 0,
                "ContextPolicy: negative probability");
        require(std::abs(p_none + p_real + p_simulated - 1.0) < 1e-9,
                "ContextPolicy: probabilities must sum to 1");
        if (stage == Stage::Frontend)
            require(p_simulated == 0.0,
                    "ContextPolicy: frontend never uses simulated context");
    }

    static ContextPolicy frontend_default() { return {Stage::Frontend, 0.5, 0.5, 0.0}; }
    static ContextPolicy backend_default() {
        return {Stage::Backend, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    }
};

inline ContextMode draw_context_mode(const ContextPolicy& policy, Rng& rng) {
    policy.validate();
    const Real u = rng.next_real();
    if (u < policy.p_none) return ContextMode::None;
    if (u < policy.p_none + policy.p_real) return ContextMode::Real;
    return ContextMode::Simulated;
}

// Extract [spliced_len][D] rows from frames [T][D]; padded rows are zeros.
template <typename Row>
std::vector<Row> extract_chunk(const std::vector<Row>& frames, const ChunkDescriptor& d) {
    require(d.core_start < d.core_end, "extract_chunk: empty core");
    require(d.core_end <= frames.size() && d.right_ctx_end <= frames.size(),
            "extract_chunk: descriptor out of range");
    require(d.left_ctx_start <= d.core_start, "extract_chunk: malformed descriptor");

    const size_t dim = frames.empty() ? 0 : frames[0].size();
    std::vector<Row> out;
    out.reserve(d.spliced_len());
    for (size_t i = 0; i < d.left_pad; ++i) out.emplace_back(Row(dim, typename Row::value_type{}));
    for (size_t t = d.left_ctx_start; t < d.right_ctx_end; ++t) out.push_back(frames[t]);
    for (size_t i = 0; i < d.right_pad; ++i) out.emplace_back(Row(dim, typename Row::value_type{}));
    return out;
}

}  // namespace cuside::chunking
