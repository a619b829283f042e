// Copyright 2026 the cuside authors
// Future-context simulation: a unidirectional GRU stack consumes each
// arriving chunk and carries state across chunks; a feed-forward head maps
// the hidden state at the chunk's right boundary to the next right_frames
// of log-Fbank features. Trained with a masked L1 loss against the frames
// that actually arrive.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "cuside/neural.hpp"

namespace cuside::simulation {

using neural::Mat;
using neural::Var;

struct SimNetConfig {
    size_t layers = 3;
    size_t hidden = 256;
    size_t input_dim = 80;
    size_t right_frames = 40;

    std::string arch_string() const {
        return "simnet(layers=" + std::to_string(layers) + ",hidden=" + std::to_string(hidden) +
               ",in=" + std::to_string(input_dim) + ",right=" + std::to_string(right_frames) + ")";
    }
};

struct SimNet {
    SimNetConfig cfg;

    // Per-layer hidden state carried between chunk calls.
    struct State {
        std::vector<Var> h;  // each [1, hidden]
    };

    static void init_params(neural::ModelParams& p, const SimNetConfig& cfg, Rng& rng) {
        size_t in = cfg.input_dim;
        for (size_t l = 0; l < cfg.layers; ++l) {
            neural::init_gru_layer(p, "simnet.l" + std::to_string(l), in, cfg.hidden, rng);
            in = cfg.hidden;
        }
        neural::Linear::init(p, "simnet.head", cfg.hidden, cfg.right_frames * cfg.input_dim, rng);
    }

    State initial_state() const {
        State st;
        for (size_t l = 0; l < cfg.layers; ++l) st.h.push_back(neural::constant(Mat(1, cfg.hidden)));
        return st;
    }

    // chunk_fbank: [C][input_dim] frames in arrival order. Strictly causal:
    // the output depends only on this chunk and the carried state.
    std::pair<Var, State> forward(const neural::ModelParams& p, const Var& chunk_fbank,
                                  const State& in) const {
        require(chunk_fbank->value.cols == cfg.input_dim, "simnet: feature width mismatch");
        require(in.h.size() == cfg.layers, "simnet: state layer count mismatch");
        const size_t T = chunk_fbank->value.rows;

        State out;
        Var h = chunk_fbank;
        for (size_t l = 0; l < cfg.layers; ++l) {
            h = neural::gru_seq(h, in.h[l], neural::gru_layer(p, "simnet.l" + std::to_string(l)));
            out.h.push_back(neural::slice_rows(h, T - 1, T));
        }
        auto flat = neural::Linear(p, "simnet.head").forward(out.h.back());  // [1, R*D]
        auto sim = neural::reshape(flat, cfg.right_frames, cfg.input_dim);
        return {sim, out};
    }
};

// Mean absolute error over unmasked entries; fully-masked targets contribute
// zero and bump the counter.
inline Var simulation_loss(const Var& sim_frames, const Mat& true_future, const Mat& mask,
                           size_t* fully_masked = nullptr) {
    return neural::l1_loss_masked(sim_frames, true_future, mask, fully_masked);
}

}  // namespace cuside::simulation
