// Copyright 2026 the cuside authors
// CTC back-end: chunk-local BLSTM encoder, log-space forward-backward CTC
// loss with exact gradients, greedy decoding and CER scoring.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cuside/neural.hpp"

namespace cuside::asr {

using neural::Mat;
using neural::Var;

struct Vocab {
    std::vector<std::string> tokens;  // index 0 is the blank
    int blank_id = 0;

    size_t size() const { return tokens.size(); }

    void validate() const {
        require(tokens.size() >= 2, "Vocab: need blank plus at least one token");
        require(blank_id == 0, "Vocab: blank must be id 0");
    }

    static Vocab digits(size_t count) {
        Vocab v;
        v.tokens.push_back("<blk>");
        for (size_t i = 1; i <= count; ++i) v.tokens.push_back(std::to_string(i));
        return v;
    }
};

using TokenSequence = std::vector<int>;  // no blanks

inline void validate_labels(const TokenSequence& labels, size_t vocab, int blank) {
    for (int id : labels) {
        require(id != blank, "labels must not contain the blank");
        require(id >= 0 && static_cast<size_t>(id) < vocab, "label id out of range");
    }
}

// ---------------------------------------------------------------------------
// CTC loss. Computed in log space over the blank-extended label sequence.

struct CtcInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Minimum frame count that admits an alignment: one frame per label plus a
// separating blank between adjacent repeats.
inline size_t ctc_min_frames(const TokenSequence& labels) {
    size_t repeats = 0;
    for (size_t i = 1; i < labels.size(); ++i)
        if (labels[i] == labels[i - 1]) ++repeats;
    return labels.size() + repeats;
}

struct CtcResult {
    Real loss = 0.0;
    Mat grad_logits;  // d loss / d logits (softmax minus state occupancy)
};

namespace detail {

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

inline Real logsumexp2(Real a, Real b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const Real m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

inline CtcResult ctc_loss(const Mat& logits, const TokenSequence& labels, int blank = 0) {
    using detail::kNegInf;
    using detail::logsumexp2;

    const size_t T = logits.rows, V = logits.cols;
    require(T >= 1 && V >= 2, "ctc_loss: bad logits shape");
    validate_labels(labels, V, blank);
    const size_t need = ctc_min_frames(labels);
    if (T < need)
        throw CtcInfeasible("ctc_loss: label needs at least " + std::to_string(need) +
                            " frames, got " + std::to_string(T));

    // log-softmax per frame
    Mat logp(T, V);
    for (size_t t = 0; t < T; ++t) {
        Real mx = logits.at(t, 0);
        for (size_t v = 1; v < V; ++v) mx = std::max(mx, logits.at(t, v));
        Real lse = 0.0;
        for (size_t v = 0; v < V; ++v) lse += std::exp(logits.at(t, v) - mx);
        lse = mx + std::log(lse);
        for (size_t v = 0; v < V; ++v) logp.at(t, v) = logits.at(t, v) - lse;
    }

    const size_t S = 2 * labels.size() + 1;
    std::vector<int> ext(S, blank);
    for (size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
    auto can_skip = [&](size_t s) {
        return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    };

    Mat alpha(T, S, detail::kNegInf), beta(T, S, detail::kNegInf);
    alpha.at(0, 0) = logp.at(0, static_cast<size_t>(ext[0]));
    if (S > 1) alpha.at(0, 1) = logp.at(0, static_cast<size_t>(ext[1]));
    for (size_t t = 1; t < T; ++t) {
        for (size_t s = 0; s < S; ++s) {
            Real a = alpha.at(t - 1, s);
            if (s >= 1) a = logsumexp2(a, alpha.at(t - 1, s - 1));
            if (can_skip(s)) a = logsumexp2(a, alpha.at(t - 1, s - 2));
            if (a != kNegInf) alpha.at(t, s) = a + logp.at(t, static_cast<size_t>(ext[s]));
        }
    }
    Real log_total = alpha.at(T - 1, S - 1);
    if (S > 1) log_total = logsumexp2(log_total, alpha.at(T - 1, S - 2));
    require(log_total != kNegInf, "ctc_loss: no feasible path");

    beta.at(T - 1, S - 1) = logp.at(T - 1, static_cast<size_t>(ext[S - 1]));
    if (S > 1) beta.at(T - 1, S - 2) = logp.at(T - 1, static_cast<size_t>(ext[S - 2]));
    for (size_t t = T - 1; t-- > 0;) {
        for (size_t s = 0; s < S; ++s) {
            Real b = beta.at(t + 1, s);
            if (s + 1 < S) b = logsumexp2(b, beta.at(t + 1, s + 1));
            if (s + 2 < S && can_skip(s + 2)) b = logsumexp2(b, beta.at(t + 1, s + 2));
            if (b != kNegInf) beta.at(t, s) = b + logp.at(t, static_cast<size_t>(ext[s]));
        }
    }

    CtcResult res;
    res.loss = -log_total;
    res.grad_logits = Mat(T, V);
    for (size_t t = 0; t < T; ++t) {
        // occupancy per vocab symbol at frame t
        std::vector<Real> log_occ(V, kNegInf);
        for (size_t s = 0; s < S; ++s) {
            if (alpha.at(t, s) == kNegInf || beta.at(t, s) == kNegInf) continue;
            const size_t v = static_cast<size_t>(ext[s]);
            const Real contrib =
                alpha.at(t, s) + beta.at(t, s) - logp.at(t, v) - log_total;
            log_occ[v] = logsumexp2(log_occ[v], contrib);
        }
        for (size_t v = 0; v < V; ++v) {
            const Real occ = log_occ[v] == kNegInf ? 0.0 : std::exp(log_occ[v]);
            res.grad_logits.at(t, v) = std::exp(logp.at(t, v)) - occ;
        }
    }
    return res;
}

// Autodiff wrapper; the exact gradient above feeds the tape.
inline Var ctc_loss_node(const Var& logits, const TokenSequence& labels, int blank = 0) {
    auto res = std::make_shared<CtcResult>(ctc_loss(logits->value, labels, blank));
    return neural::make_node(Mat::scalar(res->loss), {logits}, [logits, res](neural::Node& n) {
        if (!logits->requires_grad) return;
        auto& g = logits->ensure_grad();
        const Real upstream = n.grad.v[0];
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += upstream * res->grad_logits.v[i];
    });
}

// ---------------------------------------------------------------------------
// Greedy decoding: per-frame argmax (ties toward the lowest id), collapse
// consecutive repeats, drop blanks.

inline std::vector<int> frame_argmax(const Mat& logits) {
    std::vector<int> ids(logits.rows);
    for (size_t t = 0; t < logits.rows; ++t) {
        size_t best = 0;
        for (size_t v = 1; v < logits.cols; ++v)
            if (logits.at(t, v) > logits.at(t, best)) best = v;
        ids[t] = static_cast<int>(best);
    }
    return ids;
}

inline TokenSequence collapse_ctc(const std::vector<int>& frames, int blank = 0,
                                  int carry_in = -1) {
    TokenSequence out;
    int prev = carry_in;
    for (int id : frames) {
        if (id != prev && id != blank) out.push_back(id);
        prev = id;
    }
    return out;
}

inline TokenSequence greedy_decode(const Mat& logits, int blank = 0) {
    return collapse_ctc(frame_argmax(logits), blank);
}

// ---------------------------------------------------------------------------
// Scoring

inline size_t edit_distance(const TokenSequence& hyp, const TokenSequence& ref) {
    const size_t n = hyp.size(), m = ref.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            const size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// CER = total edit distance / total reference length
inline Real cer(const std::vector<std::pair<TokenSequence, TokenSequence>>& hyp_ref_pairs) {
    require(!hyp_ref_pairs.empty(), "cer: empty corpus");
    size_t dist = 0, ref_len = 0;
    for (const auto& [hyp, ref] : hyp_ref_pairs) {
        dist += edit_distance(hyp, ref);
        ref_len += ref.size();
    }
    require(ref_len > 0, "cer: empty references");
    return static_cast<Real>(dist) / static_cast<Real>(ref_len);
}

// ---------------------------------------------------------------------------
// Chunk-local bidirectional encoder with a linear output head.

struct EncoderConfig {
    size_t layers = 2;
    size_t hidden = 128;  // per direction
    size_t input_dim = 80;
    size_t vocab = 10;

    std::string arch_string() const {
        return "encoder(layers=" + std::to_string(layers) + ",hidden=" + std::to_string(hidden) +
               ",in=" + std::to_string(input_dim) + ",vocab=" + std::to_string(vocab) + ")";
    }
};

struct Encoder {
    EncoderConfig cfg;

    static void init_params(neural::ModelParams& p, const EncoderConfig& cfg, Rng& rng) {
        size_t in = cfg.input_dim;
        for (size_t l = 0; l < cfg.layers; ++l) {
            const std::string base = "encoder.l" + std::to_string(l);
            neural::init_lstm_dir(p, base + ".f", in, cfg.hidden, rng);
            neural::init_lstm_dir(p, base + ".b", in, cfg.hidden, rng);
            in = 2 * cfg.hidden;
        }
        neural::Linear::init(p, "encoder.head", in, cfg.vocab, rng);
    }

    // features [T][input_dim] -> logits [T][vocab]; the recursion never
    // crosses the spliced chunk, so context discard is purely an index map.
    Var forward(const neural::ModelParams& p, const Var& features) const {
        require(features->value.cols == cfg.input_dim, "encoder: feature width mismatch");
        Var h = features;
        for (size_t l = 0; l < cfg.layers; ++l) {
            const std::string base = "encoder.l" + std::to_string(l);
            h = neural::blstm(h, neural::lstm_dir(p, base + ".f"),
                              neural::lstm_dir(p, base + ".b"));
        }
        return neural::Linear(p, "encoder.head").forward(h);
    }
};

}  // namespace cuside::asr
