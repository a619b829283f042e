// Copyright 2026 the cuside authors
// Verification-only oracles and the named check registry behind the
// `verify` subcommand. Everything here recomputes results by independent
// routes (path enumeration, finite differences, closed forms) and never
// feeds the production pipeline.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cuside/asr.hpp"
#include "cuside/beamformer.hpp"
#include "cuside/chunking.hpp"
#include "cuside/signal.hpp"

namespace cuside::selfcheck {

using neural::Mat;

// ---------------------------------------------------------------------------
// Brute-force CTC: enumerate every frame path, collapse, sum probabilities.
// The collapse here is written independently of asr::collapse_ctc.

inline std::vector<int> collapse_path(const std::vector<int>& path, int blank) {
    std::vector<int> dedup;
    for (int id : path)
        if (dedup.empty() || dedup.back() != id) dedup.push_back(id);
    std::vector<int> out;
    for (int id : dedup)
        if (id != blank) out.push_back(id);
    return out;
}

inline Real ctc_bruteforce_loss(const Mat& logits, const std::vector<int>& labels, int blank = 0) {
    const size_t T = logits.rows, V = logits.cols;
    Mat prob(T, V);
    for (size_t t = 0; t < T; ++t) {
        Real mx = logits.at(t, 0);
        for (size_t v = 1; v < V; ++v) mx = std::max(mx, logits.at(t, v));
        Real z = 0.0;
        for (size_t v = 0; v < V; ++v) z += std::exp(logits.at(t, v) - mx);
        for (size_t v = 0; v < V; ++v) prob.at(t, v) = std::exp(logits.at(t, v) - mx) / z;
    }

    Real total = 0.0;
    std::vector<int> path(T, 0);
    while (true) {
        Real p = 1.0;
        for (size_t t = 0; t < T; ++t) p *= prob.at(t, static_cast<size_t>(path[t]));
        if (collapse_path(path, blank) == labels) total += p;
        // odometer
        size_t pos = 0;
        while (pos < T) {
            if (++path[pos] < static_cast<int>(V)) break;
            path[pos] = 0;
            ++pos;
        }
        if (pos == T) break;
    }
    require(total > 0.0, "ctc_bruteforce: no path collapses to the label");
    return -std::log(total);
}

// Most-probable-frame-sequence decode, collapsed; independent of
// asr::greedy_decode (recomputes argmax with explicit tie handling).
inline std::vector<int> greedy_bruteforce(const Mat& logits, int blank = 0) {
    const size_t T = logits.rows, V = logits.cols;
    std::vector<int> path(T);
    for (size_t t = 0; t < T; ++t) {
        size_t best = 0;
        Real best_val = logits.at(t, 0);
        for (size_t v = 1; v < V; ++v) {
            if (logits.at(t, v) > best_val) {
                best_val = logits.at(t, v);
                best = v;
            }
        }
        path[t] = static_cast<int>(best);
    }
    return collapse_path(path, blank);
}

// Plain recursive edit distance (memoized) as an oracle for the DP version.
inline size_t edit_distance_recursive(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
    std::function<size_t(size_t, size_t)> rec = [&](size_t i, size_t j) -> size_t {
        if (i == a.size()) return b.size() - j;
        if (j == b.size()) return a.size() - i;
        if (memo[i][j] >= 0) return static_cast<size_t>(memo[i][j]);
        size_t best = rec(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
        best = std::min(best, rec(i + 1, j) + 1);
        best = std::min(best, rec(i, j + 1) + 1);
        memo[i][j] = static_cast<long>(best);
        return best;
    };
    return rec(0, 0);
}

// ---------------------------------------------------------------------------
// Named check registry

struct Check {
    std::string name;
    std::function<bool(std::string&)> run;  // fills a detail string
};

struct CheckOptions {
    std::string inject_fault;  // test hook: name of a check to sabotage
    size_t ctc_instances = 120;
    uint64_t seed = 20260808;
};

inline std::vector<Check> build_registry(const CheckOptions& opt) {
    std::vector<Check> checks;

    checks.push_back({"ctc_bruteforce", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 1));
        for (size_t i = 0; i < opt.ctc_instances; ++i) {
            const size_t T = static_cast<size_t>(rng.uniform_int(1, 6));
            const size_t V = static_cast<size_t>(rng.uniform_int(2, 3));
            const size_t L = static_cast<size_t>(rng.uniform_int(0, 3));
            std::vector<int> labels;
            for (size_t l = 0; l < L; ++l)
                labels.push_back(static_cast<int>(rng.uniform_int(1, static_cast<long>(V) - 1)));
            if (asr::ctc_min_frames(labels) > T) continue;
            Mat logits(T, V);
            for (auto& v : logits.v) v = rng.uniform(-2.0, 2.0);
            Real impl = asr::ctc_loss(logits, labels).loss;
            if (opt.inject_fault == "ctc") impl += 0.1;  // sabotage hook
            const Real oracle = ctc_bruteforce_loss(logits, labels);
            if (std::abs(impl - oracle) > 1e-6 * std::max(1.0, std::abs(oracle))) {
                detail = "mismatch at instance " + std::to_string(i);
                return false;
            }
        }
        detail = std::to_string(opt.ctc_instances) + " instances vs path enumeration";
        return true;
    }});

    checks.push_back({"ctc_gradient", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 2));
        for (int i = 0; i < 10; ++i) {
            const size_t T = static_cast<size_t>(rng.uniform_int(2, 5));
            neural::ModelParams p;
            Mat logits(T, 3);
            for (auto& v : logits.v) v = rng.uniform(-2.0, 2.0);
            p.add("logits", logits);
            std::vector<int> labels = {static_cast<int>(rng.uniform_int(1, 2))};
            auto fd = neural::finite_diff_check(
                p, {"logits"}, [&] { return asr::ctc_loss_node(p.at("logits"), labels); });
            if (!fd.pass) {
                detail = "finite differences disagree at " + fd.worst;
                return false;
            }
        }
        detail = "10 instances vs finite differences";
        return true;
    }});

    checks.push_back({"gradient_suite", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 3));
        neural::ModelParams p;
        neural::init_gru_layer(p, "g", 3, 2, rng);
        neural::init_lstm_dir(p, "f", 3, 2, rng);
        neural::init_lstm_dir(p, "b", 3, 2, rng);
        neural::Linear::init(p, "lin", 4, 3, rng);
        Mat input(5, 3);
        for (auto& v : input.v) v = rng.uniform(-1, 1);
        Mat target(5, 3, 0.1);
        std::vector<std::string> names;
        for (const auto& [name, v] : p.map) {
            (void)v;
            names.push_back(name);
        }
        auto fd = neural::finite_diff_check(p, names, [&] {
            auto y = neural::blstm(neural::constant(input), neural::lstm_dir(p, "f"),
                                   neural::lstm_dir(p, "b"));
            auto g = neural::gru_seq(neural::constant(input), neural::constant(Mat(1, 2)),
                                     neural::gru_layer(p, "g"));
            auto lin = neural::Linear(p, "lin").forward(y);
            auto act = neural::sigmoid(lin);
            auto ls = neural::log_softmax_rows(lin);
            return neural::add(neural::add(neural::l1_loss(act, target), neural::mean_all(ls)),
                               neural::mean_all(g));
        });
        detail = "max rel err " + std::to_string(fd.max_rel_err);
        return fd.pass;
    }});

    checks.push_back({"mvdr_identities", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 4));
        // M=1 identity
        beamformer::ChunkSpectra chunk(4, 1, 3);
        for (auto& v : chunk.data)
            v = beamformer::Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        Mat mask(4, 3, 0.7);
        auto phi = beamformer::estimate_scm(chunk, mask);
        auto w = beamformer::mvdr_weights(phi, phi, beamformer::MvdrConfig{});
        for (size_t k = 0; k < 3; ++k)
            if (std::abs(w.at(k, 0) - beamformer::Cplx(1, 0)) > 1e-10) {
                detail = "M=1 filter is not the identity";
                return false;
            }
        // rank-1 distortionless identity
        const size_t M = 4;
        beamformer::SpatialCovariance ps(1, M), pn(1, M);
        std::vector<beamformer::Cplx> d(M);
        for (auto& v : d) v = beamformer::Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        for (size_t i = 0; i < M; ++i) {
            for (size_t j = 0; j < M; ++j) ps.at(0, i, j) = 2.0 * d[i] * std::conj(d[j]);
            pn.at(0, i, i) = beamformer::Cplx(1, 0);
        }
        auto w2 = beamformer::mvdr_weights(ps, pn, beamformer::MvdrConfig{});
        beamformer::Cplx y(0, 0);
        for (size_t m = 0; m < M; ++m) y += std::conj(w2.at(0, m)) * d[m];
        if (std::abs(y - d[0]) > 1e-8) {
            detail = "rank-1 output is not the reference clean signal";
            return false;
        }
        detail = "identity reductions hold";
        return true;
    }});

    checks.push_back({"scm_hermitian_psd", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 5));
        for (int rep = 0; rep < 200; ++rep) {
            const size_t T = static_cast<size_t>(rng.uniform_int(2, 8));
            const size_t M = static_cast<size_t>(rng.uniform_int(2, 4));
            beamformer::ChunkSpectra chunk(T, M, 2);
            for (auto& v : chunk.data)
                v = beamformer::Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
            Mat mask(T, 2);
            for (auto& v : mask.v) v = rng.uniform(0.0, 1.0);
            auto phi = beamformer::estimate_scm(chunk, mask);
            for (size_t k = 0; k < 2; ++k) {
                auto b = phi.bin(k);
                for (size_t i = 0; i < M; ++i)
                    for (size_t j = 0; j < M; ++j)
                        if (b.at(i, j) != std::conj(b.at(j, i))) {
                            detail = "not Hermitian";
                            return false;
                        }
                if (cxmat::hermitian_min_eig(b) < -1e-8 * cxmat::trace(b).real()) {
                    detail = "negative eigenvalue beyond tolerance";
                    return false;
                }
            }
        }
        detail = "200 random covariances";
        return true;
    }});

    checks.push_back({"mvdr_mask_gradient", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 6));
        auto chunk = std::make_shared<beamformer::ChunkSpectra>(3, 2, 2);
        for (auto& v : chunk->data)
            v = beamformer::Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        neural::ModelParams p;
        Mat sm(3, 2), nm(3, 2);
        for (auto& v : sm.v) v = rng.uniform(0.2, 0.8);
        for (auto& v : nm.v) v = rng.uniform(0.2, 0.8);
        p.add("sm", sm);
        p.add("nm", nm);
        auto fd = neural::finite_diff_check(
            p, {"sm", "nm"},
            [&] {
                auto out = beamformer::mvdr_enhance_node(p.at("sm"), p.at("nm"), chunk,
                                                         beamformer::MvdrConfig{});
                return neural::mean_all(out.power);
            },
            1e-6);
        detail = "max rel err " + std::to_string(fd.max_rel_err);
        return fd.pass;
    }});

    checks.push_back({"stft_roundtrip", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 7));
        signal::StftConfig cfg;
        for (int rep = 0; rep < 4; ++rep) {
            const size_t len = static_cast<size_t>(rng.uniform_int(8000, 32000));
            std::vector<Real> x(len);
            for (auto& v : x) v = rng.uniform(-0.5, 0.5);
            auto spec = signal::stft(signal::Waveform::mono(x), cfg);
            auto y = signal::istft(spec, 16000, len);
            Real err = 0.0, ref = 0.0;
            for (size_t i = cfg.window_size; i < len - cfg.window_size; ++i) {
                const Real e = y.samples[0][i] - x[i];
                err += e * e;
                ref += x[i] * x[i];
            }
            if (std::sqrt(err / ref) > 1e-6) {
                detail = "round-trip error above 1e-6";
                return false;
            }
        }
        detail = "4 random signals within 1e-6";
        return true;
    }});

    checks.push_back({"chunk_coverage", [opt](std::string& detail) {
        Rng rng(mix_seed(opt.seed, 8));
        for (int rep = 0; rep < 500; ++rep) {
            const size_t total = static_cast<size_t>(rng.uniform_int(1, 400));
            const size_t chunk = static_cast<size_t>(rng.uniform_int(1, 50));
            auto plan = chunking::plan_chunks(total, chunk,
                                              static_cast<size_t>(rng.uniform_int(0, 90)),
                                              static_cast<size_t>(rng.uniform_int(0, 50)));
            size_t cursor = 0;
            for (const auto& d : plan.descriptors) {
                if (d.core_start != cursor || d.core_end <= d.core_start) {
                    detail = "cores do not tile the utterance";
                    return false;
                }
                cursor = d.core_end;
            }
            if (cursor != total) {
                detail = "cores do not cover the utterance";
                return false;
            }
        }
        detail = "500 random plans";
        return true;
    }});

    return checks;
}

}  // namespace cuside::selfcheck
