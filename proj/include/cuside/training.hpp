// Copyright 2026 the cuside authors
// Multi-task training: the whole-utterance CTC branch, the chunked streaming
// CTC branch with jitter and right-context randomization, and the simulation
// L1 branch share one parameter set and one backward pass through
//   L_total = L_utt + L_chunk + alpha * L_simu.
// The trainer adds warmup, decay-on-plateau, checkpoint averaging and
// bit-reproducible resume.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cuside/pipeline.hpp"
#include "cuside/scene.hpp"

namespace cuside::training {

using neural::Mat;
using neural::Var;

inline Real total_loss(Real l_utt, Real l_chunk, Real l_simu, Real alpha) {
    require(is_finite(l_utt) && is_finite(l_chunk) && is_finite(l_simu) && is_finite(alpha),
            "total_loss: non-finite input");
    return l_utt + l_chunk + alpha * l_simu;
}

struct TrainingConfig {
    Real alpha = 0.975;
    Real peak_lr = 2e-3;
    size_t warmup_steps = 500;
    Real decay_factor = 0.1;
    Real stop_lr = 1e-6;
    size_t plateau_evals = 2;  // evals without improvement before decay
    Real clip_norm = 5.0;
    size_t batch_size = 4;
    size_t max_epochs = 20;
    size_t jitter_low = 35, jitter_high = 45;
    size_t average_best = 5;
    uint64_t seed = 1;
    chunking::ContextPolicy frontend_policy = chunking::ContextPolicy::frontend_default();
    chunking::ContextPolicy backend_policy = chunking::ContextPolicy::backend_default();

    void validate() const {
        require(alpha >= 0.0, "TrainingConfig: alpha must be >= 0");
        require(decay_factor > 0.0 && decay_factor < 1.0,
                "TrainingConfig: decay factor must lie in (0,1)");
        require(batch_size >= 1 && max_epochs >= 1, "TrainingConfig: bad batch/epoch counts");
        frontend_policy.validate();
        backend_policy.validate();
    }
};

struct Utterance {
    std::string id;
    signal::Waveform mixture;
    asr::TokenSequence transcript;
    scene::ManifestRecord record;
};

struct Dataset {
    std::vector<Utterance> utts;

    static Dataset load(const std::string& manifest_path) {
        Dataset ds;
        for (const auto& rec : scene::read_manifest(manifest_path)) {
            Utterance u;
            u.id = rec.id;
            u.mixture = signal::read_wav(rec.mixture_path);
            u.transcript = rec.transcript;
            u.record = rec;
            ds.utts.push_back(std::move(u));
        }
        return ds;
    }
};

struct StepMetrics {
    long step = 0;
    Real l_utt = 0, l_chunk = 0, l_simu = 0, l_total = 0;
    Real lr = 0, grad_norm = 0;
    size_t skipped_ctc = 0;

    nlohmann::json to_json() const {
        return {{"step", step},       {"l_utt", l_utt}, {"l_chunk", l_chunk},
                {"l_simu", l_simu},   {"l_total", l_total}, {"lr", lr},
                {"grad_norm", grad_norm}};
    }
};

namespace detail {

inline Var mean_of(const std::vector<Var>& losses) {
    if (losses.empty()) return neural::constant(Mat::scalar(0.0));
    Var acc = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) acc = neural::add(acc, losses[i]);
    return neural::scale(acc, 1.0 / static_cast<Real>(losses.size()));
}

}  // namespace detail

// One optimization step over a batch: whole-utterance branch, chunked branch
// with per-utterance jitter and context-mode draws, simulation branch, a
// single backward pass, clipping, Adam. Infeasible CTC instances are skipped
// with a counter.
inline StepMetrics train_step(const std::vector<const Utterance*>& batch,
                              neural::ModelParams& params, neural::AdamState& adam,
                              const TrainingConfig& tcfg, const pipeline::ModelConfig& mcfg,
                              const Var& fb_t, Real lr, Rng& rng) {
    require(!batch.empty(), "train_step: empty batch");
    StepMetrics m;
    std::vector<Var> utt_losses, chunk_losses, sim_losses;

    for (const Utterance* utt : batch) {
        auto spec = signal::stft(utt->mixture, mcfg.stft);

        auto whole = pipeline::run_whole(params, mcfg, spec, fb_t, true, &rng);
        try {
            utt_losses.push_back(asr::ctc_loss_node(whole.logits, utt->transcript));
        } catch (const asr::CtcInfeasible&) {
            ++m.skipped_ctc;
        }

        const size_t chunk_size =
            chunking::jitter_chunk_size(mcfg.chunk_frames, tcfg.jitter_low, tcfg.jitter_high, rng);
        auto plan = chunking::plan_chunks(spec.num_frames, chunk_size, mcfg.left_frames,
                                          mcfg.right_frames);
        const auto fe_mode = chunking::draw_context_mode(tcfg.frontend_policy, rng);
        const auto be_mode = chunking::draw_context_mode(tcfg.backend_policy, rng);
        auto chunked = pipeline::run_chunked(params, mcfg, spec, plan,
                                             fe_mode == chunking::ContextMode::Real, be_mode,
                                             true, fb_t, true, &rng);
        try {
            chunk_losses.push_back(
                asr::ctc_loss_node(pipeline::concat_core_logits(chunked), utt->transcript));
        } catch (const asr::CtcInfeasible&) {
            ++m.skipped_ctc;
        }
        sim_losses.push_back(chunked.l_simu);
    }

    auto l_utt = detail::mean_of(utt_losses);
    auto l_chunk = detail::mean_of(chunk_losses);
    auto l_simu = detail::mean_of(sim_losses);
    auto total = neural::add(neural::add(l_utt, l_chunk), neural::scale(l_simu, tcfg.alpha));

    params.zero_grad();
    neural::backward(total);
    m.grad_norm = neural::clip_grad_norm(params, tcfg.clip_norm);
    neural::AdamConfig acfg;
    acfg.lr = lr;
    neural::adam_step(params, adam, acfg);

    m.l_utt = l_utt->value.v[0];
    m.l_chunk = l_chunk->value.v[0];
    m.l_simu = l_simu->value.v[0];
    m.l_total = total->value.v[0];
    m.lr = lr;
    return m;
}

// Deterministic validation: whole branch plus chunked branch at the base
// chunk size with no right context, simulation loss included.
inline Real validation_loss(const std::vector<const Utterance*>& val, neural::ModelParams& params,
                            const TrainingConfig& tcfg, const pipeline::ModelConfig& mcfg,
                            const Var& fb_t) {
    require(!val.empty(), "validation_loss: empty set");
    Real acc = 0.0;
    size_t counted = 0;
    for (const Utterance* utt : val) {
        auto spec = signal::stft(utt->mixture, mcfg.stft);
        auto whole = pipeline::run_whole(params, mcfg, spec, fb_t, false, nullptr);
        auto plan = chunking::plan_chunks(spec.num_frames, mcfg.chunk_frames, mcfg.left_frames,
                                          mcfg.right_frames);
        auto chunked = pipeline::run_chunked(params, mcfg, spec, plan, false,
                                             chunking::ContextMode::None, true, fb_t, false,
                                             nullptr);
        try {
            const Real lu = asr::ctc_loss(whole.logits->value, utt->transcript).loss;
            const Real lc =
                asr::ctc_loss(pipeline::concat_core_logits(chunked)->value, utt->transcript).loss;
            acc += total_loss(lu, lc, chunked.l_simu->value.v[0], tcfg.alpha);
            ++counted;
        } catch (const asr::CtcInfeasible&) {
        }
    }
    require(counted > 0, "validation_loss: every instance was infeasible");
    return acc / static_cast<Real>(counted);
}

// Arithmetic mean of same-architecture checkpoints.
inline neural::ModelParams average_checkpoints(const std::vector<std::string>& paths,
                                               const std::string& arch_desc) {
    require(!paths.empty(), "average_checkpoints: no checkpoints");
    auto avg = neural::load_checkpoint(paths[0], arch_desc);
    for (size_t i = 1; i < paths.size(); ++i) {
        auto next = neural::load_checkpoint(paths[i], arch_desc);
        require(next.map.size() == avg.map.size(), "average_checkpoints: parameter set mismatch");
        for (auto& [name, v] : avg.map) {
            const auto& other = next.at(name);
            require(other->value.size() == v->value.size(),
                    "average_checkpoints: shape mismatch for " + name);
            for (size_t j = 0; j < v->value.size(); ++j) v->value.v[j] += other->value.v[j];
        }
    }
    const Real inv = 1.0 / static_cast<Real>(paths.size());
    for (auto& [name, v] : avg.map) {
        (void)name;
        for (auto& x : v->value.v) x *= inv;
    }
    return avg;
}

// ---------------------------------------------------------------------------
// Adam state persistence (same record layout as checkpoints, two mats per
// parameter).

inline void save_adam(const neural::AdamState& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_adam: cannot open " + path);
    const uint32_t count = static_cast<uint32_t>(st.m.size());
    const int64_t step = st.step;
    os.write(reinterpret_cast<const char*>(&step), 8);
    os.write(reinterpret_cast<const char*>(&count), 4);
    auto write_mat = [&](const std::string& name, const Mat& mat) {
        const uint32_t len = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), 4);
        os.write(name.data(), len);
        const uint32_t rows = static_cast<uint32_t>(mat.rows), cols = static_cast<uint32_t>(mat.cols);
        os.write(reinterpret_cast<const char*>(&rows), 4);
        os.write(reinterpret_cast<const char*>(&cols), 4);
        os.write(reinterpret_cast<const char*>(mat.v.data()),
                 static_cast<std::streamsize>(mat.size() * sizeof(Real)));
    };
    for (const auto& [name, mat] : st.m) write_mat(name, mat);
    for (const auto& [name, mat] : st.v) write_mat(name, mat);
    require(os.good(), "save_adam: write failed for " + path);
}

inline neural::AdamState load_adam(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_adam: cannot open " + path);
    neural::AdamState st;
    int64_t step = 0;
    uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&step), 8);
    is.read(reinterpret_cast<char*>(&count), 4);
    st.step = step;
    auto read_mat = [&](std::string& name, Mat& mat) {
        uint32_t len = 0, rows = 0, cols = 0;
        is.read(reinterpret_cast<char*>(&len), 4);
        name.assign(len, '\0');
        is.read(name.data(), len);
        is.read(reinterpret_cast<char*>(&rows), 4);
        is.read(reinterpret_cast<char*>(&cols), 4);
        mat = Mat(rows, cols);
        is.read(reinterpret_cast<char*>(mat.v.data()),
                static_cast<std::streamsize>(mat.size() * sizeof(Real)));
    };
    for (uint32_t i = 0; i < 2 * count; ++i) {
        std::string name;
        Mat mat;
        read_mat(name, mat);
        require(is.good(), "load_adam: truncated record in " + path);
        (i < count ? st.m : st.v)[name] = std::move(mat);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainerOptions {
    std::string out_dir;
};

struct TrainerResult {
    std::string final_checkpoint;
    Real best_val = 0.0;
    long steps = 0;
    std::string last_state;
};

class Trainer {
  public:
    Trainer(Dataset train, Dataset val, TrainingConfig tcfg, pipeline::ModelConfig mcfg,
            TrainerOptions opt)
        : train_(std::move(train)),
          val_(std::move(val)),
          tcfg_(tcfg),
          mcfg_(mcfg),
          opt_(std::move(opt)),
          rng_(mix_seed(tcfg.seed, 0x7ea1)) {
        tcfg_.validate();
        mcfg_.validate();
        std::filesystem::create_directories(opt_.out_dir);
        fb_t_ = pipeline::make_fbank_constant(mcfg_);
    }

    void init_fresh() {
        Rng init_rng(mix_seed(tcfg_.seed, 0x1917));
        params_ = neural::ModelParams{};
        mcfg_.init_params(params_, init_rng);
        neural::adam_init(adam_, params_);
        rng_ = Rng(mix_seed(tcfg_.seed, 0x7ea1));
        step_ = 0;
        epoch_ = 0;
        current_lr_ = tcfg_.peak_lr;
        plateau_ = 0;
        best_val_ = std::numeric_limits<Real>::max();
        checkpoints_.clear();
    }

    void resume(const std::string& state_json_path) {
        std::ifstream is(state_json_path);
        require(is.good(), "resume: cannot open " + state_json_path);
        nlohmann::json j;
        is >> j;
        const std::string dir = std::filesystem::path(state_json_path).parent_path().string();
        params_ = neural::load_checkpoint(dir + "/last.bin", mcfg_.arch_string());
        adam_ = load_adam(dir + "/adam.bin");
        step_ = j.at("step").get<long>();
        epoch_ = j.at("epoch").get<size_t>();
        current_lr_ = j.at("lr").get<Real>();
        plateau_ = j.at("plateau").get<size_t>();
        best_val_ = j.at("best_val").get<Real>();
        rng_.deserialize(j.at("rng").get<std::string>());
        checkpoints_.clear();
        for (const auto& e : j.at("checkpoints"))
            checkpoints_.push_back({e.at("val").get<Real>(), e.at("path").get<std::string>()});
    }

    neural::ModelParams& params() { return params_; }

    TrainerResult run(std::ostream* metrics_out) {
        const size_t n = train_.utts.size();
        require(n > 0, "Trainer: empty training set");
        std::vector<const Utterance*> val_ptrs;
        for (const auto& u : val_.utts) val_ptrs.push_back(&u);

        TrainerResult result;
        for (; epoch_ < tcfg_.max_epochs; ++epoch_) {
            if (current_lr_ < tcfg_.stop_lr) break;
            std::vector<size_t> order(n);
            for (size_t i = 0; i < n; ++i) order[i] = i;
            Rng order_rng(mix_seed(tcfg_.seed, 0xE90C + epoch_));
            order_rng.shuffle(order);

            for (size_t pos = 0; pos < n; pos += tcfg_.batch_size) {
                std::vector<const Utterance*> batch;
                for (size_t i = pos; i < std::min(n, pos + tcfg_.batch_size); ++i)
                    batch.push_back(&train_.utts[order[i]]);
                const Real lr = scheduled_lr();
                auto metrics = train_step(batch, params_, adam_, tcfg_, mcfg_, fb_t_, lr, rng_);
                metrics.step = step_;
                if (metrics_out) *metrics_out << metrics.to_json().dump() << "\n";
                ++step_;
            }

            if (!val_ptrs.empty()) {
                const Real val = validation_loss(val_ptrs, params_, tcfg_, mcfg_, fb_t_);
                const std::string ckpt =
                    opt_.out_dir + "/ckpt_epoch" + std::to_string(epoch_) + ".bin";
                neural::save_checkpoint(params_, ckpt);
                checkpoints_.push_back({val, ckpt});
                if (val < best_val_ - 1e-9) {
                    best_val_ = val;
                    plateau_ = 0;
                } else if (++plateau_ >= tcfg_.plateau_evals) {
                    current_lr_ *= tcfg_.decay_factor;
                    plateau_ = 0;
                }
            }
            save_state();
        }

        // final model: mean of the best checkpoints by validation loss
        std::vector<std::pair<Real, std::string>> ranked = checkpoints_;
        std::sort(ranked.begin(), ranked.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::string> best_paths;
        for (size_t i = 0; i < std::min(tcfg_.average_best, ranked.size()); ++i)
            best_paths.push_back(ranked[i].second);
        result.final_checkpoint = opt_.out_dir + "/final.bin";
        if (best_paths.empty()) {
            neural::save_checkpoint(params_, result.final_checkpoint);
        } else {
            auto avg = average_checkpoints(best_paths, mcfg_.arch_string());
            neural::save_checkpoint(avg, result.final_checkpoint);
        }
        result.best_val = best_val_;
        result.steps = step_;
        result.last_state = opt_.out_dir + "/state.json";
        return result;
    }

  private:
    Real scheduled_lr() const {
        if (tcfg_.warmup_steps > 0 && static_cast<size_t>(step_) < tcfg_.warmup_steps)
            return current_lr_ * static_cast<Real>(step_ + 1) /
                   static_cast<Real>(tcfg_.warmup_steps);
        return current_lr_;
    }

    void save_state() {
        neural::save_checkpoint(params_, opt_.out_dir + "/last.bin");
        save_adam(adam_, opt_.out_dir + "/adam.bin");
        nlohmann::json j;
        j["step"] = step_;
        j["epoch"] = epoch_ + 1;  // resume starts at the next epoch
        j["lr"] = current_lr_;
        j["plateau"] = plateau_;
        j["best_val"] = best_val_ == std::numeric_limits<Real>::max() ? 1e300 : best_val_;
        j["rng"] = rng_.serialize();
        auto arr = nlohmann::json::array();
        for (const auto& [val, path] : checkpoints_)
            arr.push_back({{"val", val}, {"path", path}});
        j["checkpoints"] = arr;
        std::ofstream os(opt_.out_dir + "/state.json");
        os << j.dump(2) << "\n";
    }

    Dataset train_, val_;
    TrainingConfig tcfg_;
    pipeline::ModelConfig mcfg_;
    TrainerOptions opt_;
    Rng rng_;
    Var fb_t_;
    neural::ModelParams params_;
    neural::AdamState adam_;
    long step_ = 0;
    size_t epoch_ = 0;
    Real current_lr_ = 0.0;
    size_t plateau_ = 0;
    Real best_val_ = std::numeric_limits<Real>::max();
    std::vector<std::pair<Real, std::string>> checkpoints_;
};

}  // namespace cuside::training
