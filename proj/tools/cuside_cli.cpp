// Copyright 2026 the cuside authors
// Command-line front door: simulate | train | eval | enhance | stream |
// bench | verify (plus init for writing a fresh random checkpoint).
// Options resolve as flags over config file over defaults; every run prints
// its fully-resolved configuration. Exit codes: 0 success, 1 usage error,
// 2 verification failure, 3 I/O or runtime error.
//
// Licensed under the Apache License, Version 2.0

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cuside/metrics.hpp"
#include "cuside/scene.hpp"
#include "cuside/selfcheck.hpp"
#include "cuside/streamer.hpp"
#include "cuside/training.hpp"

using namespace cuside;
using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"seed", 1},
        {"model",
         {{"fft_size", 512},
          {"window_size", 512},
          {"hop", 160},
          {"mel_bins", 80},
          {"mask_layers", 3},
          {"mask_hidden", 320},
          {"mask_dropout", 0.5},
          {"encoder_layers", 2},
          {"encoder_hidden", 128},
          {"sim_layers", 3},
          {"sim_hidden", 256},
          {"vocab", 10},
          {"chunk_frames", 40},
          {"left_frames", 80},
          {"right_frames", 40},
          {"reference_channel", 0},
          {"diagonal_loading", 1e-6},
          {"sample_rate", 16000}}},
        {"data",
         {{"num_utterances", 200},
          {"snr_db_lo", 5.0},
          {"snr_db_hi", 5.0},
          {"num_mics", 4},
          {"mic_spacing", 0.05},
          {"num_tokens", 9},
          {"words_lo", 5},
          {"words_hi", 7},
          {"word_ms_lo", 110.0},
          {"word_ms_hi", 150.0}}},
        {"train",
         {{"alpha", 0.975},
          {"peak_lr", 2e-3},
          {"warmup_steps", 500},
          {"decay_factor", 0.1},
          {"stop_lr", 1e-6},
          {"plateau_evals", 2},
          {"clip_norm", 5.0},
          {"batch_size", 4},
          {"max_epochs", 20},
          {"jitter_low", 35},
          {"jitter_high", 45},
          {"average_best", 5},
          {"val_fraction", 0.1}}}};
}

json load_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream is(path);
        require(is.good(), "cannot open config file " + path);
        json file_cfg;
        is >> file_cfg;
        cfg.merge_patch(file_cfg);
    }
    return cfg;
}

pipeline::ModelConfig model_from_json(const json& j) {
    const auto& m = j.at("model");
    pipeline::ModelConfig cfg;
    cfg.stft.fft_size = m.at("fft_size").get<size_t>();
    cfg.stft.window_size = m.at("window_size").get<size_t>();
    cfg.stft.hop = m.at("hop").get<size_t>();
    cfg.mel_bins = m.at("mel_bins").get<size_t>();
    cfg.mask_net = {m.at("mask_layers").get<size_t>(), m.at("mask_hidden").get<size_t>(),
                    m.at("mask_dropout").get<Real>(), cfg.stft.num_bins()};
    cfg.encoder = {m.at("encoder_layers").get<size_t>(), m.at("encoder_hidden").get<size_t>(),
                   cfg.mel_bins, m.at("vocab").get<size_t>()};
    cfg.chunk_frames = m.at("chunk_frames").get<size_t>();
    cfg.left_frames = m.at("left_frames").get<size_t>();
    cfg.right_frames = m.at("right_frames").get<size_t>();
    cfg.sim = {m.at("sim_layers").get<size_t>(), m.at("sim_hidden").get<size_t>(), cfg.mel_bins,
               cfg.right_frames};
    cfg.mvdr.reference_channel = m.at("reference_channel").get<size_t>();
    cfg.mvdr.diagonal_loading = m.at("diagonal_loading").get<Real>();
    cfg.sample_rate = m.at("sample_rate").get<int>();
    cfg.validate();
    return cfg;
}

training::TrainingConfig training_from_json(const json& j) {
    const auto& t = j.at("train");
    training::TrainingConfig cfg;
    cfg.alpha = t.at("alpha").get<Real>();
    cfg.peak_lr = t.at("peak_lr").get<Real>();
    cfg.warmup_steps = t.at("warmup_steps").get<size_t>();
    cfg.decay_factor = t.at("decay_factor").get<Real>();
    cfg.stop_lr = t.at("stop_lr").get<Real>();
    cfg.plateau_evals = t.at("plateau_evals").get<size_t>();
    cfg.clip_norm = t.at("clip_norm").get<Real>();
    cfg.batch_size = t.at("batch_size").get<size_t>();
    cfg.max_epochs = t.at("max_epochs").get<size_t>();
    cfg.jitter_low = t.at("jitter_low").get<size_t>();
    cfg.jitter_high = t.at("jitter_high").get<size_t>();
    cfg.average_best = t.at("average_best").get<size_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.validate();
    return cfg;
}

scene::DatasetConfig dataset_from_json(const json& j) {
    const auto& d = j.at("data");
    scene::DatasetConfig cfg;
    cfg.num_utterances = d.at("num_utterances").get<size_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.snr_db_lo = d.at("snr_db_lo").get<Real>();
    cfg.snr_db_hi = d.at("snr_db_hi").get<Real>();
    cfg.num_mics = d.at("num_mics").get<size_t>();
    cfg.mic_spacing = d.at("mic_spacing").get<Real>();
    cfg.toy.num_tokens = d.at("num_tokens").get<size_t>();
    cfg.toy.words_lo = d.at("words_lo").get<size_t>();
    cfg.toy.words_hi = d.at("words_hi").get<size_t>();
    cfg.toy.word_ms_lo = d.at("word_ms_lo").get<Real>();
    cfg.toy.word_ms_hi = d.at("word_ms_hi").get<Real>();
    return cfg;
}

void log_resolved(const json& cfg, const std::string& out_dir = "") {
    std::cout << "config " << cfg.dump() << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(out_dir + "/config.json");
        os << cfg.dump(2) << "\n";
    }
}

chunking::ContextMode parse_mode(const std::string& s) {
    if (s == "none") return chunking::ContextMode::None;
    if (s == "real") return chunking::ContextMode::Real;
    if (s == "simulated" || s == "sim") return chunking::ContextMode::Simulated;
    fail("unknown context mode '" + s + "' (expected none|real|simulated)");
}

// deterministic train/validation split by shuffled index
std::pair<training::Dataset, training::Dataset> split_dataset(training::Dataset all, Real val_frac,
                                                              uint64_t seed) {
    std::vector<size_t> order(all.utts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0xDA7A));
    rng.shuffle(order);
    const size_t val_n = std::max<size_t>(1, static_cast<size_t>(val_frac * order.size()));
    training::Dataset train, val;
    for (size_t i = 0; i < order.size(); ++i)
        (i < val_n ? val : train).utts.push_back(std::move(all.utts[order[i]]));
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------

int cmd_simulate(const json& cfg, const std::string& out_dir, bool audit) {
    log_resolved(cfg, out_dir);
    auto ds_cfg = dataset_from_json(cfg);
    auto records = scene::synth_dataset(ds_cfg, out_dir);
    std::cout << "wrote " << records.size() << " utterances to " << out_dir << "\n";

    if (audit) {
        Real worst = 0.0;
        for (const auto& rec : records) {
            auto speech = signal::read_wav(rec.speech_path);
            auto noise = signal::read_wav(rec.noise_path);
            const Real measured = metrics::snr_db(speech.samples[0], noise.samples[0]);
            worst = std::max(worst, std::abs(measured - rec.snr_db));
        }
        std::cout << "snr audit: worst deviation " << worst << " dB over " << records.size()
                  << " utterances\n";
        if (worst > 0.1) {
            std::cout << "snr audit FAILED (tolerance 0.1 dB)\n";
            return 2;
        }
    }
    return 0;
}

int cmd_train(const json& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_state) {
    log_resolved(cfg, out_dir);
    auto mcfg = model_from_json(cfg);
    auto tcfg = training_from_json(cfg);
    const Real val_frac = cfg.at("train").at("val_fraction").get<Real>();

    auto all = training::Dataset::load(data_dir + "/manifest.jsonl");
    auto [train_set, val_set] = split_dataset(std::move(all), val_frac, tcfg.seed);
    std::cout << "train utterances " << train_set.utts.size() << ", validation "
              << val_set.utts.size() << "\n";

    training::Trainer trainer(std::move(train_set), std::move(val_set), tcfg, mcfg, {out_dir});
    if (resume_state.empty())
        trainer.init_fresh();
    else
        trainer.resume(resume_state);

    std::ofstream metrics(out_dir + "/metrics.jsonl", resume_state.empty()
                                                          ? std::ios::trunc
                                                          : std::ios::app);
    require(metrics.good(), "cannot open metrics log in " + out_dir);
    auto result = trainer.run(&metrics);
    std::cout << "final checkpoint " << result.final_checkpoint << "\n";
    std::cout << "best validation loss " << result.best_val << " after " << result.steps
              << " steps\n";
    return 0;
}

int cmd_init(const json& cfg, const std::string& out_path) {
    log_resolved(cfg);
    auto mcfg = model_from_json(cfg);
    neural::ModelParams params;
    Rng rng(mix_seed(cfg.at("seed").get<uint64_t>(), 0x1917));
    mcfg.init_params(params, rng);
    neural::save_checkpoint(params, out_path);
    std::cout << "wrote untrained checkpoint " << out_path << " (" << params.map.size()
              << " tensors, " << params.num_values() << " values)\n";
    return 0;
}

struct EvalRow {
    std::string name;
    std::string right_ctx;
    std::string latency;
    Real cer = 0.0;
    Real si_sdr_gain = 0.0;
    bool has_sdr = false;
};

int cmd_eval(const json& cfg, const std::string& data_dir, const std::string& model_path,
             const std::string& out_dir, size_t limit) {
    log_resolved(cfg, out_dir);
    auto mcfg = model_from_json(cfg);
    auto params = neural::load_checkpoint(model_path, mcfg.arch_string());
    auto fb_t = pipeline::make_fbank_constant(mcfg);

    auto ds = training::Dataset::load(data_dir + "/manifest.jsonl");
    if (limit > 0 && ds.utts.size() > limit) ds.utts.resize(limit);
    require(!ds.utts.empty(), "eval: empty dataset");

    std::ofstream hyps;
    if (!out_dir.empty()) {
        hyps.open(out_dir + "/hyps.jsonl");
        require(hyps.good(), "cannot open hypothesis dump in " + out_dir);
    }
    auto dump = [&](const std::string& mode, const training::Utterance& utt,
                    const asr::TokenSequence& hyp) {
        if (!hyps.is_open()) return;
        hyps << json{{"id", utt.id},
                     {"mode", mode},
                     {"hyp", scene::transcript_to_string(hyp)},
                     {"ref", scene::transcript_to_string(utt.transcript)}}
                    .dump()
             << "\n";
    };

    const size_t w = mcfg.stft.window_size;
    auto sdr_gain = [&](const training::Utterance& utt, const signal::Waveform& enhanced) {
        auto speech = signal::read_wav(utt.record.speech_path);
        const size_t n = std::min(enhanced.num_samples(), speech.num_samples());
        if (n <= 2 * w) return std::pair<Real, bool>{0.0, false};
        const size_t ref = mcfg.mvdr.reference_channel;
        const Real before =
            metrics::si_sdr_db(utt.mixture.samples[ref], speech.samples[ref], w, n - w);
        std::vector<Real> est(enhanced.samples[0].begin(), enhanced.samples[0].begin() + n);
        std::vector<Real> tgt(speech.samples[ref].begin(), speech.samples[ref].begin() + n);
        const Real after = metrics::si_sdr_db(est, tgt, w, n - w);
        return std::pair<Real, bool>{after - before, true};
    };

    std::vector<EvalRow> rows;
    {
        EvalRow row{"non-streaming", "-", "-", 0.0, 0.0, false};
        std::vector<std::pair<asr::TokenSequence, asr::TokenSequence>> pairs;
        Real gain = 0.0;
        size_t gains = 0;
        for (const auto& utt : ds.utts) {
            auto spec = signal::stft(utt.mixture, mcfg.stft);
            auto whole = pipeline::run_whole(params, mcfg, spec, fb_t, false, nullptr);
            auto hyp = asr::greedy_decode(whole.logits->value);
            pairs.push_back({hyp, utt.transcript});
            dump("non-streaming", utt, hyp);

            signal::MultiChannelSpectrogram enhanced_spec;
            enhanced_spec.config = mcfg.stft;
            enhanced_spec.num_frames = whole.complex_frames->frames;
            enhanced_spec.data.assign(1, whole.complex_frames->data);
            auto audio = signal::istft(enhanced_spec, mcfg.sample_rate, utt.mixture.num_samples());
            auto [g, ok] = sdr_gain(utt, audio);
            if (ok) {
                gain += g;
                ++gains;
            }
        }
        row.cer = asr::cer(pairs);
        if (gains > 0) {
            row.si_sdr_gain = gain / static_cast<Real>(gains);
            row.has_sdr = true;
        }
        rows.push_back(row);
    }

    for (auto mode : {chunking::ContextMode::None, chunking::ContextMode::Real,
                      chunking::ContextMode::Simulated}) {
        auto scfg = streamer::StreamConfig::from_model(mcfg, mode);
        EvalRow row;
        row.name = std::string("streaming ") + chunking::to_string(mode);
        std::vector<std::pair<asr::TokenSequence, asr::TokenSequence>> pairs;
        Real gain = 0.0, sim_ms = 0.0;
        size_t gains = 0, chunks = 0;
        for (const auto& utt : ds.utts) {
            auto res = streamer::stream_decode(utt.mixture, params, mcfg, scfg, fb_t);
            pairs.push_back({res.transcript, utt.transcript});
            dump(chunking::to_string(mode), utt, res.transcript);
            for (const auto& ev : res.events) {
                sim_ms += ev.sim_ms;
                ++chunks;
            }
            auto enhanced = streamer::enhance_stream(utt.mixture, params, mcfg, scfg, fb_t);
            auto [g, ok] = sdr_gain(utt, enhanced);
            if (ok) {
                gain += g;
                ++gains;
            }
        }
        row.cer = asr::cer(pairs);
        if (gains > 0) {
            row.si_sdr_gain = gain / static_cast<Real>(gains);
            row.has_sdr = true;
        }
        std::ostringstream lat;
        switch (mode) {
            case chunking::ContextMode::None:
                row.right_ctx = "0";
                lat << scfg.algorithmic_latency_ms();
                break;
            case chunking::ContextMode::Real:
                row.right_ctx = std::to_string(static_cast<int>(scfg.right_ctx_ms));
                lat << scfg.algorithmic_latency_ms();
                break;
            case chunking::ContextMode::Simulated:
                row.right_ctx = "[" + std::to_string(static_cast<int>(scfg.right_ctx_ms)) + "]";
                lat << scfg.algorithmic_latency_ms() << " + "
                    << std::fixed << std::setprecision(2)
                    << (chunks ? sim_ms / static_cast<Real>(chunks) : 0.0);
                break;
        }
        row.latency = lat.str();
        rows.push_back(row);
    }

    std::cout << std::left << std::setw(18) << "mode" << std::setw(14) << "right-ctx(ms)"
              << std::setw(16) << "latency(ms)" << std::setw(10) << "CER"
              << "SI-SDRi(dB)\n";
    json report = json::array();
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(18) << r.name << std::setw(14) << r.right_ctx
                  << std::setw(16) << r.latency << std::setw(10) << std::fixed
                  << std::setprecision(4) << r.cer;
        if (r.has_sdr)
            std::cout << std::setprecision(2) << r.si_sdr_gain;
        else
            std::cout << "-";
        std::cout << "\n";
        report.push_back({{"mode", r.name},
                          {"right_ctx", r.right_ctx},
                          {"latency", r.latency},
                          {"cer", r.cer},
                          {"si_sdr_gain", r.has_sdr ? json(r.si_sdr_gain) : json(nullptr)}});
    }
    if (!out_dir.empty()) {
        std::ofstream os(out_dir + "/report.json");
        os << report.dump(2) << "\n";
    }
    return 0;
}

int cmd_enhance(const json& cfg, const std::string& in_path, const std::string& out_path,
                const std::string& model_path, const std::string& mask_source,
                const std::string& speech_path, const std::string& noise_path,
                const std::string& mode_str) {
    log_resolved(cfg);
    auto mcfg = model_from_json(cfg);
    auto mixture = signal::read_wav(in_path);
    auto scfg = streamer::StreamConfig::from_model(mcfg, parse_mode(mode_str));

    signal::Waveform enhanced;
    if (mask_source == "model") {
        require(!model_path.empty(), "enhance: --model is required with --mask-source model");
        auto params = neural::load_checkpoint(model_path, mcfg.arch_string());
        auto fb_t = pipeline::make_fbank_constant(mcfg);
        enhanced = streamer::enhance_stream(mixture, params, mcfg, scfg, fb_t);
    } else if (mask_source == "oracle") {
        require(!speech_path.empty() && !noise_path.empty(),
                "enhance: --speech and --noise are required with --mask-source oracle");
        auto speech = signal::read_wav(speech_path);
        auto noise = signal::read_wav(noise_path);
        enhanced = streamer::enhance_stream_oracle(mixture, speech, noise, mcfg, scfg);
    } else if (mask_source == "flat") {
        // constant 0.5 masks; useful for M=1 where MVDR reduces to identity
        auto spec = signal::stft(mixture, mcfg.stft);
        auto plan = chunking::plan_chunks(spec.num_frames, scfg.chunk_frames(),
                                          scfg.left_frames(), scfg.right_frames());
        pipeline::ChunkedRun run;
        run.plan = plan;
        for (const auto& d : plan.descriptors) {
            auto fe_desc = d;
            if (scfg.right_ctx_mode != chunking::ContextMode::Real) {
                fe_desc.right_ctx_end = fe_desc.core_end;
                fe_desc.right_pad = 0;
            }
            auto chunk = beamformer::extract_chunk_spectra(spec, fe_desc);
            neural::Mat half(chunk.frames, chunk.bins, 0.5);
            auto res = beamformer::enhance_chunk_with_masks(chunk, half, half, mcfg.mvdr,
                                                            fe_desc.core_offset(), d.core_len());
            run.chunk_complex.push_back(
                std::make_shared<beamformer::EnhancedSpectra>(res.frames));
            run.chunk_core_offset.push_back(res.core_offset);
        }
        enhanced = streamer::stitch_enhanced(run, mcfg, mixture.num_samples());
    } else {
        fail("enhance: unknown mask source '" + mask_source + "' (model|oracle|flat)");
    }
    signal::write_wav(out_path, enhanced);
    std::cout << "wrote " << out_path << " (" << enhanced.num_samples() << " samples)\n";
    return 0;
}

int cmd_stream(const json& cfg, const std::string& in_path, const std::string& model_path,
               const std::string& mode_str, const std::string& events_path) {
    log_resolved(cfg);
    auto mcfg = model_from_json(cfg);
    auto params = neural::load_checkpoint(model_path, mcfg.arch_string());
    auto fb_t = pipeline::make_fbank_constant(mcfg);
    auto mixture = signal::read_wav(in_path);
    auto scfg = streamer::StreamConfig::from_model(mcfg, parse_mode(mode_str));

    auto res = streamer::stream_decode(mixture, params, mcfg, scfg, fb_t);
    if (!events_path.empty()) {
        std::ofstream os(events_path);
        require(os.good(), "cannot open event log " + events_path);
        for (const auto& ev : res.events) {
            json j{{"chunk", ev.chunk_index},
                   {"tokens", scene::transcript_to_string(ev.emitted)},
                   {"alg_latency_ms", ev.algorithmic_latency_ms},
                   {"compute_ms", ev.compute_ms}};
            if (scfg.right_ctx_mode == chunking::ContextMode::Simulated)
                j["sim_ms"] = ev.sim_ms;
            os << j.dump() << "\n";
        }
    }
    auto rep = streamer::latency_report(res.events, scfg);
    std::cout << "transcript: " << scene::transcript_to_string(res.transcript) << "\n";
    std::cout << "chunks " << rep.chunks << ", algorithmic latency " << rep.algorithmic_ms
              << " ms, mean compute " << rep.mean_compute_ms << " ms, p95 "
              << rep.p95_compute_ms << " ms";
    if (scfg.right_ctx_mode == chunking::ContextMode::Simulated)
        std::cout << ", mean simulator " << rep.mean_sim_ms << " ms";
    std::cout << "\n";
    if (res.short_input_padded) std::cout << "note: input shorter than one chunk, zero-padded\n";
    return 0;
}

int cmd_bench(const json& cfg, const std::string& json_out, size_t reps) {
    log_resolved(cfg);
    auto mcfg = model_from_json(cfg);
    neural::ModelParams params;
    Rng rng(42);
    mcfg.init_params(params, rng);
    auto fb_t = pipeline::make_fbank_constant(mcfg);

    const size_t chunk_len = mcfg.left_frames + mcfg.chunk_frames + mcfg.right_frames;
    const size_t mics = 4;
    beamformer::ChunkSpectra chunk(chunk_len, mics, mcfg.stft.num_bins());
    for (auto& v : chunk.data) v = beamformer::Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto features = neural::constant(beamformer::log_magnitude(chunk, 0));
    neural::Mat mask(chunk_len, mcfg.stft.num_bins(), 0.6);
    neural::Mat fbank(chunk_len, mcfg.mel_bins);
    for (auto& v : fbank.v) v = rng.uniform(-5, 0);

    std::vector<Real> wave(static_cast<size_t>(mcfg.sample_rate));
    for (auto& v : wave) v = rng.uniform(-0.5, 0.5);
    signal::Waveform mono = signal::Waveform::mono(wave, mcfg.sample_rate);

    auto phi = beamformer::estimate_scm(chunk, mask);
    beamformer::MaskNet mask_net{mcfg.mask_net};
    asr::Encoder encoder{mcfg.encoder};
    simulation::SimNet sim_net{mcfg.sim};

    struct Stage {
        std::string name;
        std::function<void()> fn;
    };
    std::vector<Stage> stages = {
        {"stft_1s", [&] { signal::stft(mono, mcfg.stft); }},
        {"mask_net_chunk", [&] { mask_net.forward(params, features, false, nullptr); }},
        {"scm_chunk", [&] { beamformer::estimate_scm(chunk, mask); }},
        {"mvdr_solve", [&] { beamformer::mvdr_weights(phi, phi, mcfg.mvdr); }},
        {"apply_filter",
         [&] {
             auto w = beamformer::mvdr_weights(phi, phi, mcfg.mvdr);
             beamformer::apply_beamformer(w, chunk);
         }},
        {"encoder_chunk", [&] { encoder.forward(params, neural::constant(fbank)); }},
        {"simulator_chunk",
         [&] { sim_net.forward(params, neural::constant(fbank), sim_net.initial_state()); }},
    };

    json out = json::array();
    std::cout << std::left << std::setw(18) << "stage" << "median_ms (" << reps << " reps)\n";
    for (auto& stage : stages) {
        // warm caches, then batch fast stages so each timed sample is >= ~0.5 ms
        const auto p0 = std::chrono::steady_clock::now();
        stage.fn();
        stage.fn();
        const Real probe = pipeline::elapsed_ms(p0) / 2.0;
        const size_t inner = probe >= 0.5 ? 1 : static_cast<size_t>(std::ceil(0.5 / std::max(probe, 1e-4)));
        std::vector<Real> times;
        for (size_t r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            for (size_t k = 0; k < inner; ++k) stage.fn();
            times.push_back(pipeline::elapsed_ms(t0) / static_cast<Real>(inner));
        }
        std::sort(times.begin(), times.end());
        const Real median = times[times.size() / 2];
        std::cout << std::left << std::setw(18) << stage.name << std::fixed
                  << std::setprecision(3) << median << "\n";
        out.push_back({{"stage", stage.name}, {"median_ms", median}});
    }
    if (!json_out.empty()) {
        std::ofstream os(json_out);
        os << out.dump(2) << "\n";
    }
    return 0;
}

int cmd_verify(const json& cfg, const std::string& inject_fault) {
    log_resolved(cfg);
    selfcheck::CheckOptions opt;
    opt.inject_fault = inject_fault;
    opt.seed = cfg.at("seed").get<uint64_t>();
    auto checks = selfcheck::build_registry(opt);
    std::cout << "registered checks: " << checks.size() << "\n";

    size_t failed = 0;
    std::string first_failure;
    for (size_t i = 0; i < checks.size(); ++i) {
        std::string detail;
        const bool ok = checks[i].run(detail);
        std::cout << "[" << (i + 1) << "/" << checks.size() << "] " << std::left << std::setw(20)
                  << checks[i].name << (ok ? "PASS" : "FAIL") << "  " << detail << "\n";
        if (!ok && first_failure.empty()) first_failure = checks[i].name;
        if (!ok) ++failed;
    }
    if (failed > 0) {
        std::cout << failed << " check(s) failed, first: " << first_failure << "\n";
        return 2;
    }
    std::cout << "all " << checks.size() << " checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming multi-channel ASR with chunked neural beamforming and simulated "
                 "future context"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "synthesize a toy multi-channel dataset");
    std::string sim_out = "data";
    bool sim_audit = false;
    size_t sim_n = 0;
    uint64_t sim_seed = 0;
    double sim_snr = 0.0;
    size_t sim_mics = 0;
    sim->add_option("--out", sim_out, "output directory");
    auto* sim_n_opt = sim->add_option("--n", sim_n, "number of utterances");
    auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "dataset seed");
    auto* sim_snr_opt = sim->add_option("--snr", sim_snr, "fixed SNR in dB");
    auto* sim_mics_opt = sim->add_option("--mics", sim_mics, "number of microphones");
    sim->add_flag("--audit", sim_audit, "re-measure SNR from the written files");

    // train
    auto* train = app.add_subcommand("train", "train the multi-task model");
    std::string train_data, train_out = "run", train_resume;
    double train_alpha = 0.0;
    size_t train_epochs = 0;
    uint64_t train_seed = 0;
    train->add_option("--data", train_data, "dataset directory (with manifest.jsonl)")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--resume", train_resume, "state.json to resume from");
    auto* alpha_opt = train->add_option("--alpha", train_alpha, "simulation loss weight");
    auto* epochs_opt = train->add_option("--epochs", train_epochs, "max epochs");
    auto* tseed_opt = train->add_option("--seed", train_seed, "training seed");

    // init
    auto* init = app.add_subcommand("init", "write an untrained checkpoint for the config");
    std::string init_out = "init.bin";
    init->add_option("--out", init_out, "checkpoint path");

    // eval
    auto* eval = app.add_subcommand("eval", "CER/SI-SDR/latency report per context mode");
    std::string eval_data, eval_model, eval_out;
    size_t eval_limit = 0;
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--model", eval_model, "checkpoint")->required();
    eval->add_option("--out", eval_out, "directory for report.json and hyps.jsonl");
    eval->add_option("--limit", eval_limit, "evaluate only the first N utterances");

    // enhance
    auto* enhance = app.add_subcommand("enhance", "front-end enhancement to a WAV");
    std::string enh_in, enh_out, enh_model, enh_masks = "model", enh_speech, enh_noise,
                enh_mode = "none";
    enhance->add_option("--in", enh_in, "input multi-channel WAV")->required();
    enhance->add_option("--out", enh_out, "output WAV")->required();
    enhance->add_option("--model", enh_model, "checkpoint (mask source model)");
    enhance->add_option("--mask-source", enh_masks, "model|oracle|flat");
    enhance->add_option("--speech", enh_speech, "ground-truth speech image (oracle)");
    enhance->add_option("--noise", enh_noise, "ground-truth noise image (oracle)");
    enhance->add_option("--mode", enh_mode, "right context mode none|real");

    // stream
    auto* stream = app.add_subcommand("stream", "streaming decode with a latency report");
    std::string st_in, st_model, st_mode = "none", st_events;
    stream->add_option("--in", st_in, "input WAV")->required();
    stream->add_option("--model", st_model, "checkpoint")->required();
    stream->add_option("--mode", st_mode, "right context mode none|real|simulated");
    stream->add_option("--events", st_events, "write per-chunk events as JSON lines");

    // bench
    auto* bench = app.add_subcommand("bench", "per-stage timing on a fixed workload");
    std::string bench_json;
    size_t bench_reps = 25;
    bench->add_option("--json", bench_json, "write stage medians as JSON");
    bench->add_option("--reps", bench_reps, "repetitions per stage");

    // verify
    auto* verify = app.add_subcommand("verify", "run the invariant and oracle suite");
    std::string fault;
    verify->add_option("--inject-fault", fault, "test hook: sabotage the named check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        json cfg = load_config(config_path);
        if (sim->parsed()) {
            if (sim_n_opt->count()) cfg["data"]["num_utterances"] = sim_n;
            if (sim_seed_opt->count()) cfg["seed"] = sim_seed;
            if (sim_snr_opt->count()) {
                cfg["data"]["snr_db_lo"] = sim_snr;
                cfg["data"]["snr_db_hi"] = sim_snr;
            }
            if (sim_mics_opt->count()) cfg["data"]["num_mics"] = sim_mics;
            return cmd_simulate(cfg, sim_out, sim_audit);
        }
        if (train->parsed()) {
            if (alpha_opt->count()) cfg["train"]["alpha"] = train_alpha;
            if (epochs_opt->count()) cfg["train"]["max_epochs"] = train_epochs;
            if (tseed_opt->count()) cfg["seed"] = train_seed;
            return cmd_train(cfg, train_data, train_out, train_resume);
        }
        if (init->parsed()) return cmd_init(cfg, init_out);
        if (eval->parsed()) return cmd_eval(cfg, eval_data, eval_model, eval_out, eval_limit);
        if (enhance->parsed())
            return cmd_enhance(cfg, enh_in, enh_out, enh_model, enh_masks, enh_speech, enh_noise,
                               enh_mode);
        if (stream->parsed()) return cmd_stream(cfg, st_in, st_model, st_mode, st_events);
        if (bench->parsed()) return cmd_bench(cfg, bench_json, bench_reps);
        if (verify->parsed()) return cmd_verify(cfg, fault);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
