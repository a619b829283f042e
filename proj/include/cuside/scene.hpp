// Copyright 2026 the cuside authors
// Far-field multi-channel scene synthesis: plane-wave delays, SNR-controlled
// mixing, oracle masks, and a tone-word toy dataset with ground-truth
// speech/noise images.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cuside/common.hpp"
#include "cuside/fft.hpp"
#include "cuside/metrics.hpp"
#include "cuside/signal.hpp"
#include "cuside/wav.hpp"

namespace cuside::scene {

using signal::Waveform;
using Vec3 = std::array<Real, 3>;

struct ArrayGeometry {
    std::vector<Vec3> mic_positions;  // meters
    Real speed_of_sound = 343.0;

    size_t num_mics() const { return mic_positions.size(); }

    void validate() const {
        require(!mic_positions.empty(), "ArrayGeometry: need at least one microphone");
        require(speed_of_sound > 0, "ArrayGeometry: bad speed of sound");
        for (size_t i = 0; i < mic_positions.size(); ++i) {
            for (Real v : mic_positions[i]) require(is_finite(v), "ArrayGeometry: non-finite position");
            for (size_t j = i + 1; j < mic_positions.size(); ++j) {
                Real d2 = 0.0;
                for (int a = 0; a < 3; ++a) {
                    const Real d = mic_positions[i][a] - mic_positions[j][a];
                    d2 += d * d;
                }
                require(d2 > 0.0, "ArrayGeometry: coincident microphones");
            }
        }
    }

    // uniform linear array along x, centered on the origin
    static ArrayGeometry linear(size_t mics, Real spacing = 0.05) {
        ArrayGeometry g;
        const Real mid = static_cast<Real>(mics - 1) / 2.0;
        for (size_t m = 0; m < mics; ++m)
            g.mic_positions.push_back({(static_cast<Real>(m) - mid) * spacing, 0.0, 0.0});
        return g;
    }
};

// Plane-wave delay per mic, relative to the array origin:
//   delay_m = -(k_hat . p_m) / c
// with k_hat the unit propagation vector (pointing away from the source).
inline std::vector<Real> steering_delays(const ArrayGeometry& geom, Real azimuth, Real elevation) {
    geom.validate();
    const Vec3 source_dir = {std::cos(elevation) * std::cos(azimuth),
                             std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
    const Vec3 k_hat = {-source_dir[0], -source_dir[1], -source_dir[2]};
    std::vector<Real> delays(geom.num_mics());
    for (size_t m = 0; m < geom.num_mics(); ++m) {
        const auto& p = geom.mic_positions[m];
        delays[m] = -(k_hat[0] * p[0] + k_hat[1] * p[1] + k_hat[2] * p[2]) / geom.speed_of_sound;
    }
    return delays;
}

// Delay a mono source to each mic with an exact frequency-domain phase shift
// e^{-j 2 pi f delay}. The shift is circular over a padded power-of-two
// buffer and the full buffer is returned, so a pure delay preserves energy
// exactly; callers that want the original length trim afterwards.
inline Waveform spatialize(const Waveform& source, const std::vector<Real>& delays, int sr) {
    require(source.num_channels() == 1, "spatialize: source must be mono");
    source.validate();
    const size_t len = source.num_samples();
    require(len > 0, "spatialize: empty source");

    const size_t nfft = fft::next_pow2(len + 64);
    std::vector<fft::Cplx> base(nfft, fft::Cplx(0, 0));
    for (size_t i = 0; i < len; ++i) base[i] = fft::Cplx(source.samples[0][i], 0.0);
    fft::fft_inplace(base, false);

    Waveform out;
    out.sample_rate = sr;
    out.samples.assign(delays.size(), std::vector<Real>(nfft, 0.0));
    std::vector<fft::Cplx> spec(nfft);
    for (size_t m = 0; m < delays.size(); ++m) {
        const Real tau = delays[m];
        for (size_t k = 0; k <= nfft / 2; ++k) {
            const Real f = static_cast<Real>(sr) * static_cast<Real>(k) / static_cast<Real>(nfft);
            const Real phase = -2.0 * M_PI * f * tau;
            spec[k] = base[k] * fft::Cplx(std::cos(phase), std::sin(phase));
        }
        // keep the time-domain result real
        spec[nfft / 2] = fft::Cplx(spec[nfft / 2].real(), 0.0);
        for (size_t k = nfft / 2 + 1; k < nfft; ++k) spec[k] = std::conj(spec[nfft - k]);
        auto time = fft::ifft(spec);
        for (size_t i = 0; i < nfft; ++i) out.samples[m][i] = time[i].real();
    }
    return out;
}

inline void trim_waveform(Waveform& w, size_t length) {
    for (auto& ch : w.samples)
        if (ch.size() > length) ch.resize(length);
}

// Scale the noise image so that the reference-channel SNR equals snr_db.
inline std::pair<Waveform, Waveform> mix_at_snr(const Waveform& speech_image,
                                                const Waveform& noise_image, Real snr_db,
                                                size_t ref) {
    require(speech_image.num_channels() == noise_image.num_channels(),
            "mix_at_snr: channel count mismatch");
    require(speech_image.num_samples() == noise_image.num_samples(),
            "mix_at_snr: length mismatch");
    require(ref < speech_image.num_channels(), "mix_at_snr: bad reference channel");
    require(is_finite(snr_db), "mix_at_snr: non-finite SNR");

    const Real ps = metrics::signal_power(speech_image.samples[ref]);
    const Real pn = metrics::signal_power(noise_image.samples[ref]);
    require(ps > 0, "mix_at_snr: zero-power speech at reference");
    require(pn > 0, "mix_at_snr: zero-power noise at reference");

    const Real alpha = std::sqrt(ps / pn * std::pow(10.0, -snr_db / 10.0));

    Waveform scaled_noise = noise_image;
    for (auto& ch : scaled_noise.samples)
        for (Real& v : ch) v *= alpha;

    Waveform mixture = speech_image;
    for (size_t c = 0; c < mixture.num_channels(); ++c)
        for (size_t i = 0; i < mixture.num_samples(); ++i)
            mixture.samples[c][i] += scaled_noise.samples[c][i];
    return {mixture, scaled_noise};
}

// Ideal ratio masks from ground-truth images at the reference channel.
// speech[t][k] = |S|^2 / (|S|^2 + |N|^2), 0/0 defined as 0.5.
struct OracleMasks {
    std::vector<std::vector<Real>> speech;  // [frame][bin]
    std::vector<std::vector<Real>> noise;
};

inline OracleMasks oracle_irm(const signal::MultiChannelSpectrogram& speech_spec,
                              const signal::MultiChannelSpectrogram& noise_spec, size_t ref) {
    require(speech_spec.num_frames == noise_spec.num_frames &&
                speech_spec.num_bins() == noise_spec.num_bins(),
            "oracle_irm: shape mismatch");
    require(ref < speech_spec.num_channels() && ref < noise_spec.num_channels(),
            "oracle_irm: bad reference channel");

    const size_t T = speech_spec.num_frames;
    const size_t K = speech_spec.num_bins();
    OracleMasks m;
    m.speech.assign(T, std::vector<Real>(K));
    m.noise.assign(T, std::vector<Real>(K));
    for (size_t t = 0; t < T; ++t) {
        for (size_t k = 0; k < K; ++k) {
            const Real ps = std::norm(speech_spec.at(ref, t, k));
            const Real pn = std::norm(noise_spec.at(ref, t, k));
            const Real s = (ps + pn) > 0 ? ps / (ps + pn) : 0.5;
            m.speech[t][k] = s;
            m.noise[t][k] = 1.0 - s;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Toy task: tone "words". Token i (1-based) maps to a pure tone at a fixed
// FFT-bin-aligned frequency; an utterance is a token sequence rendered as
// enveloped tone bursts separated by short gaps.

struct ToyTaskConfig {
    int sample_rate = 16000;
    size_t num_tokens = 9;  // vocabulary size excluding blank
    Real amplitude = 0.25;
    // Words are two-part tone patterns: an opening tone with a slow attack
    // ramp followed by a full-amplitude closing tone. The two halves draw
    // from disjoint frequency sets, so a word cut by a chunk boundary is
    // only resolvable once its closing half (or a prediction of it) is
    // visible. Short words keep the CTC alignment crisp; long steady tones
    // make the blank/token symmetry very slow to break.
    Real word_ms_lo = 110, word_ms_hi = 150;
    Real gap_ms_lo = 40, gap_ms_hi = 80;
    Real lead_ms = 60, tail_ms = 80;
    size_t words_lo = 5, words_hi = 7;

    // bin-centered tone frequencies for fft_size 512 at 16 kHz;
    // token t (1-based) maps to (opening[(t-1)/3], closing[(t-1)%3])
    std::pair<Real, Real> token_freqs(size_t token_1based) const {
        static const std::array<int, 3> opening = {16, 32, 56};    // 500/1000/1750 Hz
        static const std::array<int, 3> closing = {80, 104, 128};  // 2500/3250/4000 Hz
        require(token_1based >= 1 && token_1based <= 9, "toy: token out of range");
        const size_t idx = token_1based - 1;
        const Real hz = static_cast<Real>(sample_rate) / 512.0;
        return {static_cast<Real>(opening[idx / 3]) * hz,
                static_cast<Real>(closing[idx % 3]) * hz};
    }
};

inline Waveform render_toy_utterance(const std::vector<int>& tokens, const ToyTaskConfig& cfg,
                                     Rng& rng) {
    const Real sr = static_cast<Real>(cfg.sample_rate);
    auto ms_to_samples = [&](Real ms) { return static_cast<size_t>(ms * sr / 1000.0); };

    std::vector<Real> out(ms_to_samples(cfg.lead_ms), 0.0);
    for (size_t w = 0; w < tokens.size(); ++w) {
        const size_t n = ms_to_samples(rng.uniform(cfg.word_ms_lo, cfg.word_ms_hi));
        const size_t first = n / 2;
        const auto [f_open, f_close] = cfg.token_freqs(static_cast<size_t>(tokens[w]));
        const Real ph0 = rng.uniform(0.0, 2.0 * M_PI);
        const Real ph1 = rng.uniform(0.0, 2.0 * M_PI);
        const size_t release = ms_to_samples(15.0);
        for (size_t i = 0; i < n; ++i) {
            Real env, freq, phase;
            if (i < first) {
                // slow attack across the whole opening half
                env = static_cast<Real>(i + 1) / static_cast<Real>(first);
                freq = f_open;
                phase = ph0;
            } else {
                env = 1.0;
                freq = f_close;
                phase = ph1;
            }
            if (n - 1 - i < release)
                env = std::min(env, static_cast<Real>(n - 1 - i) / static_cast<Real>(release));
            out.push_back(cfg.amplitude * env *
                          std::sin(phase + 2.0 * M_PI * freq * static_cast<Real>(i) / sr));
        }
        if (w + 1 < tokens.size()) {
            const size_t gap = ms_to_samples(rng.uniform(cfg.gap_ms_lo, cfg.gap_ms_hi));
            out.insert(out.end(), gap, 0.0);
        }
    }
    out.insert(out.end(), ms_to_samples(cfg.tail_ms), 0.0);
    return Waveform::mono(std::move(out), cfg.sample_rate);
}

// white Gaussian noise tapered at both ends (taper keeps delays lossless)
inline Waveform white_noise(size_t len, int sr, Rng& rng, Real amplitude = 1.0) {
    std::vector<Real> n(len);
    for (auto& v : n) v = amplitude * rng.normal();
    const size_t ramp = std::min<size_t>(64, len / 4);
    for (size_t i = 0; i < ramp; ++i) {
        const Real g = static_cast<Real>(i) / static_cast<Real>(ramp);
        n[i] *= g;
        n[len - 1 - i] *= g;
    }
    return Waveform::mono(std::move(n), sr);
}

struct SceneSpec {
    Waveform source;          // mono clean speech
    Real azimuth = 0.0;       // radians
    Real elevation = 0.0;
    Real noise_azimuth = 0.0; // directional interferer direction
    Real snr_db = 5.0;
    size_t reference_channel = 0;
    uint64_t seed = 0;
    Real diffuse_db = -20.0;  // per-mic white floor relative to the interferer

    void validate() const {
        require(is_finite(snr_db), "SceneSpec: non-finite SNR");
        require(source.num_samples() > 0, "SceneSpec: empty source");
    }
};

struct SimulatedScene {
    Waveform mixture;       // M channels
    Waveform speech_image;  // M channels
    Waveform noise_image;   // M channels, already scaled
    SceneSpec spec;
};

inline SimulatedScene simulate_scene(const SceneSpec& spec, const ArrayGeometry& geom) {
    spec.validate();
    geom.validate();
    const int sr = spec.source.sample_rate;
    const size_t len = spec.source.num_samples();
    Rng rng(mix_seed(spec.seed, 0x5ce17e));

    // keep a short margin past the source so physical inter-mic shifts survive the trim
    const size_t scene_len = len + 64;

    const auto speech_delays = steering_delays(geom, spec.azimuth, spec.elevation);
    Waveform speech_image = spatialize(spec.source, speech_delays, sr);
    trim_waveform(speech_image, scene_len);

    // directional interferer plus a small uncorrelated per-mic floor
    Waveform interferer = white_noise(len, sr, rng);
    const auto noise_delays = steering_delays(geom, spec.noise_azimuth, 0.0);
    Waveform noise_image = spatialize(interferer, noise_delays, sr);
    trim_waveform(noise_image, scene_len);
    const Real floor_gain = std::pow(10.0, spec.diffuse_db / 20.0);
    for (size_t m = 0; m < geom.num_mics(); ++m)
        for (size_t i = 0; i < scene_len; ++i)
            noise_image.samples[m][i] += floor_gain * rng.normal();

    auto [mixture, scaled_noise] =
        mix_at_snr(speech_image, noise_image, spec.snr_db, spec.reference_channel);

    SimulatedScene out;
    out.mixture = std::move(mixture);
    out.speech_image = std::move(speech_image);
    out.noise_image = std::move(scaled_noise);
    out.spec = spec;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset synthesis. One JSON record per line:
// {id, mixture_path, speech_path, noise_path, transcript, snr_db, azimuth, seed}

struct ManifestRecord {
    std::string id;
    std::string mixture_path;
    std::string speech_path;
    std::string noise_path;
    std::vector<int> transcript;
    Real snr_db = 0.0;
    Real azimuth = 0.0;
    uint64_t seed = 0;
};

inline std::string transcript_to_string(const std::vector<int>& t) {
    std::string s;
    for (size_t i = 0; i < t.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(t[i]);
    }
    return s;
}

inline std::vector<int> transcript_from_string(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    int v;
    while (is >> v) out.push_back(v);
    return out;
}

inline nlohmann::json to_json(const ManifestRecord& r) {
    return nlohmann::json{{"id", r.id},
                          {"mixture_path", r.mixture_path},
                          {"speech_path", r.speech_path},
                          {"noise_path", r.noise_path},
                          {"transcript", transcript_to_string(r.transcript)},
                          {"snr_db", r.snr_db},
                          {"azimuth", r.azimuth},
                          {"seed", r.seed}};
}

inline ManifestRecord manifest_record_from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.mixture_path = j.at("mixture_path").get<std::string>();
    r.speech_path = j.at("speech_path").get<std::string>();
    r.noise_path = j.at("noise_path").get<std::string>();
    r.transcript = transcript_from_string(j.at("transcript").get<std::string>());
    r.snr_db = j.at("snr_db").get<Real>();
    r.azimuth = j.at("azimuth").get<Real>();
    r.seed = j.at("seed").get<uint64_t>();
    return r;
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "read_manifest: cannot open " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(manifest_record_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

struct DatasetConfig {
    size_t num_utterances = 200;
    uint64_t seed = 1;
    Real snr_db_lo = 5.0, snr_db_hi = 5.0;
    size_t num_mics = 4;
    Real mic_spacing = 0.05;
    ToyTaskConfig toy;
};

// Deterministic given cfg.seed: same seed twice writes byte-identical WAVs.
inline std::vector<ManifestRecord> synth_dataset(const DatasetConfig& cfg,
                                                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(!ec, "synth_dataset: cannot create " + out_dir);

    const auto geom = ArrayGeometry::linear(cfg.num_mics, cfg.mic_spacing);
    std::vector<ManifestRecord> records;

    for (size_t u = 0; u < cfg.num_utterances; ++u) {
        const uint64_t utt_seed = mix_seed(cfg.seed, u);
        Rng rng(utt_seed);

        std::vector<int> tokens(static_cast<size_t>(
            rng.uniform_int(static_cast<long>(cfg.toy.words_lo), static_cast<long>(cfg.toy.words_hi))));
        for (auto& t : tokens)
            t = static_cast<int>(rng.uniform_int(1, static_cast<long>(cfg.toy.num_tokens)));

        SceneSpec spec;
        spec.source = render_toy_utterance(tokens, cfg.toy, rng);
        spec.azimuth = rng.uniform(0.0, M_PI);
        spec.noise_azimuth = spec.azimuth + (rng.next_real() < 0.5 ? -1.0 : 1.0) *
                                                rng.uniform(M_PI / 4.0, 3.0 * M_PI / 4.0);
        spec.snr_db = rng.uniform(cfg.snr_db_lo, cfg.snr_db_hi);
        spec.seed = utt_seed;

        const auto scene = simulate_scene(spec, geom);

        char name[32];
        std::snprintf(name, sizeof(name), "utt%04zu", u);
        ManifestRecord rec;
        rec.id = name;
        rec.mixture_path = (fs::path(out_dir) / (rec.id + "_mix.wav")).string();
        rec.speech_path = (fs::path(out_dir) / (rec.id + "_speech.wav")).string();
        rec.noise_path = (fs::path(out_dir) / (rec.id + "_noise.wav")).string();
        rec.transcript = tokens;
        rec.snr_db = spec.snr_db;
        rec.azimuth = spec.azimuth;
        rec.seed = utt_seed;

        signal::write_wav(rec.mixture_path, scene.mixture);
        signal::write_wav(rec.speech_path, scene.speech_image);
        signal::write_wav(rec.noise_path, scene.noise_image);
        records.push_back(std::move(rec));
    }

    std::ofstream os((fs::path(out_dir) / "manifest.jsonl").string());
    require(os.good(), "synth_dataset: cannot write manifest in " + out_dir);
    for (const auto& r : records) os << to_json(r).dump() << "\n";
    require(os.good(), "synth_dataset: manifest write failed in " + out_dir);
    return records;
}

}  // namespace cuside::scene
