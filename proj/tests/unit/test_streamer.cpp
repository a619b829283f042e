#include <doctest.h>

#include "cuside/streamer.hpp"
#include "test_support.hpp"

using namespace cuside;
using namespace cuside::streamer;
using neural::Mat;

namespace {

pipeline::ModelConfig tiny_model(size_t channels_hint = 2) {
    (void)channels_hint;
    pipeline::ModelConfig m;
    m.mask_net = {1, 6, 0.0, m.stft.num_bins()};
    m.encoder = {1, 8, 80, 5};
    m.sim = {1, 8, 80, 10};
    m.chunk_frames = 20;
    m.left_frames = 20;
    m.right_frames = 10;
    return m;
}

struct Fixture {
    pipeline::ModelConfig mcfg = tiny_model();
    neural::ModelParams params;
    neural::Var fb_t;
    signal::Waveform mixture;

    Fixture() {
        Rng rng(77);
        mcfg.init_params(params, rng);
        fb_t = pipeline::make_fbank_constant(mcfg);

        scene::SceneSpec spec;
        Rng srng(5);
        spec.source = signal::Waveform::mono(test_support::tapered_noise(12800, srng, 512, 0.4));
        spec.azimuth = 0.7;
        spec.noise_azimuth = 2.3;
        spec.snr_db = 5.0;
        spec.seed = 11;
        mixture = scene::simulate_scene(spec, scene::ArrayGeometry::linear(2)).mixture;
    }
};

}  // namespace

TEST_SUITE_BEGIN("streamer");

TEST_CASE("stream config validation") {
    StreamConfig s;
    s.chunk_ms = 405.0;  // not a multiple of the 10ms hop
    CHECK_THROWS_AS(s.validate(), std::runtime_error);
    StreamConfig ok;
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.chunk_frames() == 40);
    CHECK(ok.left_frames() == 80);
}

TEST_CASE("latency accounting per mode") {
    Fixture fx;
    for (auto mode : {chunking::ContextMode::None, chunking::ContextMode::Real,
                      chunking::ContextMode::Simulated}) {
        auto scfg = StreamConfig::from_model(fx.mcfg, mode);
        auto res = stream_decode(fx.mixture, fx.params, fx.mcfg, scfg, fx.fb_t);
        REQUIRE(!res.events.empty());
        const Real expect = mode == chunking::ContextMode::Real ? 300.0 : 200.0;  // 20/10 frames at 10ms
        for (const auto& ev : res.events) {
            CHECK(ev.algorithmic_latency_ms == expect);
            CHECK(ev.compute_ms >= 0.0);
            if (mode == chunking::ContextMode::Simulated) CHECK(ev.sim_ms > 0.0);
        }
        auto rep = latency_report(res.events, scfg);
        CHECK(rep.algorithmic_ms == expect);
        CHECK(rep.chunks == res.events.size());

        // report aggregates equal an independent recomputation
        Real mean = 0.0;
        for (const auto& ev : res.events) mean += ev.compute_ms;
        mean /= static_cast<Real>(res.events.size());
        CHECK(rep.mean_compute_ms == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("latency report rejects events from mixed modes") {
    Fixture fx;
    auto none_cfg = StreamConfig::from_model(fx.mcfg, chunking::ContextMode::None);
    auto real_cfg = StreamConfig::from_model(fx.mcfg, chunking::ContextMode::Real);
    auto a = stream_decode(fx.mixture, fx.params, fx.mcfg, none_cfg, fx.fb_t);
    auto b = stream_decode(fx.mixture, fx.params, fx.mcfg, real_cfg, fx.fb_t);
    auto mixed = a.events;
    mixed.insert(mixed.end(), b.events.begin(), b.events.end());
    CHECK_THROWS_AS(latency_report(mixed, none_cfg), std::runtime_error);
    CHECK_THROWS_AS(latency_report({}, none_cfg), std::runtime_error);
}

TEST_CASE("emission is append-only and offline-equivalent") {
    Fixture fx;
    auto scfg = StreamConfig::from_model(fx.mcfg, chunking::ContextMode::None);
    auto res = stream_decode(fx.mixture, fx.params, fx.mcfg, scfg, fx.fb_t);

    asr::TokenSequence joined;
    for (const auto& ev : res.events)
        joined.insert(joined.end(), ev.emitted.begin(), ev.emitted.end());
    CHECK(joined == res.transcript);

    // offline: concatenate all core argmax frames, collapse once
    auto spec = signal::stft(fx.mixture, fx.mcfg.stft);
    auto plan = chunking::plan_chunks(spec.num_frames, scfg.chunk_frames(), scfg.left_frames(),
                                      scfg.right_frames());
    auto run = pipeline::run_chunked(fx.params, fx.mcfg, spec, plan, false,
                                     chunking::ContextMode::None, false, fx.fb_t);
    std::vector<int> all_frames;
    for (const auto& lg : run.core_logits) {
        auto ids = asr::frame_argmax(lg->value);
        all_frames.insert(all_frames.end(), ids.begin(), ids.end());
    }
    CHECK(asr::collapse_ctc(all_frames) == res.transcript);

    // determinism
    auto res2 = stream_decode(fx.mixture, fx.params, fx.mcfg, scfg, fx.fb_t);
    CHECK(res2.transcript == res.transcript);
}

TEST_CASE("causality audit: zeroing future audio never changes past events") {
    Fixture fx;
    for (auto mode : {chunking::ContextMode::None, chunking::ContextMode::Simulated}) {
        auto scfg = StreamConfig::from_model(fx.mcfg, mode);
        auto full = stream_decode(fx.mixture, fx.params, fx.mcfg, scfg, fx.fb_t);
        REQUIRE(full.events.size() >= 3);

        const size_t upto_chunk = 1;  // keep events 0..1
        // audio extent of chunk 1's core frames: frames < core_end need samples
        // through core_end*hop + (window - hop)
        const size_t core_end = (upto_chunk + 1) * scfg.chunk_frames();
        const size_t keep =
            core_end * fx.mcfg.stft.hop + (fx.mcfg.stft.window_size - fx.mcfg.stft.hop);
        auto zeroed = fx.mixture;
        for (auto& ch : zeroed.samples)
            for (size_t i = keep; i < ch.size(); ++i) ch[i] = 0.0;

        auto cut = stream_decode(zeroed, fx.params, fx.mcfg, scfg, fx.fb_t);
        for (size_t i = 0; i <= upto_chunk; ++i) {
            CHECK(cut.events[i].emitted == full.events[i].emitted);
            CHECK(cut.events[i].algorithmic_latency_ms == full.events[i].algorithmic_latency_ms);
        }
    }
}

TEST_CASE("short input becomes a single padded chunk and is flagged") {
    Fixture fx;
    auto scfg = StreamConfig::from_model(fx.mcfg, chunking::ContextMode::None);
    signal::Waveform shorty;
    shorty.samples = {std::vector<Real>(900, 0.01), std::vector<Real>(900, 0.01)};
    auto res = stream_decode(shorty, fx.params, fx.mcfg, scfg, fx.fb_t);
    CHECK(res.short_input_padded);
    CHECK(res.events.size() == 1);
}

TEST_CASE("M=1 streaming enhancement is the identity on the interior") {
    auto mcfg = tiny_model();
    neural::ModelParams params;
    Rng rng(13);
    mcfg.init_params(params, rng);
    auto fb_t = pipeline::make_fbank_constant(mcfg);

    Rng srng(17);
    auto x = test_support::tapered_noise(9600, srng, 512, 0.4);
    signal::Waveform mono = signal::Waveform::mono(x);

    auto scfg = StreamConfig::from_model(mcfg, chunking::ContextMode::None);
    auto enhanced = enhance_stream(mono, params, mcfg, scfg, fb_t);
    REQUIRE(enhanced.num_samples() == mono.num_samples());
    CHECK(test_support::rel_rms(enhanced.samples[0], x, mcfg.stft.window_size,
                                x.size() - mcfg.stft.window_size) <= 1e-6);

    // deterministic across runs
    auto enhanced2 = enhance_stream(mono, params, mcfg, scfg, fb_t);
    for (size_t i = 0; i < enhanced.num_samples(); ++i)
        CHECK(enhanced.samples[0][i] == enhanced2.samples[0][i]);
}

TEST_CASE("oracle-mask streaming enhancement improves SI-SDR on a 4-mic scene") {
    auto mcfg = tiny_model();
    Rng srng(19);
    scene::SceneSpec spec;
    spec.source = signal::Waveform::mono(test_support::tapered_noise(16000, srng, 512, 0.4));
    spec.azimuth = 0.8;
    spec.noise_azimuth = 2.4;
    spec.snr_db = 0.0;
    spec.seed = 23;
    auto sc = scene::simulate_scene(spec, scene::ArrayGeometry::linear(4));

    auto scfg = StreamConfig::from_model(mcfg, chunking::ContextMode::None);
    auto enhanced = enhance_stream_oracle(sc.mixture, sc.speech_image, sc.noise_image, mcfg, scfg);

    const size_t w = mcfg.stft.window_size;
    const size_t n = sc.mixture.num_samples();
    const Real before = metrics::si_sdr_db(sc.mixture.samples[0], sc.speech_image.samples[0], w, n - w);
    const Real after = metrics::si_sdr_db(enhanced.samples[0], sc.speech_image.samples[0], w, n - w);
    INFO("si-sdr before ", before, " after ", after);
    CHECK(after - before >= 5.0);
}

TEST_SUITE_END();
