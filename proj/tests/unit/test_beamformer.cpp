#include <doctest.h>

#include "cuside/beamformer.hpp"
#include "cuside/metrics.hpp"
#include "cuside/scene.hpp"
#include "test_support.hpp"

using namespace cuside;
using namespace cuside::beamformer;

namespace {

ChunkSpectra random_chunk(size_t T, size_t M, size_t K, Rng& rng, Real amp = 1.0) {
    ChunkSpectra c(T, M, K);
    for (auto& v : c.data) v = Cplx(rng.uniform(-amp, amp), rng.uniform(-amp, amp));
    return c;
}

neural::Mat random_mask(size_t T, size_t K, Rng& rng, Real lo = 0.05, Real hi = 0.95) {
    neural::Mat m(T, K);
    for (auto& v : m.v) v = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("beamformer");

TEST_CASE("scm: rank-1 outer product for a single all-ones frame") {
    Rng rng(3);
    auto chunk = random_chunk(1, 3, 2, rng);
    auto phi = estimate_scm(chunk, neural::Mat(1, 2, 1.0));
    for (size_t k = 0; k < 2; ++k)
        for (size_t i = 0; i < 3; ++i)
            for (size_t j = 0; j < 3; ++j) {
                const Cplx expect = chunk.at(0, i, k) * std::conj(chunk.at(0, j, k));
                CHECK(std::abs(phi.at(k, i, j) - expect) <= 1e-12);
            }
}

TEST_CASE("scm: M=1 reduces to masked mean power") {
    Rng rng(5);
    auto chunk = random_chunk(7, 1, 3, rng);
    auto mask = random_mask(7, 3, rng);
    auto phi = estimate_scm(chunk, mask);
    for (size_t k = 0; k < 3; ++k) {
        Real num = 0.0, den = 0.0;
        for (size_t t = 0; t < 7; ++t) {
            num += mask.at(t, k) * std::norm(chunk.at(t, 0, k));
            den += mask.at(t, k);
        }
        CHECK(phi.at(k, 0, 0).real() == doctest::Approx(num / den).epsilon(1e-12));
        CHECK(phi.at(k, 0, 0).imag() == doctest::Approx(0.0));
        CHECK(phi.at(k, 0, 0).real() >= 0.0);
    }
}

TEST_CASE("scm matches a direct-summation oracle") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const size_t T = static_cast<size_t>(rng.uniform_int(1, 12));
        const size_t M = static_cast<size_t>(rng.uniform_int(1, 5));
        const size_t K = static_cast<size_t>(rng.uniform_int(1, 6));
        auto chunk = random_chunk(T, M, K, rng);
        auto mask = random_mask(T, K, rng);
        auto phi = estimate_scm(chunk, mask);
        for (size_t k = 0; k < K; ++k) {
            for (size_t i = 0; i < M; ++i)
                for (size_t j = 0; j < M; ++j) {
                    Cplx acc(0, 0);
                    Real wsum = 0.0;
                    for (size_t t = 0; t < T; ++t) {
                        acc += mask.at(t, k) * chunk.at(t, i, k) * std::conj(chunk.at(t, j, k));
                        wsum += mask.at(t, k);
                    }
                    CHECK(std::abs(phi.at(k, i, j) - acc / wsum) <= 1e-10);
                }
        }
    }
}

TEST_CASE("scm is Hermitian and positive semi-definite on random inputs") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        const size_t T = static_cast<size_t>(rng.uniform_int(2, 10));
        const size_t M = static_cast<size_t>(rng.uniform_int(2, 5));
        auto chunk = random_chunk(T, M, 3, rng);
        auto phi = estimate_scm(chunk, random_mask(T, 3, rng));
        for (size_t k = 0; k < 3; ++k) {
            auto b = phi.bin(k);
            for (size_t i = 0; i < M; ++i)
                for (size_t j = 0; j < M; ++j)
                    CHECK(b.at(i, j) == std::conj(b.at(j, i)));  // exact by construction
            const Real tr = cxmat::trace(b).real();
            CHECK(cxmat::hermitian_min_eig(b) >= -1e-8 * tr);
        }
    }
}

TEST_CASE("scm zero-mask column falls back to the unweighted mean") {
    Rng rng(13);
    auto chunk = random_chunk(5, 2, 2, rng);
    neural::Mat mask(5, 2, 0.0);
    for (size_t t = 0; t < 5; ++t) mask.at(t, 1) = 0.5;

    ScmStats stats;
    auto phi = estimate_scm(chunk, mask, &stats);
    CHECK(stats.zero_mask_bins == 1);
    auto uniform = estimate_scm(chunk, neural::Mat(5, 2, 1.0));
    for (size_t i = 0; i < 2; ++i)
        for (size_t j = 0; j < 2; ++j)
            CHECK(std::abs(phi.at(0, i, j) - uniform.at(0, i, j)) <= 1e-12);
}

TEST_CASE("mvdr: M=1 gives the identity filter") {
    Rng rng(17);
    auto chunk = random_chunk(6, 1, 4, rng);
    auto phi_s = estimate_scm(chunk, random_mask(6, 4, rng));
    auto phi_n = estimate_scm(chunk, random_mask(6, 4, rng));
    auto w = mvdr_weights(phi_s, phi_n, MvdrConfig{});
    for (size_t k = 0; k < 4; ++k) {
        CHECK(w.at(k, 0).real() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(w.at(k, 0).imag() == doctest::Approx(0.0));
    }
}

TEST_CASE("mvdr: rank-1 speech with identity noise is distortionless to the reference") {
    Rng rng(19);
    const size_t M = 4;
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<Cplx> d(M);
        for (auto& v : d) v = Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));

        SpatialCovariance phi_s(1, M), phi_n(1, M);
        const Real sigma2 = rng.uniform(0.5, 3.0);
        for (size_t i = 0; i < M; ++i) {
            for (size_t j = 0; j < M; ++j) phi_s.at(0, i, j) = sigma2 * d[i] * std::conj(d[j]);
            phi_n.at(0, i, i) = Cplx(1, 0);
        }
        auto w = mvdr_weights(phi_s, phi_n, MvdrConfig{});

        // clean signal x = d * s must come back as d_ref * s
        const Cplx s(rng.uniform(-1, 1), rng.uniform(-1, 1));
        Cplx y(0, 0);
        for (size_t m = 0; m < M; ++m) y += std::conj(w.at(0, m)) * (d[m] * s);
        CHECK(std::abs(y - d[0] * s) <= 1e-8);
    }
}

TEST_CASE("mvdr errors name the offending bin") {
    SpatialCovariance phi_s(2, 2), phi_n(2, 2);
    // bin 1 noise is all-zero with zero loading: singular
    phi_n.at(0, 0, 0) = Cplx(1, 0);
    phi_n.at(0, 1, 1) = Cplx(1, 0);
    phi_s.at(0, 0, 0) = Cplx(1, 0);
    phi_s.at(1, 0, 0) = Cplx(1, 0);
    MvdrConfig cfg;
    cfg.diagonal_loading = 0.0;
    CHECK_THROWS_WITH_AS(mvdr_weights(phi_s, phi_n, cfg), doctest::Contains("bin 1"),
                         std::runtime_error);
}

TEST_CASE("apply_beamformer: one-hot selects the reference channel") {
    Rng rng(23);
    auto chunk = random_chunk(5, 3, 4, rng);
    MvdrWeights w(4, 3);
    for (size_t k = 0; k < 4; ++k) w.at(k, 1) = Cplx(1, 0);
    auto y = apply_beamformer(w, chunk);
    for (size_t t = 0; t < 5; ++t)
        for (size_t k = 0; k < 4; ++k) CHECK(y.at(t, k) == chunk.at(t, 1, k));

    ChunkSpectra zeros(5, 3, 4);
    auto yz = apply_beamformer(w, zeros);
    for (const auto& v : yz.data) CHECK(v == Cplx(0, 0));
}

TEST_CASE("apply_beamformer is linear") {
    Rng rng(29);
    auto a = random_chunk(4, 2, 3, rng);
    auto b = random_chunk(4, 2, 3, rng);
    ChunkSpectra sum(4, 2, 3);
    for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = a.data[i] + b.data[i];
    MvdrWeights w(3, 2);
    for (auto& v : w.w) v = Cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto ya = apply_beamformer(w, a);
    auto yb = apply_beamformer(w, b);
    auto ys = apply_beamformer(w, sum);
    for (size_t i = 0; i < ys.data.size(); ++i)
        CHECK(std::abs(ys.data[i] - ya.data[i] - yb.data[i]) <= 1e-9);
}

TEST_CASE("mask net shapes, range, and gradients") {
    neural::ModelParams p;
    Rng rng(31);
    MaskNetConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 3;
    cfg.num_bins = 5;
    cfg.dropout = 0.0;
    MaskNet::init_params(p, cfg, rng);
    MaskNet net{cfg};

    neural::Mat features(6, 5);
    for (auto& v : features.v) v = rng.uniform(-2, 2);
    auto [speech, noise] = net.forward(p, neural::constant(features), false, nullptr);
    CHECK(speech->value.rows == 6);
    CHECK(speech->value.cols == 5);
    CHECK(noise->value.rows == 6);
    for (Real v : speech->value.v) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    std::vector<std::string> names;
    for (const auto& [name, v] : p.map) {
        (void)v;
        names.push_back(name);
    }
    neural::Mat target_s(6, 5, 0.8), target_n(6, 5, 0.2);
    auto fd = neural::finite_diff_check(p, names, [&] {
        auto [sm, nm] = net.forward(p, neural::constant(features), false, nullptr);
        return neural::add(neural::l1_loss(sm, target_s), neural::l1_loss(nm, target_n));
    });
    INFO(fd.worst, " rel err ", fd.max_rel_err);
    CHECK(fd.pass);
}

TEST_CASE("differentiable enhancement matches the hand-composed pipeline bit for bit") {
    Rng rng(37);
    auto chunk = std::make_shared<ChunkSpectra>(random_chunk(8, 3, 5, rng));
    auto sm = random_mask(8, 5, rng);
    auto nm = random_mask(8, 5, rng);
    MvdrConfig cfg;

    auto node = mvdr_enhance_node(neural::constant(sm), neural::constant(nm), chunk, cfg);

    auto phi_s = estimate_scm(*chunk, sm);
    auto phi_n = estimate_scm(*chunk, nm);
    auto w = mvdr_weights(phi_s, phi_n, cfg);
    auto y = apply_beamformer(w, *chunk);
    for (size_t t = 0; t < 8; ++t)
        for (size_t k = 0; k < 5; ++k) {
            CHECK(node.complex_frames->at(t, k) == y.at(t, k));
            CHECK(node.power->value.at(t, k) == std::norm(y.at(t, k)));
        }

    auto res = enhance_chunk_with_masks(*chunk, sm, nm, cfg, 2, 4);
    for (size_t i = 0; i < y.data.size(); ++i) CHECK(res.frames.data[i] == y.data[i]);
}

TEST_CASE("enhancement node gradients match finite differences") {
    Rng rng(41);
    auto chunk = std::make_shared<ChunkSpectra>(random_chunk(3, 2, 2, rng));
    neural::ModelParams p;
    p.add("sm", random_mask(3, 2, rng, 0.2, 0.8));
    p.add("nm", random_mask(3, 2, rng, 0.2, 0.8));
    neural::Mat weights(3, 2);
    for (auto& v : weights.v) v = rng.uniform(-1, 1);

    MvdrConfig cfg;
    auto fd = neural::finite_diff_check(
        p, {"sm", "nm"},
        [&] {
            auto out = mvdr_enhance_node(p.at("sm"), p.at("nm"), chunk, cfg);
            return neural::mean_all(neural::mul(out.power, neural::constant(weights)));
        },
        1e-6, 1e-3);
    INFO(fd.worst, " rel err ", fd.max_rel_err);
    CHECK(fd.pass);
}

TEST_CASE("M=1 enhancement is the identity on the input channel") {
    Rng rng(43);
    auto chunk = random_chunk(10, 1, 6, rng);
    auto res = enhance_chunk_with_masks(chunk, random_mask(10, 6, rng), random_mask(10, 6, rng),
                                        MvdrConfig{}, 0, 10);
    for (size_t t = 0; t < 10; ++t)
        for (size_t k = 0; k < 6; ++k)
            CHECK(std::abs(res.frames.at(t, k) - chunk.at(t, 0, k)) <= 1e-12);
}

TEST_CASE("fixed whole-utterance weights applied chunk-by-chunk equal whole application") {
    Rng rng(47);
    auto chunk = random_chunk(30, 3, 4, rng);
    auto phi_s = estimate_scm(chunk, random_mask(30, 4, rng));
    auto phi_n = estimate_scm(chunk, random_mask(30, 4, rng));
    auto w = mvdr_weights(phi_s, phi_n, MvdrConfig{});
    auto whole = apply_beamformer(w, chunk);

    auto plan = chunking::plan_chunks(30, 7, 0, 0);
    size_t row = 0;
    for (const auto& d : plan.descriptors) {
        ChunkSpectra part(d.core_len(), 3, 4);
        for (size_t t = 0; t < d.core_len(); ++t)
            for (size_t m = 0; m < 3; ++m)
                for (size_t k = 0; k < 4; ++k) part.at(t, m, k) = chunk.at(d.core_start + t, m, k);
        auto y = apply_beamformer(w, part);
        for (size_t t = 0; t < d.core_len(); ++t)
            for (size_t k = 0; k < 4; ++k) CHECK(y.at(t, k) == whole.at(row + t, k));
        row += d.core_len();
    }
}

TEST_CASE("oracle-mask MVDR improves SNR on a simulated 4-mic scene") {
    Rng rng(53);
    scene::SceneSpec spec;
    spec.source = signal::Waveform::mono(test_support::tapered_noise(16000, rng, 512, 0.4));
    spec.azimuth = 0.9;
    spec.noise_azimuth = 2.2;
    spec.snr_db = 0.0;
    spec.seed = 99;
    auto geom = scene::ArrayGeometry::linear(4);
    auto sc = scene::simulate_scene(spec, geom);

    signal::StftConfig stft_cfg;
    auto mix_spec = signal::stft(sc.mixture, stft_cfg);
    auto speech_spec = signal::stft(sc.speech_image, stft_cfg);
    auto noise_spec = signal::stft(sc.noise_image, stft_cfg);
    auto masks = scene::oracle_irm(speech_spec, noise_spec, 0);

    auto chunk = whole_utterance_spectra(mix_spec);
    neural::Mat sm(chunk.frames, chunk.bins), nm(chunk.frames, chunk.bins);
    for (size_t t = 0; t < chunk.frames; ++t)
        for (size_t k = 0; k < chunk.bins; ++k) {
            sm.at(t, k) = masks.speech[t][k];
            nm.at(t, k) = masks.noise[t][k];
        }

    auto phi_s = estimate_scm(chunk, sm);
    auto phi_n = estimate_scm(chunk, nm);
    auto w = mvdr_weights(phi_s, phi_n, MvdrConfig{});

    // filter is linear: evaluate signal and noise paths separately
    auto ys = apply_beamformer(w, whole_utterance_spectra(speech_spec));
    auto yn = apply_beamformer(w, whole_utterance_spectra(noise_spec));
    Real out_s = 0.0, out_n = 0.0, in_s = 0.0, in_n = 0.0;
    for (size_t t = 0; t < chunk.frames; ++t)
        for (size_t k = 0; k < chunk.bins; ++k) {
            out_s += std::norm(ys.at(t, k));
            out_n += std::norm(yn.at(t, k));
            in_s += std::norm(speech_spec.at(0, t, k));
            in_n += std::norm(noise_spec.at(0, t, k));
        }
    const Real snr_out = 10.0 * std::log10(out_s / out_n);
    const Real snr_in = 10.0 * std::log10(in_s / in_n);
    INFO("snr_in ", snr_in, " snr_out ", snr_out);
    CHECK(snr_out > snr_in);
    CHECK(snr_out - snr_in > 5.0);
}

TEST_SUITE_END();
