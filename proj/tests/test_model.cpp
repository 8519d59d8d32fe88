// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "promptsep/model.hpp"
#include "promptsep/rng.hpp"

using namespace promptsep;

namespace {

StftConfig micro_stft() { return StftConfig{32, 16, 32, WindowKind::SqrtHann}; }

ModelConfig micro_config(bool positional_encoding = true) {
    ModelConfig c;
    c.blocks_cross = 1;
    c.blocks_tse = 1;
    c.embed_dim = 8;
    c.ffn_hidden_cross = 16;
    c.ffn_hidden_tse = 16;
    c.conv_kernel = 4;
    c.conv_stride = 1;
    c.num_heads = 2;
    c.norm_groups = 2;
    c.attn_head_dim_cross = 4;
    c.attn_head_dim_tse = 4;
    c.band_spec = BandSplitSpec{{8, 9}};  // F = 17 for a 32-point fft
    c.positional_encoding_enabled = positional_encoding;
    return c;
}

template <typename T>
TussModel<T> micro_model(std::uint64_t seed = 42, bool positional_encoding = true) {
    return build_tuss_model<T>(micro_config(positional_encoding), micro_stft(), 8000, seed);
}

AudioBuffer random_audio(Rng& rng, std::int64_t n, int rate) {
    AudioBuffer b;
    b.sample_rate_hz = rate;
    b.samples.resize(static_cast<std::size_t>(n));
    for (auto& s : b.samples) s = 0.5 * (2.0 * rng.uniform() - 1.0);
    return b;
}

Spectrogram zero_spec(std::int64_t frames, const StftConfig& cfg) {
    Spectrogram s;
    s.config = cfg;
    s.num_frames = frames;
    s.num_bins = cfg.fft_length / 2 + 1;
    s.re.assign(static_cast<std::size_t>(frames * s.num_bins), 0.0);
    s.im.assign(static_cast<std::size_t>(frames * s.num_bins), 0.0);
    return s;
}

}  // namespace

TEST_CASE("encode_bands propagates the bias pattern on zero input") {
    auto m = micro_model<double>();
    auto feat = encode_bands(m, zero_spec(5, m.stft_config));
    REQUIRE(feat.shape == std::vector<std::int64_t>{5, 2, 8});
    // every frame row equals the band bias (rms of zero is zero)
    for (int k = 0; k < 2; ++k) {
        const auto& bias = m.params.value("encoder.band" + std::to_string(k) + ".b");
        for (std::int64_t t = 0; t < 5; ++t)
            for (std::int64_t d = 0; d < 8; ++d)
                CHECK(feat.v[static_cast<std::size_t>((t * 2 + k) * 8 + d)] == bias.v[static_cast<std::size_t>(d)]);
    }
}

TEST_CASE("encode_bands is frame-wise: identical spectra give identical rows") {
    auto m = micro_model<double>();
    Spectrogram spec = zero_spec(4, m.stft_config);
    Rng rng(5);
    for (std::int64_t f = 0; f < spec.num_bins; ++f) {
        double re = rng.uniform(-1, 1), im = rng.uniform(-1, 1);
        for (std::int64_t t = 0; t < 4; ++t) {
            spec.re_at(t, f) = re;
            spec.im_at(t, f) = im;
        }
    }
    auto feat = encode_bands(m, spec);
    const std::int64_t row = 2 * 8;
    for (std::int64_t t = 1; t < 4; ++t)
        for (std::int64_t i = 0; i < row; ++i)
            CHECK(feat.v[static_cast<std::size_t>(t * row + i)] == feat.v[static_cast<std::size_t>(i)]);
}

TEST_CASE("assemble_prompt_sequence broadcasts and preserves order") {
    auto m = micro_model<double>();
    TensorData<double> mixture_features({10, 2, 8});
    Rng rng(6);
    for (auto& x : mixture_features.v) x = rng.uniform(-1, 1);

    SECTION("shape and constant prompt rows") {
        PromptSet ps{{PromptCategory::Speech, PromptCategory::SfxMix}};
        auto out = assemble_prompt_sequence(m, ps, mixture_features);
        REQUIRE(out.shape == std::vector<std::int64_t>{12, 2, 8});
        // prompt rows constant across bands
        for (int n = 0; n < 2; ++n)
            for (std::int64_t d = 0; d < 8; ++d)
                CHECK(out.v[static_cast<std::size_t>((n * 2 + 0) * 8 + d)] ==
                      out.v[static_cast<std::size_t>((n * 2 + 1) * 8 + d)]);
        // mixture rows pass through untouched
        for (std::size_t i = 0; i < mixture_features.v.size(); ++i)
            CHECK(out.v[2 * 2 * 8 + i] == mixture_features.v[i]);
    }

    SECTION("single Speech prompt equals the table row replicated") {
        PromptSet ps{{PromptCategory::Speech}};
        auto out = assemble_prompt_sequence(m, ps, mixture_features);
        const auto& table = m.params.value("prompts.table");
        for (int k = 0; k < 2; ++k)
            for (std::int64_t d = 0; d < 8; ++d)
                CHECK(out.v[static_cast<std::size_t>(k * 8 + d)] == table.v[static_cast<std::size_t>(d)]);
    }

    SECTION("duplicate prompts are identical at assembly time") {
        PromptSet ps{{PromptCategory::Speech, PromptCategory::Speech}};
        auto out = assemble_prompt_sequence(m, ps, mixture_features);
        for (std::int64_t i = 0; i < 2 * 8; ++i)
            CHECK(out.v[static_cast<std::size_t>(i)] == out.v[static_cast<std::size_t>(2 * 8 + i)]);
    }

    SECTION("empty prompt set is rejected") {
        PromptSet empty;
        CHECK_THROWS_AS(assemble_prompt_sequence(m, empty, mixture_features), PromptError);
    }
}

TEST_CASE("locoformer block preserves shape and stays finite") {
    auto m = micro_model<double>();
    Tape<double> tape(false);
    auto bound = bind_params(tape, m.params);
    Rng rng(7);
    TensorData<double> grid({12, 2, 8});
    for (auto& x : grid.v) x = rng.uniform(-1, 1);
    SubblockCfg freq{4, 2, 2, false};
    SubblockCfg time{1, 2, 2, true};
    auto out = locoformer_block_tape(tape, bound, "cross.block0", tape.constant(grid), freq, time, true);
    CHECK(tape.val(out).shape == grid.shape);
    CHECK(tape.val(out).all_finite());
}

TEST_CASE("frequency sub-block attention is band-permutation equivariant on a 3-band toy input") {
    // direct computation at the attention stage, no positional encoding on
    // the band axis
    Rng rng(8);
    const std::int64_t D = 8, HE = 8, K = 3;
    auto mk = [&](std::vector<std::int64_t> shape) {
        TensorData<double> t(std::move(shape));
        for (auto& x : t.v) x = rng.uniform(-1, 1);
        return t;
    };
    auto wq = mk({D, HE}), bq = mk({HE}), wk = mk({D, HE}), bk = mk({HE});
    auto wv = mk({D, HE}), bv = mk({HE}), wo = mk({HE, D}), bo = mk({D});
    auto x = mk({2, K, D});

    auto run = [&](const TensorData<double>& in) {
        Tape<double> t(false);
        return t.val(nn::mhsa(t, t.constant(in), t.constant(wq), t.constant(bq), t.constant(wk),
                              t.constant(bk), t.constant(wv), t.constant(bv), t.constant(wo),
                              t.constant(bo), 2, false));
    };
    const std::int64_t perm[3] = {2, 0, 1};
    TensorData<double> xp({2, K, D});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t d = 0; d < D; ++d)
                xp.v[static_cast<std::size_t>((b * K + k) * D + d)] =
                    x.v[static_cast<std::size_t>((b * K + perm[k]) * D + d)];
    auto base = run(x), permuted = run(xp);
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t d = 0; d < D; ++d)
                CHECK(permuted.v[static_cast<std::size_t>((b * K + k) * D + d)] ==
                      Catch::Approx(base.v[static_cast<std::size_t>((b * K + perm[k]) * D + d)]).margin(1e-12));
}

TEST_CASE("cross-prompt module accepts any prompt count with one parameter set") {
    auto m = micro_model<double>();
    Rng rng(9);
    for (int n : {2, 4}) {
        TensorData<double> assembled({n + 10, 2, 8});
        for (auto& x : assembled.v) x = rng.uniform(-1, 1);
        auto out = cross_prompt_forward(m, assembled);
        CHECK(out.shape == assembled.shape);
        CHECK(out.all_finite());
    }
}

TEST_CASE("conditioning multiplies: ones give identity, zeros give zero") {
    Tape<double> t;
    Rng rng(10);
    TensorData<double> z({6, 2, 8});
    for (auto& x : z.v) x = rng.uniform(-1, 1);
    auto zr = t.constant(z);
    auto ones = t.constant(TensorData<double>::full({1, 2, 8}, 1.0));
    auto zeros = t.constant(TensorData<double>({1, 2, 8}));
    auto same = t.mul_bcast0(zr, ones);
    for (std::size_t i = 0; i < z.v.size(); ++i) CHECK(t.val(same).v[i] == z.v[i]);
    auto nil = t.mul_bcast0(zr, zeros);
    for (double v : t.val(nil).v) CHECK(v == 0.0);
}

TEST_CASE("condition_and_extract yields N independent grids") {
    auto m = micro_model<double>();
    Rng rng(11);
    TensorData<double> processed({3 + 7, 2, 8});
    for (auto& x : processed.v) x = rng.uniform(-1, 1);
    auto outs = condition_and_extract(m, processed, 3);
    REQUIRE(outs.size() == 3);
    for (const auto& o : outs) CHECK(o.shape == std::vector<std::int64_t>{7, 2, 8});
    CHECK_THROWS(condition_and_extract(m, processed, 11));
}

TEST_CASE("decode_bands: identity mask reproduces the mixture spectrogram exactly") {
    auto m = micro_model<double>();
    Rng rng(12);
    AudioBuffer mix = random_audio(rng, 400, 8000);
    Spectrogram spec = stft(mix, m.stft_config);
    TensorData<double> extracted({spec.num_frames, 2, 8});
    for (auto& x : extracted.v) x = rng.uniform(-1, 1);

    ForwardOptions opt;
    opt.identity_mask = true;
    Spectrogram est = decode_bands(m, extracted, spec, opt);
    for (std::size_t i = 0; i < spec.re.size(); ++i) {
        CHECK(est.re[i] == spec.re[i]);
        CHECK(est.im[i] == spec.im[i]);
    }
}

TEST_CASE("decode_bands: zeroed decoder parameters give the zero estimate") {
    auto m = micro_model<double>();
    for (int i = 0; i < m.params.size(); ++i)
        if (m.params.name(i).rfind("decoder.", 0) == 0)
            for (auto& x : m.params.value(i).v) x = 0.0;
    Rng rng(13);
    AudioBuffer mix = random_audio(rng, 400, 8000);
    Spectrogram spec = stft(mix, m.stft_config);
    TensorData<double> extracted({spec.num_frames, 2, 8});
    for (auto& x : extracted.v) x = rng.uniform(-1, 1);
    Spectrogram est = decode_bands(m, extracted, spec);
    for (double v : est.re) CHECK(v == 0.0);
    for (double v : est.im) CHECK(v == 0.0);
}

TEST_CASE("model_forward arity, length, and constraint errors") {
    auto m = micro_model<float>();
    Rng rng(14);
    AudioBuffer mix = random_audio(rng, 800, 8000);

    SECTION("two prompts, two input-length outputs") {
        auto outs = model_forward(m, mix, PromptSet{{PromptCategory::Speech, PromptCategory::SfxMix}});
        REQUIRE(outs.size() == 2);
        for (const auto& o : outs) {
            CHECK(o.size() == mix.size());
            CHECK(o.sample_rate_hz == mix.sample_rate_hz);
        }
    }

    SECTION("three identical Speech prompts give three outputs") {
        auto outs = model_forward(
            m, mix, PromptSet{{PromptCategory::Speech, PromptCategory::Speech, PromptCategory::Speech}});
        CHECK(outs.size() == 3);
    }

    SECTION("SFX with SFX-mix is rejected with the rule name") {
        CHECK_THROWS_WITH(model_forward(m, mix, PromptSet{{PromptCategory::Sfx, PromptCategory::SfxMix}}),
                          "SFX and SFX-mix cannot coexist");
    }

    SECTION("empty mixture is rejected") {
        AudioBuffer empty;
        empty.sample_rate_hz = 8000;
        CHECK_THROWS_WITH(model_forward(m, empty, PromptSet{{PromptCategory::Speech}}), "empty signal");
    }
}

TEST_CASE("conservation: identity masks reproduce the mixture through istft") {
    auto m = micro_model<float>();
    Rng rng(15);
    AudioBuffer mix = random_audio(rng, 800, 8000);
    ForwardOptions opt;
    opt.identity_mask = true;
    auto outs = model_forward(m, mix, PromptSet{{PromptCategory::Speech}}, opt);
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < mix.size(); ++i) {
        double d = outs[0].samples[static_cast<std::size_t>(i)] - mix.samples[static_cast<std::size_t>(i)];
        num += d * d;
        den += mix.samples[static_cast<std::size_t>(i)] * mix.samples[static_cast<std::size_t>(i)];
    }
    CHECK(std::sqrt(num / den) < 1e-5);
}

TEST_CASE("forward determinism is bit-exact") {
    auto m = micro_model<float>();
    Rng rng(16);
    AudioBuffer mix = random_audio(rng, 480, 8000);
    auto a = model_forward(m, mix, PromptSet{{PromptCategory::Speech, PromptCategory::Drums}});
    auto b = model_forward(m, mix, PromptSet{{PromptCategory::Speech, PromptCategory::Drums}});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].samples.size(); ++j)
            CHECK(a[i].samples[j] == b[i].samples[j]);
}

TEST_CASE("prompt equivariance without positional encoding, divergence with it") {
    Rng rng(17);
    AudioBuffer mix = random_audio(rng, 640, 8000);

    SECTION("permuting distinct prompts permutes outputs") {
        auto m = micro_model<float>(123, /*positional_encoding=*/false);
        PromptSet a{{PromptCategory::Speech, PromptCategory::Drums, PromptCategory::Vocals}};
        PromptSet b{{PromptCategory::Vocals, PromptCategory::Speech, PromptCategory::Drums}};
        auto oa = model_forward(m, mix, a);
        auto ob = model_forward(m, mix, b);
        // output i of run b corresponds to prompt b[i]; match by category
        const int map_b_to_a[3] = {2, 0, 1};
        double max_dev = 0.0;
        for (int i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < oa[0].samples.size(); ++j)
                max_dev = std::max(max_dev, std::abs(ob[static_cast<std::size_t>(i)].samples[j] -
                                                     oa[static_cast<std::size_t>(map_b_to_a[i])].samples[j]));
        CHECK(max_dev < 1e-5);
    }

    SECTION("identical prompts diverge under positional encoding") {
        auto m = micro_model<float>(123, /*positional_encoding=*/true);
        auto outs = model_forward(m, mix, PromptSet{{PromptCategory::Speech, PromptCategory::Speech}});
        double max_dev = 0.0;
        for (std::size_t j = 0; j < outs[0].samples.size(); ++j)
            max_dev = std::max(max_dev, std::abs(outs[0].samples[j] - outs[1].samples[j]));
        CHECK(max_dev > 1e-6);
    }
}

TEST_CASE("baseline model always produces its fixed output count") {
    auto cfg = micro_config();
    auto m = build_baseline_model<float>(cfg, micro_stft(), 8000, 3, 4);
    Rng rng(18);
    AudioBuffer mix = random_audio(rng, 480, 8000);
    auto outs = baseline_forward(m, mix);
    REQUIRE(outs.size() == 4);
    for (const auto& o : outs) CHECK(o.size() == mix.size());
    // prompted entry points reject the fixed-output variant and vice versa
    CHECK_THROWS(model_forward(m, mix, PromptSet{{PromptCategory::Speech}}));
    auto tm = micro_model<float>();
    CHECK_THROWS(baseline_forward(tm, mix));
}

TEST_CASE("count_parameters matches a hand-computed closed form on the micro config") {
    auto m = micro_model<double>();
    // independent closed-form sum for this configuration
    const std::int64_t D = 8, C = 16, Ec = 4, Et = 4, H = 2, k = 4;
    const std::int64_t bands[2] = {8, 9};
    auto ffn = [&](std::int64_t kk, std::int64_t cc) {
        return D + (kk * D * 2 * cc + 2 * cc) + (kk * cc * D + D);
    };
    auto attn = [&](std::int64_t he) { return D + 3 * (D * he + he) + (he * D + D); };
    auto subblock = [&](std::int64_t kk, std::int64_t cc, std::int64_t he) {
        return 2 * ffn(kk, cc) + attn(he);
    };
    std::int64_t expected = 8 * D;  // prompt table
    for (std::int64_t b : bands) expected += 2 * b + 2 * b * D + D;          // encoder
    expected += subblock(k, C, H * Ec) + subblock(1, C, H * Ec);             // 1 cross block
    expected += subblock(k, C, H * Et) + subblock(k, C, H * Et);             // 1 extraction block
    for (std::int64_t b : bands)                                             // decoder
        expected += D + (D * 4 * D + 4 * D) + 2 * (4 * D * 2 * b + 2 * b);
    CHECK(count_parameters(m) == expected);
}
