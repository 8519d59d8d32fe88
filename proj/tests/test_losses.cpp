// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <functional>
#include <numeric>

#include "promptsep/losses.hpp"
#include "promptsep/rng.hpp"

using namespace promptsep;

namespace {

AudioBuffer random_audio(Rng& rng, std::int64_t n, int rate = 8000, double amp = 1.0) {
    AudioBuffer b;
    b.sample_rate_hz = rate;
    b.samples.resize(static_cast<std::size_t>(n));
    for (auto& s : b.samples) s = amp * (2.0 * rng.uniform() - 1.0);
    return b;
}

/// Constructs an estimate with an exact energy ratio ||s||^2/||s-est||^2 by
/// adding orthogonalized noise.
AudioBuffer estimate_with_snr(const AudioBuffer& s, double target_db, Rng& rng) {
    const std::size_t n = s.samples.size();
    std::vector<double> noise(n);
    for (auto& x : noise) x = 2.0 * rng.uniform() - 1.0;
    double dot = 0.0, sig = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += noise[i] * s.samples[i];
        sig += s.samples[i] * s.samples[i];
    }
    double noise_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        noise[i] -= dot / sig * s.samples[i];  // orthogonalize
        noise_energy += noise[i] * noise[i];
    }
    const double want = sig / std::pow(10.0, target_db / 10.0);
    const double scale = std::sqrt(want / noise_energy);
    AudioBuffer est = s;
    for (std::size_t i = 0; i < n; ++i) est.samples[i] += scale * noise[i];
    return est;
}

}  // namespace

TEST_CASE("snr_db basics") {
    Rng rng(1);
    AudioBuffer s = random_audio(rng, 2000);

    SECTION("perfect estimate is epsilon-bounded above 80 dB") {
        CHECK(snr_db(s, s) >= 80.0);
    }
    SECTION("constructed 20 dB case") {
        AudioBuffer est = estimate_with_snr(s, 20.0, rng);
        CHECK(snr_db(s, est) == Catch::Approx(20.0).margin(0.01));
    }
    SECTION("zero estimate scores 0 dB") {
        AudioBuffer zero(std::vector<double>(2000, 0.0), 8000);
        CHECK(snr_db(s, zero) == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("errors") {
        AudioBuffer shorter = random_audio(rng, 100);
        CHECK_THROWS_WITH(snr_db(s, shorter), "length mismatch");
        AudioBuffer zero(std::vector<double>(2000, 0.0), 8000);
        CHECK_THROWS_WITH(snr_db(zero, s),
                          "zero reference signal; use zero_aware_snr_loss for silent references");
    }
    SECTION("joint scaling leaves snr unchanged off the epsilon floor") {
        AudioBuffer est = estimate_with_snr(s, 12.0, rng);
        AudioBuffer s2 = s, est2 = est;
        for (auto& x : s2.samples) x *= 3.7;
        for (auto& x : est2.samples) x *= 3.7;
        CHECK(std::abs(snr_db(s, est) - snr_db(s2, est2)) < 1e-9);
    }
}

TEST_CASE("si_snr_db identities and edge cases") {
    Rng rng(2);

    SECTION("hand-computed projection case") {
        AudioBuffer s(std::vector<double>{1.0, -1.0}, 8000);
        AudioBuffer est(std::vector<double>{1.0, 0.0}, 8000);
        CHECK(si_snr_db(s, est) >= 80.0);  // residual is exactly zero
    }
    SECTION("estimate collapsing to zero after mean removal") {
        AudioBuffer s(std::vector<double>{1.0, -1.0}, 8000);
        AudioBuffer est(std::vector<double>{1.0, 1.0}, 8000);
        CHECK_THROWS_WITH(si_snr_db(s, est), "zero estimate after mean removal");
    }
    SECTION("scale invariance in the estimate") {
        for (int i = 0; i < 200; ++i) {
            AudioBuffer s = random_audio(rng, 500);
            AudioBuffer est = random_audio(rng, 500);
            const double alpha = std::exp(rng.uniform(-3.0, 3.0));
            AudioBuffer scaled = est;
            for (auto& x : scaled.samples) x *= alpha;
            CHECK(std::abs(si_snr_db(s, est) - si_snr_db(s, scaled)) < 1e-9);
        }
    }
    SECTION("scaling the reference does not change the score") {
        AudioBuffer s = random_audio(rng, 400);
        AudioBuffer est = random_audio(rng, 400);
        AudioBuffer s2 = s;
        for (auto& x : s2.samples) x *= 0.125;
        CHECK(std::abs(si_snr_db(s, est) - si_snr_db(s2, est)) < 1e-9);
    }
    SECTION("si_snr of a scaled copy matches the unscaled copy") {
        AudioBuffer s = random_audio(rng, 300);
        AudioBuffer scaled = s;
        for (auto& x : scaled.samples) x *= 4.0;
        CHECK(std::abs(si_snr_db(s, scaled) - si_snr_db(s, s)) < 1e-9);
    }
}

TEST_CASE("neg_snr_loss is the negated snr and is monotone toward the target") {
    Rng rng(3);
    AudioBuffer s = random_audio(rng, 1000);
    CHECK(neg_snr_loss(s, s) <= -80.0);
    AudioBuffer est = estimate_with_snr(s, 20.0, rng);
    CHECK(neg_snr_loss(s, est) == Catch::Approx(-20.0).margin(0.01));

    double prev = std::numeric_limits<double>::infinity();
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 0.9}) {
        AudioBuffer mid(std::vector<double>(s.samples.size()), 8000);
        for (std::size_t i = 0; i < s.samples.size(); ++i) mid.samples[i] = alpha * s.samples[i];
        double loss = neg_snr_loss(s, mid);
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("category PIT loss") {
    Rng rng(4);

    SECTION("singleton groups reduce to the plain mean") {
        std::vector<AudioBuffer> t = {random_audio(rng, 400), random_audio(rng, 400)};
        std::vector<AudioBuffer> e = {estimate_with_snr(t[0], 10, rng), estimate_with_snr(t[1], 6, rng)};
        CategoryGrouping g;
        g.groups[PromptCategory::Speech] = {{0, 0}};
        g.groups[PromptCategory::SfxMix] = {{1, 1}};
        LossReport r = category_pit_loss(t, e, g);
        const double expected = 0.5 * (neg_snr_loss(t[0], e[0]) + neg_snr_loss(t[1], e[1]));
        CHECK(r.total == Catch::Approx(expected).margin(1e-12));
        CHECK(r.chosen_permutations[PromptCategory::Speech] == std::vector<int>{0});
    }

    SECTION("swapped within-category estimates select the swap") {
        std::vector<AudioBuffer> t = {random_audio(rng, 400), random_audio(rng, 400)};
        std::vector<AudioBuffer> swapped = {t[1], t[0]};
        CategoryGrouping g;
        g.groups[PromptCategory::Speech] = {{0, 0}, {1, 1}};
        LossReport r = category_pit_loss(t, swapped, g);
        CHECK(r.chosen_permutations[PromptCategory::Speech] == std::vector<int>{1, 0});
        LossReport identity = category_pit_loss(t, t, g);
        CHECK(r.total == Catch::Approx(identity.total).margin(1e-12));
    }

    SECTION("categories weigh equally regardless of source count") {
        std::vector<AudioBuffer> t = {random_audio(rng, 300), random_audio(rng, 300),
                                      random_audio(rng, 300)};
        std::vector<AudioBuffer> e = {estimate_with_snr(t[0], 12, rng), estimate_with_snr(t[1], 4, rng),
                                      estimate_with_snr(t[2], 25, rng)};
        CategoryGrouping g;
        g.groups[PromptCategory::Speech] = {{0, 0}, {1, 1}};
        g.groups[PromptCategory::SfxMix] = {{2, 2}};
        LossReport r = category_pit_loss(t, e, g);
        const double speech_mean = r.per_category_loss[PromptCategory::Speech];
        const double sfx = r.per_category_loss[PromptCategory::SfxMix];
        CHECK(r.total == Catch::Approx((speech_mean + sfx) / 2.0).margin(1e-12));

        LossReport weighted = category_pit_loss(t, e, g, CategoryWeighting::PerSource);
        CHECK(weighted.total == Catch::Approx((2.0 * speech_mean + sfx) / 3.0).margin(1e-12));
    }

    SECTION("permuting targets within a group keeps the total bit-exact") {
        std::vector<AudioBuffer> t = {random_audio(rng, 300), random_audio(rng, 300),
                                      random_audio(rng, 300)};
        std::vector<AudioBuffer> e = {random_audio(rng, 300), random_audio(rng, 300),
                                      random_audio(rng, 300)};
        CategoryGrouping g;
        g.groups[PromptCategory::Sfx] = {{0, 0}, {1, 1}, {2, 2}};
        LossReport base = category_pit_loss(t, e, g);
        std::vector<AudioBuffer> t2 = {t[2], t[0], t[1]};
        LossReport perm = category_pit_loss(t2, e, g);
        CHECK(perm.total == base.total);
        // target i of the permuted run is original target (i+2)%3 and must
        // pick the same estimate
        for (int i = 0; i < 3; ++i)
            CHECK(perm.chosen_permutations[PromptCategory::Sfx][static_cast<std::size_t>(i)] ==
                  base.chosen_permutations[PromptCategory::Sfx][static_cast<std::size_t>((i + 2) % 3)]);
    }

    SECTION("grouping validation") {
        std::vector<AudioBuffer> t = {random_audio(rng, 100), random_audio(rng, 100)};
        CategoryGrouping missing;
        missing.groups[PromptCategory::Speech] = {{0, 0}};
        CHECK_THROWS(category_pit_loss(t, t, missing));
        CategoryGrouping dup;
        dup.groups[PromptCategory::Speech] = {{0, 0}, {0, 1}};
        CHECK_THROWS(category_pit_loss(t, t, dup));
    }
}

TEST_CASE("PIT brute-force oracle equivalence") {
    // independent recursive enumerator over the same pair losses
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = static_cast<int>(rng.uniform_int(1, 3));
        std::vector<AudioBuffer> t, e;
        for (int i = 0; i < m; ++i) {
            t.push_back(random_audio(rng, 200));
            e.push_back(random_audio(rng, 200));
        }
        CategoryGrouping g;
        for (int i = 0; i < m; ++i) g.groups[PromptCategory::Speech].push_back({i, i});
        LossReport r = category_pit_loss(t, e, g);

        std::vector<std::vector<double>> cost(static_cast<std::size_t>(m),
                                              std::vector<double>(static_cast<std::size_t>(m)));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    neg_snr_loss(t[static_cast<std::size_t>(i)], e[static_cast<std::size_t>(j)]);
        double best = std::numeric_limits<double>::infinity();
        std::vector<int> assign(static_cast<std::size_t>(m), -1);
        std::vector<bool> used(static_cast<std::size_t>(m), false);
        std::function<void(int)> dfs = [&](int i) {
            if (i == m) {
                double sum = 0.0;
                for (int q = 0; q < m; ++q)
                    sum += cost[static_cast<std::size_t>(q)][static_cast<std::size_t>(assign[static_cast<std::size_t>(q)])];
                best = std::min(best, sum / m);
                return;
            }
            for (int j = 0; j < m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                used[static_cast<std::size_t>(j)] = true;
                assign[static_cast<std::size_t>(i)] = j;
                dfs(i + 1);
                used[static_cast<std::size_t>(j)] = false;
            }
        };
        dfs(0);
        CHECK(r.per_category_loss[PromptCategory::Speech] == best);
    }
}

TEST_CASE("zero-aware snr loss plug-in values") {
    Rng rng(6);
    AudioBuffer mix = random_audio(rng, 1000);
    AudioBuffer zero(std::vector<double>(1000, 0.0), 8000);

    SECTION("silent reference, zero estimate reaches the inactive cap") {
        CHECK(zero_aware_snr_loss(zero, zero, mix, 1e-3, 1e-2) == Catch::Approx(-20.0).margin(1e-9));
    }
    SECTION("silent reference, estimate equal to the mixture is near 0 dB") {
        CHECK(zero_aware_snr_loss(zero, mix, mix, 1e-3, 1e-2) ==
              Catch::Approx(10.0 * std::log10(1.0 + 1e-2)).margin(1e-9));
    }
    SECTION("active reference, perfect estimate reaches the active cap") {
        AudioBuffer s = random_audio(rng, 1000);
        CHECK(zero_aware_snr_loss(s, s, mix, 1e-3, 1e-2) == Catch::Approx(-30.0).margin(1e-9));
    }
    SECTION("bounded below by the caps") {
        for (int i = 0; i < 50; ++i) {
            AudioBuffer s = random_audio(rng, 500);
            AudioBuffer est = random_audio(rng, 500);
            AudioBuffer m = random_audio(rng, 500);
            CHECK(zero_aware_snr_loss(s, est, m) >= 10.0 * std::log10(kDefaultTauActive) - 1e-9);
            AudioBuffer z(std::vector<double>(500, 0.0), 8000);
            CHECK(zero_aware_snr_loss(z, est, m) >= 10.0 * std::log10(kDefaultTauInactive) - 1e-9);
        }
    }
    SECTION("zero mixture with zero reference is an error") {
        CHECK_THROWS_WITH(zero_aware_snr_loss(zero, mix, zero), "zero mixture with zero reference");
    }
}

TEST_CASE("evaluate_pair dispatch") {
    Rng rng(7);
    AudioBuffer s = random_audio(rng, 500);
    CHECK(evaluate_pair(s, s, "snr") >= 80.0);
    AudioBuffer scaled = s;
    for (auto& x : scaled.samples) x *= 3.0;
    CHECK(std::abs(evaluate_pair(s, scaled, "si-snr") - si_snr_db(s, s)) < 1e-9);
    CHECK(evaluate_pair(s, s, "mss-default") == snr_db(s, s));
    CHECK_THROWS_WITH(evaluate_pair(s, s, "bss-eval"), "unknown metric convention 'bss-eval'");
}

TEST_CASE("tape losses agree with the plain functions and differentiate") {
    Rng rng(8);
    AudioBuffer s = random_audio(rng, 64);
    AudioBuffer est = random_audio(rng, 64);
    AudioBuffer mix = random_audio(rng, 64);
    TensorData<double> est_t({64});
    for (std::size_t i = 0; i < 64; ++i) est_t.v[i] = est.samples[i];

    SECTION("values match") {
        Tape<double> tape;
        auto e = tape.leaf(est_t, true);
        CHECK(tape.val(neg_snr_loss_tape(tape, e, s)).item() ==
              Catch::Approx(neg_snr_loss(s, est)).margin(1e-12));
        CHECK(tape.val(zero_aware_snr_loss_tape(tape, e, s, mix)).item() ==
              Catch::Approx(zero_aware_snr_loss(s, est, mix)).margin(1e-12));
        AudioBuffer zero(std::vector<double>(64, 0.0), 8000);
        CHECK(tape.val(zero_aware_snr_loss_tape(tape, e, zero, mix)).item() ==
              Catch::Approx(zero_aware_snr_loss(zero, est, mix)).margin(1e-12));
    }

    SECTION("gradients match finite differences") {
        for (int variant = 0; variant < 3; ++variant) {
            Tape<double> tape;
            auto e = tape.leaf(est_t, true);
            AudioBuffer zero(std::vector<double>(64, 0.0), 8000);
            auto loss = variant == 0   ? neg_snr_loss_tape(tape, e, s)
                        : variant == 1 ? zero_aware_snr_loss_tape(tape, e, s, mix)
                                       : zero_aware_snr_loss_tape(tape, e, zero, mix);
            tape.backward(loss);
            const auto& g = tape.node_at(e.id).grad;
            for (int c = 0; c < 10; ++c) {
                auto j = static_cast<std::size_t>(rng.uniform_int(0, 63));
                auto run = [&](double delta) {
                    Tape<double> t2;
                    TensorData<double> pert = est_t;
                    pert.v[j] += delta;
                    auto e2 = t2.leaf(pert, false);
                    auto l2 = variant == 0   ? neg_snr_loss_tape(t2, e2, s)
                              : variant == 1 ? zero_aware_snr_loss_tape(t2, e2, s, mix)
                                             : zero_aware_snr_loss_tape(t2, e2, zero, mix);
                    return t2.val(l2).item();
                };
                const double fd = (run(1e-6) - run(-1e-6)) / 2e-6;
                CHECK(std::abs(fd - g.v[j]) < 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("tape PIT matches the plain PIT and routes gradients to the chosen pairs") {
    Rng rng(9);
    std::vector<AudioBuffer> t = {random_audio(rng, 64), random_audio(rng, 64), random_audio(rng, 64)};
    std::vector<AudioBuffer> e = {random_audio(rng, 64), random_audio(rng, 64), random_audio(rng, 64)};
    CategoryGrouping g;
    g.groups[PromptCategory::Speech] = {{0, 0}, {1, 1}};
    g.groups[PromptCategory::SfxMix] = {{2, 2}};

    Tape<double> tape;
    std::vector<Tape<double>::Ref> est_refs;
    for (const auto& buf : e) {
        TensorData<double> td({64});
        for (std::size_t i = 0; i < 64; ++i) td.v[i] = buf.samples[i];
        est_refs.push_back(tape.leaf(td, true));
    }
    auto result = category_pit_loss_tape(tape, t, est_refs, g);
    LossReport plain = category_pit_loss(t, e, g);
    CHECK(tape.val(result.total).item() == Catch::Approx(plain.total).margin(1e-12));
    CHECK(result.report.chosen_permutations == plain.chosen_permutations);
    tape.backward(result.total);
    for (const auto& r : est_refs) CHECK(!tape.node_at(r.id).grad.v.empty());
}

TEST_CASE("loss report serializes to a one-line record") {
    LossReport r;
    r.total = -12.5;
    r.per_category_loss[PromptCategory::Speech] = -15.0;
    r.chosen_permutations[PromptCategory::Speech] = {1, 0};
    std::string line = r.to_json_line();
    CHECK(line.find("\"total\":-12.5") != std::string::npos);
    CHECK(line.find("\"speech\":-15") != std::string::npos);
    CHECK(line.find('\n') == std::string::npos);
}
