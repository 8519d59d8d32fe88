// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "promptsep/training.hpp"

using namespace promptsep;
namespace fs = std::filesystem;

namespace {

StftConfig micro_stft() { return StftConfig{32, 16, 32, WindowKind::SqrtHann}; }

ModelConfig micro_config() {
    ModelConfig c;
    c.blocks_cross = 1;
    c.blocks_tse = 1;
    c.embed_dim = 8;
    c.ffn_hidden_cross = 16;
    c.ffn_hidden_tse = 16;
    c.conv_kernel = 4;
    c.num_heads = 2;
    c.norm_groups = 2;
    c.attn_head_dim_cross = 4;
    c.attn_head_dim_tse = 4;
    c.band_spec = BandSplitSpec{{8, 9}};
    return c;
}

TrainConfig micro_train_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.batch_size = 2;
    cfg.segment_seconds = 0.1;
    cfg.peak_lr = 1e-3;
    cfg.warmup_steps = 4;
    cfg.constant_epochs = 1;
    cfg.validation_examples = 2;
    cfg.seed = 7;
    return cfg;
}

MixtureExample make_example(Rng& rng, int n_samples, const PromptSet& prompts) {
    MixtureExample ex;
    ex.prompts = prompts;
    ex.mixture.sample_rate_hz = 8000;
    ex.mixture.samples.assign(static_cast<std::size_t>(n_samples), 0.0);
    for (int s = 0; s < prompts.size(); ++s) {
        AudioBuffer src;
        src.sample_rate_hz = 8000;
        src.samples.resize(static_cast<std::size_t>(n_samples));
        for (auto& x : src.samples) x = 0.3 * (2.0 * rng.uniform() - 1.0);
        for (std::size_t i = 0; i < src.samples.size(); ++i) ex.mixture.samples[i] += src.samples[i];
        ex.sources.push_back(std::move(src));
        ex.gains_db.push_back(0.0);
        ex.provenance.emplace_back();
    }
    return ex;
}

/// Writes a tiny two-category corpus and manifest for fit() tests.
struct TrainFixture {
    fs::path dir;
    fs::path manifest_path;
    TrainFixture() {
        dir = fs::temp_directory_path() / "promptsep_training_fixture";
        fs::create_directories(dir);
        Rng rng(31);
        std::ofstream mf(dir / "manifest.tsv");
        auto emit = [&](const std::string& name, double tone_hz, const std::string& cat,
                        const std::string& split) {
            AudioBuffer b;
            b.sample_rate_hz = 8000;
            b.samples.resize(4000);
            for (std::size_t i = 0; i < b.samples.size(); ++i)
                b.samples[i] = 0.4 * std::sin(2.0 * M_PI * tone_hz * static_cast<double>(i) / 8000.0) +
                               0.05 * (2.0 * rng.uniform() - 1.0);
            const fs::path p = dir / name;
            write_wav(p.string(), b);
            mf << p.string() << "\tspeech\t8000\t4000\t" << split << "\n";
            mf << p.string() << "\t" << cat << "\t8000\t4000\t" << split << "\n";
        };
        emit("a.wav", 300, "sfx-mix", "train");
        emit("b.wav", 500, "sfx-mix", "train");
        manifest_path = dir / "manifest.tsv";
    }
};

PromptSamplerConfig two_category_sampler() {
    PromptSamplerConfig cfg;
    cfg.categories = {PromptCategory::Speech, PromptCategory::SfxMix};
    cfg.n_min = 2;
    cfg.n_max = 2;
    cfg.target_rate_hz = 8000;
    cfg.submix_probability = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule closed form") {
    TrainConfig cfg;
    cfg.peak_lr = 1e-3;
    cfg.warmup_steps = 10000;
    CHECK(lr_at(0, 0, 0, cfg) == 0.0);
    CHECK(lr_at(5000, 0, 0, cfg) == Catch::Approx(5e-4).margin(1e-15));
    CHECK(lr_at(10000, 0, 0, cfg) == 1e-3);
    CHECK(lr_at(400000, 100, 3, cfg) == Catch::Approx(1.25e-4).margin(1e-15));
    // pure function: replaying a (step, epoch, decays) history reproduces it
    for (std::int64_t s : {0ll, 123ll, 9999ll, 10000ll, 50000ll})
        for (int d : {0, 1, 2})
            CHECK(lr_at(s, 7, d, cfg) == lr_at(s, 7, d, cfg));
}

TEST_CASE("train config validation reports every violation at once") {
    TrainConfig bad;
    bad.prompt_dropout_prob = 1.5;
    bad.epochs = 0;
    bad.decay_factor = 1.5;
    auto errors = validate_train_config(bad);
    REQUIRE(errors.size() == 3);
    bool saw_dropout = false;
    for (const auto& e : errors) saw_dropout = saw_dropout || e.find("prompt_dropout_prob") != std::string::npos;
    CHECK(saw_dropout);
    CHECK(validate_train_config(TrainConfig{}).empty());
}

TEST_CASE("prompt dropout") {
    TrainConfig cfg;
    cfg.prompt_dropout_prob = 0.25;
    Rng data_rng(11);

    SECTION("untriggered draws return the example unchanged") {
        MixtureExample ex = make_example(data_rng, 64, PromptSet{{PromptCategory::Speech, PromptCategory::Drums}});
        Rng rng(3);
        int checked = 0;
        for (int i = 0; i < 50; ++i) {
            auto [out, info] = apply_prompt_dropout(ex, rng, cfg);
            if (info.triggered) continue;
            ++checked;
            CHECK(out.prompts.size() == 2);
            CHECK(out.sources.size() == 2);
        }
        CHECK(checked > 10);
    }

    SECTION("repeated-category prompts are never removed") {
        MixtureExample ex = make_example(
            data_rng, 64,
            PromptSet{{PromptCategory::Speech, PromptCategory::Speech, PromptCategory::SfxMix}});
        Rng rng(5);
        bool saw_drop = false;
        for (int i = 0; i < 200; ++i) {
            auto [out, info] = apply_prompt_dropout(ex, rng, cfg);
            if (!info.triggered) continue;
            // only the sfx-mix prompt is droppable
            for (int idx : info.removed_indices) CHECK(idx == 2);
            if (!info.removed_indices.empty()) {
                saw_drop = true;
                REQUIRE(out.prompts.size() == 2);
                CHECK(out.prompts.entries[0] == PromptCategory::Speech);
                CHECK(out.prompts.entries[1] == PromptCategory::Speech);
                // the removed prompt's audio stays inside the mixture
                for (std::size_t j = 0; j < ex.mixture.samples.size(); ++j)
                    CHECK(out.mixture.samples[j] == ex.mixture.samples[j]);
            }
        }
        CHECK(saw_drop);
    }

    SECTION("M stays in [1, N) and removal counts honor the droppable cap") {
        MixtureExample ex = make_example(
            data_rng, 64,
            PromptSet{{PromptCategory::Vocals, PromptCategory::Drums, PromptCategory::Bass}});
        Rng rng(7);
        bool saw_two = false;
        for (int i = 0; i < 300; ++i) {
            auto [out, info] = apply_prompt_dropout(ex, rng, cfg);
            if (!info.triggered) continue;
            CHECK(info.m_drawn >= 1);
            CHECK(info.m_drawn < 3);
            CHECK(static_cast<int>(info.removed_indices.size()) == info.m_drawn);
            CHECK(out.prompts.size() == 3 - info.m_drawn);
            saw_two = saw_two || info.m_drawn == 2;
        }
        CHECK(saw_two);
    }

    SECTION("single-prompt examples pass through") {
        MixtureExample ex = make_example(data_rng, 64, PromptSet{{PromptCategory::Speech}});
        Rng rng(9);
        for (int i = 0; i < 50; ++i) {
            auto [out, info] = apply_prompt_dropout(ex, rng, cfg);
            CHECK(out.prompts.size() == 1);
            CHECK(info.removed_indices.empty());
        }
    }

    SECTION("trigger frequency tracks the configured probability") {
        MixtureExample ex = make_example(data_rng, 64, PromptSet{{PromptCategory::Speech, PromptCategory::Drums}});
        Rng rng(13);
        int triggered = 0;
        const int trials = 20000;
        for (int i = 0; i < trials; ++i) triggered += apply_prompt_dropout(ex, rng, cfg).second.triggered;
        CHECK(triggered > trials * 0.22);
        CHECK(triggered < trials * 0.28);
    }
}

TEST_CASE("adamw with zero learning rate leaves parameters bit-exact") {
    auto model = build_tuss_model<float>(micro_config(), micro_stft(), 8000, 3);
    auto before = model.params;
    auto opt = AdamWState<float>::init(model.params);
    TrainConfig cfg;
    std::vector<TensorData<float>> grads;
    Rng rng(5);
    for (int i = 0; i < model.params.size(); ++i) {
        TensorData<float> g(model.params.value(i).shape);
        for (auto& x : g.v) x = static_cast<float>(rng.uniform(-1, 1));
        grads.push_back(std::move(g));
    }
    adamw_update(model.params, grads, opt, 0.0, cfg);
    for (int i = 0; i < model.params.size(); ++i)
        for (std::size_t j = 0; j < before.value(i).v.size(); ++j)
            CHECK(model.params.value(i).v[j] == before.value(i).v[j]);
    // and a non-zero rate moves them
    adamw_update(model.params, grads, opt, 1e-3, cfg);
    bool any_moved = false;
    for (int i = 0; i < model.params.size() && !any_moved; ++i)
        for (std::size_t j = 0; j < before.value(i).v.size(); ++j)
            any_moved = any_moved || model.params.value(i).v[j] != before.value(i).v[j];
    CHECK(any_moved);
}

TEST_CASE("train_step clips gradients and makes progress on a fixed example") {
    auto model = build_tuss_model<float>(micro_config(), micro_stft(), 8000, 11);
    auto opt = AdamWState<float>::init(model.params);
    TrainConfig cfg;
    cfg.warmup_steps = 2;
    cfg.peak_lr = 2e-3;
    cfg.grad_clip_norm = 5.0;
    ScheduleState sched;

    Rng rng(17);
    MixtureExample ex = make_example(rng, 320, PromptSet{{PromptCategory::Speech, PromptCategory::SfxMix}});
    std::vector<MixtureExample> batch = {ex};

    double first_loss = 0.0, last_loss = 0.0;
    for (int step = 0; step < 30; ++step) {
        auto r = train_step(model, batch, opt, sched, cfg);
        REQUIRE(std::isfinite(r.report.total));
        // post-clip norm never exceeds the bound
        CHECK(r.report.grad_norm * r.clip_scale <= cfg.grad_clip_norm + 1e-6);
        if (r.report.grad_norm > cfg.grad_clip_norm)
            CHECK(r.clip_scale == Catch::Approx(cfg.grad_clip_norm / r.report.grad_norm));
        else
            CHECK(r.clip_scale == 1.0);
        if (step == 1) first_loss = r.report.total;
        last_loss = r.report.total;
    }
    CHECK(sched.global_step == 30);
    CHECK(last_loss < first_loss);
}

TEST_CASE("batch order invariance of the accumulated update") {
    auto model_a = build_tuss_model<double>(micro_config(), micro_stft(), 8000, 21);
    auto model_b = model_a;
    TrainConfig cfg;
    cfg.warmup_steps = 1;
    Rng rng(19);
    MixtureExample e1 = make_example(rng, 320, PromptSet{{PromptCategory::Speech, PromptCategory::Drums}});
    MixtureExample e2 = make_example(rng, 320, PromptSet{{PromptCategory::Vocals, PromptCategory::SfxMix}});

    auto opt_a = AdamWState<double>::init(model_a.params);
    auto opt_b = AdamWState<double>::init(model_b.params);
    ScheduleState sa, sb;
    sa.global_step = sb.global_step = 5;  // past warmup
    train_step(model_a, {e1, e2}, opt_a, sa, cfg);
    train_step(model_b, {e2, e1}, opt_b, sb, cfg);
    double max_rel = 0.0;
    for (int i = 0; i < model_a.params.size(); ++i)
        for (std::size_t j = 0; j < model_a.params.value(i).v.size(); ++j) {
            const double a = model_a.params.value(i).v[j];
            const double b = model_b.params.value(i).v[j];
            max_rel = std::max(max_rel, std::abs(a - b) / std::max(1e-12, std::abs(a)));
        }
    CHECK(max_rel < 1e-9);  // sum-based accumulation, double precision
}

TEST_CASE("checkpoint round trip is bit-exact on parameters") {
    auto model = build_tuss_model<float>(micro_config(), micro_stft(), 8000, 23);
    TrainingStateMeta meta;
    meta.epoch = 3;
    meta.global_step = 1234;
    meta.current_lr = 6.25e-4;
    meta.decay_applied_count = 2;
    const auto path = (fs::temp_directory_path() / "promptsep_ckpt_test.ckpt").string();
    save_checkpoint(path, model, meta);

    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.model.kind == ModelKind::Prompted);
    CHECK(loaded.meta.global_step == 1234);
    CHECK(loaded.meta.current_lr == 6.25e-4);
    CHECK(loaded.model.config.embed_dim == 8);
    CHECK(loaded.model.stft_config == model.stft_config);
    REQUIRE(loaded.model.params.size() == model.params.size());
    for (int i = 0; i < model.params.size(); ++i) {
        CHECK(loaded.model.params.name(i) == model.params.name(i));
        const auto& a = model.params.value(i).v;
        const auto& b = loaded.model.params.value(i).v;
        REQUIRE(a.size() == b.size());
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }
    // dtype guard
    CHECK_THROWS(load_checkpoint<double>(path));
    fs::remove(path);
}

TEST_CASE("plateau schedule simulation") {
    TrainConfig cfg;
    cfg.constant_epochs = 75;
    cfg.plateau_patience = 5;
    cfg.decay_factor = 0.5;
    cfg.peak_lr = 1e-3;
    ScheduleState sched;
    // validation improves through epoch 80, then stalls
    for (int epoch = 0; epoch < 150; ++epoch) {
        const double val = epoch < 80 ? -1.0 * epoch : -79.0;
        schedule_epoch_end(sched, val, cfg);
        if (sched.epoch <= 75) CHECK(sched.decay_applied_count == 0);
    }
    // stall begins after epoch 80; decays land every 5 epochs
    CHECK(sched.decay_applied_count == (150 - 80) / 5);
    CHECK(lr_at(500000, sched.epoch, 3, cfg) == Catch::Approx(1.25e-4).margin(1e-15));
}

TEST_CASE("fit runs, checkpoints, and resumes bit-exactly") {
    TrainFixture fixture;
    CorpusManifest manifest = load_manifest(fixture.manifest_path.string());

    auto fresh_model = [&]() {
        auto cfg = micro_config();
        return build_tuss_model<float>(cfg, micro_stft(), 8000, 99);
    };

    FitOptions opt;
    opt.train = micro_train_config();
    opt.sampler = two_category_sampler();

    const fs::path out_a = fs::temp_directory_path() / "promptsep_fit_a";
    const fs::path out_b = fs::temp_directory_path() / "promptsep_fit_b";
    fs::remove_all(out_a);
    fs::remove_all(out_b);

    // uninterrupted two-epoch run
    auto model_full = fresh_model();
    opt.output_dir = out_a.string();
    auto full = fit(model_full, manifest, opt);
    CHECK(full.schedule.epoch == 2);
    CHECK(full.schedule.global_step == 6);
    REQUIRE(full.checkpoint_paths.size() == 2);
    CHECK(fs::exists(full.checkpoint_paths[0]));
    CHECK(fs::exists(out_a / "validation_recipe.tsv"));
    CHECK(fs::exists(out_a / "train_log.jsonl"));
    CHECK(std::isfinite(full.schedule.best_validation_loss));

    // interrupted run: one epoch, then resume from its checkpoint
    auto model_resumed = fresh_model();
    FitOptions opt_one = opt;
    opt_one.output_dir = out_b.string();
    opt_one.train.epochs = 1;
    fit(model_resumed, manifest, opt_one);

    FitOptions opt_resume = opt;
    opt_resume.output_dir = out_b.string();
    opt_resume.train.epochs = 2;
    opt_resume.resume_from = (out_b / "epoch_0001.ckpt").string();
    auto resumed = fit(model_resumed, manifest, opt_resume);

    CHECK(resumed.schedule.global_step == full.schedule.global_step);
    CHECK(resumed.schedule.current_lr == full.schedule.current_lr);
    CHECK(resumed.schedule.decay_applied_count == full.schedule.decay_applied_count);
    // the resumed data stream continues where it stopped, so parameters match
    for (int i = 0; i < model_full.params.size(); ++i)
        for (std::size_t j = 0; j < model_full.params.value(i).v.size(); ++j)
            CHECK(model_full.params.value(i).v[j] == model_resumed.params.value(i).v[j]);
}

TEST_CASE("fine-tuning loads parameters and runs with dropout") {
    TrainFixture fixture;
    CorpusManifest manifest = load_manifest(fixture.manifest_path.string());
    auto cfg = micro_config();
    auto model = build_tuss_model<float>(cfg, micro_stft(), 8000, 77);

    const fs::path base_dir = fs::temp_directory_path() / "promptsep_ft_base";
    fs::remove_all(base_dir);
    fs::create_directories(base_dir);
    const std::string base_ckpt = (base_dir / "base.ckpt").string();
    TrainingStateMeta meta;
    meta.epoch = 9;
    meta.global_step = 999;
    save_checkpoint(base_ckpt, model, meta);

    FitOptions opt;
    opt.train = micro_train_config();
    opt.train.peak_lr = 1.25e-4;
    opt.train.epochs = 1;
    opt.train.prompt_dropout_prob = 0.5;
    opt.sampler = two_category_sampler();
    opt.output_dir = (base_dir / "ft").string();

    auto ft_model = build_tuss_model<float>(cfg, micro_stft(), 8000, 1);  // placeholder params
    auto result = fine_tune_with_dropout(ft_model, base_ckpt, manifest, opt);
    // fresh schedule, not the base checkpoint's
    CHECK(result.schedule.global_step == 3);
    CHECK(result.schedule.epoch == 1);
    CHECK(lr_at(opt.train.warmup_steps, 0, 0, opt.train) == Catch::Approx(1.25e-4));
    CHECK(std::isfinite(result.schedule.best_validation_loss));

    // dimension mismatch is rejected
    auto other_cfg = micro_config();
    other_cfg.embed_dim = 16;
    other_cfg.attn_head_dim_cross = 4;
    auto wrong = build_tuss_model<float>(other_cfg, micro_stft(), 8000, 2);
    CHECK_THROWS_AS(fine_tune_with_dropout(wrong, base_ckpt, manifest, opt), ConfigError);
}
