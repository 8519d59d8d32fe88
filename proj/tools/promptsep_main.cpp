// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "promptsep/config.hpp"
#include "promptsep/eval.hpp"
#include "promptsep/model.hpp"
#include "promptsep/training.hpp"

namespace fs = std::filesystem;
using namespace promptsep;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInvalid = 2;  // invalid prompt combination or config

PromptSet resolve_prompts(const std::string& prompts_str, const std::string& preset,
                          std::optional<int> n, bool with_noise) {
    if (!prompts_str.empty()) return parse_prompt_list(prompts_str);
    if (!preset.empty()) {
        std::string name = to_lower_copy(preset);
        if (name == "ss" && with_noise) name = "noisy-ss";
        return preset_lookup(name, n);
    }
    throw ConfigError("either --prompts or --preset is required");
}

int run_separate(const std::string& input, const std::string& checkpoint,
                 const std::string& prompts_str, const std::string& preset, std::optional<int> n,
                 bool with_noise, const std::string& output_dir, double segment_seconds) {
    PromptSet prompts = resolve_prompts(prompts_str, preset, n, with_noise);
    AudioBuffer mixture = read_wav(input);
    if (mixture.sample_rate_hz < 8000)
        throw std::runtime_error("input sample rate below 8 kHz is not supported");

    auto loaded = load_checkpoint<float>(checkpoint);
    auto outs = separate_waveform(loaded.model, mixture, prompts, segment_seconds);

    fs::create_directories(output_dir);
    const std::string stem = fs::path(input).stem().string();
    for (int i = 0; i < static_cast<int>(outs.size()); ++i) {
        const std::string name = stem + "." + std::to_string(i) + "." +
                                 category_name(prompts.entries[static_cast<std::size_t>(i)]) + ".wav";
        const fs::path out_path = fs::path(output_dir) / name;
        write_wav(out_path.string(), outs[static_cast<std::size_t>(i)]);
        std::cout << out_path.string() << "\n";
    }
    return 0;
}

int run_evaluate(const std::string& manifest_path, const std::string& checkpoint,
                 const std::string& preset, std::optional<int> n, bool with_noise,
                 const std::string& convention, bool single_category, bool oracle,
                 const std::string& metrics_out, double segment_seconds) {
    auto items = load_eval_manifest(manifest_path);
    EvalOptions opt;
    opt.convention = convention;
    opt.oracle = oracle;
    opt.single_category = single_category;
    opt.segment_seconds = segment_seconds;
    if (!preset.empty()) {
        std::string name = to_lower_copy(preset);
        if (name == "ss" && with_noise) name = "noisy-ss";
        opt.expected_prompts = preset_lookup(name, n);
    }

    EvalReport report;
    if (oracle) {
        report = evaluate_items<float>(nullptr, items, opt);
    } else {
        if (checkpoint.empty()) throw ConfigError("--checkpoint is required unless --oracle is set");
        auto loaded = load_checkpoint<float>(checkpoint);
        report = evaluate_items(&loaded.model, items, opt);
    }

    std::cout << report.to_table();
    if (!metrics_out.empty()) {
        std::ofstream f(metrics_out, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open metrics output: " + metrics_out);
        f << report.to_json_lines();
        std::cout << "report written to " << metrics_out << "\n";
    }
    return 0;
}

struct TrainOverrides {
    std::optional<int> epochs, steps_per_epoch, batch_size, constant_epochs, plateau_patience,
        validation_examples, num_workers;
    std::optional<double> segment_seconds, peak_lr, decay_factor, weight_decay, grad_clip_norm,
        prompt_dropout_prob;
    std::optional<std::int64_t> warmup_steps;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> manifest, output_dir;

    void apply(TrainRunConfig& run) const {
        auto set = [](auto& dst, const auto& src) {
            if (src) dst = *src;
        };
        set(run.train.epochs, epochs);
        set(run.train.steps_per_epoch, steps_per_epoch);
        set(run.train.batch_size, batch_size);
        set(run.train.segment_seconds, segment_seconds);
        set(run.train.peak_lr, peak_lr);
        set(run.train.warmup_steps, warmup_steps);
        set(run.train.constant_epochs, constant_epochs);
        set(run.train.plateau_patience, plateau_patience);
        set(run.train.decay_factor, decay_factor);
        set(run.train.weight_decay, weight_decay);
        set(run.train.grad_clip_norm, grad_clip_norm);
        set(run.train.prompt_dropout_prob, prompt_dropout_prob);
        set(run.train.seed, seed);
        set(run.train.validation_examples, validation_examples);
        set(run.train.num_workers, num_workers);
        set(run.manifest_path, manifest);
        set(run.output_dir, output_dir);
    }
};

int run_train(const std::string& config_path, const TrainOverrides& overrides,
              const std::string& resume_from) {
    TrainRunConfig run = load_train_config(config_path);
    overrides.apply(run);
    {
        auto errors = validate_train_config(run.train);
        if (!errors.empty()) {
            std::string joined;
            for (const auto& e : errors) joined += (joined.empty() ? "" : "\n  ") + e;
            throw ConfigError("invalid configuration:\n  " + joined);
        }
    }
    CorpusManifest manifest = load_manifest(run.manifest_path);

    FitOptions fit_opt;
    fit_opt.train = run.train;
    fit_opt.sampler = run.sampler;
    fit_opt.output_dir = run.output_dir;
    fit_opt.resume_from = resume_from;
    auto sink = [](const std::string& line) { std::cout << line << "\n"; };

    if (!run.fine_tune_base.empty()) {
        auto loaded = load_checkpoint<float>(run.fine_tune_base);
        TussModel<float> model = std::move(loaded.model);
        auto result = fine_tune_with_dropout(model, run.fine_tune_base, manifest, fit_opt, sink);
        std::cout << "fine-tuning finished at step " << result.schedule.global_step << "\n";
        return 0;
    }

    TussModel<float> model;
    if (run.kind == ModelKind::Prompted)
        model = build_tuss_model<float>(run.model, run.stft, run.sample_rate_hz, run.init_seed);
    else
        model = build_baseline_model<float>(run.model, run.stft, run.sample_rate_hz, run.init_seed,
                                            run.fixed_outputs);
    auto result = fit(model, manifest, fit_opt, sink);
    std::cout << "training finished at step " << result.schedule.global_step << "; best checkpoint "
              << result.best_checkpoint << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-conditioned source separation"};
    app.require_subcommand(1);

    // separate
    auto* sep = app.add_subcommand("separate", "separate a mixture into one stem per prompt");
    std::string sep_input, sep_checkpoint, sep_prompts, sep_preset, sep_output_dir = ".";
    std::optional<int> sep_n;
    bool sep_with_noise = false;
    double sep_segment_seconds = 6.0;
    sep->add_option("--input", sep_input, "input WAV file")->required();
    sep->add_option("--checkpoint", sep_checkpoint, "model checkpoint")->required();
    sep->add_option("--prompts", sep_prompts, "comma-separated category names");
    sep->add_option("--preset", sep_preset, "task preset (se, ss, noisy-ss, uss, mss, cass)");
    sep->add_option("--n", sep_n, "prompt count for ss/noisy-ss/uss presets");
    sep->add_flag("--with-noise", sep_with_noise, "append sfx-mix to the ss preset");
    sep->add_option("--output-dir", sep_output_dir, "where stems are written");
    sep->add_option("--segment-seconds", sep_segment_seconds, "processing segment length");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score separations against references");
    std::string ev_manifest, ev_checkpoint, ev_preset, ev_convention = "si-snr", ev_metrics_out;
    std::optional<int> ev_n;
    bool ev_with_noise = false, ev_single_category = false, ev_oracle = false;
    double ev_segment_seconds = 6.0;
    ev->add_option("--manifest", ev_manifest, "JSON-lines evaluation manifest")->required();
    ev->add_option("--checkpoint", ev_checkpoint, "model checkpoint");
    ev->add_option("--preset", ev_preset, "task preset fixing the prompt order");
    ev->add_option("--n", ev_n, "prompt count for ss/noisy-ss/uss presets");
    ev->add_flag("--with-noise", ev_with_noise, "append sfx-mix to the ss preset");
    ev->add_option("--convention", ev_convention, "metric: snr, si-snr, or mss-default");
    ev->add_flag("--single-category", ev_single_category, "one forward pass per category");
    ev->add_flag("--oracle", ev_oracle, "score the references against themselves");
    ev->add_option("--metrics-out", ev_metrics_out, "write the JSON-lines report here");
    ev->add_option("--segment-seconds", ev_segment_seconds, "processing segment length");

    // train
    auto* tr = app.add_subcommand("train", "train or fine-tune a model from a config file");
    std::string tr_config, tr_resume;
    TrainOverrides ov;
    tr->add_option("--config", tr_config, "JSON run configuration")->required();
    tr->add_option("--resume-from", tr_resume, "checkpoint to resume from");
    tr->add_option("--epochs", ov.epochs);
    tr->add_option("--steps-per-epoch", ov.steps_per_epoch);
    tr->add_option("--batch-size", ov.batch_size);
    tr->add_option("--segment-seconds", ov.segment_seconds);
    tr->add_option("--peak-lr", ov.peak_lr);
    tr->add_option("--warmup-steps", ov.warmup_steps);
    tr->add_option("--constant-epochs", ov.constant_epochs);
    tr->add_option("--plateau-patience", ov.plateau_patience);
    tr->add_option("--decay-factor", ov.decay_factor);
    tr->add_option("--weight-decay", ov.weight_decay);
    tr->add_option("--grad-clip-norm", ov.grad_clip_norm);
    tr->add_option("--prompt-dropout-prob", ov.prompt_dropout_prob);
    tr->add_option("--seed", ov.seed);
    tr->add_option("--validation-examples", ov.validation_examples);
    tr->add_option("--num-workers", ov.num_workers);
    tr->add_option("--manifest", ov.manifest);
    tr->add_option("--output-dir", ov.output_dir);

    // presets
    auto* pr = app.add_subcommand("presets", "print the task/prompt table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sep->parsed())
            return run_separate(sep_input, sep_checkpoint, sep_prompts, sep_preset, sep_n,
                                sep_with_noise, sep_output_dir, sep_segment_seconds);
        if (ev->parsed())
            return run_evaluate(ev_manifest, ev_checkpoint, ev_preset, ev_n, ev_with_noise,
                                ev_convention, ev_single_category, ev_oracle, ev_metrics_out,
                                ev_segment_seconds);
        if (tr->parsed()) return run_train(tr_config, ov, tr_resume);
        if (pr->parsed()) {
            std::cout << presets_table_text();
            return 0;
        }
    } catch (const PromptError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
