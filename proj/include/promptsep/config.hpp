// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptsep/checkpoint.hpp"
#include "promptsep/training.hpp"

namespace promptsep {

/// Everything a training run needs, assembled from the JSON config file
/// (sections model/data/train, optional fine_tune) plus CLI overrides.
struct TrainRunConfig {
    ModelKind kind = ModelKind::Prompted;
    ModelConfig model;
    StftConfig stft;
    int sample_rate_hz = 48000;
    int fixed_outputs = 4;
    std::uint64_t init_seed = 0;

    std::string manifest_path;
    PromptSamplerConfig sampler;
    TrainConfig train;
    std::string output_dir = "runs/default";
    std::string fine_tune_base;  // non-empty selects the fine-tuning path
};

namespace detail {

template <typename V>
void maybe(const nlohmann::json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

/// Parses and validates the run configuration, collecting every error before
/// failing so a bad file is reported in one pass.
inline TrainRunConfig parse_train_config(const nlohmann::json& j) {
    TrainRunConfig run;
    std::vector<std::string> errors;

    const nlohmann::json model_j = j.value("model", nlohmann::json::object());
    try {
        detail::maybe(model_j, "sample_rate_hz", run.sample_rate_hz);
        if (model_j.contains("stft"))
            run.stft = stft_config_from_json(model_j.at("stft"));
        else
            run.stft = default_stft_config(run.sample_rate_hz);

        const std::int64_t bins = run.stft.fft_length / 2 + 1;
        int num_bands = 62;
        detail::maybe(model_j, "num_bands", num_bands);
        BandSplitSpec bands;
        if (model_j.contains("band_widths"))
            bands.band_widths = model_j.at("band_widths").get<std::vector<int>>();
        else
            bands = default_band_table(bins, num_bands);

        const std::string preset = model_j.value("preset", std::string("medium"));
        if (preset == "medium")
            run.model = medium_config(bands);
        else if (preset == "large")
            run.model = large_config(bands);
        else if (preset == "custom")
            run.model.band_spec = bands;
        else
            errors.push_back("model.preset must be one of medium, large, custom");

        detail::maybe(model_j, "blocks_cross", run.model.blocks_cross);
        detail::maybe(model_j, "blocks_tse", run.model.blocks_tse);
        detail::maybe(model_j, "embed_dim", run.model.embed_dim);
        detail::maybe(model_j, "ffn_hidden_cross", run.model.ffn_hidden_cross);
        detail::maybe(model_j, "ffn_hidden_tse", run.model.ffn_hidden_tse);
        detail::maybe(model_j, "conv_kernel", run.model.conv_kernel);
        detail::maybe(model_j, "num_heads", run.model.num_heads);
        detail::maybe(model_j, "norm_groups", run.model.norm_groups);
        detail::maybe(model_j, "attn_head_dim_cross", run.model.attn_head_dim_cross);
        detail::maybe(model_j, "attn_head_dim_tse", run.model.attn_head_dim_tse);
        detail::maybe(model_j, "positional_encoding_enabled", run.model.positional_encoding_enabled);
        detail::maybe(model_j, "init_seed", run.init_seed);
        detail::maybe(model_j, "fixed_outputs", run.fixed_outputs);
        if (model_j.contains("kind")) run.kind = model_kind_from_name(model_j.at("kind").get<std::string>());

        // the large preset trains at half the medium peak rate
        if (preset == "large") run.train.peak_lr = 5e-4;

        try {
            validate_model_config(run.model);
            validate_stft_config(run.stft);
            validate_band_spec(run.model.band_spec, bins);
        } catch (const std::exception& e) {
            errors.push_back(std::string("model: ") + e.what());
        }
    } catch (const std::exception& e) {
        errors.push_back(std::string("model section: ") + e.what());
    }

    const nlohmann::json data_j = j.value("data", nlohmann::json::object());
    try {
        detail::maybe(data_j, "manifest", run.manifest_path);
        run.sampler.target_rate_hz = run.sample_rate_hz;
        detail::maybe(data_j, "n_min", run.sampler.n_min);
        detail::maybe(data_j, "n_max", run.sampler.n_max);
        detail::maybe(data_j, "submix_probability", run.sampler.submix_probability);
        detail::maybe(data_j, "split", run.sampler.split);
        if (data_j.contains("categories")) {
            run.sampler.categories.clear();
            for (const auto& name : data_j.at("categories"))
                run.sampler.categories.push_back(category_from_name(name.get<std::string>()));
        }
        if (data_j.contains("gain_ranges_db"))
            for (const auto& [name, range] : data_j.at("gain_ranges_db").items())
                run.sampler.gain_ranges_db[category_from_name(name)] = {range.at(0).get<double>(),
                                                                        range.at(1).get<double>()};
        if (data_j.contains("cooccurrence_boosts"))
            for (const auto& triple : data_j.at("cooccurrence_boosts")) {
                const auto a = static_cast<std::size_t>(static_cast<int>(category_from_name(triple.at(0).get<std::string>())));
                const auto b = static_cast<std::size_t>(static_cast<int>(category_from_name(triple.at(1).get<std::string>())));
                const double w = triple.at(2).get<double>();
                run.sampler.cooccurrence_weights[a][b] = w;
                run.sampler.cooccurrence_weights[b][a] = w;
            }
        try {
            validate_sampler_config(run.sampler);
        } catch (const std::exception& e) {
            errors.push_back(std::string("data: ") + e.what());
        }
    } catch (const std::exception& e) {
        errors.push_back(std::string("data section: ") + e.what());
    }

    const nlohmann::json train_j = j.value("train", nlohmann::json::object());
    try {
        detail::maybe(train_j, "epochs", run.train.epochs);
        detail::maybe(train_j, "steps_per_epoch", run.train.steps_per_epoch);
        detail::maybe(train_j, "batch_size", run.train.batch_size);
        detail::maybe(train_j, "segment_seconds", run.train.segment_seconds);
        detail::maybe(train_j, "peak_lr", run.train.peak_lr);
        detail::maybe(train_j, "warmup_steps", run.train.warmup_steps);
        detail::maybe(train_j, "constant_epochs", run.train.constant_epochs);
        detail::maybe(train_j, "plateau_patience", run.train.plateau_patience);
        detail::maybe(train_j, "decay_factor", run.train.decay_factor);
        detail::maybe(train_j, "weight_decay", run.train.weight_decay);
        detail::maybe(train_j, "grad_clip_norm", run.train.grad_clip_norm);
        detail::maybe(train_j, "prompt_dropout_prob", run.train.prompt_dropout_prob);
        detail::maybe(train_j, "seed", run.train.seed);
        detail::maybe(train_j, "adam_beta1", run.train.adam_beta1);
        detail::maybe(train_j, "adam_beta2", run.train.adam_beta2);
        detail::maybe(train_j, "adam_eps", run.train.adam_eps);
        detail::maybe(train_j, "validation_examples", run.train.validation_examples);
        detail::maybe(train_j, "num_workers", run.train.num_workers);
        if (train_j.contains("category_weighting")) {
            const std::string w = train_j.at("category_weighting").get<std::string>();
            if (w == "per-category")
                run.train.weighting = CategoryWeighting::PerCategory;
            else if (w == "per-source")
                run.train.weighting = CategoryWeighting::PerSource;
            else
                errors.push_back("train.category_weighting must be per-category or per-source");
        }
    } catch (const std::exception& e) {
        errors.push_back(std::string("train section: ") + e.what());
    }
    for (const auto& e : validate_train_config(run.train)) errors.push_back("train." + e);

    detail::maybe(j, "output_dir", run.output_dir);
    if (j.contains("fine_tune"))
        run.fine_tune_base = j.at("fine_tune").value("base_checkpoint", std::string{});
    if (run.manifest_path.empty()) errors.push_back("data.manifest is required");

    if (!errors.empty()) {
        std::string joined;
        for (const auto& e : errors) joined += (joined.empty() ? "" : "\n  ") + e;
        throw ConfigError("invalid configuration:\n  " + joined);
    }
    return run;
}

inline TrainRunConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_train_config(j);
}

}  // namespace promptsep
