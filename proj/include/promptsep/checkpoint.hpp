// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptsep/model.hpp"

namespace promptsep {

using nlohmann::json;

inline json stft_config_to_json(const StftConfig& c) {
    return json{{"window_length", c.window_length},
                {"hop_length", c.hop_length},
                {"fft_length", c.fft_length},
                {"window_kind", window_kind_name(c.window_kind)}};
}

inline StftConfig stft_config_from_json(const json& j) {
    StftConfig c;
    c.window_length = j.at("window_length").get<int>();
    c.hop_length = j.at("hop_length").get<int>();
    c.fft_length = j.at("fft_length").get<int>();
    c.window_kind = window_kind_from_name(j.at("window_kind").get<std::string>());
    return c;
}

inline json model_config_to_json(const ModelConfig& c) {
    return json{{"blocks_cross", c.blocks_cross},
                {"blocks_tse", c.blocks_tse},
                {"embed_dim", c.embed_dim},
                {"ffn_hidden_cross", c.ffn_hidden_cross},
                {"ffn_hidden_tse", c.ffn_hidden_tse},
                {"conv_kernel", c.conv_kernel},
                {"conv_stride", c.conv_stride},
                {"num_heads", c.num_heads},
                {"norm_groups", c.norm_groups},
                {"attn_head_dim_cross", c.attn_head_dim_cross},
                {"attn_head_dim_tse", c.attn_head_dim_tse},
                {"band_widths", c.band_spec.band_widths},
                {"positional_encoding_enabled", c.positional_encoding_enabled}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.blocks_cross = j.at("blocks_cross").get<int>();
    c.blocks_tse = j.at("blocks_tse").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.ffn_hidden_cross = j.at("ffn_hidden_cross").get<int>();
    c.ffn_hidden_tse = j.at("ffn_hidden_tse").get<int>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.conv_stride = j.at("conv_stride").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.attn_head_dim_cross = j.at("attn_head_dim_cross").get<int>();
    c.attn_head_dim_tse = j.at("attn_head_dim_tse").get<int>();
    c.band_spec.band_widths = j.at("band_widths").get<std::vector<int>>();
    c.positional_encoding_enabled = j.at("positional_encoding_enabled").get<bool>();
    return c;
}

/// Optimizer/schedule bookkeeping stored alongside the parameters so a run
/// can resume exactly where it stopped.
struct TrainingStateMeta {
    int epoch = 0;
    std::int64_t global_step = 0;
    double current_lr = 0.0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int decay_applied_count = 0;
    std::int64_t optimizer_step = 0;
    std::vector<std::string> data_rng_states;
    std::string dropout_rng_state;

    json to_json() const {
        json j{{"epoch", epoch},
               {"global_step", global_step},
               {"current_lr", current_lr},
               {"epochs_since_improvement", epochs_since_improvement},
               {"decay_applied_count", decay_applied_count},
               {"optimizer_step", optimizer_step},
               {"data_rng_states", data_rng_states},
               {"dropout_rng_state", dropout_rng_state}};
        // JSON has no infinity; an absent field means "no validation yet"
        if (std::isfinite(best_validation_loss)) j["best_validation_loss"] = best_validation_loss;
        return j;
    }
    static TrainingStateMeta from_json(const json& j) {
        TrainingStateMeta m;
        m.epoch = j.at("epoch").get<int>();
        m.global_step = j.at("global_step").get<std::int64_t>();
        m.current_lr = j.at("current_lr").get<double>();
        if (j.contains("best_validation_loss") && j["best_validation_loss"].is_number())
            m.best_validation_loss = j["best_validation_loss"].get<double>();
        m.epochs_since_improvement = j.at("epochs_since_improvement").get<int>();
        m.decay_applied_count = j.at("decay_applied_count").get<int>();
        m.optimizer_step = j.at("optimizer_step").get<std::int64_t>();
        m.data_rng_states = j.value("data_rng_states", std::vector<std::string>{});
        m.dropout_rng_state = j.value("dropout_rng_state", std::string{});
        return m;
    }
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
    return "f32";
}
template <>
inline const char* dtype_name<double>() {
    return "f64";
}

}  // namespace detail

/// Writes the self-describing checkpoint container: a fixed magic, a JSON
/// header (configs, training state, blob directory), then raw little-endian
/// parameter payloads. Prompt-table rows are stored as individual blobs
/// keyed by category name; extra blobs carry optimizer state.
template <typename T>
void save_checkpoint(const std::string& path, const TussModel<T>& model,
                     const TrainingStateMeta& meta = {},
                     const std::vector<std::pair<std::string, const TensorData<T>*>>& extra = {}) {
    struct BlobPlan {
        std::string name;
        std::vector<std::int64_t> shape;
        const T* data;
        std::int64_t count;
        bool is_param;
    };
    std::vector<BlobPlan> plan;

    std::vector<TensorData<T>> prompt_rows;  // keeps row storage alive
    for (int i = 0; i < model.params.size(); ++i) {
        const std::string& name = model.params.name(i);
        const TensorData<T>& v = model.params.value(i);
        if (name == "prompts.table") {
            const std::int64_t d = v.dim(1);
            for (int c = 0; c < kNumCategories; ++c) {
                TensorData<T> row({d});
                std::copy(v.v.begin() + c * d, v.v.begin() + (c + 1) * d, row.v.begin());
                prompt_rows.push_back(std::move(row));
            }
            for (int c = 0; c < kNumCategories; ++c)
                plan.push_back({std::string("prompts.embedding.") + category_name(kAllCategories[static_cast<std::size_t>(c)]),
                                {static_cast<std::int64_t>(d)},
                                prompt_rows[static_cast<std::size_t>(prompt_rows.size() - kNumCategories + c)].v.data(),
                                d,
                                true});
        } else {
            plan.push_back({name, v.shape, v.v.data(), v.numel(), true});
        }
    }
    for (const auto& [name, tensor] : extra)
        plan.push_back({name, tensor->shape, tensor->v.data(), tensor->numel(), false});

    json header;
    header["format_version"] = 1;
    header["dtype"] = detail::dtype_name<T>();
    header["kind"] = model_kind_name(model.kind);
    header["sample_rate_hz"] = model.sample_rate_hz;
    header["fixed_outputs"] = model.fixed_outputs;
    header["model"] = model_config_to_json(model.config);
    header["stft"] = stft_config_to_json(model.stft_config);
    header["training_state"] = meta.to_json();
    json blobs = json::array();
    std::int64_t offset = 0;
    for (const auto& b : plan) {
        blobs.push_back(json{{"name", b.name},
                             {"shape", b.shape},
                             {"offset", offset},
                             {"count", b.count},
                             {"param", b.is_param}});
        offset += b.count * static_cast<std::int64_t>(sizeof(T));
    }
    header["blobs"] = blobs;

    const std::string header_str = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(detail::kCheckpointMagic, 8);
    const std::uint64_t hlen = header_str.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(header_str.data(), static_cast<std::streamsize>(hlen));
    for (const auto& b : plan)
        f.write(reinterpret_cast<const char*>(b.data),
                static_cast<std::streamsize>(b.count * static_cast<std::int64_t>(sizeof(T))));
    if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    TussModel<T> model;
    TrainingStateMeta meta;
    std::map<std::string, TensorData<T>> extra;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string header_str(hlen, '\0');
    f.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
    const json header = json::parse(header_str);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint version");
    if (header.at("dtype").get<std::string>() != detail::dtype_name<T>())
        throw std::runtime_error("checkpoint dtype is " + header.at("dtype").get<std::string>() +
                                 ", expected " + detail::dtype_name<T>());

    LoadedCheckpoint<T> out;
    out.model.kind = model_kind_from_name(header.at("kind").get<std::string>());
    out.model.sample_rate_hz = header.at("sample_rate_hz").get<int>();
    out.model.fixed_outputs = header.at("fixed_outputs").get<int>();
    out.model.config = model_config_from_json(header.at("model"));
    out.model.stft_config = stft_config_from_json(header.at("stft"));
    out.meta = TrainingStateMeta::from_json(header.at("training_state"));

    const std::streampos payload_start = f.tellg();
    TensorData<T> prompt_table;
    std::map<int, TensorData<T>> prompt_rows;
    for (const auto& b : header.at("blobs")) {
        const std::string name = b.at("name").get<std::string>();
        const auto shape = b.at("shape").get<std::vector<std::int64_t>>();
        const auto offset = b.at("offset").get<std::int64_t>();
        const auto count = b.at("count").get<std::int64_t>();
        TensorData<T> t(shape);
        if (t.numel() != count) throw std::runtime_error("checkpoint blob shape mismatch: " + name);
        f.seekg(payload_start + static_cast<std::streamoff>(offset));
        f.read(reinterpret_cast<char*>(t.v.data()),
               static_cast<std::streamsize>(count * static_cast<std::int64_t>(sizeof(T))));
        if (!f) throw std::runtime_error("truncated checkpoint blob: " + name);
        if (!b.at("param").get<bool>()) {
            out.extra.emplace(name, std::move(t));
            continue;
        }
        if (name.rfind("prompts.embedding.", 0) == 0) {
            const PromptCategory cat = category_from_name(name.substr(18));
            prompt_rows[static_cast<int>(cat)] = std::move(t);
            if (static_cast<int>(prompt_rows.size()) == kNumCategories) {
                const std::int64_t d = prompt_rows.begin()->second.numel();
                prompt_table = TensorData<T>({kNumCategories, d});
                for (const auto& [ci, row] : prompt_rows)
                    std::copy(row.v.begin(), row.v.end(), prompt_table.v.begin() + ci * d);
                out.model.params.add("prompts.table", std::move(prompt_table));
            }
            continue;
        }
        out.model.params.add(name, std::move(t));
    }
    validate_model_config(out.model.config);
    return out;
}

}  // namespace promptsep
