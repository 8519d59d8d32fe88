// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptsep/audio.hpp"
#include "promptsep/bands.hpp"
#include "promptsep/nn.hpp"
#include "promptsep/prompts.hpp"
#include "promptsep/rng.hpp"
#include "promptsep/stft.hpp"
#include "promptsep/tape.hpp"
#include "promptsep/tensor.hpp"

namespace promptsep {

/// Network hyperparameters. `attn_head_dim_*` is the attention hidden size
/// per head (the total attention width is num_heads times that); the cross
/// and extraction modules carry separate feed-forward and attention widths.
struct ModelConfig {
    int blocks_cross = 4;
    int blocks_tse = 2;
    int embed_dim = 64;          // D
    int ffn_hidden_cross = 384;  // C, cross-prompt module
    int ffn_hidden_tse = 384;    // C, conditional extraction module
    int conv_kernel = 4;
    int conv_stride = 1;
    int num_heads = 4;               // H
    int norm_groups = 8;             // G
    int attn_head_dim_cross = 256;   // E, cross-prompt module
    int attn_head_dim_tse = 96;      // E, conditional extraction module
    BandSplitSpec band_spec;
    bool positional_encoding_enabled = true;
};

inline void validate_model_config(const ModelConfig& c) {
    auto positive = [](int v, const char* what) {
        if (v <= 0) throw std::invalid_argument(std::string("model config: ") + what + " must be positive");
    };
    positive(c.blocks_cross, "blocks_cross");
    positive(c.blocks_tse, "blocks_tse");
    positive(c.embed_dim, "embed_dim");
    positive(c.ffn_hidden_cross, "ffn_hidden_cross");
    positive(c.ffn_hidden_tse, "ffn_hidden_tse");
    positive(c.conv_kernel, "conv_kernel");
    positive(c.num_heads, "num_heads");
    positive(c.norm_groups, "norm_groups");
    positive(c.attn_head_dim_cross, "attn_head_dim_cross");
    positive(c.attn_head_dim_tse, "attn_head_dim_tse");
    if (c.conv_stride != 1)
        throw std::invalid_argument("model config: only conv_stride == 1 is supported");
    if (c.embed_dim % c.num_heads != 0)
        throw std::invalid_argument("model config: embed_dim must be divisible by num_heads");
    if (c.embed_dim % c.norm_groups != 0)
        throw std::invalid_argument("model config: embed_dim must be divisible by norm_groups");
    if (c.positional_encoding_enabled &&
        (c.attn_head_dim_cross % 2 != 0 || c.attn_head_dim_tse % 2 != 0))
        throw std::invalid_argument("model config: rotary encoding needs even attention head dims");
    if (c.band_spec.band_widths.empty())
        throw std::invalid_argument("model config: band spec is empty");
}

inline ModelConfig medium_config(BandSplitSpec bands) {
    ModelConfig c;
    c.blocks_cross = 4;
    c.blocks_tse = 2;
    c.embed_dim = 64;
    c.ffn_hidden_cross = 384;
    c.ffn_hidden_tse = 384;
    c.conv_kernel = 4;
    c.conv_stride = 1;
    c.num_heads = 4;
    c.norm_groups = 8;
    c.attn_head_dim_cross = 256;
    c.attn_head_dim_tse = 96;
    c.band_spec = std::move(bands);
    return c;
}

inline ModelConfig large_config(BandSplitSpec bands) {
    ModelConfig c;
    c.blocks_cross = 6;
    c.blocks_tse = 3;
    c.embed_dim = 128;
    c.ffn_hidden_cross = 384;
    c.ffn_hidden_tse = 256;
    c.conv_kernel = 4;
    c.conv_stride = 1;
    c.num_heads = 8;
    c.norm_groups = 8;
    c.attn_head_dim_cross = 256;
    c.attn_head_dim_tse = 192;
    c.band_spec = std::move(bands);
    return c;
}

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

template <typename T>
class ParamStore {
   public:
    int add(std::string name, TensorData<T> value) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        int id = static_cast<int>(entries_.size());
        index_.emplace(name, id);
        entries_.push_back({std::move(name), std::move(value)});
        return id;
    }
    int find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    int size() const { return static_cast<int>(entries_.size()); }
    const std::string& name(int i) const { return entries_[static_cast<std::size_t>(i)].name; }
    TensorData<T>& value(int i) { return entries_[static_cast<std::size_t>(i)].value; }
    const TensorData<T>& value(int i) const { return entries_[static_cast<std::size_t>(i)].value; }
    TensorData<T>& value(const std::string& name) { return value(find(name)); }
    const TensorData<T>& value(const std::string& name) const { return value(find(name)); }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

   private:
    struct Entry {
        std::string name;
        TensorData<T> value;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

enum class ModelKind { Prompted, FixedOutputs };

inline const char* model_kind_name(ModelKind k) {
    return k == ModelKind::Prompted ? "prompted" : "fixed-outputs";
}
inline ModelKind model_kind_from_name(const std::string& s) {
    if (s == "prompted") return ModelKind::Prompted;
    if (s == "fixed-outputs") return ModelKind::FixedOutputs;
    throw std::invalid_argument("unknown model kind: " + s);
}

/// A separation model: configuration, operating rate/analysis setup, and the
/// learnable parameters. Parameters are immutable during forward evaluation;
/// training owns the single writer.
template <typename T>
struct TussModel {
    ModelKind kind = ModelKind::Prompted;
    ModelConfig config;
    StftConfig stft_config;
    int sample_rate_hz = 48000;
    int fixed_outputs = 4;  // FixedOutputs variant only
    ParamStore<T> params;
};

template <typename T>
std::int64_t count_parameters(const TussModel<T>& model) {
    return model.params.total_scalars();
}

// ---------------------------------------------------------------------------
// parameter construction
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
TensorData<T> uniform_init(Rng& rng, std::vector<std::int64_t> shape, std::int64_t fan_in) {
    TensorData<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
void add_subblock_params(ParamStore<T>& ps, Rng& rng, const std::string& prefix, int D, int C,
                         int HE, int kernel) {
    auto add_ffn = [&](const std::string& ffn) {
        ps.add(prefix + ffn + ".norm.gamma", TensorData<T>::full({D}, T(1)));
        ps.add(prefix + ffn + ".win",
               uniform_init<T>(rng, {static_cast<std::int64_t>(kernel) * D, 2 * C}, kernel * D));
        ps.add(prefix + ffn + ".bin", TensorData<T>({2 * C}));
        ps.add(prefix + ffn + ".wout",
               uniform_init<T>(rng, {static_cast<std::int64_t>(kernel) * C, D}, kernel * C));
        ps.add(prefix + ffn + ".bout", TensorData<T>({D}));
    };
    add_ffn(".ffn1");
    ps.add(prefix + ".attn.norm.gamma", TensorData<T>::full({D}, T(1)));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv"})
        ps.add(prefix + w, uniform_init<T>(rng, {D, HE}, D));
    for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv"}) ps.add(prefix + b, TensorData<T>({HE}));
    ps.add(prefix + ".attn.wo", uniform_init<T>(rng, {HE, D}, HE));
    ps.add(prefix + ".attn.bo", TensorData<T>({D}));
    add_ffn(".ffn2");
}

template <typename T>
void add_block_params(ParamStore<T>& ps, Rng& rng, const std::string& prefix, int D, int C, int HE,
                      int freq_kernel, int time_kernel) {
    add_subblock_params(ps, rng, prefix + ".freq", D, C, HE, freq_kernel);
    add_subblock_params(ps, rng, prefix + ".time", D, C, HE, time_kernel);
}

template <typename T>
void add_encoder_params(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int D = cfg.embed_dim;
    for (int k = 0; k < cfg.band_spec.num_bands(); ++k) {
        const std::int64_t b2 = 2 * cfg.band_spec.band_widths[static_cast<std::size_t>(k)];
        const std::string prefix = "encoder.band" + std::to_string(k);
        ps.add(prefix + ".norm.gamma", TensorData<T>::full({b2}, T(1)));
        ps.add(prefix + ".w", uniform_init<T>(rng, {b2, D}, b2));
        ps.add(prefix + ".b", TensorData<T>({D}));
    }
}

template <typename T>
void add_decoder_params(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg,
                        const std::string& prefix) {
    const int D = cfg.embed_dim;
    const std::int64_t hidden = 4 * static_cast<std::int64_t>(D);
    for (int k = 0; k < cfg.band_spec.num_bands(); ++k) {
        const std::int64_t b2 = 2 * cfg.band_spec.band_widths[static_cast<std::size_t>(k)];
        const std::string bp = prefix + ".band" + std::to_string(k);
        ps.add(bp + ".norm.gamma", TensorData<T>::full({D}, T(1)));
        ps.add(bp + ".w1", uniform_init<T>(rng, {D, hidden}, D));
        ps.add(bp + ".b1", TensorData<T>({hidden}));
        ps.add(bp + ".w2v", uniform_init<T>(rng, {hidden, b2}, hidden));
        ps.add(bp + ".b2v", TensorData<T>({b2}));
        ps.add(bp + ".w2g", uniform_init<T>(rng, {hidden, b2}, hidden));
        ps.add(bp + ".b2g", TensorData<T>({b2}));
    }
}

}  // namespace detail

/// Builds a prompted model with randomly initialized parameters. Prompt
/// embeddings are N(0, 0.02); affine weights use the usual 1/sqrt(fan_in)
/// uniform init.
template <typename T>
TussModel<T> build_tuss_model(const ModelConfig& config, const StftConfig& stft_cfg,
                              int sample_rate_hz, std::uint64_t seed) {
    validate_model_config(config);
    validate_stft_config(stft_cfg);
    const std::int64_t F = stft_cfg.fft_length / 2 + 1;
    validate_band_spec(config.band_spec, F);

    TussModel<T> m;
    m.kind = ModelKind::Prompted;
    m.config = config;
    m.stft_config = stft_cfg;
    m.sample_rate_hz = sample_rate_hz;

    Rng rng(seed);
    const int D = config.embed_dim;
    TensorData<T> table({kNumCategories, D});
    for (auto& x : table.v) x = static_cast<T>(rng.normal(0.0, 0.02));
    m.params.add("prompts.table", std::move(table));

    detail::add_encoder_params(m.params, rng, config);
    for (int i = 0; i < config.blocks_cross; ++i)
        detail::add_block_params(m.params, rng, "cross.block" + std::to_string(i), D,
                                 config.ffn_hidden_cross, config.num_heads * config.attn_head_dim_cross,
                                 config.conv_kernel, /*time_kernel=*/1);
    for (int i = 0; i < config.blocks_tse; ++i)
        detail::add_block_params(m.params, rng, "tse.block" + std::to_string(i), D,
                                 config.ffn_hidden_tse, config.num_heads * config.attn_head_dim_tse,
                                 config.conv_kernel, config.conv_kernel);
    detail::add_decoder_params(m.params, rng, config, "decoder");
    return m;
}

/// Builds the prompt-free fixed-output variant: the same trunk depth
/// (cross + extraction block counts) followed by `outputs` parallel decoders.
template <typename T>
TussModel<T> build_baseline_model(const ModelConfig& config, const StftConfig& stft_cfg,
                                  int sample_rate_hz, std::uint64_t seed, int outputs = 4) {
    validate_model_config(config);
    validate_stft_config(stft_cfg);
    const std::int64_t F = stft_cfg.fft_length / 2 + 1;
    validate_band_spec(config.band_spec, F);
    if (outputs < 1) throw std::invalid_argument("baseline needs at least one output head");

    TussModel<T> m;
    m.kind = ModelKind::FixedOutputs;
    m.config = config;
    m.stft_config = stft_cfg;
    m.sample_rate_hz = sample_rate_hz;
    m.fixed_outputs = outputs;

    Rng rng(seed);
    const int D = config.embed_dim;
    detail::add_encoder_params(m.params, rng, config);
    const int total_blocks = config.blocks_cross + config.blocks_tse;
    for (int i = 0; i < total_blocks; ++i) {
        const bool cross_part = i < config.blocks_cross;
        detail::add_block_params(
            m.params, rng, "trunk.block" + std::to_string(i), D,
            cross_part ? config.ffn_hidden_cross : config.ffn_hidden_tse,
            config.num_heads * (cross_part ? config.attn_head_dim_cross : config.attn_head_dim_tse),
            config.conv_kernel, config.conv_kernel);
    }
    for (int h = 0; h < outputs; ++h)
        detail::add_decoder_params(m.params, rng, config, "decoder.head" + std::to_string(h));
    return m;
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

struct ForwardOptions {
    bool identity_mask = false;  // test mode: force every decoder mask to 1+0j
    bool check_finite = true;
};

/// Parameters imported onto a tape as leaf nodes, looked up by name.
template <typename T>
struct BoundParams {
    const ParamStore<T>* store = nullptr;
    std::vector<typename Tape<T>::Ref> refs;

    typename Tape<T>::Ref of(const std::string& name) const {
        return refs[static_cast<std::size_t>(store->find(name))];
    }
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, const ParamStore<T>& store) {
    BoundParams<T> bound;
    bound.store = &store;
    bound.refs.reserve(static_cast<std::size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) bound.refs.push_back(tape.leaf(store.value(i), true));
    return bound;
}

/// [T, 2F] layout used on tape: real plane columns then imaginary plane.
template <typename T>
TensorData<T> spectrogram_to_tensor(const Spectrogram& spec) {
    TensorData<T> t({spec.num_frames, 2 * spec.num_bins});
    const std::int64_t F = spec.num_bins;
    for (std::int64_t tt = 0; tt < spec.num_frames; ++tt)
        for (std::int64_t f = 0; f < F; ++f) {
            t.v[static_cast<std::size_t>(tt * 2 * F + f)] = static_cast<T>(spec.re_at(tt, f));
            t.v[static_cast<std::size_t>(tt * 2 * F + F + f)] = static_cast<T>(spec.im_at(tt, f));
        }
    return t;
}

template <typename T>
Spectrogram tensor_to_spectrogram(const TensorData<T>& t, const StftConfig& cfg) {
    const std::int64_t F = cfg.fft_length / 2 + 1;
    if (t.rank() != 2 || t.dim(1) != 2 * F)
        throw std::invalid_argument("tensor_to_spectrogram: shape mismatch");
    Spectrogram spec;
    spec.config = cfg;
    spec.num_frames = t.dim(0);
    spec.num_bins = F;
    spec.re.resize(static_cast<std::size_t>(t.dim(0) * F));
    spec.im.resize(static_cast<std::size_t>(t.dim(0) * F));
    for (std::int64_t tt = 0; tt < t.dim(0); ++tt)
        for (std::int64_t f = 0; f < F; ++f) {
            spec.re_at(tt, f) = static_cast<double>(t.v[static_cast<std::size_t>(tt * 2 * F + f)]);
            spec.im_at(tt, f) = static_cast<double>(t.v[static_cast<std::size_t>(tt * 2 * F + F + f)]);
        }
    return spec;
}

/// Per-band constant inputs [T, 2*b_k] (real columns then imaginary).
template <typename T>
std::vector<std::shared_ptr<const TensorData<T>>> band_tensors(const Spectrogram& spec,
                                                               const BandSplitSpec& bands) {
    validate_band_spec(bands, spec.num_bins);
    std::vector<std::shared_ptr<const TensorData<T>>> out;
    std::int64_t start = 0;
    for (int k = 0; k < bands.num_bands(); ++k) {
        const std::int64_t b = bands.band_widths[static_cast<std::size_t>(k)];
        auto t = std::make_shared<TensorData<T>>(TensorData<T>({spec.num_frames, 2 * b}));
        for (std::int64_t tt = 0; tt < spec.num_frames; ++tt)
            for (std::int64_t f = 0; f < b; ++f) {
                t->v[static_cast<std::size_t>(tt * 2 * b + f)] = static_cast<T>(spec.re_at(tt, start + f));
                t->v[static_cast<std::size_t>(tt * 2 * b + b + f)] = static_cast<T>(spec.im_at(tt, start + f));
            }
        out.push_back(std::move(t));
        start += b;
    }
    return out;
}

struct SubblockCfg {
    int kernel = 4;
    int heads = 4;
    int groups = 8;
    bool rope = false;
};

/// One modeling sub-block over the middle axis of [B, L, D]:
/// macaron [ffn, attention, ffn], each stage pre-normalized and residual.
template <typename T>
typename Tape<T>::Ref locoformer_subblock_tape(Tape<T>& tape, const BoundParams<T>& p,
                                               const std::string& prefix,
                                               typename Tape<T>::Ref x, const SubblockCfg& cfg,
                                               bool check_finite) {
    auto ffn = [&](typename Tape<T>::Ref in, const std::string& f) {
        auto n = nn::rms_group_norm(tape, in, p.of(prefix + f + ".norm.gamma"), cfg.groups);
        auto y = nn::gated_conv_ffn(tape, n, p.of(prefix + f + ".win"), p.of(prefix + f + ".bin"),
                                    p.of(prefix + f + ".wout"), p.of(prefix + f + ".bout"),
                                    cfg.kernel);
        return tape.add(in, y);
    };
    auto x1 = ffn(x, ".ffn1");
    auto n2 = nn::rms_group_norm(tape, x1, p.of(prefix + ".attn.norm.gamma"), cfg.groups);
    auto att = nn::mhsa(tape, n2, p.of(prefix + ".attn.wq"), p.of(prefix + ".attn.bq"),
                        p.of(prefix + ".attn.wk"), p.of(prefix + ".attn.bk"),
                        p.of(prefix + ".attn.wv"), p.of(prefix + ".attn.bv"),
                        p.of(prefix + ".attn.wo"), p.of(prefix + ".attn.bo"), cfg.heads, cfg.rope);
    auto x2 = tape.add(x1, att);
    auto x3 = ffn(x2, ".ffn2");
    if (check_finite) nn::check_finite(tape, x3, prefix);
    return x3;
}

/// Full block on a [S, K, D] grid: frequency modeling over the band axis
/// (independently per sequence position), then temporal modeling over the
/// sequence axis (independently per band).
template <typename T>
typename Tape<T>::Ref locoformer_block_tape(Tape<T>& tape, const BoundParams<T>& p,
                                            const std::string& prefix, typename Tape<T>::Ref grid,
                                            const SubblockCfg& freq_cfg, const SubblockCfg& time_cfg,
                                            bool check_finite) {
    auto f = locoformer_subblock_tape(tape, p, prefix + ".freq", grid, freq_cfg, check_finite);
    auto tr = tape.transpose01(f);  // [K, S, D]
    auto tm = locoformer_subblock_tape(tape, p, prefix + ".time", tr, time_cfg, check_finite);
    return tape.transpose01(tm);
}

/// Band-split encoding: per band, the real/imag-stacked frame slice is
/// normalized and mapped to D channels; bands stack into [T, K, D].
template <typename T>
typename Tape<T>::Ref encode_bands_tape(
    Tape<T>& tape, const BoundParams<T>& p,
    const std::vector<std::shared_ptr<const TensorData<T>>>& band_inputs) {
    std::vector<typename Tape<T>::Ref> features;
    features.reserve(band_inputs.size());
    for (std::size_t k = 0; k < band_inputs.size(); ++k) {
        const std::string prefix = "encoder.band" + std::to_string(k);
        auto x = tape.constant(*band_inputs[k]);
        auto n = nn::rms_group_norm(tape, x, p.of(prefix + ".norm.gamma"), 1);
        features.push_back(tape.linear(n, p.of(prefix + ".w"), p.of(prefix + ".b")));
    }
    return tape.stack_mid(features);
}

/// Prepends one broadcast prompt row per prompt to the mixture feature along
/// the sequence axis: [T,K,D] -> [(N+T),K,D].
template <typename T>
typename Tape<T>::Ref assemble_prompt_sequence_tape(Tape<T>& tape, const BoundParams<T>& p,
                                                    const PromptSet& prompts,
                                                    typename Tape<T>::Ref mixture_features) {
    validate_prompt_set(prompts);
    const std::int64_t K = tape.val(mixture_features).dim(1);
    auto table = p.of("prompts.table");
    std::vector<typename Tape<T>::Ref> parts;
    parts.reserve(prompts.entries.size() + 1);
    for (PromptCategory c : prompts.entries) {
        const auto idx = static_cast<std::int64_t>(static_cast<int>(c));
        parts.push_back(tape.tile_to_3d(tape.slice0(table, idx, idx + 1), K));
    }
    parts.push_back(mixture_features);
    return tape.concat0(parts);
}

template <typename T>
typename Tape<T>::Ref cross_prompt_forward_tape(Tape<T>& tape, const BoundParams<T>& p,
                                                const ModelConfig& cfg,
                                                typename Tape<T>::Ref assembled,
                                                const ForwardOptions& opt) {
    SubblockCfg freq{cfg.conv_kernel, cfg.num_heads, cfg.norm_groups, false};
    // temporal feed-forward in the cross-prompt module is position-wise
    SubblockCfg time{1, cfg.num_heads, cfg.norm_groups, cfg.positional_encoding_enabled};
    auto grid = assembled;
    for (int i = 0; i < cfg.blocks_cross; ++i) {
        std::int32_t lo = tape.mark();
        grid = locoformer_block_tape(tape, p, "cross.block" + std::to_string(i), grid, freq, time,
                                     opt.check_finite);
        tape.free_values_below(lo, tape.mark(), {grid});
    }
    return grid;
}

/// Splits the processed sequence into prompt features and the mixture
/// feature, conditions the mixture on each prompt by broadcast multiply, and
/// runs the shared extraction blocks per prompt.
template <typename T>
std::vector<typename Tape<T>::Ref> condition_and_extract_tape(Tape<T>& tape,
                                                              const BoundParams<T>& p,
                                                              const ModelConfig& cfg,
                                                              typename Tape<T>::Ref processed,
                                                              int num_prompts,
                                                              const ForwardOptions& opt) {
    const std::int64_t S = tape.val(processed).dim(0);
    if (num_prompts < 1 || num_prompts >= S)
        throw std::invalid_argument("condition_and_extract: prompt count exceeds sequence length");
    SubblockCfg freq{cfg.conv_kernel, cfg.num_heads, cfg.norm_groups, false};
    SubblockCfg time{cfg.conv_kernel, cfg.num_heads, cfg.norm_groups,
                     cfg.positional_encoding_enabled};
    auto mixture_rows = tape.slice0(processed, num_prompts, S);
    std::vector<typename Tape<T>::Ref> out;
    out.reserve(static_cast<std::size_t>(num_prompts));
    for (int n = 0; n < num_prompts; ++n) {
        auto prompt_row = tape.slice0(processed, n, n + 1);
        auto grid = tape.mul_bcast0(mixture_rows, prompt_row);
        for (int i = 0; i < cfg.blocks_tse; ++i) {
            std::int32_t lo = tape.mark();
            grid = locoformer_block_tape(tape, p, "tse.block" + std::to_string(i), grid, freq, time,
                                         opt.check_finite);
            tape.free_values_below(lo, tape.mark(), {grid});
        }
        out.push_back(grid);
    }
    return out;
}

/// Per-band mask decoding: a gated two-layer MLP (hidden 4D, tanh gate) maps
/// D channels to a complex mask which multiplies the mixture band; the bands
/// concatenate back into a full [T, 2F] estimate.
template <typename T>
typename Tape<T>::Ref decode_bands_tape(
    Tape<T>& tape, const BoundParams<T>& p, const BandSplitSpec& bands,
    typename Tape<T>::Ref extracted,
    const std::vector<std::shared_ptr<const TensorData<T>>>& band_inputs,
    const std::string& prefix, const ForwardOptions& opt) {
    const std::int64_t Tn = tape.val(extracted).dim(0);
    if (tape.val(extracted).dim(1) != bands.num_bands())
        throw std::invalid_argument("decode_bands: band count mismatch");
    std::vector<typename Tape<T>::Ref> re_parts, im_parts;
    for (int k = 0; k < bands.num_bands(); ++k) {
        const std::int64_t b = bands.band_widths[static_cast<std::size_t>(k)];
        const std::string bp = prefix + ".band" + std::to_string(k);
        typename Tape<T>::Ref mask;
        if (opt.identity_mask) {
            TensorData<T> ident({Tn, 2 * b});
            for (std::int64_t tt = 0; tt < Tn; ++tt)
                for (std::int64_t j = 0; j < b; ++j)
                    ident.v[static_cast<std::size_t>(tt * 2 * b + j)] = T(1);
            mask = tape.constant(std::move(ident));
        } else {
            auto x = tape.slice_mid(extracted, k);
            auto n = nn::rms_group_norm(tape, x, p.of(bp + ".norm.gamma"), 1);
            auto h = tape.silu(tape.linear(n, p.of(bp + ".w1"), p.of(bp + ".b1")));
            auto v = tape.linear(h, p.of(bp + ".w2v"), p.of(bp + ".b2v"));
            auto g = tape.tanh_op(tape.linear(h, p.of(bp + ".w2g"), p.of(bp + ".b2g")));
            mask = tape.mul(v, g);
        }
        auto est = nn::cmul_const(tape, mask, band_inputs[static_cast<std::size_t>(k)]);
        re_parts.push_back(tape.slice_cols(est, 0, b));
        im_parts.push_back(tape.slice_cols(est, b, 2 * b));
    }
    auto re = tape.concat_cols(re_parts);
    auto im = tape.concat_cols(im_parts);
    auto full = tape.concat_cols({re, im});
    if (opt.check_finite) nn::check_finite(tape, full, prefix);
    return full;
}

/// Full prompted forward on an existing tape; returns one waveform node per
/// prompt (input-length, prompt order preserved).
template <typename T>
std::vector<typename Tape<T>::Ref> tuss_forward_tape(Tape<T>& tape, const BoundParams<T>& p,
                                                     const TussModel<T>& model,
                                                     const Spectrogram& spec,
                                                     const PromptSet& prompts,
                                                     std::int64_t target_length,
                                                     const ForwardOptions& opt) {
    if (model.kind != ModelKind::Prompted)
        throw std::logic_error("tuss_forward_tape: model is not the prompted variant");
    validate_prompt_set(prompts);
    const auto band_inputs = band_tensors<T>(spec, model.config.band_spec);

    auto encoded = encode_bands_tape(tape, p, band_inputs);
    if (opt.check_finite) nn::check_finite(tape, encoded, "encoder");
    auto assembled = assemble_prompt_sequence_tape(tape, p, prompts, encoded);
    auto processed = cross_prompt_forward_tape(tape, p, model.config, assembled, opt);
    auto branches = condition_and_extract_tape(tape, p, model.config, processed, prompts.size(), opt);

    std::vector<typename Tape<T>::Ref> waves;
    waves.reserve(branches.size());
    for (auto& branch : branches) {
        std::int32_t lo = tape.mark();
        auto est = decode_bands_tape(tape, p, model.config.band_spec, branch, band_inputs,
                                     "decoder", opt);
        auto wave = nn::istft_tape(tape, est, model.stft_config, target_length, model.sample_rate_hz);
        tape.free_values_below(lo, tape.mark(), {wave});
        waves.push_back(wave);
    }
    return waves;
}

/// Fixed-output forward: encoder, trunk blocks, then all decoder heads.
template <typename T>
std::vector<typename Tape<T>::Ref> baseline_forward_tape(Tape<T>& tape, const BoundParams<T>& p,
                                                         const TussModel<T>& model,
                                                         const Spectrogram& spec,
                                                         std::int64_t target_length,
                                                         const ForwardOptions& opt) {
    if (model.kind != ModelKind::FixedOutputs)
        throw std::logic_error("baseline_forward_tape: model is not the fixed-output variant");
    const ModelConfig& cfg = model.config;
    const auto band_inputs = band_tensors<T>(spec, cfg.band_spec);

    auto grid = encode_bands_tape(tape, p, band_inputs);
    if (opt.check_finite) nn::check_finite(tape, grid, "encoder");
    const int total_blocks = cfg.blocks_cross + cfg.blocks_tse;
    SubblockCfg sub{cfg.conv_kernel, cfg.num_heads, cfg.norm_groups, false};
    SubblockCfg sub_time{cfg.conv_kernel, cfg.num_heads, cfg.norm_groups,
                         cfg.positional_encoding_enabled};
    for (int i = 0; i < total_blocks; ++i) {
        std::int32_t lo = tape.mark();
        grid = locoformer_block_tape(tape, p, "trunk.block" + std::to_string(i), grid, sub, sub_time,
                                     opt.check_finite);
        tape.free_values_below(lo, tape.mark(), {grid});
    }
    std::vector<typename Tape<T>::Ref> waves;
    for (int h = 0; h < model.fixed_outputs; ++h) {
        std::int32_t lo = tape.mark();
        auto est = decode_bands_tape(tape, p, cfg.band_spec, grid, band_inputs,
                                     "decoder.head" + std::to_string(h), opt);
        auto wave = nn::istft_tape(tape, est, model.stft_config, target_length, model.sample_rate_hz);
        tape.free_values_below(lo, tape.mark(), {wave});
        waves.push_back(wave);
    }
    return waves;
}

namespace detail {

template <typename T>
std::vector<AudioBuffer> refs_to_buffers(const Tape<T>& tape,
                                         const std::vector<typename Tape<T>::Ref>& refs,
                                         int sample_rate_hz) {
    std::vector<AudioBuffer> out;
    out.reserve(refs.size());
    for (const auto& r : refs) {
        const auto& v = tape.val(r);
        AudioBuffer b;
        b.sample_rate_hz = sample_rate_hz;
        b.samples.resize(v.v.size());
        for (std::size_t i = 0; i < v.v.size(); ++i) b.samples[i] = static_cast<double>(v.v[i]);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace detail

/// Separates `mixture` into one waveform per prompt. Outputs match the
/// input's length and sample rate, in prompt order.
template <typename T>
std::vector<AudioBuffer> model_forward(const TussModel<T>& model, const AudioBuffer& mixture,
                                       const PromptSet& prompts, ForwardOptions opt = {}) {
    validate_prompt_set(prompts);
    validate_audio(mixture, /*allow_empty=*/false);
    Spectrogram spec = stft(mixture, model.stft_config);
    Tape<T> tape(/*grad_enabled=*/false);
    auto bound = bind_params(tape, model.params);
    auto waves = tuss_forward_tape(tape, bound, model, spec, prompts, mixture.size(), opt);
    return detail::refs_to_buffers(tape, waves, mixture.sample_rate_hz);
}

/// Fixed-output separation: always `model.fixed_outputs` waveforms.
template <typename T>
std::vector<AudioBuffer> baseline_forward(const TussModel<T>& model, const AudioBuffer& mixture,
                                          ForwardOptions opt = {}) {
    validate_audio(mixture, /*allow_empty=*/false);
    Spectrogram spec = stft(mixture, model.stft_config);
    Tape<T> tape(/*grad_enabled=*/false);
    auto bound = bind_params(tape, model.params);
    auto waves = baseline_forward_tape(tape, bound, model, spec, mixture.size(), opt);
    return detail::refs_to_buffers(tape, waves, mixture.sample_rate_hz);
}

// ---------------------------------------------------------------------------
// value-level wrappers used by tests and tools
// ---------------------------------------------------------------------------

template <typename T>
TensorData<T> encode_bands(const TussModel<T>& model, const Spectrogram& spec) {
    Tape<T> tape(false);
    auto bound = bind_params(tape, model.params);
    const auto band_inputs = band_tensors<T>(spec, model.config.band_spec);
    return tape.val(encode_bands_tape(tape, bound, band_inputs));
}

template <typename T>
TensorData<T> assemble_prompt_sequence(const TussModel<T>& model, const PromptSet& prompts,
                                       const TensorData<T>& mixture_features) {
    Tape<T> tape(false);
    auto bound = bind_params(tape, model.params);
    auto mf = tape.constant(mixture_features);
    return tape.val(assemble_prompt_sequence_tape(tape, bound, prompts, mf));
}

template <typename T>
TensorData<T> cross_prompt_forward(const TussModel<T>& model, const TensorData<T>& assembled,
                                   ForwardOptions opt = {}) {
    Tape<T> tape(false);
    auto bound = bind_params(tape, model.params);
    auto grid = tape.constant(assembled);
    return tape.val(cross_prompt_forward_tape(tape, bound, model.config, grid, opt));
}

template <typename T>
std::vector<TensorData<T>> condition_and_extract(const TussModel<T>& model,
                                                 const TensorData<T>& processed, int num_prompts,
                                                 ForwardOptions opt = {}) {
    Tape<T> tape(false);
    auto bound = bind_params(tape, model.params);
    auto grid = tape.constant(processed);
    auto refs = condition_and_extract_tape(tape, bound, model.config, grid, num_prompts, opt);
    std::vector<TensorData<T>> out;
    for (auto& r : refs) out.push_back(tape.val(r));
    return out;
}

template <typename T>
Spectrogram decode_bands(const TussModel<T>& model, const TensorData<T>& extracted,
                         const Spectrogram& mixture_spec, ForwardOptions opt = {}) {
    if (extracted.dim(0) != mixture_spec.num_frames)
        throw std::invalid_argument("decode_bands: frame count mismatch");
    Tape<T> tape(false);
    auto bound = bind_params(tape, model.params);
    const auto band_inputs = band_tensors<T>(mixture_spec, model.config.band_spec);
    auto grid = tape.constant(extracted);
    auto est = decode_bands_tape(tape, bound, model.config.band_spec, grid, band_inputs,
                                 model.kind == ModelKind::Prompted ? "decoder" : "decoder.head0",
                                 opt);
    return tensor_to_spectrogram(tape.val(est), model.stft_config);
}

}  // namespace promptsep
