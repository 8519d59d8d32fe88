// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/audio.hpp"
#include "promptsep/prompts.hpp"
#include "promptsep/resample.hpp"
#include "promptsep/rng.hpp"
#include "promptsep/wav.hpp"

namespace promptsep {

struct SourceRecord {
    std::string path;
    PromptCategory category = PromptCategory::Speech;
    int sample_rate_hz = 0;
    std::int64_t num_samples = 0;
    std::string split = "train";
};

struct CorpusManifest {
    std::vector<SourceRecord> records;
    // category -> record indices, per split
    std::map<std::pair<int, std::string>, std::vector<int>> index;
    std::vector<std::string> warnings;

    const std::vector<int>* bucket(PromptCategory c, const std::string& split) const {
        auto it = index.find({static_cast<int>(c), split});
        return it == index.end() ? nullptr : &it->second;
    }
};

namespace detail {

inline std::vector<std::string> split_tsv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

/// Loads a tab-separated manifest with columns
/// path, category, sample_rate_hz, num_samples, split (one record per line,
/// lines starting with '#' ignored). Duplicate paths are accepted with a
/// warning since re-use across categories is allowed.
inline CorpusManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    CorpusManifest m;
    std::map<std::string, int> seen_paths;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_tsv(line);
        if (fields.size() != 5)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 5 tab-separated fields, got " +
                                     std::to_string(fields.size()));
        SourceRecord r;
        r.path = fields[0];
        auto cat = try_category_from_name(fields[1]);
        if (!cat)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown category '" + fields[1] + "'");
        r.category = *cat;
        try {
            r.sample_rate_hz = std::stoi(fields[2]);
            r.num_samples = std::stoll(fields[3]);
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": malformed numeric field");
        }
        r.split = fields[4];
        if (r.sample_rate_hz <= 0 || r.num_samples <= 0)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": rate and sample count must be positive");
        if (seen_paths.count(r.path)) {
            m.warnings.push_back("duplicate path (also line " +
                                 std::to_string(seen_paths[r.path]) + "): " + r.path);
        } else {
            seen_paths[r.path] = line_no;
        }
        const int idx = static_cast<int>(m.records.size());
        m.records.push_back(r);
        m.index[{static_cast<int>(r.category), r.split}].push_back(idx);
    }
    for (const auto& w : m.warnings) std::cerr << "manifest warning: " << w << "\n";
    return m;
}

// ---------------------------------------------------------------------------
// sampler configuration
// ---------------------------------------------------------------------------

struct PromptSamplerConfig {
    int n_min = 2;
    int n_max = 4;
    // symmetric pairwise weights steering which categories co-occur; the
    // default boosts instrument/instrument and speech/sfx-mix pairs
    std::array<std::array<double, kNumCategories>, kNumCategories> cooccurrence_weights{};
    std::map<PromptCategory, std::pair<double, double>> gain_ranges_db;
    double submix_probability = 0.5;
    std::vector<PromptCategory> categories;  // categories the sampler may draw
    std::string split = "train";
    int target_rate_hz = 48000;
    double silence_rms = 1e-6;
    int max_redraws = 10;

    PromptSamplerConfig() {
        for (auto& row : cooccurrence_weights) row.fill(1.0);
        auto boost = [&](PromptCategory a, PromptCategory b, double w) {
            cooccurrence_weights[static_cast<std::size_t>(static_cast<int>(a))]
                                [static_cast<std::size_t>(static_cast<int>(b))] = w;
            cooccurrence_weights[static_cast<std::size_t>(static_cast<int>(b))]
                                [static_cast<std::size_t>(static_cast<int>(a))] = w;
        };
        for (PromptCategory a : kAllCategories)
            for (PromptCategory b : kAllCategories)
                if (is_instrument(a) && is_instrument(b) && a != b) boost(a, b, 4.0);
        boost(PromptCategory::Speech, PromptCategory::SfxMix, 4.0);

        for (PromptCategory c : kAllCategories)
            gain_ranges_db[c] = (c == PromptCategory::SfxMix || c == PromptCategory::MusicMix)
                                    ? std::make_pair(-20.0, 0.0)
                                    : std::make_pair(-10.0, 0.0);
        categories.assign(kAllCategories.begin(), kAllCategories.end());
    }
};

inline void validate_sampler_config(const PromptSamplerConfig& cfg) {
    if (cfg.n_min < 1 || cfg.n_max < cfg.n_min)
        throw std::invalid_argument("sampler config: bad prompt-count range");
    for (const auto& row : cfg.cooccurrence_weights)
        for (double w : row)
            if (w <= 0.0) throw std::invalid_argument("sampler config: co-occurrence weights must be positive");
    for (const auto& [cat, range] : cfg.gain_ranges_db) {
        (void)cat;
        if (range.second < range.first) throw std::invalid_argument("sampler config: bad gain range");
    }
    if (cfg.categories.empty()) throw std::invalid_argument("sampler config: no categories enabled");
    if (cfg.target_rate_hz <= 0) throw std::invalid_argument("sampler config: bad target rate");
    if (cfg.submix_probability < 0.0 || cfg.submix_probability > 1.0)
        throw std::invalid_argument("sampler config: submix probability outside [0,1]");
}

/// Checks that every category the sampler may draw has at least one record
/// in the configured split.
inline void validate_manifest_for_sampling(const CorpusManifest& manifest,
                                           const PromptSamplerConfig& cfg) {
    for (PromptCategory c : cfg.categories) {
        const auto* bucket = manifest.bucket(c, cfg.split);
        if (!bucket || bucket->empty())
            throw std::runtime_error(std::string("empty ") + cfg.split + " split for category " +
                                     category_name(c));
    }
}

/// Draws a prompt combination: N uniform in [n_min, n_max], then categories
/// sequentially with probability proportional to their mean co-occurrence
/// weight against the already-chosen ones. Exclusion rules and the once-only
/// rule are enforced by masking; Speech and SFX remain drawable, so the draw
/// always completes.
inline PromptSet sample_prompt_set(const PromptSamplerConfig& cfg, Rng& rng) {
    validate_sampler_config(cfg);
    const int n = static_cast<int>(rng.uniform_int(cfg.n_min, cfg.n_max));
    PromptSet ps;
    std::array<int, kNumCategories> counts{};
    for (int i = 0; i < n; ++i) {
        std::vector<PromptCategory> candidates;
        std::vector<double> weights;
        for (PromptCategory c : cfg.categories) {
            const auto ci = static_cast<std::size_t>(static_cast<int>(c));
            if (!is_repeatable(c) && counts[ci] > 0) continue;
            if (c == PromptCategory::Sfx && counts[static_cast<std::size_t>(static_cast<int>(PromptCategory::SfxMix))] > 0) continue;
            if (c == PromptCategory::SfxMix && counts[static_cast<std::size_t>(static_cast<int>(PromptCategory::Sfx))] > 0) continue;
            if (c == PromptCategory::MusicMix) {
                bool has_inst = false;
                for (PromptCategory inst : kAllCategories)
                    if (is_instrument(inst) && counts[static_cast<std::size_t>(static_cast<int>(inst))] > 0) has_inst = true;
                if (has_inst) continue;
            }
            if (is_instrument(c) && counts[static_cast<std::size_t>(static_cast<int>(PromptCategory::MusicMix))] > 0) continue;
            double w = 1.0;
            if (!ps.entries.empty()) {
                w = 0.0;
                for (PromptCategory chosen : ps.entries)
                    w += cfg.cooccurrence_weights[ci][static_cast<std::size_t>(static_cast<int>(chosen))];
                w /= static_cast<double>(ps.entries.size());
            }
            candidates.push_back(c);
            weights.push_back(w);
        }
        if (candidates.empty())
            throw std::logic_error("prompt sampling ran out of candidates");  // unreachable
        PromptCategory picked = candidates[rng.weighted_index(weights)];
        ps.entries.push_back(picked);
        counts[static_cast<std::size_t>(static_cast<int>(picked))]++;
    }
    validate_prompt_set(ps);
    return ps;
}

// ---------------------------------------------------------------------------
// source drawing and mixture synthesis
// ---------------------------------------------------------------------------

struct Provenance {
    SourceRecord record;
    std::int64_t offset_samples = 0;
};

struct DrawnSource {
    AudioBuffer audio;  // at its native rate
    std::vector<Provenance> provenance;
};

/// One training example: the mixture is the sample-exact sum of the source
/// list, which is aligned with the prompt list.
struct MixtureExample {
    AudioBuffer mixture;
    std::vector<AudioBuffer> sources;
    PromptSet prompts;
    std::vector<double> gains_db;
    std::vector<std::vector<Provenance>> provenance;
};

namespace detail {

/// Crops `duration_s` at the file's native rate; short files are zero-padded
/// at a random placement offset rather than looped.
inline std::pair<AudioBuffer, std::int64_t> crop_or_pad(const AudioBuffer& file, double duration_s,
                                                        Rng& rng) {
    const auto need = static_cast<std::int64_t>(std::llround(duration_s * file.sample_rate_hz));
    AudioBuffer out;
    out.sample_rate_hz = file.sample_rate_hz;
    out.samples.assign(static_cast<std::size_t>(need), 0.0);
    std::int64_t offset = 0;
    if (file.size() >= need) {
        offset = file.size() == need ? 0 : rng.uniform_int(0, file.size() - need);
        std::copy(file.samples.begin() + offset, file.samples.begin() + offset + need,
                  out.samples.begin());
    } else {
        offset = file.size() == 0 ? 0 : rng.uniform_int(0, need - file.size());
        std::copy(file.samples.begin(), file.samples.end(), out.samples.begin() + offset);
    }
    return {std::move(out), offset};
}

inline DrawnSource draw_single(PromptCategory category, const CorpusManifest& manifest,
                               const PromptSamplerConfig& cfg, Rng& rng, double duration_s) {
    const auto* bucket = manifest.bucket(category, cfg.split);
    if (!bucket || bucket->empty())
        throw std::runtime_error(std::string("no records for category ") + category_name(category));
    for (int record_try = 0; record_try < cfg.max_redraws; ++record_try) {
        const int rec_idx = (*bucket)[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(bucket->size()) - 1))];
        const SourceRecord& rec = manifest.records[static_cast<std::size_t>(rec_idx)];
        AudioBuffer file = read_wav(rec.path);
        for (int crop_try = 0; crop_try < cfg.max_redraws; ++crop_try) {
            auto [crop, offset] = crop_or_pad(file, duration_s, rng);
            if (rms(crop) >= cfg.silence_rms) {
                DrawnSource d;
                d.audio = std::move(crop);
                d.provenance.push_back({rec, offset});
                return d;
            }
        }
        // this record keeps coming up silent; try another one
    }
    throw std::runtime_error(std::string("category ") + category_name(category) +
                             ": drew only silent audio");
}

inline const std::vector<PromptCategory>& submix_constituents(PromptCategory category) {
    static const std::vector<PromptCategory> sfx = {PromptCategory::Sfx};
    static const std::vector<PromptCategory> inst = {PromptCategory::Drums, PromptCategory::Bass,
                                                     PromptCategory::Vocals,
                                                     PromptCategory::OtherInst};
    static const std::vector<PromptCategory> none;
    if (category == PromptCategory::SfxMix) return sfx;
    if (category == PromptCategory::MusicMix) return inst;
    return none;
}

}  // namespace detail

/// Draws the audio for one prompt. For the *-mix categories, with the
/// configured probability the draw instead sums 2-3 individual sources of
/// the constituent categories (when such records exist), mirroring on-the-fly
/// mix creation; provenance then lists every constituent.
inline DrawnSource draw_source(PromptCategory category, const CorpusManifest& manifest,
                               const PromptSamplerConfig& cfg, Rng& rng, double duration_s) {
    const auto& constituents = detail::submix_constituents(category);
    bool want_submix = false;
    if (!constituents.empty()) {
        want_submix = rng.uniform() < cfg.submix_probability;
        if (want_submix) {
            bool any = false;
            for (PromptCategory c : constituents) {
                const auto* b = manifest.bucket(c, cfg.split);
                any = any || (b && !b->empty());
            }
            want_submix = any;  // fall back to direct records otherwise
        }
    }
    if (!want_submix) return detail::draw_single(category, manifest, cfg, rng, duration_s);

    const int count = static_cast<int>(rng.uniform_int(2, 3));
    std::vector<DrawnSource> parts;
    std::vector<PromptCategory> available;
    for (PromptCategory c : constituents) {
        const auto* b = manifest.bucket(c, cfg.split);
        if (b && !b->empty()) available.push_back(c);
    }
    for (int i = 0; i < count; ++i) {
        PromptCategory pick = available[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(available.size()) - 1))];
        parts.push_back(detail::draw_single(pick, manifest, cfg, rng, duration_s));
    }
    // assemble at the lowest constituent rate, mirroring the global
    // rate-harmonization rule
    int min_rate = parts[0].audio.sample_rate_hz;
    for (const auto& p : parts) min_rate = std::min(min_rate, p.audio.sample_rate_hz);
    DrawnSource out;
    out.audio.sample_rate_hz = min_rate;
    out.audio.samples.assign(static_cast<std::size_t>(std::llround(duration_s * min_rate)), 0.0);
    for (auto& p : parts) {
        AudioBuffer at_rate = resample(p.audio, min_rate);
        for (std::size_t i = 0; i < out.audio.samples.size() && i < at_rate.samples.size(); ++i)
            out.audio.samples[i] += at_rate.samples[i];
        out.provenance.push_back(p.provenance[0]);
    }
    return out;
}

/// Synthesizes one example: draw a source per prompt, resample everything
/// down to the lowest native rate among the draws and back up to the target
/// rate, RMS-normalize, apply per-category uniform gains, and sum.
inline MixtureExample synthesize_mixture(const PromptSet& prompts, const CorpusManifest& manifest,
                                         const PromptSamplerConfig& cfg, Rng& rng,
                                         double duration_s) {
    validate_prompt_set(prompts);
    const auto out_len = static_cast<std::int64_t>(std::llround(duration_s * cfg.target_rate_hz));

    MixtureExample ex;
    ex.prompts = prompts;

    std::vector<DrawnSource> draws;
    draws.reserve(prompts.entries.size());
    for (PromptCategory c : prompts.entries) draws.push_back(draw_source(c, manifest, cfg, rng, duration_s));

    // a redraw changes the set of native rates, so the harmonization chain
    // restarts whenever one happens
    std::vector<AudioBuffer> harmonized;
    for (int attempt = 0;; ++attempt) {
        if (attempt > cfg.max_redraws)
            throw std::runtime_error("mixture synthesis: sources stay silent after rate harmonization");
        int min_rate = draws[0].audio.sample_rate_hz;
        for (const auto& d : draws) min_rate = std::min(min_rate, d.audio.sample_rate_hz);
        harmonized.clear();
        bool redrew = false;
        for (std::size_t i = 0; i < draws.size(); ++i) {
            AudioBuffer chain = resample(resample(draws[i].audio, min_rate), cfg.target_rate_hz);
            chain.samples.resize(static_cast<std::size_t>(out_len), 0.0);
            if (rms(chain) < cfg.silence_rms) {
                // content vanished in the band-limiting chain
                draws[i] = draw_source(prompts.entries[i], manifest, cfg, rng, duration_s);
                redrew = true;
                break;
            }
            harmonized.push_back(std::move(chain));
        }
        if (!redrew) break;
    }

    for (std::size_t i = 0; i < harmonized.size(); ++i) {
        const PromptCategory cat = prompts.entries[i];
        AudioBuffer s = std::move(harmonized[i]);
        normalize_rms(s, cfg.silence_rms);
        const auto range = cfg.gain_ranges_db.at(cat);
        const double gain_db = rng.uniform(range.first, range.second);
        const double gain = db_to_gain(gain_db);
        for (double& x : s.samples) x *= gain;
        ex.sources.push_back(std::move(s));
        ex.gains_db.push_back(gain_db);
        ex.provenance.push_back(draws[i].provenance);
    }

    ex.mixture.sample_rate_hz = cfg.target_rate_hz;
    ex.mixture.samples.assign(static_cast<std::size_t>(out_len), 0.0);
    for (const auto& s : ex.sources)
        for (std::size_t i = 0; i < ex.mixture.samples.size(); ++i)
            ex.mixture.samples[i] += s.samples[i];
    return ex;
}

/// Deterministic example stream: one engine per data worker, seeded as
/// base seed + worker id.
class MixtureEngine {
   public:
    MixtureEngine(const CorpusManifest* manifest, PromptSamplerConfig config, std::uint64_t seed)
        : manifest_(manifest), config_(std::move(config)), rng_(seed) {
        validate_sampler_config(config_);
        validate_manifest_for_sampling(*manifest_, config_);
    }

    MixtureExample next(double duration_s) {
        PromptSet ps = sample_prompt_set(config_, rng_);
        return synthesize_mixture(ps, *manifest_, config_, rng_, duration_s);
    }

    const PromptSamplerConfig& config() const { return config_; }
    Rng& rng() { return rng_; }

   private:
    const CorpusManifest* manifest_;
    PromptSamplerConfig config_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// fixed-recipe serialization (reproducible validation/evaluation sets)
// ---------------------------------------------------------------------------

/// Writes a replayable mixing plan: one line per constituent with columns
/// example_id, prompt_index, prompt_category, path, sample_rate_hz,
/// num_samples, split, gain_db, offset_samples.
inline void write_recipe(const std::string& path, const std::vector<MixtureExample>& examples) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open recipe file for writing: " + path);
    f << "#example_id\tprompt_index\tprompt_category\tpath\tsample_rate_hz\tnum_samples\tsplit\tgain_db\toffset_samples\n";
    f.precision(17);
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const MixtureExample& ex = examples[e];
        for (std::size_t s = 0; s < ex.sources.size(); ++s) {
            for (const Provenance& pv : ex.provenance[s]) {
                f << e << '\t' << s << '\t' << category_name(ex.prompts.entries[s]) << '\t'
                  << pv.record.path << '\t' << pv.record.sample_rate_hz << '\t'
                  << pv.record.num_samples << '\t' << pv.record.split << '\t' << ex.gains_db[s]
                  << '\t' << pv.offset_samples << '\n';
            }
        }
    }
}

struct RecipeEntry {
    std::int64_t example_id = 0;
    int prompt_index = 0;
    PromptCategory prompt_category = PromptCategory::Speech;
    SourceRecord record;
    double gain_db = 0.0;
    std::int64_t offset_samples = 0;
};

inline std::vector<RecipeEntry> read_recipe(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open recipe file: " + path);
    std::vector<RecipeEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_tsv(line);
        if (fields.size() != 9)
            throw std::runtime_error("recipe line " + std::to_string(line_no) +
                                     ": expected 9 fields, got " + std::to_string(fields.size()));
        RecipeEntry e;
        try {
            e.example_id = std::stoll(fields[0]);
            e.prompt_index = std::stoi(fields[1]);
            e.prompt_category = category_from_name(fields[2]);
            e.record.path = fields[3];
            e.record.sample_rate_hz = std::stoi(fields[4]);
            e.record.num_samples = std::stoll(fields[5]);
            e.record.split = fields[6];
            e.record.category = e.prompt_category;
            e.gain_db = std::stod(fields[7]);
            e.offset_samples = std::stoll(fields[8]);
        } catch (const std::exception& ex) {
            throw std::runtime_error("recipe line " + std::to_string(line_no) + ": " + ex.what());
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Replays a serialized mixing plan deterministically (no randomness left:
/// crops, constituents, and gains all come from the file).
inline std::vector<MixtureExample> replay_recipe(const std::vector<RecipeEntry>& entries,
                                                 int target_rate_hz, double duration_s) {
    std::map<std::int64_t, std::map<int, std::vector<const RecipeEntry*>>> grouped;
    for (const RecipeEntry& e : entries) grouped[e.example_id][e.prompt_index].push_back(&e);

    const auto out_len = static_cast<std::int64_t>(std::llround(duration_s * target_rate_hz));
    std::vector<MixtureExample> out;
    for (const auto& [eid, prompt_map] : grouped) {
        (void)eid;
        MixtureExample ex;
        std::vector<AudioBuffer> natives;
        for (const auto& [pidx, parts] : prompt_map) {
            (void)pidx;
            ex.prompts.entries.push_back(parts[0]->prompt_category);
            ex.gains_db.push_back(parts[0]->gain_db);
            std::vector<Provenance> prov;
            // reproduce the crop/pad placement for each constituent
            std::vector<AudioBuffer> crops;
            int min_rate = 0;
            for (const RecipeEntry* p : parts) {
                AudioBuffer file = read_wav(p->record.path);
                const auto need = static_cast<std::int64_t>(std::llround(duration_s * file.sample_rate_hz));
                AudioBuffer crop;
                crop.sample_rate_hz = file.sample_rate_hz;
                crop.samples.assign(static_cast<std::size_t>(need), 0.0);
                if (file.size() >= need) {
                    std::copy(file.samples.begin() + p->offset_samples,
                              file.samples.begin() + p->offset_samples + need, crop.samples.begin());
                } else {
                    std::copy(file.samples.begin(), file.samples.end(),
                              crop.samples.begin() + p->offset_samples);
                }
                min_rate = min_rate == 0 ? crop.sample_rate_hz : std::min(min_rate, crop.sample_rate_hz);
                crops.push_back(std::move(crop));
                prov.push_back({p->record, p->offset_samples});
            }
            AudioBuffer native;
            native.sample_rate_hz = min_rate;
            native.samples.assign(static_cast<std::size_t>(std::llround(duration_s * min_rate)), 0.0);
            for (const AudioBuffer& c : crops) {
                AudioBuffer at_rate = resample(c, min_rate);
                for (std::size_t i = 0; i < native.samples.size() && i < at_rate.samples.size(); ++i)
                    native.samples[i] += at_rate.samples[i];
            }
            natives.push_back(std::move(native));
            ex.provenance.push_back(std::move(prov));
        }
        int global_min = natives.empty() ? target_rate_hz : natives[0].sample_rate_hz;
        for (const auto& n : natives) global_min = std::min(global_min, n.sample_rate_hz);
        for (std::size_t s = 0; s < natives.size(); ++s) {
            AudioBuffer chain = resample(resample(natives[s], global_min), target_rate_hz);
            chain.samples.resize(static_cast<std::size_t>(out_len), 0.0);
            normalize_rms(chain);
            const double gain = db_to_gain(ex.gains_db[s]);
            for (double& x : chain.samples) x *= gain;
            ex.sources.push_back(std::move(chain));
        }
        ex.mixture.sample_rate_hz = target_rate_hz;
        ex.mixture.samples.assign(static_cast<std::size_t>(out_len), 0.0);
        for (const auto& s : ex.sources)
            for (std::size_t i = 0; i < ex.mixture.samples.size(); ++i)
                ex.mixture.samples[i] += s.samples[i];
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace promptsep
