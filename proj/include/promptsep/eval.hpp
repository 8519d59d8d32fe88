// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptsep/losses.hpp"
#include "promptsep/model.hpp"
#include "promptsep/resample.hpp"
#include "promptsep/wav.hpp"

namespace promptsep {

// ---------------------------------------------------------------------------
// segment-wise separation
// ---------------------------------------------------------------------------

/// Runs the model over a waveform of arbitrary length: the input is
/// resampled to the model's operating rate, processed in fixed-length
/// segments with a raised-cosine crossfade, and the estimates are resampled
/// back to the input's native rate and trimmed to its exact length.
template <typename T>
std::vector<AudioBuffer> separate_waveform(const TussModel<T>& model, const AudioBuffer& input,
                                           const PromptSet& prompts, double segment_seconds = 6.0,
                                           double crossfade_seconds = 0.25,
                                           ForwardOptions opt = {}) {
    validate_prompt_set(prompts);
    validate_audio(input, /*allow_empty=*/false);
    const int n = prompts.size();

    AudioBuffer work = resample(input, model.sample_rate_hz);
    const std::int64_t L = work.size();
    const auto seg_len = static_cast<std::int64_t>(segment_seconds * model.sample_rate_hz);
    const auto fade_len = std::min<std::int64_t>(
        static_cast<std::int64_t>(crossfade_seconds * model.sample_rate_hz), seg_len / 4);

    std::vector<AudioBuffer> merged(static_cast<std::size_t>(n));
    for (auto& m : merged) {
        m.sample_rate_hz = model.sample_rate_hz;
        m.samples.assign(static_cast<std::size_t>(L), 0.0);
    }

    if (L <= seg_len) {
        merged = model_forward(model, work, prompts, opt);
    } else {
        std::vector<double> weight_sum(static_cast<std::size_t>(L), 0.0);
        const std::int64_t hop = seg_len - fade_len;
        for (std::int64_t start = 0; start < L; start += hop) {
            const std::int64_t stop = std::min(L, start + seg_len);
            AudioBuffer chunk;
            chunk.sample_rate_hz = model.sample_rate_hz;
            chunk.samples.assign(work.samples.begin() + start, work.samples.begin() + stop);
            auto outs = model_forward(model, chunk, prompts, opt);
            const std::int64_t len = stop - start;
            for (std::int64_t i = 0; i < len; ++i) {
                double w = 1.0;
                if (fade_len > 0) {
                    if (start > 0 && i < fade_len)
                        w = 0.5 - 0.5 * std::cos(M_PI * (static_cast<double>(i) + 0.5) / fade_len);
                    if (stop < L && i >= len - fade_len)
                        w = std::min(w, 0.5 - 0.5 * std::cos(M_PI * (static_cast<double>(len - 1 - i) + 0.5) /
                                                             fade_len));
                }
                weight_sum[static_cast<std::size_t>(start + i)] += w;
                for (int s = 0; s < n; ++s)
                    merged[static_cast<std::size_t>(s)].samples[static_cast<std::size_t>(start + i)] +=
                        w * outs[static_cast<std::size_t>(s)].samples[static_cast<std::size_t>(i)];
            }
            if (stop == L) break;
        }
        for (int s = 0; s < n; ++s)
            for (std::int64_t i = 0; i < L; ++i)
                if (weight_sum[static_cast<std::size_t>(i)] > 1e-9)
                    merged[static_cast<std::size_t>(s)].samples[static_cast<std::size_t>(i)] /=
                        weight_sum[static_cast<std::size_t>(i)];
    }

    std::vector<AudioBuffer> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        AudioBuffer native = resample(merged[static_cast<std::size_t>(s)], input.sample_rate_hz);
        native.samples.resize(input.samples.size(), 0.0);
        out.push_back(std::move(native));
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation manifest and report
// ---------------------------------------------------------------------------

struct EvalItem {
    std::string id;
    std::string mixture_path;
    std::vector<std::pair<PromptCategory, std::string>> references;  // (category, path)
};

/// JSON-lines manifest: one object per item with fields id, mixture, and
/// references = [{category, path}, ...].
inline std::vector<EvalItem> load_eval_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open evaluation manifest: " + path);
    std::vector<EvalItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("eval manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        EvalItem item;
        item.id = j.value("id", "item" + std::to_string(line_no));
        item.mixture_path = j.at("mixture").get<std::string>();
        for (const auto& r : j.at("references"))
            item.references.emplace_back(category_from_name(r.at("category").get<std::string>()),
                                         r.at("path").get<std::string>());
        if (item.references.empty())
            throw std::runtime_error("eval manifest line " + std::to_string(line_no) +
                                     ": item has no references");
        items.push_back(std::move(item));
    }
    return items;
}

struct EvalRow {
    std::string item_id;
    PromptSet prompts;
    std::vector<double> per_source_db;  // aligned with prompt order
    bool skipped = false;
    std::string note;
};

struct EvalReport {
    std::string convention;
    std::string protocol_note;
    std::vector<EvalRow> per_item;
    std::map<PromptCategory, double> per_category_mean;

    std::string to_json_lines() const {
        std::ostringstream os;
        os.precision(10);
        for (const auto& row : per_item) {
            nlohmann::json j{{"item", row.item_id}, {"prompts", row.prompts.to_string()}};
            if (row.skipped) {
                j["skipped"] = true;
                j["note"] = row.note;
            } else {
                j["scores_db"] = row.per_source_db;
                if (!row.note.empty()) j["note"] = row.note;
            }
            os << j.dump() << "\n";
        }
        nlohmann::json summary{{"summary", true}, {"convention", convention}};
        for (const auto& [cat, mean] : per_category_mean)
            summary["per_category_mean_db"][category_name(cat)] = mean;
        if (!protocol_note.empty()) summary["note"] = protocol_note;
        os << summary.dump() << "\n";
        return os.str();
    }

    std::string to_table() const {
        std::ostringstream os;
        os << "metric: " << convention << "\n";
        if (!protocol_note.empty()) os << "note: " << protocol_note << "\n";
        os << "category        mean dB\n";
        for (const auto& [cat, mean] : per_category_mean) {
            std::ostringstream name;
            name << category_name(cat);
            os << name.str() << std::string(16 - std::min<std::size_t>(15, name.str().size()), ' ');
            os.precision(2);
            os << std::fixed << mean << "\n";
            os.unsetf(std::ios::fixed);
        }
        return os.str();
    }
};

struct EvalOptions {
    std::string convention = "si-snr";
    bool oracle = false;           // score the references against themselves
    bool single_category = false;  // one category per forward pass
    std::optional<PromptSet> expected_prompts;  // from a task preset, if given
    double segment_seconds = 6.0;
};

namespace detail {

/// Best within-category assignment, maximizing the mean metric.
inline void score_category(const std::vector<AudioBuffer>& refs,
                           const std::vector<AudioBuffer>& ests, const std::string& convention,
                           const std::vector<int>& positions, std::vector<double>& per_source_db) {
    const int m = static_cast<int>(refs.size());
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_mean = -std::numeric_limits<double>::infinity();
    do {
        double sum = 0.0;
        for (int i = 0; i < m; ++i)
            sum += evaluate_pair(refs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])],
                                 ests[static_cast<std::size_t>(i)], convention);
        if (sum / m > best_mean) {
            best_mean = sum / m;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (int i = 0; i < m; ++i)
        per_source_db[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])] =
            evaluate_pair(refs[static_cast<std::size_t>(best[static_cast<std::size_t>(i)])],
                          ests[static_cast<std::size_t>(i)], convention);
}

inline bool same_category_multiset(const PromptSet& a, const std::vector<PromptCategory>& b) {
    std::array<int, kNumCategories> ca{}, cb{};
    for (PromptCategory c : a.entries) ca[static_cast<std::size_t>(static_cast<int>(c))]++;
    for (PromptCategory c : b) cb[static_cast<std::size_t>(static_cast<int>(c))]++;
    return ca == cb;
}

}  // namespace detail

/// Scores every item: build the prompt set from the references' categories
/// (ordered per preset when one is given), separate, and score each category
/// group under its best assignment at the item's native rate.
template <typename T>
EvalReport evaluate_items(const TussModel<T>* model, const std::vector<EvalItem>& items,
                          const EvalOptions& opt) {
    if (!opt.oracle && model == nullptr)
        throw std::invalid_argument("evaluation needs a model unless oracle mode is on");
    EvalReport report;
    report.convention = opt.convention;
    if (opt.single_category)
        report.protocol_note = "single-category protocol: one forward pass per category";

    std::map<PromptCategory, std::vector<double>> scores_by_category;
    for (const EvalItem& item : items) {
        EvalRow row;
        row.item_id = item.id;
        try {
            AudioBuffer mixture = read_wav(item.mixture_path);
            std::vector<AudioBuffer> refs;
            for (const auto& [cat, ref_path] : item.references) {
                (void)cat;
                refs.push_back(read_wav(ref_path));
                if (refs.back().size() != mixture.size() ||
                    refs.back().sample_rate_hz != mixture.sample_rate_hz)
                    throw std::runtime_error("reference does not match the mixture length/rate");
            }
            PromptSet prompts;
            for (const auto& [cat, ref_path] : item.references) {
                (void)ref_path;
                prompts.entries.push_back(cat);
            }
            if (opt.expected_prompts) {
                if (!detail::same_category_multiset(*opt.expected_prompts, prompts.entries))
                    throw std::runtime_error("reference categories do not match the preset");
                prompts = *opt.expected_prompts;  // preset fixes the order
            }
            validate_prompt_set(prompts);
            row.prompts = prompts;
            row.per_source_db.assign(static_cast<std::size_t>(prompts.size()), 0.0);

            // references reordered to the prompt order, stable per category
            std::vector<AudioBuffer> refs_in_prompt_order(static_cast<std::size_t>(prompts.size()));
            {
                std::map<PromptCategory, std::vector<int>> pool;
                for (int i = 0; i < static_cast<int>(item.references.size()); ++i)
                    pool[item.references[static_cast<std::size_t>(i)].first].push_back(i);
                std::map<PromptCategory, std::size_t> cursor;
                for (int i = 0; i < prompts.size(); ++i) {
                    const PromptCategory c = prompts.entries[static_cast<std::size_t>(i)];
                    refs_in_prompt_order[static_cast<std::size_t>(i)] =
                        refs[static_cast<std::size_t>(pool[c][cursor[c]++])];
                }
            }

            std::vector<AudioBuffer> estimates(static_cast<std::size_t>(prompts.size()));
            if (opt.oracle) {
                estimates = refs_in_prompt_order;
            } else if (opt.single_category) {
                std::map<PromptCategory, std::vector<int>> positions;
                for (int i = 0; i < prompts.size(); ++i)
                    positions[prompts.entries[static_cast<std::size_t>(i)]].push_back(i);
                for (const auto& [cat, pos] : positions) {
                    PromptSet sub;
                    sub.entries.assign(pos.size(), cat);
                    auto outs = separate_waveform(*model, mixture, sub, opt.segment_seconds);
                    for (std::size_t i = 0; i < pos.size(); ++i)
                        estimates[static_cast<std::size_t>(pos[i])] = std::move(outs[i]);
                }
                row.note = "multi-pass (single-category prompts)";
            } else {
                estimates = separate_waveform(*model, mixture, prompts, opt.segment_seconds);
            }

            std::map<PromptCategory, std::vector<int>> groups;
            for (int i = 0; i < prompts.size(); ++i)
                groups[prompts.entries[static_cast<std::size_t>(i)]].push_back(i);
            for (const auto& [cat, pos] : groups) {
                std::vector<AudioBuffer> group_refs, group_ests;
                for (int p : pos) {
                    group_refs.push_back(refs_in_prompt_order[static_cast<std::size_t>(p)]);
                    group_ests.push_back(estimates[static_cast<std::size_t>(p)]);
                }
                detail::score_category(group_refs, group_ests, opt.convention, pos, row.per_source_db);
                for (int p : pos)
                    scores_by_category[cat].push_back(row.per_source_db[static_cast<std::size_t>(p)]);
            }
        } catch (const std::exception& e) {
            row.skipped = true;
            row.note = e.what();
        }
        report.per_item.push_back(std::move(row));
    }

    for (const auto& [cat, scores] : scores_by_category) {
        double sum = 0.0;
        for (double s : scores) sum += s;
        report.per_category_mean[cat] = sum / static_cast<double>(scores.size());
    }
    return report;
}

}  // namespace promptsep
