// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptsep {

/// The eight source categories a prompt can select.
enum class PromptCategory : int {
    Speech = 0,
    Sfx = 1,
    SfxMix = 2,
    Drums = 3,
    Bass = 4,
    Vocals = 5,
    OtherInst = 6,
    MusicMix = 7,
};

inline constexpr int kNumCategories = 8;

inline constexpr std::array<PromptCategory, kNumCategories> kAllCategories = {
    PromptCategory::Speech,   PromptCategory::Sfx,    PromptCategory::SfxMix,
    PromptCategory::Drums,    PromptCategory::Bass,   PromptCategory::Vocals,
    PromptCategory::OtherInst, PromptCategory::MusicMix,
};

inline const char* category_name(PromptCategory c) {
    switch (c) {
        case PromptCategory::Speech: return "speech";
        case PromptCategory::Sfx: return "sfx";
        case PromptCategory::SfxMix: return "sfx-mix";
        case PromptCategory::Drums: return "drums";
        case PromptCategory::Bass: return "bass";
        case PromptCategory::Vocals: return "vocals";
        case PromptCategory::OtherInst: return "other-inst";
        case PromptCategory::MusicMix: return "music-mix";
    }
    return "?";
}

inline std::string to_lower_copy(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::optional<PromptCategory> try_category_from_name(const std::string& name) {
    const std::string s = to_lower_copy(name);
    for (PromptCategory c : kAllCategories)
        if (s == category_name(c)) return c;
    return std::nullopt;
}

inline PromptCategory category_from_name(const std::string& name) {
    auto c = try_category_from_name(name);
    if (!c) throw std::invalid_argument("unknown category '" + name + "'");
    return *c;
}

/// Only Speech and SFX may appear more than once in a prompt set.
inline bool is_repeatable(PromptCategory c) {
    return c == PromptCategory::Speech || c == PromptCategory::Sfx;
}

inline bool is_instrument(PromptCategory c) {
    return c == PromptCategory::Drums || c == PromptCategory::Bass ||
           c == PromptCategory::Vocals || c == PromptCategory::OtherInst;
}

/// Raised when a prompt combination violates the co-occurrence rules.
class PromptError : public std::runtime_error {
   public:
    explicit PromptError(const std::string& what) : std::runtime_error(what) {}
};

/// Ordered list of prompts; order determines output order.
struct PromptSet {
    std::vector<PromptCategory> entries;

    int size() const { return static_cast<int>(entries.size()); }
    std::string to_string() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < entries.size(); ++i)
            os << (i ? "," : "") << category_name(entries[i]);
        return os.str();
    }
};

inline void validate_prompt_set(const PromptSet& ps) {
    if (ps.entries.empty()) throw PromptError("prompt set must contain at least one prompt");
    std::array<int, kNumCategories> counts{};
    for (PromptCategory c : ps.entries) counts[static_cast<std::size_t>(static_cast<int>(c))]++;
    auto count = [&](PromptCategory c) { return counts[static_cast<std::size_t>(static_cast<int>(c))]; };

    if (count(PromptCategory::Sfx) > 0 && count(PromptCategory::SfxMix) > 0)
        throw PromptError("SFX and SFX-mix cannot coexist");
    if (count(PromptCategory::MusicMix) > 0 &&
        (count(PromptCategory::Drums) > 0 || count(PromptCategory::Bass) > 0 ||
         count(PromptCategory::Vocals) > 0 || count(PromptCategory::OtherInst) > 0))
        throw PromptError("Music-mix and individual instruments cannot coexist");
    for (PromptCategory c : kAllCategories)
        if (!is_repeatable(c) && count(c) > 1)
            throw PromptError(std::string("category ") + category_name(c) +
                              " may appear at most once");
}

/// Parses a comma-separated list such as "speech,sfx-mix" (case-insensitive)
/// and validates the result.
inline PromptSet parse_prompt_list(const std::string& text) {
    PromptSet ps;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        // trim
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.erase(item.begin());
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.pop_back();
        if (item.empty()) continue;
        ps.entries.push_back(category_from_name(item));
    }
    validate_prompt_set(ps);
    return ps;
}

// ---------------------------------------------------------------------------
// task presets
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"se", "ss", "noisy-ss", "uss", "mss", "cass"};
    return names;
}

/// Expands a task preset to a prompt set. `n` is required for the presets
/// whose templates repeat a prompt N times (ss, noisy-ss, uss).
inline PromptSet preset_lookup(const std::string& name, std::optional<int> n = std::nullopt) {
    const std::string p = to_lower_copy(name);
    PromptSet ps;
    auto need_n = [&]() {
        if (!n || *n < 1)
            throw std::invalid_argument("preset '" + p + "' requires a positive prompt count n");
        return *n;
    };
    if (p == "se") {
        ps.entries = {PromptCategory::Speech, PromptCategory::SfxMix};
    } else if (p == "ss") {
        int count = need_n();
        ps.entries.assign(static_cast<std::size_t>(count), PromptCategory::Speech);
    } else if (p == "noisy-ss") {
        int count = need_n();
        ps.entries.assign(static_cast<std::size_t>(count), PromptCategory::Speech);
        ps.entries.push_back(PromptCategory::SfxMix);
    } else if (p == "uss") {
        int count = need_n();
        ps.entries.assign(static_cast<std::size_t>(count), PromptCategory::Sfx);
    } else if (p == "mss") {
        ps.entries = {PromptCategory::Drums, PromptCategory::Bass, PromptCategory::Vocals,
                      PromptCategory::OtherInst};
    } else if (p == "cass") {
        ps.entries = {PromptCategory::Speech, PromptCategory::SfxMix, PromptCategory::MusicMix};
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    validate_prompt_set(ps);
    return ps;
}

inline std::string presets_table_text() {
    return "task      prompts\n"
           "--------  -----------------------------------------\n"
           "se        speech, sfx-mix\n"
           "ss        speech x N\n"
           "noisy-ss  speech x N, sfx-mix\n"
           "uss       sfx x N\n"
           "mss       drums, bass, vocals, other-inst\n"
           "cass      speech, sfx-mix, music-mix\n";
}

}  // namespace promptsep
