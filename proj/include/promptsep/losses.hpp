// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/audio.hpp"
#include "promptsep/prompts.hpp"
#include "promptsep/tape.hpp"

namespace promptsep {

inline constexpr double kSnrEps = 1e-8;
inline constexpr double kSilenceMeanPower = 1e-10;
inline constexpr double kDefaultTauActive = 1e-3;    // 30 dB loss cap
inline constexpr double kDefaultTauInactive = 1e-2;  // 20 dB loss cap

namespace detail {

inline void require_same_length(const AudioBuffer& a, const AudioBuffer& b) {
    if (a.size() != b.size()) throw std::invalid_argument("length mismatch");
}

inline double log10_db(double num, double den) { return 10.0 * std::log10(num / den); }

}  // namespace detail

/// Signal-to-noise ratio in dB with an epsilon floor on both terms.
inline double snr_db(const AudioBuffer& reference, const AudioBuffer& estimate) {
    detail::require_same_length(reference, estimate);
    const double sig = energy(reference);
    if (sig == 0.0)
        throw std::invalid_argument(
            "zero reference signal; use zero_aware_snr_loss for silent references");
    double err = 0.0;
    for (std::size_t i = 0; i < reference.samples.size(); ++i) {
        const double d = reference.samples[i] - estimate.samples[i];
        err += d * d;
    }
    return detail::log10_db(sig + kSnrEps, err + kSnrEps);
}

/// Scale-invariant SNR: both signals are mean-subtracted, the estimate is
/// normalized to unit energy (which removes its scale exactly), and the
/// estimate is split into its projection onto the reference and a residual.
inline double si_snr_db(const AudioBuffer& reference, const AudioBuffer& estimate) {
    detail::require_same_length(reference, estimate);
    const std::size_t n = reference.samples.size();
    if (n == 0) throw std::invalid_argument("empty signal");
    double ms = 0.0, me = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ms += reference.samples[i];
        me += estimate.samples[i];
    }
    ms /= static_cast<double>(n);
    me /= static_cast<double>(n);

    std::vector<double> s(n), e(n);
    double s_energy = 0.0, e_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = reference.samples[i] - ms;
        e[i] = estimate.samples[i] - me;
        s_energy += s[i] * s[i];
        e_energy += e[i] * e[i];
    }
    if (s_energy == 0.0) throw std::invalid_argument("zero reference");
    if (e_energy == 0.0) throw std::invalid_argument("zero estimate after mean removal");

    const double inv_norm = 1.0 / std::sqrt(e_energy);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += (e[i] * inv_norm) * s[i];
    const double coeff = dot / s_energy;  // s_t = coeff * s
    const double proj_energy = dot * dot / s_energy;
    double resid_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = e[i] * inv_norm - coeff * s[i];
        resid_energy += r * r;
    }
    return detail::log10_db(proj_energy + kSnrEps, resid_energy + kSnrEps);
}

inline double neg_snr_loss(const AudioBuffer& reference, const AudioBuffer& estimate) {
    return -snr_db(reference, estimate);
}

/// Thresholded SNR loss defined for silent references as well. The active
/// branch caps at 10*log10(tau_active), the silent branch at
/// 10*log10(tau_inactive), both relative to the mixture in the silent case.
inline double zero_aware_snr_loss(const AudioBuffer& reference, const AudioBuffer& estimate,
                                  const AudioBuffer& mixture,
                                  double tau_active = kDefaultTauActive,
                                  double tau_inactive = kDefaultTauInactive) {
    detail::require_same_length(reference, estimate);
    detail::require_same_length(reference, mixture);
    const double ref_energy = energy(reference);
    if (mean_power(reference) > kSilenceMeanPower) {
        double err = 0.0;
        for (std::size_t i = 0; i < reference.samples.size(); ++i) {
            const double d = reference.samples[i] - estimate.samples[i];
            err += d * d;
        }
        return 10.0 * std::log10(err + tau_active * ref_energy) - 10.0 * std::log10(ref_energy);
    }
    const double mix_energy = energy(mixture);
    if (mix_energy == 0.0) throw std::invalid_argument("zero mixture with zero reference");
    return 10.0 * std::log10(energy(estimate) + tau_inactive * mix_energy) -
           10.0 * std::log10(mix_energy);
}

/// Metric dispatch by dataset convention name.
inline double evaluate_pair(const AudioBuffer& reference, const AudioBuffer& estimate,
                            const std::string& convention) {
    const std::string c = to_lower_copy(convention);
    if (c == "snr" || c == "mss-default") return snr_db(reference, estimate);
    if (c == "si-snr") return si_snr_db(reference, estimate);
    throw std::invalid_argument("unknown metric convention '" + convention + "'");
}

// ---------------------------------------------------------------------------
// category-wise permutation-invariant loss
// ---------------------------------------------------------------------------

/// Positions of each category among the N (target, estimate) slots.
struct CategoryGrouping {
    std::map<PromptCategory, std::vector<std::pair<int, int>>> groups;
};

inline CategoryGrouping grouping_from_prompts(const PromptSet& prompts) {
    CategoryGrouping g;
    for (int i = 0; i < prompts.size(); ++i)
        g.groups[prompts.entries[static_cast<std::size_t>(i)]].push_back({i, i});
    return g;
}

inline void validate_grouping(const CategoryGrouping& grouping, int n) {
    std::vector<int> t_seen(static_cast<std::size_t>(n), 0), e_seen(static_cast<std::size_t>(n), 0);
    for (const auto& [cat, pairs] : grouping.groups) {
        (void)cat;
        for (const auto& [ti, ei] : pairs) {
            if (ti < 0 || ti >= n || ei < 0 || ei >= n)
                throw std::invalid_argument("grouping index out of range");
            t_seen[static_cast<std::size_t>(ti)]++;
            e_seen[static_cast<std::size_t>(ei)]++;
        }
    }
    for (int i = 0; i < n; ++i)
        if (t_seen[static_cast<std::size_t>(i)] != 1 || e_seen[static_cast<std::size_t>(i)] != 1)
            throw std::invalid_argument("grouping must cover every position exactly once");
}

enum class CategoryWeighting { PerCategory, PerSource };

struct LossReport {
    std::map<PromptCategory, double> per_category_loss;
    double total = 0.0;
    std::map<PromptCategory, std::vector<int>> chosen_permutations;
    double grad_norm = -1.0;  // filled by the training step

    std::string to_json_line() const {
        std::ostringstream os;
        os.precision(10);
        os << "{\"total\":" << total;
        if (grad_norm >= 0.0) os << ",\"grad_norm\":" << grad_norm;
        os << ",\"per_category\":{";
        bool first = true;
        for (const auto& [cat, loss] : per_category_loss) {
            os << (first ? "" : ",") << "\"" << category_name(cat) << "\":" << loss;
            first = false;
        }
        os << "},\"permutations\":{";
        first = true;
        for (const auto& [cat, perm] : chosen_permutations) {
            os << (first ? "" : ",") << "\"" << category_name(cat) << "\":[";
            for (std::size_t i = 0; i < perm.size(); ++i) os << (i ? "," : "") << perm[i];
            os << "]";
            first = false;
        }
        os << "}}";
        return os.str();
    }
};

namespace detail {

/// Exhaustive assignment search over an m x m pair-loss matrix; group sizes
/// stay small (at most the prompt count), so m! enumeration is fine.
/// Returns the lexicographically-first minimizing permutation.
inline std::pair<std::vector<int>, double> min_assignment(const std::vector<std::vector<double>>& cost) {
    const int m = static_cast<int>(cost.size());
    if (m > 8) throw std::invalid_argument("category group too large for exhaustive assignment");
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_mean = std::numeric_limits<double>::infinity();
    do {
        double sum = 0.0;
        for (int i = 0; i < m; ++i) sum += cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        const double mean = sum / m;
        if (mean < best_mean) {
            best_mean = mean;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best, best_mean};
}

inline double combine_category_losses(const std::map<PromptCategory, double>& per_cat,
                                      const CategoryGrouping& grouping, int n,
                                      CategoryWeighting weighting) {
    double total = 0.0;
    if (weighting == CategoryWeighting::PerCategory) {
        for (const auto& [cat, loss] : per_cat) total += loss;
        total /= static_cast<double>(per_cat.size());
    } else {
        for (const auto& [cat, loss] : per_cat)
            total += loss * static_cast<double>(grouping.groups.at(cat).size());
        total /= static_cast<double>(n);
    }
    return total;
}

}  // namespace detail

/// Negative-SNR loss with the best within-category assignment between
/// same-category references and estimates; categories contribute with equal
/// weight by default.
inline LossReport category_pit_loss(const std::vector<AudioBuffer>& targets,
                                    const std::vector<AudioBuffer>& estimates,
                                    const CategoryGrouping& grouping,
                                    CategoryWeighting weighting = CategoryWeighting::PerCategory) {
    if (targets.size() != estimates.size())
        throw std::invalid_argument("target and estimate counts differ");
    const int n = static_cast<int>(targets.size());
    validate_grouping(grouping, n);

    LossReport report;
    for (const auto& [cat, pairs] : grouping.groups) {
        const int m = static_cast<int>(pairs.size());
        std::vector<std::vector<double>> cost(static_cast<std::size_t>(m),
                                              std::vector<double>(static_cast<std::size_t>(m)));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = neg_snr_loss(
                    targets[static_cast<std::size_t>(pairs[static_cast<std::size_t>(i)].first)],
                    estimates[static_cast<std::size_t>(pairs[static_cast<std::size_t>(j)].second)]);
        auto [perm, mean_loss] = detail::min_assignment(cost);
        report.per_category_loss[cat] = mean_loss;
        report.chosen_permutations[cat] = std::move(perm);
    }
    report.total = detail::combine_category_losses(report.per_category_loss, grouping, n, weighting);
    return report;
}

// ---------------------------------------------------------------------------
// tape-level losses used by training
// ---------------------------------------------------------------------------

inline constexpr double kDbPerLn = 10.0 / 2.302585092994045684;  // 10 / ln(10)

/// -snr_db(reference, estimate) with the estimate on tape.
template <typename T>
typename Tape<T>::Ref neg_snr_loss_tape(Tape<T>& tape, typename Tape<T>::Ref estimate,
                                        const AudioBuffer& reference) {
    const auto& ev = tape.val(estimate);
    if (ev.numel() != reference.size()) throw std::invalid_argument("length mismatch");
    const double sig = energy(reference);
    if (sig == 0.0)
        throw std::invalid_argument(
            "zero reference signal; use zero_aware_snr_loss for silent references");
    TensorData<T> ref_t(ev.shape);
    for (std::size_t i = 0; i < ref_t.v.size(); ++i) ref_t.v[i] = static_cast<T>(reference.samples[i]);
    auto diff = tape.axpy_const(estimate, ref_t, T(-1));
    auto den = tape.add_scalar(tape.sum_sq(diff), static_cast<T>(kSnrEps));
    auto logs = tape.scale(tape.log_op(den), static_cast<T>(kDbPerLn));
    return tape.add_scalar(logs, static_cast<T>(-10.0 * std::log10(sig + kSnrEps)));
}

/// Tape version of zero_aware_snr_loss; the branch is decided by the
/// (constant) reference.
template <typename T>
typename Tape<T>::Ref zero_aware_snr_loss_tape(Tape<T>& tape, typename Tape<T>::Ref estimate,
                                               const AudioBuffer& reference,
                                               const AudioBuffer& mixture,
                                               double tau_active = kDefaultTauActive,
                                               double tau_inactive = kDefaultTauInactive) {
    const auto& ev = tape.val(estimate);
    if (ev.numel() != reference.size() || ev.numel() != mixture.size())
        throw std::invalid_argument("length mismatch");
    if (mean_power(reference) > kSilenceMeanPower) {
        const double ref_energy = energy(reference);
        TensorData<T> ref_t(ev.shape);
        for (std::size_t i = 0; i < ref_t.v.size(); ++i) ref_t.v[i] = static_cast<T>(reference.samples[i]);
        auto diff = tape.axpy_const(estimate, ref_t, T(-1));
        auto den = tape.add_scalar(tape.sum_sq(diff), static_cast<T>(tau_active * ref_energy));
        auto logs = tape.scale(tape.log_op(den), static_cast<T>(kDbPerLn));
        return tape.add_scalar(logs, static_cast<T>(-10.0 * std::log10(ref_energy)));
    }
    const double mix_energy = energy(mixture);
    if (mix_energy == 0.0) throw std::invalid_argument("zero mixture with zero reference");
    auto den = tape.add_scalar(tape.sum_sq(estimate), static_cast<T>(tau_inactive * mix_energy));
    auto logs = tape.scale(tape.log_op(den), static_cast<T>(kDbPerLn));
    return tape.add_scalar(logs, static_cast<T>(-10.0 * std::log10(mix_energy)));
}

template <typename T>
struct TapePitResult {
    typename Tape<T>::Ref total;
    LossReport report;
};

/// Category-PIT over tape estimates: pair losses are tape scalars, the
/// assignment search runs on their values, and only the chosen pairs feed
/// the combined loss node (so gradients flow through the minimizing
/// assignment only).
template <typename T>
TapePitResult<T> category_pit_loss_tape(Tape<T>& tape, const std::vector<AudioBuffer>& targets,
                                        const std::vector<typename Tape<T>::Ref>& estimates,
                                        const CategoryGrouping& grouping,
                                        CategoryWeighting weighting = CategoryWeighting::PerCategory) {
    if (targets.size() != estimates.size())
        throw std::invalid_argument("target and estimate counts differ");
    const int n = static_cast<int>(targets.size());
    validate_grouping(grouping, n);

    TapePitResult<T> out;
    std::vector<typename Tape<T>::Ref> weighted_terms;
    for (const auto& [cat, pairs] : grouping.groups) {
        const int m = static_cast<int>(pairs.size());
        std::vector<std::vector<typename Tape<T>::Ref>> loss_refs(static_cast<std::size_t>(m));
        std::vector<std::vector<double>> cost(static_cast<std::size_t>(m),
                                              std::vector<double>(static_cast<std::size_t>(m)));
        for (int i = 0; i < m; ++i) {
            loss_refs[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j) {
                auto ref = neg_snr_loss_tape(
                    tape, estimates[static_cast<std::size_t>(pairs[static_cast<std::size_t>(j)].second)],
                    targets[static_cast<std::size_t>(pairs[static_cast<std::size_t>(i)].first)]);
                loss_refs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ref;
                cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    static_cast<double>(tape.val(ref).item());
            }
        }
        auto [perm, mean_loss] = detail::min_assignment(cost);
        out.report.per_category_loss[cat] = mean_loss;
        out.report.chosen_permutations[cat] = perm;

        typename Tape<T>::Ref group_sum;
        for (int i = 0; i < m; ++i) {
            auto term = loss_refs[static_cast<std::size_t>(i)][static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            group_sum = (i == 0) ? term : tape.add(group_sum, term);
        }
        weighted_terms.push_back(tape.scale(group_sum, static_cast<T>(1.0 / m)));
    }

    const auto num_categories = static_cast<double>(grouping.groups.size());
    typename Tape<T>::Ref total;
    if (weighting == CategoryWeighting::PerCategory) {
        for (std::size_t i = 0; i < weighted_terms.size(); ++i)
            total = (i == 0) ? weighted_terms[i] : tape.add(total, weighted_terms[i]);
        total = tape.scale(total, static_cast<T>(1.0 / num_categories));
    } else {
        std::size_t idx = 0;
        for (const auto& [cat, pairs] : grouping.groups) {
            auto term = tape.scale(weighted_terms[idx], static_cast<T>(pairs.size()));
            total = (idx == 0) ? term : tape.add(total, term);
            ++idx;
        }
        total = tape.scale(total, static_cast<T>(1.0 / n));
    }
    out.report.total = detail::combine_category_losses(out.report.per_category_loss, grouping, n, weighting);
    out.total = total;
    return out;
}

}  // namespace promptsep
