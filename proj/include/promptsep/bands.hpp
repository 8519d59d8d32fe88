// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/stft.hpp"
#include "promptsep/tensor.hpp"

namespace promptsep {

/// Contiguous partition of the frequency axis into K subbands.
struct BandSplitSpec {
    std::vector<int> band_widths;

    int num_bands() const { return static_cast<int>(band_widths.size()); }
    std::int64_t total_bins() const {
        return std::accumulate(band_widths.begin(), band_widths.end(), std::int64_t{0});
    }
    /// First bin of band k.
    std::int64_t band_start(int k) const {
        std::int64_t s = 0;
        for (int i = 0; i < k; ++i) s += band_widths[static_cast<std::size_t>(i)];
        return s;
    }
};

inline void validate_band_spec(const BandSplitSpec& spec, std::int64_t num_bins) {
    if (spec.band_widths.empty()) throw std::invalid_argument("band spec has no bands");
    for (int w : spec.band_widths)
        if (w < 1) throw std::invalid_argument("every band width must be at least 1");
    if (spec.total_bins() != num_bins) throw std::invalid_argument("band widths must sum to F");
}

/// Default width table: narrow low-frequency bands widening geometrically
/// toward Nyquist, summing exactly to num_bins. Deterministic in (F, K);
/// arbitrary tables can be supplied instead wherever a BandSplitSpec is
/// accepted.
inline BandSplitSpec default_band_table(std::int64_t num_bins, int num_bands) {
    if (num_bands < 1) throw std::invalid_argument("need at least one band");
    if (num_bins < num_bands) throw std::invalid_argument("more bands than frequency bins");

    const int K = num_bands;
    // growth chosen so the widest band is ~64x the narrowest for the
    // canonical 62-band layout, tapering for small K
    const double growth = (K > 1) ? std::pow(64.0, 1.0 / (K - 1)) : 1.0;
    std::vector<double> ideal(static_cast<std::size_t>(K));
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
        ideal[static_cast<std::size_t>(k)] = std::pow(growth, k);
        total += ideal[static_cast<std::size_t>(k)];
    }

    BandSplitSpec spec;
    spec.band_widths.resize(static_cast<std::size_t>(K));
    std::int64_t assigned = 0;
    for (int k = 0; k < K; ++k) {
        int w = static_cast<int>(ideal[static_cast<std::size_t>(k)] / total * static_cast<double>(num_bins));
        if (w < 1) w = 1;
        spec.band_widths[static_cast<std::size_t>(k)] = w;
        assigned += w;
    }
    // push the rounding drift into the widest bands, widest first
    std::int64_t drift = num_bins - assigned;
    int k = K - 1;
    while (drift != 0) {
        int& w = spec.band_widths[static_cast<std::size_t>(k)];
        if (drift > 0) {
            ++w;
            --drift;
        } else if (w > 1) {
            --w;
            ++drift;
        }
        k = (k == 0) ? K - 1 : k - 1;
    }
    validate_band_spec(spec, num_bins);
    return spec;
}

/// Splits a spectrogram into K grids of shape [T, b_k, 2] (real/imag planes
/// stacked along the last axis). Concatenating the outputs along the
/// frequency axis reproduces the input bit-exactly.
inline std::vector<TensorData<double>> band_partition(const Spectrogram& spec,
                                                      const BandSplitSpec& bands) {
    validate_band_spec(bands, spec.num_bins);
    std::vector<TensorData<double>> out;
    out.reserve(static_cast<std::size_t>(bands.num_bands()));
    std::int64_t start = 0;
    for (int k = 0; k < bands.num_bands(); ++k) {
        const std::int64_t b = bands.band_widths[static_cast<std::size_t>(k)];
        TensorData<double> grid({spec.num_frames, b, 2});
        for (std::int64_t t = 0; t < spec.num_frames; ++t) {
            for (std::int64_t f = 0; f < b; ++f) {
                grid.v[static_cast<std::size_t>((t * b + f) * 2 + 0)] = spec.re_at(t, start + f);
                grid.v[static_cast<std::size_t>((t * b + f) * 2 + 1)] = spec.im_at(t, start + f);
            }
        }
        out.push_back(std::move(grid));
        start += b;
    }
    return out;
}

}  // namespace promptsep
