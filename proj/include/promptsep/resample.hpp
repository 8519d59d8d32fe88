// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "promptsep/audio.hpp"

namespace promptsep {
namespace detail {

inline double kaiser_i0(double x) {
    // series expansion of the zeroth-order modified Bessel function
    double sum = 1.0, term = 1.0;
    for (int k = 1; k < 64; ++k) {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        if (term < 1e-16 * sum) break;
    }
    return sum;
}

}  // namespace detail

/// Band-limited rational resampling with a Kaiser-windowed sinc kernel,
/// cutoff at 0.95 of the narrower Nyquist. Identity (bitwise) when the rates
/// already match.
inline AudioBuffer resample(const AudioBuffer& audio, int target_rate_hz) {
    if (target_rate_hz <= 0) throw std::invalid_argument("target sample rate must be positive");
    validate_audio(audio);
    if (audio.sample_rate_hz == target_rate_hz) return audio;

    const std::int64_t g = std::gcd<std::int64_t>(audio.sample_rate_hz, target_rate_hz);
    const std::int64_t up = target_rate_hz / g;    // L
    const std::int64_t down = audio.sample_rate_hz / g;  // M

    const std::int64_t n_in = audio.size();
    const std::int64_t n_out = static_cast<std::int64_t>(
        std::llround(static_cast<double>(n_in) * target_rate_hz / audio.sample_rate_hz));

    AudioBuffer out;
    out.sample_rate_hz = target_rate_hz;
    out.samples.assign(static_cast<std::size_t>(n_out), 0.0);
    if (n_in == 0 || n_out == 0) return out;

    // prototype low-pass at the upsampled rate; cutoff relative to pi. The
    // kernel length keeps the Kaiser transition band inside the 5% guard so
    // the stopband edge sits at the narrower Nyquist, not past it.
    const double cutoff = 0.95 * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const int zero_crossings = 72;
    const std::int64_t half = static_cast<std::int64_t>(std::ceil(zero_crossings * up / cutoff));
    const double beta = 10.0;
    const double i0_beta = detail::kaiser_i0(beta);

    std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
    for (std::int64_t i = -half; i <= half; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(up);
        const double sinc = (i == 0) ? 1.0 : std::sin(M_PI * cutoff * t) / (M_PI * cutoff * t);
        const double frac = static_cast<double>(i) / static_cast<double>(half);
        const double win = detail::kaiser_i0(beta * std::sqrt(std::max(0.0, 1.0 - frac * frac))) / i0_beta;
        h[static_cast<std::size_t>(i + half)] = cutoff * sinc * win;
    }

    // y[m] = sum_i x[i] * h(m*M/L - i), evaluated on the integer lattice of
    // the upsampled grid: phase p = (m*M) mod L, base index = (m*M) div L
    for (std::int64_t m = 0; m < n_out; ++m) {
        const std::int64_t num = m * down;
        const std::int64_t base = num / up;
        const std::int64_t phase = num % up;
        double acc = 0.0;
        // taps at upsample positions base*L + phase - j*L ... step through input samples
        const std::int64_t j_lo = base - (half - phase) / up;
        const std::int64_t j_hi = base + (half + phase) / up;
        for (std::int64_t j = std::max<std::int64_t>(0, j_lo); j <= std::min(n_in - 1, j_hi); ++j) {
            const std::int64_t tap = phase + (base - j) * up;  // distance on the fine grid
            if (tap < -half || tap > half) continue;
            acc += audio.samples[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(tap + half)];
        }
        out.samples[static_cast<std::size_t>(m)] = acc;
    }
    return out;
}

}  // namespace promptsep
