// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/audio.hpp"

namespace promptsep {

enum class WindowKind { SqrtHann, Hann, Rect };

inline std::string window_kind_name(WindowKind k) {
    switch (k) {
        case WindowKind::SqrtHann: return "sqrt-hann";
        case WindowKind::Hann: return "hann";
        case WindowKind::Rect: return "rect";
    }
    return "?";
}

inline WindowKind window_kind_from_name(const std::string& s) {
    if (s == "sqrt-hann") return WindowKind::SqrtHann;
    if (s == "hann") return WindowKind::Hann;
    if (s == "rect") return WindowKind::Rect;
    throw std::invalid_argument("unknown window kind: " + s);
}

struct StftConfig {
    int window_length = 2048;
    int hop_length = 480;
    int fft_length = 2048;
    WindowKind window_kind = WindowKind::SqrtHann;

    bool operator==(const StftConfig& o) const {
        return window_length == o.window_length && hop_length == o.hop_length &&
               fft_length == o.fft_length && window_kind == o.window_kind;
    }
};

/// Analysis window, periodic form (COLA-friendly).
inline std::vector<double> make_window(const StftConfig& cfg) {
    std::vector<double> w(static_cast<std::size_t>(cfg.window_length));
    const int n = cfg.window_length;
    for (int i = 0; i < n; ++i) {
        double hann = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
        switch (cfg.window_kind) {
            case WindowKind::SqrtHann: w[static_cast<std::size_t>(i)] = std::sqrt(hann); break;
            case WindowKind::Hann: w[static_cast<std::size_t>(i)] = hann; break;
            case WindowKind::Rect: w[static_cast<std::size_t>(i)] = 1.0; break;
        }
    }
    return w;
}

inline bool is_power_of_two(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

/// Validates the window/hop/fft triple, including the overlap-add condition
/// (the squared analysis window summed over all hop shifts must be bounded
/// away from zero in the steady state) under which the normalized inverse
/// reconstructs the input exactly.
inline void validate_stft_config(const StftConfig& cfg) {
    if (cfg.hop_length <= 0 || cfg.window_length <= 0 || cfg.fft_length <= 0)
        throw std::invalid_argument("stft config: sizes must be positive");
    if (!(cfg.hop_length <= cfg.window_length && cfg.window_length <= cfg.fft_length))
        throw std::invalid_argument("stft config: need hop <= window <= fft");
    if (!is_power_of_two(cfg.fft_length))
        throw std::invalid_argument("stft config: fft_length must be a power of two");

    std::vector<double> w = make_window(cfg);
    double wmax = 0.0;
    for (double x : w) wmax = std::max(wmax, x * x);
    // steady-state overlap-add of w^2 is hop-periodic
    for (int r = 0; r < cfg.hop_length; ++r) {
        double acc = 0.0;
        for (int n = r; n < cfg.window_length; n += cfg.hop_length) acc += w[static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
        if (acc <= 1e-8 * wmax)
            throw std::invalid_argument("stft config violates the overlap-add reconstruction condition");
    }
}

/// Complex time-frequency grid stored as separate real/imaginary planes,
/// row-major [T][F].
struct Spectrogram {
    std::int64_t num_frames = 0;  // T
    std::int64_t num_bins = 0;    // F
    std::vector<double> re, im;
    StftConfig config;

    double& re_at(std::int64_t t, std::int64_t f) { return re[static_cast<std::size_t>(t * num_bins + f)]; }
    double& im_at(std::int64_t t, std::int64_t f) { return im[static_cast<std::size_t>(t * num_bins + f)]; }
    double re_at(std::int64_t t, std::int64_t f) const { return re[static_cast<std::size_t>(t * num_bins + f)]; }
    double im_at(std::int64_t t, std::int64_t f) const { return im[static_cast<std::size_t>(t * num_bins + f)]; }

    bool all_finite() const {
        for (double x : re)
            if (!std::isfinite(x)) return false;
        for (double x : im)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

namespace detail {

inline const std::vector<std::complex<double>>& twiddle_table(std::int64_t n) {
    thread_local std::map<std::int64_t, std::vector<std::complex<double>>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<double>> tw(static_cast<std::size_t>(n / 2));
    for (std::int64_t k = 0; k < n / 2; ++k)
        tw[static_cast<std::size_t>(k)] = std::polar(1.0, -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n));
    return cache.emplace(n, std::move(tw)).first->second;
}

/// Iterative radix-2 transform; inverse applies conjugate twiddles and the
/// caller handles any 1/N scaling.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::int64_t n = static_cast<std::int64_t>(a.size());
    if (n <= 1) return;
    if (!is_power_of_two(n)) throw std::invalid_argument("fft length must be a power of two");

    for (std::int64_t i = 1, j = 0; i < n; ++i) {
        std::int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
    }
    const auto& tw = twiddle_table(n);
    for (std::int64_t len = 2; len <= n; len <<= 1) {
        const std::int64_t stride = n / len;
        for (std::int64_t i = 0; i < n; i += len) {
            for (std::int64_t k = 0; k < len / 2; ++k) {
                std::complex<double> w = tw[static_cast<std::size_t>(k * stride)];
                if (inverse) w = std::conj(w);
                std::complex<double>& u = a[static_cast<std::size_t>(i + k)];
                std::complex<double>& v = a[static_cast<std::size_t>(i + k + len / 2)];
                std::complex<double> t = v * w;
                v = u - t;
                u = u + t;
            }
        }
    }
}

/// Real-input forward transform; returns nfft/2+1 bins. Input shorter than
/// nfft is zero-padded at the end.
inline std::vector<std::complex<double>> rfft(const double* x, std::int64_t n_in, std::int64_t nfft) {
    std::vector<std::complex<double>> a(static_cast<std::size_t>(nfft));
    for (std::int64_t i = 0; i < std::min(n_in, nfft); ++i) a[static_cast<std::size_t>(i)] = x[i];
    fft_inplace(a, false);
    a.resize(static_cast<std::size_t>(nfft / 2 + 1));
    return a;
}

/// Inverse of rfft (with 1/N scaling); X has nfft/2+1 bins.
inline std::vector<double> irfft(const std::complex<double>* X, std::int64_t nfft) {
    std::vector<std::complex<double>> a(static_cast<std::size_t>(nfft));
    const std::int64_t half = nfft / 2;
    for (std::int64_t f = 0; f <= half; ++f) a[static_cast<std::size_t>(f)] = X[f];
    for (std::int64_t f = 1; f < half; ++f) a[static_cast<std::size_t>(nfft - f)] = std::conj(X[f]);
    fft_inplace(a, true);
    std::vector<double> out(static_cast<std::size_t>(nfft));
    for (std::int64_t i = 0; i < nfft; ++i) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)].real() / static_cast<double>(nfft);
    return out;
}

inline std::int64_t stft_pad(const StftConfig& cfg) { return cfg.window_length / 2; }

inline std::int64_t stft_num_frames(std::int64_t num_samples, const StftConfig& cfg) {
    const std::int64_t padded = num_samples + 2 * stft_pad(cfg);
    if (padded < cfg.window_length) return 0;
    return (padded - cfg.window_length) / cfg.hop_length + 1;
}

/// Squared-window overlap-add normalization over the padded support.
inline std::vector<double> ola_norm(std::int64_t num_frames, const StftConfig& cfg) {
    const std::vector<double> w = make_window(cfg);
    std::vector<double> norm(static_cast<std::size_t>((num_frames - 1) * cfg.hop_length + cfg.window_length), 0.0);
    for (std::int64_t t = 0; t < num_frames; ++t)
        for (int n = 0; n < cfg.window_length; ++n)
            norm[static_cast<std::size_t>(t * cfg.hop_length + n)] += w[static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
    return norm;
}

}  // namespace detail

/// Centered STFT: the signal is zero-padded by window/2 on both sides, frames
/// are windowed and (right-)zero-padded to fft_length.
inline Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg) {
    validate_stft_config(cfg);
    if (audio.samples.empty()) throw std::invalid_argument("empty signal");
    validate_audio(audio, /*allow_empty=*/false);

    const std::int64_t pad = detail::stft_pad(cfg);
    const std::int64_t T = detail::stft_num_frames(audio.size(), cfg);
    const std::int64_t F = cfg.fft_length / 2 + 1;
    const std::vector<double> w = make_window(cfg);

    Spectrogram spec;
    spec.num_frames = T;
    spec.num_bins = F;
    spec.config = cfg;
    spec.re.assign(static_cast<std::size_t>(T * F), 0.0);
    spec.im.assign(static_cast<std::size_t>(T * F), 0.0);

    std::vector<double> frame(static_cast<std::size_t>(cfg.window_length));
    for (std::int64_t t = 0; t < T; ++t) {
        for (int n = 0; n < cfg.window_length; ++n) {
            const std::int64_t src = t * cfg.hop_length + n - pad;
            const double x = (src >= 0 && src < audio.size()) ? audio.samples[static_cast<std::size_t>(src)] : 0.0;
            frame[static_cast<std::size_t>(n)] = x * w[static_cast<std::size_t>(n)];
        }
        const auto bins = detail::rfft(frame.data(), cfg.window_length, cfg.fft_length);
        for (std::int64_t f = 0; f < F; ++f) {
            spec.re_at(t, f) = bins[static_cast<std::size_t>(f)].real();
            spec.im_at(t, f) = bins[static_cast<std::size_t>(f)].imag();
        }
    }
    return spec;
}

/// Normalized overlap-add inverse; exact on any grid produced by stft() and a
/// least-squares inverse otherwise. Output is trimmed/padded to target_length.
inline AudioBuffer istft(const Spectrogram& spec, std::int64_t target_length, int sample_rate_hz = 0) {
    const StftConfig& cfg = spec.config;
    validate_stft_config(cfg);
    if (!spec.all_finite()) throw std::invalid_argument("non-finite input");
    if (spec.num_bins != cfg.fft_length / 2 + 1)
        throw std::invalid_argument("spectrogram bin count does not match fft_length");
    if (target_length < 0) throw std::invalid_argument("negative target length");
    if (spec.num_frames <= 0) throw std::invalid_argument("empty spectrogram");

    const std::int64_t span = (spec.num_frames - 1) * cfg.hop_length;
    if (std::llabs(target_length - span) > cfg.window_length + cfg.hop_length)
        throw std::invalid_argument("target_length inconsistent with frame count");

    const std::int64_t pad = detail::stft_pad(cfg);
    const std::vector<double> w = make_window(cfg);
    const std::vector<double> norm = detail::ola_norm(spec.num_frames, cfg);

    std::vector<double> acc(norm.size(), 0.0);
    std::vector<std::complex<double>> bins(static_cast<std::size_t>(spec.num_bins));
    for (std::int64_t t = 0; t < spec.num_frames; ++t) {
        for (std::int64_t f = 0; f < spec.num_bins; ++f)
            bins[static_cast<std::size_t>(f)] = {spec.re_at(t, f), spec.im_at(t, f)};
        const std::vector<double> frame = detail::irfft(bins.data(), cfg.fft_length);
        for (int n = 0; n < cfg.window_length; ++n)
            acc[static_cast<std::size_t>(t * cfg.hop_length + n)] += frame[static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
    }

    AudioBuffer out;
    out.sample_rate_hz = sample_rate_hz > 0 ? sample_rate_hz : 48000;
    out.samples.assign(static_cast<std::size_t>(target_length), 0.0);
    for (std::int64_t i = 0; i < target_length; ++i) {
        const std::int64_t src = i + pad;
        if (src < static_cast<std::int64_t>(acc.size()) && norm[static_cast<std::size_t>(src)] > 1e-12)
            out.samples[static_cast<std::size_t>(i)] = acc[static_cast<std::size_t>(src)] / norm[static_cast<std::size_t>(src)];
    }
    return out;
}

/// Default analysis setup for a given operating rate: 2048/480 at 48 kHz,
/// scaled to the nearest power of two below, sqrt-Hann analysis.
inline StftConfig default_stft_config(int sample_rate_hz) {
    if (sample_rate_hz <= 0) throw std::invalid_argument("sample rate must be positive");
    double ideal = 2048.0 * sample_rate_hz / 48000.0;
    int win = 64;
    while (win * 2 <= static_cast<int>(ideal + 0.5) && win < 8192) win *= 2;
    StftConfig cfg;
    cfg.window_length = win;
    cfg.fft_length = win;
    cfg.hop_length = std::max(1, static_cast<int>(static_cast<std::int64_t>(win) * 480 / 2048));
    cfg.window_kind = WindowKind::SqrtHann;
    return cfg;
}

}  // namespace promptsep
