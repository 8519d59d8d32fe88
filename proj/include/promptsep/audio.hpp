// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace promptsep {

/// Mono waveform plus sample rate. The universal I/O currency of the library;
/// samples are nominally in [-1, 1] but nothing enforces that.
struct AudioBuffer {
    std::vector<double> samples;
    int sample_rate_hz = 0;

    AudioBuffer() = default;
    AudioBuffer(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate_hz(rate) {}

    std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
    double duration_s() const {
        return sample_rate_hz > 0 ? static_cast<double>(size()) / sample_rate_hz : 0.0;
    }
};

inline void validate_audio(const AudioBuffer& a, bool allow_empty = true) {
    if (a.sample_rate_hz <= 0) throw std::invalid_argument("sample rate must be positive");
    if (!allow_empty && a.samples.empty()) throw std::invalid_argument("empty signal");
    for (double s : a.samples)
        if (!std::isfinite(s)) throw std::invalid_argument("non-finite input");
}

inline double energy(const AudioBuffer& a) {
    double e = 0.0;
    for (double s : a.samples) e += s * s;
    return e;
}

inline double mean_power(const AudioBuffer& a) {
    return a.samples.empty() ? 0.0 : energy(a) / static_cast<double>(a.samples.size());
}

inline double rms(const AudioBuffer& a) { return std::sqrt(mean_power(a)); }

/// Scale to unit RMS in place. Throws on (near-)silence since the scale
/// factor would blow up; callers are expected to reject silent draws first.
inline void normalize_rms(AudioBuffer& a, double silence_rms = 1e-6) {
    double r = rms(a);
    if (r < silence_rms) throw std::invalid_argument("cannot RMS-normalize silent audio");
    for (double& s : a.samples) s /= r;
}

inline double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace promptsep
