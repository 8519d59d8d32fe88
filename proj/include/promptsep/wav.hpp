// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/audio.hpp"

namespace promptsep {
namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    b.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    b.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}
inline void wr_u16(std::vector<unsigned char>& b, std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace detail

/// Read a RIFF/WAV file. Supports 16-bit and 24-bit PCM and 32-bit IEEE
/// float; multichannel files are reduced to their first channel.
inline AudioBuffer read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open WAV file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + pos;
        std::uint32_t chunk_len = detail::rd_u32(hdr + 4);
        const unsigned char* body = hdr + 8;
        if (pos + 8 + chunk_len > bytes.size()) chunk_len = static_cast<std::uint32_t>(bytes.size() - pos - 8);
        if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
            format = detail::rd_u16(body);
            channels = detail::rd_u16(body + 2);
            rate = detail::rd_u32(body + 4);
            bits = detail::rd_u16(body + 14);
            if (format == 0xfffe && chunk_len >= 40)  // WAVE_FORMAT_EXTENSIBLE
                format = detail::rd_u16(body + 24);
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = body;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }
    if (!data) throw std::runtime_error("WAV file has no data chunk: " + path);
    if (channels == 0 || rate == 0) throw std::runtime_error("WAV file has no fmt chunk: " + path);

    const std::uint32_t bytes_per_sample = bits / 8;
    if (bytes_per_sample == 0) throw std::runtime_error("WAV: zero sample width: " + path);
    const std::uint32_t frame_bytes = bytes_per_sample * channels;
    const std::uint32_t frames = frame_bytes ? data_len / frame_bytes : 0;

    AudioBuffer out;
    out.sample_rate_hz = static_cast<int>(rate);
    out.samples.resize(frames);

    for (std::uint32_t i = 0; i < frames; ++i) {
        const unsigned char* p = data + static_cast<std::size_t>(i) * frame_bytes;  // channel 0
        if (format == 1 && bits == 16) {
            std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
            out.samples[i] = static_cast<double>(s) / 32768.0;
        } else if (format == 1 && bits == 24) {
            std::int32_t s = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
            if (s & 0x800000) s |= ~0xffffff;  // sign extend
            out.samples[i] = static_cast<double>(s) / 8388608.0;
        } else if (format == 3 && bits == 32) {
            float s;
            std::memcpy(&s, p, 4);
            out.samples[i] = static_cast<double>(s);
        } else {
            throw std::runtime_error("unsupported WAV encoding (format=" + std::to_string(format) +
                                     ", bits=" + std::to_string(bits) + "): " + path);
        }
    }
    return out;
}

/// Write mono 32-bit float WAV.
inline void write_wav(const std::string& path, const AudioBuffer& audio) {
    if (audio.sample_rate_hz <= 0) throw std::invalid_argument("write_wav: bad sample rate");
    std::vector<unsigned char> b;
    const std::uint32_t n = static_cast<std::uint32_t>(audio.samples.size());
    const std::uint32_t data_len = n * 4;

    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    detail::wr_u32(b, 4 + (8 + 16) + (8 + 4) + (8 + data_len));
    b.insert(b.end(), {'W', 'A', 'V', 'E'});

    b.insert(b.end(), {'f', 'm', 't', ' '});
    detail::wr_u32(b, 16);
    detail::wr_u16(b, 3);  // IEEE float
    detail::wr_u16(b, 1);
    detail::wr_u32(b, static_cast<std::uint32_t>(audio.sample_rate_hz));
    detail::wr_u32(b, static_cast<std::uint32_t>(audio.sample_rate_hz) * 4);
    detail::wr_u16(b, 4);
    detail::wr_u16(b, 32);

    b.insert(b.end(), {'f', 'a', 'c', 't'});
    detail::wr_u32(b, 4);
    detail::wr_u32(b, n);

    b.insert(b.end(), {'d', 'a', 't', 'a'});
    detail::wr_u32(b, data_len);
    for (double s : audio.samples) {
        float fs = static_cast<float>(s);
        unsigned char raw[4];
        std::memcpy(raw, &fs, 4);
        b.insert(b.end(), raw, raw + 4);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open WAV file for writing: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) throw std::runtime_error("short write to WAV file: " + path);
}

}  // namespace promptsep
