// Copyright 2026 the cuside authors
// WAV file I/O, PCM 16-bit little-endian only.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cuside/common.hpp"

namespace cuside::signal {

// Multi-channel audio in [-1, 1], one vector per channel, equal lengths.
struct Waveform {
    std::vector<std::vector<Real>> samples;  // [channel][sample]
    int sample_rate = 16000;

    size_t num_channels() const { return samples.size(); }
    size_t num_samples() const { return samples.empty() ? 0 : samples[0].size(); }

    void validate() const {
        require(sample_rate > 0, "Waveform: sample_rate must be positive");
        for (const auto& ch : samples) {
            require(ch.size() == num_samples(), "Waveform: channels differ in length");
            require(all_finite(ch), "Waveform: non-finite sample");
        }
    }

    static Waveform mono(std::vector<Real> s, int sr = 16000) {
        Waveform w;
        w.samples.push_back(std::move(s));
        w.sample_rate = sr;
        return w;
    }
};

namespace detail {

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void write_u16(std::ostream& os, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

}  // namespace detail

inline Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "read_wav: cannot open " + path);

    char tag[5] = {0};
    is.read(tag, 4);
    require(std::strncmp(tag, "RIFF", 4) == 0, "read_wav: not a RIFF file: " + path);
    detail::read_u32(is);  // riff size
    is.read(tag, 4);
    require(std::strncmp(tag, "WAVE", 4) == 0, "read_wav: not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    bool have_fmt = false;
    std::vector<int16_t> pcm;
    bool have_data = false;

    while (is.peek() != EOF) {
        is.read(tag, 4);
        if (!is.good()) break;
        uint32_t chunk_size = detail::read_u32(is);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            format = detail::read_u16(is);
            channels = detail::read_u16(is);
            sample_rate = detail::read_u32(is);
            detail::read_u32(is);  // byte rate
            detail::read_u16(is);  // block align
            bits = detail::read_u16(is);
            if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            require(have_fmt, "read_wav: data chunk before fmt in " + path);
            pcm.resize(chunk_size / 2);
            is.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
            require(is.gcount() == static_cast<std::streamsize>(pcm.size() * 2),
                    "read_wav: truncated data chunk in " + path);
            have_data = true;
        } else {
            is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }
    require(have_fmt && have_data, "read_wav: missing fmt or data chunk in " + path);
    require(format == 1, "read_wav: only PCM encoding supported (got format " +
                             std::to_string(format) + ") in " + path);
    require(bits == 16, "read_wav: only 16-bit samples supported (got " +
                            std::to_string(bits) + "-bit) in " + path);
    require(channels >= 1, "read_wav: zero channels in " + path);

    Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    const size_t frames = pcm.size() / channels;
    w.samples.assign(channels, std::vector<Real>(frames));
    for (size_t i = 0; i < frames; ++i)
        for (size_t c = 0; c < channels; ++c)
            w.samples[c][i] = static_cast<Real>(pcm[i * channels + c]) / 32768.0;
    return w;
}

inline void write_wav(const std::string& path, const Waveform& w) {
    w.validate();
    require(w.num_channels() >= 1, "write_wav: no channels");
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "write_wav: cannot open " + path);

    const size_t frames = w.num_samples();
    const uint16_t channels = static_cast<uint16_t>(w.num_channels());
    const uint32_t data_bytes = static_cast<uint32_t>(frames * channels * 2);

    os.write("RIFF", 4);
    detail::write_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::write_u32(os, 16);
    detail::write_u16(os, 1);  // PCM
    detail::write_u16(os, channels);
    detail::write_u32(os, static_cast<uint32_t>(w.sample_rate));
    detail::write_u32(os, static_cast<uint32_t>(w.sample_rate) * channels * 2);
    detail::write_u16(os, static_cast<uint16_t>(channels * 2));
    detail::write_u16(os, 16);
    os.write("data", 4);
    detail::write_u32(os, data_bytes);

    for (size_t i = 0; i < frames; ++i) {
        for (size_t c = 0; c < channels; ++c) {
            Real x = std::clamp(w.samples[c][i], -1.0, 1.0);
            long q = std::lround(x * 32768.0);
            q = std::clamp(q, -32768L, 32767L);
            detail::write_u16(os, static_cast<uint16_t>(static_cast<int16_t>(q)));
        }
    }
    require(os.good(), "write_wav: write failed for " + path);
}

}  // namespace cuside::signal
