#ifndef ALIGNLAB_SIGNAL_HPP
#define ALIGNLAB_SIGNAL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alignlab/core.hpp"

namespace alignlab {

inline constexpr int kSampleRate = 16000;

/// Mono audio at 16 kHz. Samples are dimensionless, nominally in [-1, 1].
struct Waveform {
    std::vector<double> samples;

    Waveform() = default;
    explicit Waveform(std::vector<double> s) : samples(std::move(s)) {}
    explicit Waveform(std::size_t n, double fill = 0.0) : samples(n, fill) {}

    static constexpr int sample_rate = kSampleRate;

    std::size_t size() const noexcept { return samples.size(); }
    double operator[](std::size_t i) const noexcept { return samples[i]; }
    double& operator[](std::size_t i) noexcept { return samples[i]; }
    std::span<const double> view() const noexcept { return samples; }

    friend bool operator==(const Waveform&, const Waveform&) = default;
};

inline void check_waveform(const Waveform& w, const char* what) {
    if (w.size() == 0) throw Error(std::string(what) + ": empty waveform");
    if (!all_finite(w.view())) throw Error(std::string(what) + ": non-finite sample");
}

inline double rms(std::span<const double> x) noexcept {
    if (x.empty()) return 0.0;
    return std::sqrt(dot(x, x) / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// WAV I/O: RIFF, PCM16LE, mono, 16 kHz.

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_le16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace detail

/// Parse an in-memory WAV file. Unknown chunks are skipped; no resampling.
inline Waveform parse_wav(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw Error("malformed WAV header: missing RIFF/WAVE tag");

    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= n) {
        const std::uint32_t chunk_size = detail::read_le32(p + pos + 4);
        const unsigned char* body = p + pos + 8;
        if (pos + 8 + chunk_size > n && std::memcmp(p + pos, "data", 4) != 0)
            throw Error("malformed WAV header: truncated chunk");

        if (std::memcmp(p + pos, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw Error("malformed WAV header: short fmt chunk");
            const auto format = detail::read_le16(body);
            const auto channels = detail::read_le16(body + 2);
            const auto rate = detail::read_le32(body + 4);
            const auto bits = detail::read_le16(body + 14);
            if (format != 1) throw Error("unsupported WAV format (PCM only)");
            if (channels != 1) throw Error("unsupported channel count: " + std::to_string(channels));
            if (bits != 16) throw Error("unsupported bit depth: " + std::to_string(bits));
            if (rate != kSampleRate) throw Error("unsupported sample rate: " + std::to_string(rate));
            have_fmt = true;
        } else if (std::memcmp(p + pos, "data", 4) == 0) {
            if (!have_fmt) throw Error("malformed WAV header: data chunk before fmt chunk");
            const std::size_t avail = std::min<std::size_t>(chunk_size, n - pos - 8);
            const std::size_t count = avail / 2;
            if (count == 0) throw Error("malformed WAV: empty data chunk");
            Waveform w(count);
            for (std::size_t i = 0; i < count; ++i) {
                const auto raw = static_cast<std::int16_t>(detail::read_le16(body + 2 * i));
                w[i] = static_cast<double>(raw) / 32768.0;
            }
            return w;
        }
        pos += 8 + chunk_size + (chunk_size & 1U);
    }
    throw Error("malformed WAV: no data chunk");
}

inline Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open WAV file: " + path);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    try {
        return parse_wav(bytes);
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

inline std::int16_t quantize_pcm16(double x) noexcept {
    constexpr double hi = 1.0 - 0x1.0p-15;
    const double c = std::clamp(x, -1.0, hi);
    return static_cast<std::int16_t>(std::lround(c * 32768.0));
}

/// Serialize with the canonical 44-byte header.
inline std::string encode_wav(const Waveform& w) {
    if (!all_finite(w.view())) throw Error("write_wav: non-finite sample");
    const auto data_bytes = static_cast<std::uint32_t>(w.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    detail::put_le32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    detail::put_le32(out, 16);
    detail::put_le16(out, 1);   // PCM
    detail::put_le16(out, 1);   // mono
    detail::put_le32(out, kSampleRate);
    detail::put_le32(out, kSampleRate * 2);
    detail::put_le16(out, 2);   // block align
    detail::put_le16(out, 16);  // bits per sample
    out += "data";
    detail::put_le32(out, data_bytes);
    for (double x : w.samples) detail::put_le16(out, static_cast<std::uint16_t>(quantize_pcm16(x)));
    return out;
}

inline void write_wav(const std::string& path, const Waveform& w) {
    const std::string bytes = encode_wav(w);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write WAV file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing WAV file: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic audio.

inline std::size_t samples_for(double duration_s) {
    return static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
}

/// Harmonic source with a gliding pitch, a syllabic envelope and one silent
/// gap. Deterministic in `seed`.
inline Waveform synth_speechlike(std::uint64_t seed, double duration_s) {
    if (!(duration_s >= 0.2 && duration_s <= 30.0))
        throw Error("synth_speechlike: duration must be in [0.2, 30] s");
    Rng rng(seed);
    const std::size_t T = samples_for(duration_s);
    const double fs = kSampleRate;

    // Pitch contour: base +- depth stays inside [90, 300] Hz.
    const double base = rng.uniform(120.0, 220.0);
    const double depth = rng.uniform(0.1, 0.35) * std::min(base - 90.0, 300.0 - base);
    const double glide_rate = rng.uniform(0.5, 2.0);
    const double glide_phase = rng.uniform(0.0, 2.0 * M_PI);

    const int harmonics = 3 + static_cast<int>(rng.index(4));
    std::array<double, 6> amp{};
    std::array<double, 6> phase{};
    for (int k = 0; k < harmonics; ++k) {
        amp[k] = rng.uniform(0.5, 1.0) / (1.0 + k);
        phase[k] = rng.uniform(0.0, 2.0 * M_PI);
    }

    const double syllable_rate = rng.uniform(3.0, 6.0);
    const double syllable_phase = rng.uniform(0.0, 2.0 * M_PI);

    // One silent gap of 60-120 ms, away from the edges.
    const std::size_t gap_len = samples_for(rng.uniform(0.06, 0.12));
    const std::size_t gap_start = T / 8 + rng.index(T - T / 4 - gap_len);
    const std::size_t ramp = samples_for(0.005);

    Waveform w(T);
    double theta = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double time = static_cast<double>(t) / fs;
        const double f0 = base + depth * std::sin(2.0 * M_PI * glide_rate * time + glide_phase);
        theta += 2.0 * M_PI * f0 / fs;
        double s = 0.0;
        for (int k = 0; k < harmonics; ++k) s += amp[k] * std::sin((k + 1) * theta + phase[k]);

        double env = 0.55 + 0.45 * std::sin(2.0 * M_PI * syllable_rate * time + syllable_phase);
        if (t >= gap_start && t < gap_start + gap_len) {
            env = 0.0;
        } else if (t + ramp > gap_start && t < gap_start) {
            env *= static_cast<double>(gap_start - t) / static_cast<double>(ramp);
        } else if (t >= gap_start + gap_len && t < gap_start + gap_len + ramp) {
            env *= static_cast<double>(t - gap_start - gap_len) / static_cast<double>(ramp);
        }
        w[t] = env * s;
    }

    double peak = 0.0;
    for (double x : w.samples) peak = std::max(peak, std::abs(x));
    const double target = rng.uniform(0.4, 0.8);
    for (double& x : w.samples) x *= target / peak;
    return w;
}

enum class NoiseKind { white, pink, tonal_babble };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::white: return "white";
        case NoiseKind::pink: return "pink";
        case NoiseKind::tonal_babble: return "tonal-babble";
    }
    return "?";
}

inline NoiseKind parse_noise_kind(std::string_view s) {
    if (s == "white") return NoiseKind::white;
    if (s == "pink") return NoiseKind::pink;
    if (s == "tonal-babble") return NoiseKind::tonal_babble;
    throw Error("unknown noise kind '" + std::string(s) + "' (valid: white, pink, tonal-babble)");
}

/// Stationary noise, RMS normalized to 0.1.
inline Waveform synth_noise(NoiseKind kind, std::uint64_t seed, double duration_s) {
    if (!(duration_s > 0.0 && duration_s <= 600.0)) throw Error("synth_noise: duration out of range");
    Rng rng(seed);
    const std::size_t T = samples_for(duration_s);
    if (T == 0) throw Error("synth_noise: duration shorter than one sample");
    Waveform w(T);

    switch (kind) {
        case NoiseKind::white:
            for (auto& x : w.samples) x = rng.normal();
            break;
        case NoiseKind::pink: {
            // Kellet's economy pink filter over white Gaussian input.
            double b0 = 0, b1 = 0, b2 = 0;
            for (auto& x : w.samples) {
                const double white = rng.normal();
                b0 = 0.99765 * b0 + white * 0.0990460;
                b1 = 0.96300 * b1 + white * 0.2965164;
                b2 = 0.57000 * b2 + white * 1.0526913;
                x = b0 + b1 + b2 + white * 0.1848;
            }
            double mean = 0.0;
            for (double x : w.samples) mean += x;
            mean /= static_cast<double>(T);
            for (auto& x : w.samples) x -= mean;
            break;
        }
        case NoiseKind::tonal_babble: {
            // Eight amplitude-modulated tones spread over 200 Hz - 5 kHz.
            struct Tone { double amp, freq, phase, mod_rate, mod_phase; };
            std::array<Tone, 8> tones{};
            for (auto& tone : tones) {
                tone = {rng.uniform(0.5, 1.0), std::exp(rng.uniform(std::log(200.0), std::log(5000.0))),
                        rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.5, 4.0), rng.uniform(0.0, 2.0 * M_PI)};
            }
            for (std::size_t t = 0; t < T; ++t) {
                const double time = static_cast<double>(t) / kSampleRate;
                double s = 0.0;
                for (const auto& tone : tones) {
                    const double am = 1.0 + 0.6 * std::sin(2.0 * M_PI * tone.mod_rate * time + tone.mod_phase);
                    s += tone.amp * am * std::sin(2.0 * M_PI * tone.freq * time + tone.phase);
                }
                w[t] = s;
            }
            break;
        }
    }

    const double scale = 0.1 / rms(w.view());
    for (auto& x : w.samples) x *= scale;
    return w;
}

/// clean + g * noise, with g set so the mixture has exactly `snr_db`.
/// Noise is read cyclically starting at `noise_offset`.
inline Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                           std::size_t noise_offset = 0) {
    check_waveform(clean, "mix_at_snr");
    check_waveform(noise, "mix_at_snr");
    if (!std::isfinite(snr_db)) throw Error("mix_at_snr: snr_db must be finite (omit mixing for clean input)");
    const std::size_t T = clean.size();
    std::vector<double> segment(T);
    for (std::size_t t = 0; t < T; ++t) segment[t] = noise[(noise_offset + t) % noise.size()];

    const double clean_rms = rms(clean.view());
    const double noise_rms = rms(segment);
    if (clean_rms == 0.0) throw Error("mix_at_snr: all-zero clean signal (SNR undefined)");
    if (noise_rms == 0.0) throw Error("mix_at_snr: all-zero noise segment");

    const double g = clean_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
    Waveform out(T);
    for (std::size_t t = 0; t < T; ++t) out[t] = clean[t] + g * segment[t];
    return out;
}

/// Frames as rows: row i = samples[i*hop, i*hop + window). Tail dropped.
using FrameMatrix = Matrix;

inline std::size_t frame_count(std::size_t T, std::size_t hop, std::size_t window) noexcept {
    return T < window ? 0 : (T - window) / hop + 1;
}

inline FrameMatrix frame(const Waveform& w, std::size_t hop, std::size_t window) {
    if (hop == 0 || window == 0) throw Error("frame: hop and window must be >= 1");
    if (w.size() < window) throw Error("frame: signal shorter than one window");
    const std::size_t n = frame_count(w.size(), hop, window);
    FrameMatrix out(n, window);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(i * hop), window, out.row(i).begin());
    return out;
}

inline constexpr double kSiSnrCapDb = 60.0;

/// Scale-invariant SNR in dB, clamped to [-60, +60]. An all-zero estimate
/// scores the floor.
inline double si_snr(const Waveform& estimate, const Waveform& reference) {
    if (estimate.size() != reference.size()) throw Error("si_snr: length mismatch");
    const double ref_energy = dot(reference.view(), reference.view());
    if (ref_energy == 0.0) throw Error("si_snr: zero reference");
    const double scale = dot(estimate.view(), reference.view()) / ref_energy;
    double target = 0.0, residual = 0.0;
    for (std::size_t t = 0; t < reference.size(); ++t) {
        const double s = scale * reference[t];
        const double e = estimate[t] - s;
        target += s * s;
        residual += e * e;
    }
    if (target == 0.0) return -kSiSnrCapDb;
    if (residual == 0.0) return kSiSnrCapDb;
    return std::clamp(10.0 * std::log10(target / residual), -kSiSnrCapDb, kSiSnrCapDb);
}

}  // namespace alignlab

#endif  // ALIGNLAB_SIGNAL_HPP
