#ifndef ALIGNLAB_ENCODER_HPP
#define ALIGNLAB_ENCODER_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "alignlab/core.hpp"
#include "alignlab/signal.hpp"

namespace alignlab {

/// Per-frame analysis ahead of the projection. `waveform` projects the raw
/// frame samples; `spectral` projects log-compressed Hann-windowed DFT power
/// at `spectral_bins` evenly strided bins, which is insensitive to sub-frame
/// phase shifts.
enum class Frontend { waveform, spectral };

inline std::string to_string(Frontend f) { return f == Frontend::waveform ? "waveform" : "spectral"; }

inline Frontend parse_frontend(std::string_view s) {
    if (s == "waveform") return Frontend::waveform;
    if (s == "spectral") return Frontend::spectral;
    throw Error("unknown encoder frontend '" + std::string(s) + "' (valid: waveform, spectral)");
}

struct EncoderConfig {
    std::size_t hop = 320;
    std::size_t window = 320;
    std::size_t dim = 16;
    double beta = 1.0;  ///< positional-encoding scale
    std::uint64_t seed = 0;
    bool normalize = true;
    Frontend frontend = Frontend::waveform;
    std::size_t spectral_bins = 32;

    /// Width of the vector the projection W acts on.
    std::size_t feature_width() const noexcept { return frontend == Frontend::waveform ? window : spectral_bins; }

    void validate() const {
        if (hop == 0 || window == 0) throw Error("encoder: hop and window must be >= 1");
        if (dim == 0 || dim % 2 != 0) throw Error("encoder: dimension must be even and positive");
        if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error("encoder: beta must be finite and >= 0");
        if (frontend == Frontend::spectral && (spectral_bins == 0 || spectral_bins > window / 2))
            throw Error("encoder: spectral_bins must be in [1, window/2]");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// n x d frame-level representations.
struct RepSequence {
    Matrix data;
    bool normalized = false;

    std::size_t frames() const noexcept { return data.rows(); }
    std::size_t dim() const noexcept { return data.cols(); }

    friend bool operator==(const RepSequence&, const RepSequence&) = default;
};

/// Sinusoidal absolute position code: (sin, cos) pairs at geometric frequencies.
inline std::vector<double> positional_encoding(std::size_t index, std::size_t dim) {
    if (dim % 2 != 0) throw Error("positional_encoding: odd dimension");
    std::vector<double> pe(dim);
    const double pos = static_cast<double>(index);
    for (std::size_t k = 0; k < dim / 2; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * k) / static_cast<double>(dim));
        pe[2 * k] = std::sin(pos * freq);
        pe[2 * k + 1] = std::cos(pos * freq);
    }
    return pe;
}

/// Divide each nonzero row by its L2 norm. Zero rows pass through unchanged.
inline RepSequence l2_normalize(const RepSequence& x) {
    RepSequence out{x.data, true};
    for (std::size_t i = 0; i < out.data.rows(); ++i) {
        auto row = out.data.row(i);
        const double norm = l2_norm(row);
        if (norm == 0.0) continue;
        for (double& v : row) v /= norm;
    }
    return out;
}

/// Frozen per-frame encoder: h_i = tanh(W f_i + b) + beta * PE(i), optionally
/// L2-normalized per row, where f_i is frame i (or its spectral features).
/// Frames do not see each other, so the positional code is the only
/// cross-position signal. Weights are drawn from `seed` at construction and
/// never change.
class FrozenEncoder {
public:
    explicit FrozenEncoder(EncoderConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t width = cfg_.feature_width();
        Rng rng(cfg_.seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(width));
        weights_ = Matrix(cfg_.dim, width);
        for (double& v : weights_.flat()) v = rng.uniform(-bound, bound);
        bias_.resize(cfg_.dim);
        for (double& v : bias_) v = rng.uniform(-bound, bound);
        if (cfg_.frontend == Frontend::spectral) build_dft_basis();
    }

    const EncoderConfig& config() const noexcept { return cfg_; }
    const Matrix& weights() const noexcept { return weights_; }
    std::span<const double> bias() const noexcept { return bias_; }

    std::size_t frames_for(std::size_t T) const noexcept { return frame_count(T, cfg_.hop, cfg_.window); }

    RepSequence encode(const Waveform& w) const {
        if (w.size() < cfg_.window) throw Error("encode: signal shorter than one window");
        const std::size_t n = frames_for(w.size());
        RepSequence out{Matrix(n, cfg_.dim), cfg_.normalize};
        Scratch s(cfg_);
        for (std::size_t i = 0; i < n; ++i) {
            auto h = out.data.row(i);
            hidden(w, i, h, s);
            if (cfg_.normalize) normalize_row(h);
        }
        return out;
    }

    /// Gradient of <grad_reps, encode(w)> with respect to the samples of w.
    /// Samples not covered by any complete frame get zero.
    std::vector<double> encode_backward(const Waveform& w, const Matrix& grad_reps) const {
        if (w.size() < cfg_.window) throw Error("encode_backward: signal shorter than one window");
        const std::size_t n = frames_for(w.size());
        if (grad_reps.rows() != n || grad_reps.cols() != cfg_.dim)
            throw Error("encode_backward: gradient shape mismatch");

        const std::size_t width = cfg_.feature_width();
        std::vector<double> grad(w.size(), 0.0);
        std::vector<double> h(cfg_.dim), dh(cfg_.dim), dfeat(width);
        Scratch s(cfg_);
        for (std::size_t i = 0; i < n; ++i) {
            hidden(w, i, h, s);
            const auto g = grad_reps.row(i);
            std::copy(g.begin(), g.end(), dh.begin());

            if (cfg_.normalize) {
                const double norm = l2_norm(h);
                if (norm > 0.0) {
                    // d(h/|h|) = (I - y y^T) / |h|
                    const double proj = dot(h, g) / (norm * norm);
                    for (std::size_t k = 0; k < cfg_.dim; ++k) dh[k] = (g[k] - h[k] * proj) / norm;
                }
            }

            for (std::size_t k = 0; k < cfg_.dim; ++k) {
                const double z = std::tanh(s.pre[k]);
                dh[k] *= 1.0 - z * z;
            }

            std::fill(dfeat.begin(), dfeat.end(), 0.0);
            for (std::size_t k = 0; k < cfg_.dim; ++k) {
                if (dh[k] == 0.0) continue;
                const auto wk = weights_.row(k);
                for (std::size_t t = 0; t < width; ++t) dfeat[t] += dh[k] * wk[t];
            }

            double* out = grad.data() + i * cfg_.hop;
            if (cfg_.frontend == Frontend::waveform) {
                for (std::size_t t = 0; t < cfg_.window; ++t) out[t] += dfeat[t];
                continue;
            }
            // feature = log1p(re^2 + im^2)
            for (std::size_t b = 0; b < cfg_.spectral_bins; ++b) {
                const double dp = dfeat[b] / (1.0 + s.power[b]);
                const double dre = 2.0 * s.re[b] * dp;
                const double dim = 2.0 * s.im[b] * dp;
                const auto c = cos_basis_.row(b);
                const auto sn = sin_basis_.row(b);
                for (std::size_t t = 0; t < cfg_.window; ++t) out[t] += dre * c[t] + dim * sn[t];
            }
        }
        return grad;
    }

private:
    struct Scratch {
        explicit Scratch(const EncoderConfig& c)
            : pre(c.dim), feat(c.feature_width()), re(c.spectral_bins), im(c.spectral_bins), power(c.spectral_bins) {}
        std::vector<double> pre, feat, re, im, power;
    };

    void build_dft_basis() {
        const std::size_t N = cfg_.window;
        const std::size_t stride = (N / 2) / cfg_.spectral_bins;
        cos_basis_ = Matrix(cfg_.spectral_bins, N);
        sin_basis_ = Matrix(cfg_.spectral_bins, N);
        for (std::size_t b = 0; b < cfg_.spectral_bins; ++b) {
            const double k = static_cast<double>(1 + b * stride);
            for (std::size_t t = 0; t < N; ++t) {
                const double hann = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(t) / static_cast<double>(N));
                const double phase = 2.0 * M_PI * k * static_cast<double>(t) / static_cast<double>(N);
                cos_basis_(b, t) = hann * std::cos(phase);
                sin_basis_(b, t) = -hann * std::sin(phase);
            }
        }
    }

    // Unnormalized row i: h = tanh(W f_i + b) + beta PE(i). Leaves the
    // pre-activation (and spectral intermediates) in `s`.
    void hidden(const Waveform& w, std::size_t i, std::span<double> h, Scratch& s) const {
        const std::span<const double> frame(w.samples.data() + i * cfg_.hop, cfg_.window);
        std::span<const double> feat = frame;
        if (cfg_.frontend == Frontend::spectral) {
            for (std::size_t b = 0; b < cfg_.spectral_bins; ++b) {
                s.re[b] = dot(cos_basis_.row(b), frame);
                s.im[b] = dot(sin_basis_.row(b), frame);
                s.power[b] = s.re[b] * s.re[b] + s.im[b] * s.im[b];
                s.feat[b] = std::log1p(s.power[b]);
            }
            feat = s.feat;
        }
        for (std::size_t k = 0; k < cfg_.dim; ++k) {
            s.pre[k] = dot(weights_.row(k), feat) + bias_[k];
            h[k] = std::tanh(s.pre[k]);
        }
        if (cfg_.beta != 0.0) {
            const auto pe = positional_encoding(i, cfg_.dim);
            for (std::size_t k = 0; k < cfg_.dim; ++k) h[k] += cfg_.beta * pe[k];
        }
    }

    static void normalize_row(std::span<double> h) {
        const double norm = l2_norm(h);
        if (norm == 0.0) return;
        for (double& v : h) v /= norm;
    }

    EncoderConfig cfg_;
    Matrix weights_;
    std::vector<double> bias_;
    Matrix cos_basis_;
    Matrix sin_basis_;
};

inline RepSequence encode(const Waveform& w, const EncoderConfig& cfg) { return FrozenEncoder(cfg).encode(w); }

inline std::vector<double> encode_backward(const Waveform& w, const EncoderConfig& cfg, const Matrix& grad_reps) {
    return FrozenEncoder(cfg).encode_backward(w, grad_reps);
}

}  // namespace alignlab

#endif  // ALIGNLAB_ENCODER_HPP
