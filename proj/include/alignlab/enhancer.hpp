#ifndef ALIGNLAB_ENHANCER_HPP
#define ALIGNLAB_ENHANCER_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "alignlab/core.hpp"
#include "alignlab/signal.hpp"

namespace alignlab {

inline constexpr std::size_t kDefaultTaps = 17;

/// Trainable FIR enhancer: y = gain * (taps * x), centered, same length.
struct EnhancerParams {
    std::vector<double> taps;
    double gain = 1.0;

    std::size_t num_taps() const noexcept { return taps.size(); }
    std::size_t size() const noexcept { return taps.size() + 1; }

    /// Flattened parameter vector: taps followed by gain.
    std::vector<double> flatten() const {
        std::vector<double> v(taps);
        v.push_back(gain);
        return v;
    }

    static EnhancerParams unflatten(std::span<const double> v) {
        if (v.size() < 2) throw Error("enhancer: parameter vector too short");
        return {std::vector<double>(v.begin(), v.end() - 1), v.back()};
    }

    void validate() const {
        const std::size_t K = taps.size();
        if (K < 3 || K > 127 || K % 2 == 0) throw Error("enhancer: tap count must be odd and in [3, 127]");
        if (!all_finite(taps) || !std::isfinite(gain)) throw Error("enhancer: non-finite parameter");
    }

    friend bool operator==(const EnhancerParams&, const EnhancerParams&) = default;
};

/// Centered delta plus uniform jitter of magnitude `noise` on every tap.
inline EnhancerParams init_params(std::uint64_t seed, std::size_t K = kDefaultTaps, double noise = 1e-3) {
    if (K < 3 || K > 127 || K % 2 == 0) throw Error("init_params: K must be odd and in [3, 127]");
    EnhancerParams p{std::vector<double>(K, 0.0), 1.0};
    p.taps[K / 2] = 1.0;
    if (noise != 0.0) {
        Rng rng(seed);
        for (double& t : p.taps) t += rng.uniform(-noise, noise);
    }
    return p;
}

namespace detail {

// Unscaled filter output: c[t] = sum_k taps[k] * x[t + k - K/2], zero outside.
inline std::vector<double> fir_same(std::span<const double> taps, std::span<const double> x) {
    const auto K = static_cast<long long>(taps.size());
    const auto T = static_cast<long long>(x.size());
    const long long half = K / 2;
    std::vector<double> c(x.size(), 0.0);
    for (long long t = 0; t < T; ++t) {
        const long long k0 = std::max<long long>(0, half - t);
        const long long k1 = std::min<long long>(K, T - t + half);
        double acc = 0.0;
        for (long long k = k0; k < k1; ++k) acc += taps[k] * x[t + k - half];
        c[t] = acc;
    }
    return c;
}

}  // namespace detail

inline Waveform enhance(const EnhancerParams& params, const Waveform& noisy) {
    if (noisy.size() < params.num_taps()) throw Error("enhance: signal shorter than filter");
    Waveform out(detail::fir_same(params.taps, noisy.view()));
    for (double& v : out.samples) v *= params.gain;
    return out;
}

struct EnhancerGrad {
    std::vector<double> taps;
    double gain = 0.0;

    std::vector<double> flatten() const {
        std::vector<double> v(taps);
        v.push_back(gain);
        return v;
    }
};

/// Parameter gradients given dL/d(output).
inline EnhancerGrad enhance_backward(const EnhancerParams& params, const Waveform& noisy,
                                     std::span<const double> grad_out) {
    if (grad_out.size() != noisy.size()) throw Error("enhance_backward: gradient length mismatch");
    if (noisy.size() < params.num_taps()) throw Error("enhance_backward: signal shorter than filter");
    const auto K = static_cast<long long>(params.num_taps());
    const auto T = static_cast<long long>(noisy.size());
    const long long half = K / 2;

    EnhancerGrad g{std::vector<double>(params.num_taps(), 0.0), 0.0};
    const auto filtered = detail::fir_same(params.taps, noisy.view());
    g.gain = dot(filtered, grad_out);
    for (long long k = 0; k < K; ++k) {
        const long long t0 = std::max<long long>(0, half - k);
        const long long t1 = std::min<long long>(T, T - k + half);
        double acc = 0.0;
        for (long long t = t0; t < t1; ++t) acc += grad_out[t] * noisy[t + k - half];
        g.taps[k] = params.gain * acc;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoint: "alignlab-ckpt v1 K=<K>", then K taps and the gain, one per
// line, 17 significant digits.

inline std::string format_checkpoint(const EnhancerParams& p) {
    std::string out = "alignlab-ckpt v1 K=" + std::to_string(p.num_taps()) + "\n";
    char buf[64];
    for (double v : p.flatten()) {
        std::snprintf(buf, sizeof buf, "%.17g\n", v);
        out += buf;
    }
    return out;
}

inline EnhancerParams parse_checkpoint(const std::string& text) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header)) throw Error("checkpoint: empty file");
    constexpr std::string_view prefix = "alignlab-ckpt v1 K=";
    if (header.rfind(prefix, 0) != 0) throw Error("checkpoint: bad header '" + header + "'");
    std::size_t K = 0;
    try {
        std::size_t used = 0;
        K = std::stoul(header.substr(prefix.size()), &used);
        if (prefix.size() + used != header.size()) throw Error("checkpoint: bad header");
    } catch (const std::logic_error&) {
        throw Error("checkpoint: bad tap count in header");
    }
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            std::size_t used = 0;
            values.push_back(std::stod(line, &used));
            if (used != line.size()) throw Error("checkpoint: trailing characters on line '" + line + "'");
        } catch (const std::logic_error&) {
            throw Error("checkpoint: unparsable value '" + line + "'");
        }
    }
    if (values.size() != K + 1) throw Error("checkpoint: expected " + std::to_string(K + 1) + " values");
    auto p = EnhancerParams::unflatten(values);
    p.validate();
    return p;
}

inline void save_checkpoint(const std::string& path, const EnhancerParams& p) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << format_checkpoint(p);
    if (!out) throw Error("failed writing checkpoint: " + path);
}

inline EnhancerParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace alignlab

#endif  // ALIGNLAB_ENHANCER_HPP
