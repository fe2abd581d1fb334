#ifndef ALIGNLAB_PERTURB_HPP
#define ALIGNLAB_PERTURB_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "alignlab/core.hpp"
#include "alignlab/encoder.hpp"
#include "alignlab/signal.hpp"

namespace alignlab {

/// Frame quantum for padding and trimming (20 ms at 16 kHz).
inline constexpr std::size_t kFrameHop = 320;

struct Range {
    double lo;
    double hi;
    bool valid() const noexcept { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }
    friend bool operator==(const Range&, const Range&) = default;
};

inline constexpr Range kDefaultPadRange{0.02, 0.05};
inline constexpr Range kDefaultSpeedRange{0.9, 1.1};

/// Pad fraction, pad length in samples, and frames to trim from each end.
struct PadPlan {
    double fraction = 0.0;
    std::size_t pad_samples = 0;
    std::size_t trim_frames = 0;
};

inline double sample_pad_fraction(Rng& rng, Range range = kDefaultPadRange) {
    return rng.uniform(range.lo, range.hi);
}

/// L_p = floor(p*T/320)*320 and r = L_p/320.
inline PadPlan pad_length(std::size_t T, double p) {
    if (T == 0) throw Error("pad_length: T must be >= 1");
    if (!(p >= 0.0 && p <= 1.0)) throw Error("pad_length: p must be in [0, 1]");
    const auto r = static_cast<std::size_t>(std::floor(p * static_cast<double>(T) / static_cast<double>(kFrameHop)));
    return {p, r * kFrameHop, r};
}

/// [0 x pad, w, 0 x pad].
inline Waveform zero_pad(const Waveform& w, std::size_t pad) {
    Waveform out(w.size() + 2 * pad);
    std::copy(w.samples.begin(), w.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(pad));
    return out;
}

/// Drop `r` frames from both ends. Returns a copy; the input is untouched.
inline RepSequence trim_frames(const RepSequence& x, std::size_t r) {
    if (x.frames() <= 2 * r) throw Error("trim exceeds sequence");
    RepSequence out{Matrix(x.frames() - 2 * r, x.dim()), x.normalized};
    for (std::size_t i = 0; i < out.frames(); ++i)
        std::copy_n(x.data.row(i + r).begin(), x.dim(), out.data.row(i).begin());
    return out;
}

// ---------------------------------------------------------------------------
// Speed perturbation: rate change by windowed-sinc interpolation. Tempo and
// pitch both scale by alpha; output length is round(T / alpha).

inline constexpr int kSincZeroCrossings = 16;
inline constexpr double kKaiserBeta = 8.6;

inline double sample_speed_factor(Rng& rng, Range range = kDefaultSpeedRange) {
    return rng.uniform(range.lo, range.hi);
}

namespace detail {

/// Kaiser-windowed sinc for unit cutoff, tabulated on [0, zero crossings]
/// at `kKernelOversample` points per zero crossing.
inline constexpr int kKernelOversample = 512;

inline const std::vector<double>& sinc_kernel_table() {
    static const std::vector<double> table = [] {
        const int n = kSincZeroCrossings * kKernelOversample + 2;
        std::vector<double> t(n, 0.0);
        const double norm = std::cyl_bessel_i(0.0, kKaiserBeta);
        for (int i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / kKernelOversample;
            const double u = x / kSincZeroCrossings;
            if (u >= 1.0) break;
            const double win = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - u * u)) / norm;
            const double sinc = i == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
            t[i] = sinc * win;
        }
        return t;
    }();
    return table;
}

inline double sinc_kernel(const std::vector<double>& table, double x) noexcept {
    const double pos = std::abs(x) * kKernelOversample;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= table.size()) return 0.0;
    const double frac = pos - static_cast<double>(i);
    return table[i] + frac * (table[i + 1] - table[i]);
}

}  // namespace detail

inline Waveform speed_perturb(const Waveform& w, double alpha) {
    if (!(alpha >= 0.5 && alpha <= 2.0)) throw Error("speed_perturb: alpha must be in [0.5, 2.0]");
    check_waveform(w, "speed_perturb");
    if (alpha == 1.0) return w;

    const auto& table = detail::sinc_kernel_table();
    const std::size_t T = w.size();
    const auto out_len = static_cast<std::size_t>(std::max<long long>(1, std::llround(static_cast<double>(T) / alpha)));
    // Anti-aliasing cutoff (fraction of input Nyquist) when compressing time.
    const double cutoff = std::min(1.0, 1.0 / alpha);
    const double half_width = kSincZeroCrossings / cutoff;

    Waveform out(out_len);
    for (std::size_t k = 0; k < out_len; ++k) {
        const double center = static_cast<double>(k) * alpha;
        const auto lo = std::max<long long>(0, static_cast<long long>(std::ceil(center - half_width)));
        const auto hi = std::min<long long>(static_cast<long long>(T) - 1, static_cast<long long>(std::floor(center + half_width)));
        double acc = 0.0;
        for (long long j = lo; j <= hi; ++j) {
            const double dt = center - static_cast<double>(j);
            acc += w[static_cast<std::size_t>(j)] * detail::sinc_kernel(table, cutoff * dt);
        }
        out[k] = cutoff * acc;
    }
    return out;
}

}  // namespace alignlab

#endif  // ALIGNLAB_PERTURB_HPP
