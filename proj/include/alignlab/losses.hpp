#ifndef ALIGNLAB_LOSSES_HPP
#define ALIGNLAB_LOSSES_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "alignlab/core.hpp"
#include "alignlab/encoder.hpp"
#include "alignlab/perturb.hpp"

namespace alignlab {

/// Loss value and its gradient with respect to the enhanced representations.
struct LossOutput {
    double value = 0.0;
    Matrix grad;
};

// ---------------------------------------------------------------------------
// Framewise MSE: (1/m) sum_i ||x'_i - x_i||^2.

inline LossOutput mse_loss(const Matrix& enhanced, const Matrix& clean) {
    if (!enhanced.same_shape(clean)) throw Error("mse_loss: shape mismatch");
    if (enhanced.rows() == 0) throw Error("mse_loss: empty sequence");
    const double m = static_cast<double>(enhanced.rows());
    LossOutput out{0.0, Matrix(enhanced.rows(), enhanced.cols())};
    for (std::size_t i = 0; i < enhanced.rows(); ++i) {
        out.value += squared_distance(enhanced.row(i), clean.row(i));
        for (std::size_t k = 0; k < enhanced.cols(); ++k)
            out.grad(i, k) = 2.0 / m * (enhanced(i, k) - clean(i, k));
    }
    out.value /= m;
    return out;
}

/// MSE against the padded-clean representation with `trim` frames removed
/// from each end.
inline LossOutput ssl_mse_pad_loss(const Matrix& enhanced, const Matrix& padded_clean, std::size_t trim) {
    if (padded_clean.rows() < 2 * trim || padded_clean.rows() - 2 * trim != enhanced.rows())
        throw Error("pad/trim mismatch");
    const RepSequence trimmed = trim_frames(RepSequence{padded_clean, false}, trim);
    return mse_loss(enhanced, trimmed.data);
}

// ---------------------------------------------------------------------------
// Soft-DTW.

/// -gamma * log(sum exp(-v / gamma)), shifted by the minimum for stability.
/// Infinite entries are ignored; all-infinite input yields +inf.
inline double softmin(std::span<const double> values, double gamma) {
    if (!(gamma > 0.0)) throw Error("softmin: gamma must be > 0");
    double lo = kInf;
    for (double v : values)
        if (v < lo) lo = v;
    if (lo == kInf) return kInf;
    // The minimum contributes exactly 1; log1p keeps the remaining mass.
    double rest = 0.0;
    bool skipped = false;
    for (double v : values) {
        if (v == kInf) continue;
        if (v == lo && !skipped) {
            skipped = true;
            continue;
        }
        rest += std::exp(-(v - lo) / gamma);
    }
    return lo - gamma * std::log1p(rest);
}

inline double softmin3(double a, double b, double c, double gamma) {
    const double v[3] = {a, b, c};
    return softmin(v, gamma);
}

/// Forward tables kept for the backward pass.
/// R is (m+1) x (n+1) with R(0,0) = 0 and +inf on the rest of row/column 0.
struct SdtwTables {
    Matrix R;
    Matrix delta;
    double gamma = 0.0;

    std::size_t m() const noexcept { return delta.rows(); }
    std::size_t n() const noexcept { return delta.cols(); }
};

inline Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw Error("soft-DTW: feature dimension mismatch");
    Matrix d(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) d(i, j) = squared_distance(a.row(i), b.row(j));
    return d;
}

struct SdtwResult {
    double value;
    SdtwTables tables;
};

inline SdtwResult sdtw_forward(const Matrix& x, const Matrix& y, double gamma) {
    if (x.rows() == 0 || y.rows() == 0) throw Error("soft-DTW: empty sequence");
    if (!(gamma > 0.0)) throw Error("soft-DTW: gamma must be > 0");
    const std::size_t m = x.rows(), n = y.rows();
    SdtwTables t{Matrix(m + 1, n + 1, kInf), pairwise_sq_dist(x, y), gamma};
    t.R(0, 0) = 0.0;
    for (std::size_t i = 1; i <= m; ++i)
        for (std::size_t j = 1; j <= n; ++j)
            t.R(i, j) = t.delta(i - 1, j - 1) + softmin3(t.R(i - 1, j - 1), t.R(i - 1, j), t.R(i, j - 1), gamma);
    const double value = t.R(m, n);
    return {value, std::move(t)};
}

/// Expected alignment E (m x n) and the gradients of the soft-DTW value
/// with respect to both sequences.
struct SdtwGradients {
    Matrix alignment;
    Matrix grad_x;
    Matrix grad_y;
};

inline SdtwGradients sdtw_backward(const SdtwTables& t, const Matrix& x, const Matrix& y) {
    const std::size_t m = x.rows(), n = y.rows();
    if (t.m() != m || t.n() != n || t.R.rows() != m + 1 || t.R.cols() != n + 1)
        throw Error("sdtw_backward: tables do not match inputs");
    if (squared_distance(x.row(0), y.row(0)) != t.delta(0, 0) ||
        squared_distance(x.row(m - 1), y.row(n - 1)) != t.delta(m - 1, n - 1))
        throw Error("sdtw_backward: stale tables");

    const double gamma = t.gamma;
    // Indices below are 1-based into R; E is stored 0-based.
    Matrix E(m, n, 0.0);
    for (std::size_t i = m; i >= 1; --i) {
        for (std::size_t j = n; j >= 1; --j) {
            if (i == m && j == n) {
                E(i - 1, j - 1) = 1.0;
                continue;
            }
            const double r = t.R(i, j);
            double e = 0.0;
            if (i < m) e += E(i, j - 1) * std::exp((t.R(i + 1, j) - t.delta(i, j - 1) - r) / gamma);
            if (j < n) e += E(i - 1, j) * std::exp((t.R(i, j + 1) - t.delta(i - 1, j) - r) / gamma);
            if (i < m && j < n) e += E(i, j) * std::exp((t.R(i + 1, j + 1) - t.delta(i, j) - r) / gamma);
            E(i - 1, j - 1) = e;
        }
    }

    const std::size_t d = x.cols();
    SdtwGradients g{std::move(E), Matrix(m, d), Matrix(n, d)};
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double e = g.alignment(i, j);
            if (e == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = 2.0 * e * (x(i, k) - y(j, k));
                g.grad_x(i, k) += diff;
                g.grad_y(j, k) -= diff;
            }
        }
    }
    return g;
}

/// sdtw(x, y) - sdtw(x, x)/2 - sdtw(y, y)/2, with the gradient taken with
/// respect to x (both argument slots of the self term).
inline LossOutput sdtw_divergence(const Matrix& x, const Matrix& y, double gamma) {
    const auto xy = sdtw_forward(x, y, gamma);
    const auto xx = sdtw_forward(x, x, gamma);
    const auto yy = sdtw_forward(y, y, gamma);
    const auto gxy = sdtw_backward(xy.tables, x, y);
    const auto gxx = sdtw_backward(xx.tables, x, x);

    LossOutput out{xy.value - 0.5 * xx.value - 0.5 * yy.value, Matrix(x.rows(), x.cols())};
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < x.cols(); ++k)
            out.grad(i, k) = gxy.grad_x(i, k) - 0.5 * (gxx.grad_x(i, k) + gxx.grad_y(i, k));
    return out;
}

inline constexpr double kDefaultGamma = 0.1;

/// Length-normalized soft-DTW loss: divergence / (m + n). With
/// `use_divergence == false` the raw soft-DTW value is normalized instead.
inline LossOutput ssl_softdtw_loss(const Matrix& enhanced, const Matrix& reference, double gamma = kDefaultGamma,
                                   bool use_divergence = true) {
    LossOutput out;
    if (use_divergence) {
        out = sdtw_divergence(enhanced, reference, gamma);
    } else {
        const auto fwd = sdtw_forward(enhanced, reference, gamma);
        out = {fwd.value, sdtw_backward(fwd.tables, enhanced, reference).grad_x};
    }
    const double scale = 1.0 / static_cast<double>(enhanced.rows() + reference.rows());
    out.value *= scale;
    for (double& v : out.grad.flat()) v *= scale;
    return out;
}

// ---------------------------------------------------------------------------
// Classic DTW, used as an oracle for the gamma -> 0 limit.

enum class DtwOracleMode { dp, enumerate };

inline constexpr std::size_t kEnumerateMaxLength = 12;

inline double hard_dtw_oracle(const Matrix& x, const Matrix& y, DtwOracleMode mode) {
    if (x.rows() == 0 || y.rows() == 0) throw Error("hard_dtw_oracle: empty sequence");
    const Matrix delta = pairwise_sq_dist(x, y);
    const std::size_t m = x.rows(), n = y.rows();

    if (mode == DtwOracleMode::dp) {
        Matrix R(m + 1, n + 1, kInf);
        R(0, 0) = 0.0;
        for (std::size_t i = 1; i <= m; ++i)
            for (std::size_t j = 1; j <= n; ++j)
                R(i, j) = delta(i - 1, j - 1) + std::min({R(i - 1, j - 1), R(i - 1, j), R(i, j - 1)});
        return R(m, n);
    }

    if (m + n > kEnumerateMaxLength) throw Error("hard_dtw_oracle: enumerate mode requires m + n <= 12");
    // Depth-first over all monotone paths from (0,0) to (m-1,n-1). Costs are
    // summed along each path in path order, matching the DP's accumulation.
    double best = kInf;
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double cost) {
        cost += delta(i, j);
        if (i == m - 1 && j == n - 1) {
            best = std::min(best, cost);
            return;
        }
        if (i + 1 < m && j + 1 < n) walk(i + 1, j + 1, cost);
        if (i + 1 < m) walk(i + 1, j, cost);
        if (j + 1 < n) walk(i, j + 1, cost);
    };
    walk(0, 0, 0.0);
    return best;
}

}  // namespace alignlab

#endif  // ALIGNLAB_LOSSES_HPP
