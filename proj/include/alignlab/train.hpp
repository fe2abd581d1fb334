#ifndef ALIGNLAB_TRAIN_HPP
#define ALIGNLAB_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "alignlab/core.hpp"
#include "alignlab/encoder.hpp"
#include "alignlab/enhancer.hpp"
#include "alignlab/losses.hpp"
#include "alignlab/perturb.hpp"
#include "alignlab/signal.hpp"

namespace alignlab {

enum class Objective { ssl_mse, ssl_mse_pad, ssl_softdtw };

inline constexpr const char* kObjectiveChoices = "ssl-mse, ssl-mse-pad, ssl-softdtw";

inline std::string to_string(Objective o) {
    switch (o) {
        case Objective::ssl_mse: return "ssl-mse";
        case Objective::ssl_mse_pad: return "ssl-mse-pad";
        case Objective::ssl_softdtw: return "ssl-softdtw";
    }
    return "?";
}

inline Objective parse_objective(std::string_view s) {
    if (s == "ssl-mse") return Objective::ssl_mse;
    if (s == "ssl-mse-pad") return Objective::ssl_mse_pad;
    if (s == "ssl-softdtw") return Objective::ssl_softdtw;
    throw Error("unknown objective '" + std::string(s) + "' (valid: " + kObjectiveChoices + ")");
}

struct TrainConfig {
    Objective objective = Objective::ssl_mse;
    double lr = 1e-4;
    std::size_t effective_batch = 16;
    std::size_t accumulation_steps = 1;
    double clip_max_norm = 1.0;
    double gamma = kDefaultGamma;
    bool softdtw_divergence = true;
    std::vector<double> snr_set{0.0, 5.0, 10.0, 20.0};
    Range pad_range = kDefaultPadRange;
    Range alpha_range = kDefaultSpeedRange;
    std::size_t steps = 0;  ///< 0 = one epoch
    std::size_t eval_interval = 50;
    std::uint64_t seed = 0;
    std::size_t taps = kDefaultTaps;
    double init_noise = 1e-3;
    std::size_t threads = 1;
    bool record_wallclock = false;
    EncoderConfig encoder{};

    std::size_t micro_batch() const noexcept { return effective_batch / accumulation_steps; }

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("train: lr must be > 0");
        if (effective_batch == 0) throw Error("train: effective_batch must be >= 1");
        if (accumulation_steps == 0 || effective_batch % accumulation_steps != 0)
            throw Error("train: effective_batch must be divisible by accumulation_steps");
        if (!(clip_max_norm > 0.0)) throw Error("train: clip_max_norm must be > 0");
        if (!(gamma > 0.0)) throw Error("train: gamma must be > 0");
        if (!pad_range.valid() || pad_range.lo < 0.0 || pad_range.hi > 1.0) throw Error("train: invalid pad_range");
        if (!alpha_range.valid() || alpha_range.lo < 0.5 || alpha_range.hi > 2.0)
            throw Error("train: invalid alpha_range");
        if (snr_set.empty()) throw Error("train: snr_set must be nonempty");
        for (double s : snr_set)
            if (!std::isfinite(s)) throw Error("train: snr values must be finite");
        if (eval_interval == 0) throw Error("train: eval_interval must be >= 1");
        if (taps < 3 || taps > 127 || taps % 2 == 0) throw Error("train: taps must be odd and in [3, 127]");
        encoder.validate();
        if (objective == Objective::ssl_mse_pad && encoder.hop != kFrameHop)
            throw Error("train: ssl-mse-pad requires encoder hop 320");
    }
};

/// One clean/noisy pair. `noise` tags the evaluation condition. When
/// `noise_source` is present the trainer re-mixes it at a freshly drawn SNR
/// on every pass; `noisy` is the fixed mixture used for evaluation.
struct Utterance {
    Waveform clean;
    Waveform noisy;
    NoiseKind noise = NoiseKind::tonal_babble;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    Waveform noise_source{};
};

using Dataset = std::vector<Utterance>;

/// Synthetic corpus: utterance i uses noise kind kinds[i % kinds.size()],
/// an SNR drawn from `snr_set`, and a random segment of a noise recording
/// one second longer than the utterance.
inline Dataset synth_dataset(std::size_t n, std::uint64_t seed, const std::vector<NoiseKind>& kinds,
                             const std::vector<double>& snr_set, double duration_s = 1.0) {
    if (kinds.empty()) throw Error("synth_dataset: no noise kinds");
    if (snr_set.empty()) throw Error("synth_dataset: empty snr set");
    Rng rng(seed);
    Dataset out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r = rng.split();
        Utterance u;
        u.seed = r.next_u64();
        u.noise = kinds[i % kinds.size()];
        u.clean = synth_speechlike(u.seed, duration_s);
        u.noise_source = synth_noise(u.noise, r.next_u64(), duration_s + 1.0);
        u.snr_db = snr_set[r.index(snr_set.size())];
        u.noisy = mix_at_snr(u.clean, u.noise_source, u.snr_db, r.index(u.noise_source.size()));
        out.push_back(std::move(u));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer pieces.

/// Rescale so the global L2 norm is at most `max_norm`.
inline std::vector<double> clip_grad_norm(std::vector<double> grads, double max_norm = 1.0) {
    const double norm = l2_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grads) g *= scale;
    }
    return grads;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamResult {
    AdamState state;
    std::vector<double> params;
};

/// Bias-corrected Adam update. Pure: inputs are not modified.
inline AdamResult adam_step(AdamState state, std::vector<double> params, std::span<const double> grads,
                            double lr = 1e-4) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw Error("adam_step: shape mismatch");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    return {std::move(state), std::move(params)};
}

// ---------------------------------------------------------------------------
// Per-sample objective.

/// Random draws consumed by one sample.
struct SampleDraws {
    double pad_fraction = 0.0;
    double alpha = 1.0;
};

inline SampleDraws draw_for(Objective obj, Rng& rng, const TrainConfig& cfg) {
    SampleDraws d;
    if (obj == Objective::ssl_mse_pad) d.pad_fraction = sample_pad_fraction(rng, cfg.pad_range);
    if (obj == Objective::ssl_softdtw) d.alpha = sample_speed_factor(rng, cfg.alpha_range);
    return d;
}

struct SampleResult {
    double loss = 0.0;
    std::vector<double> grad;  ///< flattened enhancer gradient
    bool pad_skipped = false;
};

/// Loss between encode(enhanced) and the objective's clean reference, with
/// the gradient pulled back to the enhanced waveform.
struct WaveLoss {
    double loss = 0.0;
    std::vector<double> grad_wave;
    bool pad_skipped = false;
};

inline WaveLoss representation_loss(const FrozenEncoder& encoder, const TrainConfig& cfg, const Waveform& clean,
                                    const Waveform& enhanced, const SampleDraws& draws) {
    const RepSequence enh_reps = encoder.encode(enhanced);
    LossOutput lo;
    bool skipped = false;
    switch (cfg.objective) {
        case Objective::ssl_mse: {
            lo = mse_loss(enh_reps.data, encoder.encode(clean).data);
            break;
        }
        case Objective::ssl_mse_pad: {
            PadPlan plan = pad_length(clean.size(), draws.pad_fraction);
            const std::size_t padded_frames = encoder.frames_for(clean.size() + 2 * plan.pad_samples);
            if (plan.trim_frames > 0 && padded_frames <= 2 * plan.trim_frames) {
                plan = {plan.fraction, 0, 0};
                skipped = true;
            }
            const RepSequence padded = encoder.encode(zero_pad(clean, plan.pad_samples));
            lo = ssl_mse_pad_loss(enh_reps.data, padded.data, plan.trim_frames);
            break;
        }
        case Objective::ssl_softdtw: {
            const RepSequence ref = encoder.encode(speed_perturb(clean, draws.alpha));
            lo = ssl_softdtw_loss(enh_reps.data, ref.data, cfg.gamma, cfg.softdtw_divergence);
            break;
        }
    }
    return {lo.value, encoder.encode_backward(enhanced, lo.grad), skipped};
}

inline SampleResult sample_gradient(const EnhancerParams& params, const FrozenEncoder& encoder,
                                    const TrainConfig& cfg, const Utterance& utt, const SampleDraws& draws) {
    if (utt.clean.size() != utt.noisy.size()) throw Error("train: clean/noisy length mismatch");
    const Waveform enhanced = enhance(params, utt.noisy);
    WaveLoss wl = representation_loss(encoder, cfg, utt.clean, enhanced, draws);
    const EnhancerGrad g = enhance_backward(params, utt.noisy, wl.grad_wave);
    return {wl.loss, g.flatten(), wl.pad_skipped};
}

/// Objective value only (no gradient), for evaluation and finite differences.
inline double sample_loss(const EnhancerParams& params, const FrozenEncoder& encoder, const TrainConfig& cfg,
                          const Utterance& utt, const SampleDraws& draws) {
    return sample_gradient(params, encoder, cfg, utt, draws).loss;
}

// ---------------------------------------------------------------------------
// Parallel map with results stored by index, so reductions can run in a
// fixed order independent of the worker count.

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalRow {
    std::string condition;  ///< "seen" or "unseen"
    std::size_t count = 0;
    double sisnr_improvement_db = 0.0;
    double loss = 0.0;
};

struct EvalReport {
    EvalRow seen{"seen"};
    EvalRow unseen{"unseen"};
};

inline bool is_seen_condition(NoiseKind k) noexcept { return k == NoiseKind::tonal_babble; }

/// Mean SI-SNR improvement (enhanced vs noisy, both against clean) and mean
/// objective loss, split into seen (tonal-babble) and unseen (other) noise.
/// Random draws for the objective come from a fixed stream so repeated
/// evaluations are comparable.
inline EvalReport evaluate(const EnhancerParams& params, const Dataset& testset, const FrozenEncoder& encoder,
                           const TrainConfig& cfg) {
    if (testset.empty()) throw Error("evaluate: empty test set");
    std::vector<double> improvement(testset.size()), loss(testset.size());
    std::vector<SampleDraws> draws(testset.size());
    Rng rng(cfg.seed ^ 0x5eed0fe7a1ULL);
    for (auto& d : draws) d = draw_for(cfg.objective, rng, cfg);

    parallel_for(testset.size(), cfg.threads, [&](std::size_t i) {
        const Utterance& u = testset[i];
        const Waveform enhanced = enhance(params, u.noisy);
        improvement[i] = si_snr(enhanced, u.clean) - si_snr(u.noisy, u.clean);
        loss[i] = representation_loss(encoder, cfg, u.clean, enhanced, draws[i]).loss;
    });

    EvalReport r;
    for (std::size_t i = 0; i < testset.size(); ++i) {
        EvalRow& row = is_seen_condition(testset[i].noise) ? r.seen : r.unseen;
        row.count += 1;
        row.sisnr_improvement_db += improvement[i];
        row.loss += loss[i];
    }
    for (EvalRow* row : {&r.seen, &r.unseen}) {
        if (row->count == 0) {
            row->sisnr_improvement_db = std::nan("");
            row->loss = std::nan("");
            continue;
        }
        row->sisnr_improvement_db /= static_cast<double>(row->count);
        row->loss /= static_cast<double>(row->count);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training loop.

struct MetricRecord {
    std::size_t step = 0;
    Objective objective = Objective::ssl_mse;
    double train_loss = 0.0;
    double eval_loss_seen = std::nan("");
    double eval_loss_unseen = std::nan("");
    double sisnr_seen_db = std::nan("");
    double sisnr_unseen_db = std::nan("");
    double wallclock_s = 0.0;
};

struct RunMetrics {
    std::vector<MetricRecord> records;
    std::vector<double> step_losses;  ///< mean batch loss at every optimizer step
    std::size_t skipped_pads = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,objective,train_loss,eval_loss_seen,eval_loss_unseen,sisnr_seen_db,sisnr_unseen_db,wallclock_s";

inline std::string format_metrics_csv(const RunMetrics& metrics) {
    std::string out = std::string(kMetricsHeader) + "\n";
    char buf[512];
    for (const auto& r : metrics.records) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.step,
                      to_string(r.objective).c_str(), r.train_loss, r.eval_loss_seen, r.eval_loss_unseen,
                      r.sisnr_seen_db, r.sisnr_unseen_db, r.wallclock_s);
        out += buf;
    }
    return out;
}

struct TrainResult {
    EnhancerParams params;
    RunMetrics metrics;
};

using EventLog = std::function<void(const std::string&)>;

inline std::size_t resolve_steps(const TrainConfig& cfg, std::size_t dataset_size) {
    if (cfg.steps > 0) return cfg.steps;
    return (dataset_size + cfg.effective_batch - 1) / cfg.effective_batch;
}

/// Fine-tune the enhancer with the configured objective. Every random draw
/// (data order, SNR and noise segment, pad fraction, speed factor) comes
/// from `cfg.seed`, so the result is reproducible bit for bit.
inline TrainResult train_objective(const TrainConfig& cfg, const Dataset& dataset, const Dataset& heldout = {},
                                   std::optional<EnhancerParams> initial = std::nullopt,
                                   const EventLog& log = {}) {
    cfg.validate();
    if (dataset.empty()) throw Error("train: empty dataset");
    const FrozenEncoder encoder(cfg.encoder);
    EnhancerParams params = initial ? *initial : init_params(cfg.seed, cfg.taps, cfg.init_noise);
    params.validate();

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    std::size_t cursor = order.size();
    auto next_index = [&] {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    const std::size_t total_steps = resolve_steps(cfg, dataset.size());
    const std::size_t micro = cfg.micro_batch();
    const std::size_t n_params = params.size();
    AdamState adam = AdamState::zeros(n_params);
    RunMetrics metrics;
    const auto start = std::chrono::steady_clock::now();
    double interval_loss = 0.0;
    std::size_t interval_samples = 0;

    std::vector<std::size_t> batch_idx(micro);
    std::vector<SampleDraws> batch_draws(micro);
    std::vector<SampleResult> batch_out(micro);
    struct Mix {
        double snr_db = 0.0;
        std::size_t offset = 0;
    };
    std::vector<Mix> batch_mix(micro);

    for (std::size_t step = 1; step <= total_steps; ++step) {
        std::vector<double> grad(n_params, 0.0);
        double step_loss = 0.0;
        for (std::size_t a = 0; a < cfg.accumulation_steps; ++a) {
            for (std::size_t b = 0; b < micro; ++b) {
                batch_idx[b] = next_index();
                const Utterance& u = dataset[batch_idx[b]];
                if (!u.noise_source.samples.empty()) {
                    batch_mix[b].snr_db = cfg.snr_set[rng.index(cfg.snr_set.size())];
                    batch_mix[b].offset = rng.index(u.noise_source.size());
                }
                batch_draws[b] = draw_for(cfg.objective, rng, cfg);
            }
            parallel_for(micro, cfg.threads, [&](std::size_t b) {
                const Utterance& u = dataset[batch_idx[b]];
                if (u.noise_source.samples.empty()) {
                    batch_out[b] = sample_gradient(params, encoder, cfg, u, batch_draws[b]);
                    return;
                }
                Utterance remixed{u.clean, mix_at_snr(u.clean, u.noise_source, batch_mix[b].snr_db, batch_mix[b].offset),
                                  u.noise, batch_mix[b].snr_db, u.seed};
                batch_out[b] = sample_gradient(params, encoder, cfg, remixed, batch_draws[b]);
            });
            std::vector<double> micro_grad(n_params, 0.0);
            for (std::size_t b = 0; b < micro; ++b) {
                const SampleResult& r = batch_out[b];
                if (!std::isfinite(r.loss) || !all_finite(r.grad)) {
                    std::ostringstream msg;
                    msg << "non-finite loss at step " << step << ", utterance " << batch_idx[b] << " (loss "
                        << r.loss << ", pad_fraction " << batch_draws[b].pad_fraction << ", alpha "
                        << batch_draws[b].alpha << ")";
                    throw NumericalError(msg.str());
                }
                if (r.pad_skipped) {
                    ++metrics.skipped_pads;
                    if (log) log("pad skipped for utterance " + std::to_string(batch_idx[b]) + ": trim exceeds sequence");
                }
                step_loss += r.loss;
                for (std::size_t k = 0; k < n_params; ++k) micro_grad[k] += r.grad[k];
            }
            for (std::size_t k = 0; k < n_params; ++k) grad[k] += micro_grad[k];
        }
        const double inv_batch = 1.0 / static_cast<double>(cfg.effective_batch);
        for (double& g : grad) g *= inv_batch;
        step_loss *= inv_batch;

        grad = clip_grad_norm(std::move(grad), cfg.clip_max_norm);
        auto updated = adam_step(std::move(adam), params.flatten(), grad, cfg.lr);
        adam = std::move(updated.state);
        params = EnhancerParams::unflatten(updated.params);
        if (!all_finite(updated.params)) throw NumericalError("non-finite parameters after step " + std::to_string(step));

        metrics.step_losses.push_back(step_loss);
        interval_loss += step_loss;
        interval_samples += 1;

        if (step % cfg.eval_interval == 0 || step == total_steps) {
            MetricRecord rec;
            rec.step = step;
            rec.objective = cfg.objective;
            rec.train_loss = interval_loss / static_cast<double>(interval_samples);
            if (!heldout.empty()) {
                const EvalReport ev = evaluate(params, heldout, encoder, cfg);
                rec.eval_loss_seen = ev.seen.loss;
                rec.eval_loss_unseen = ev.unseen.loss;
                rec.sisnr_seen_db = ev.seen.sisnr_improvement_db;
                rec.sisnr_unseen_db = ev.unseen.sisnr_improvement_db;
            }
            if (cfg.record_wallclock)
                rec.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            metrics.records.push_back(rec);
            interval_loss = 0.0;
            interval_samples = 0;
        }
    }
    return {std::move(params), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Positional-shortcut diagnostic.

inline constexpr std::size_t kMinDiagnosticPairs = 10;

/// 1 - L_beta / L_0, clamped to [0, 1], where L is the mean framewise MSE
/// between encodings of independent waveforms. Values near 1 mean the loss
/// between unrelated signals is mostly removed by shared position codes.
inline double diagnose_positional(const EncoderConfig& cfg, std::size_t n_pairs, Rng& rng,
                                  double duration_s = 1.0) {
    if (n_pairs < kMinDiagnosticPairs) throw Error("diagnose_positional: need at least 10 pairs");
    EncoderConfig flat = cfg;
    flat.beta = 0.0;
    const FrozenEncoder with_pos(cfg);
    const FrozenEncoder without_pos(flat);
    double loss_pos = 0.0, loss_flat = 0.0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const Waveform u = synth_speechlike(rng.next_u64(), duration_s);
        const Waveform v = synth_speechlike(rng.next_u64(), duration_s);
        loss_pos += mse_loss(with_pos.encode(u).data, with_pos.encode(v).data).value;
        loss_flat += mse_loss(without_pos.encode(u).data, without_pos.encode(v).data).value;
    }
    if (loss_flat == 0.0) return 0.0;
    return std::clamp(1.0 - loss_pos / loss_flat, 0.0, 1.0);
}

}  // namespace alignlab

#endif  // ALIGNLAB_TRAIN_HPP
