#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "alignlab/train.hpp"
#include "oracles.hpp"

using namespace alignlab;

namespace {

Dataset toy_dataset(std::size_t n, std::uint64_t seed, double snr_db, double duration = 0.5) {
    return synth_dataset(n, seed, {NoiseKind::tonal_babble}, {snr_db}, duration);
}

Dataset clean_dataset(std::size_t n, std::uint64_t seed, double duration = 0.5) {
    Dataset d;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Utterance u;
        u.clean = synth_speechlike(rng.next_u64(), duration);
        u.noisy = u.clean;
        d.push_back(std::move(u));
    }
    return d;
}

TrainConfig small_config(Objective obj) {
    TrainConfig cfg;
    cfg.objective = obj;
    cfg.effective_batch = 4;
    cfg.steps = 10;
    cfg.eval_interval = 5;
    cfg.seed = 3;
    return cfg;
}

double norm_of(const std::vector<double>& v) { return l2_norm(v); }

}  // namespace

// ---------------------------------------------------------------------------

TEST(ClipGradNorm, Examples) {
    const auto scaled = clip_grad_norm({0.0, 2.0}, 1.0);
    EXPECT_EQ(scaled[0], 0.0);
    EXPECT_EQ(scaled[1], 1.0);
    const std::vector<double> small{0.3, 0.4};
    EXPECT_EQ(clip_grad_norm(small, 1.0), small);

    Rng rng(1);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> g(1 + rng.index(20));
        for (double& x : g) x = rng.uniform(-3.0, 3.0);
        const double before = norm_of(g);
        const double max = rng.uniform(0.1, 5.0);
        EXPECT_NEAR(norm_of(clip_grad_norm(g, max)), std::min(before, max), 1e-12);
    }
}

TEST(AdamStep, ZeroGradientsLeaveParams) {
    const std::vector<double> p{0.5, -1.0, 2.0};
    const auto r = adam_step(AdamState::zeros(3), p, std::vector<double>(3, 0.0));
    EXPECT_EQ(r.params, p);
    EXPECT_EQ(r.state.step, 1u);
}

TEST(AdamStep, FirstStepClosedForm) {
    const std::vector<double> p{0.5, -1.0, 2.0};
    const std::vector<double> g{0.3, -2.0, 1e-3};
    const double lr = 1e-4;
    const auto r = adam_step(AdamState::zeros(3), p, g, lr);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.params[i], p[i] - lr * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
    EXPECT_NEAR(r.state.m[1], 0.1 * g[1], 1e-15);
    EXPECT_NEAR(r.state.v[1], 0.001 * g[1] * g[1], 1e-15);
}

TEST(AdamStep, PureAndMatchesReference) {
    Rng rng(2);
    AdamState s = AdamState::zeros(4);
    std::vector<double> p{1, 2, 3, 4};
    // Reference recursion written out with textbook bias correction.
    std::vector<double> m(4, 0.0), v(4, 0.0), q = p;
    for (int t = 1; t <= 20; ++t) {
        std::vector<double> g(4);
        for (double& x : g) x = rng.normal();
        const auto a = adam_step(s, p, g, 1e-2);
        const auto b = adam_step(s, p, g, 1e-2);
        ASSERT_EQ(a.params, b.params);
        ASSERT_EQ(a.state, b.state);
        for (int i = 0; i < 4; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            q[i] -= 1e-2 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
            ASSERT_NEAR(a.params[i], q[i], 1e-12);
        }
        s = a.state;
        p = a.params;
    }
    EXPECT_THROW(adam_step(AdamState::zeros(3), p, std::vector<double>(4)), Error);
}

// ---------------------------------------------------------------------------

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.micro_batch(), 16u);
    cfg.accumulation_steps = 4;
    EXPECT_EQ(cfg.micro_batch(), 4u);
    cfg.accumulation_steps = 3;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.lr = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.pad_range = {0.05, 0.02};
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.snr_set.clear();
    EXPECT_THROW(cfg.validate(), Error);

    EXPECT_EQ(parse_objective("ssl-softdtw"), Objective::ssl_softdtw);
    try {
        parse_objective("ssl-dtw");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("ssl-mse, ssl-mse-pad, ssl-softdtw"), std::string::npos);
    }
}

TEST(SynthDataset, DeterministicAndContract) {
    const auto a = synth_dataset(6, 9, {NoiseKind::tonal_babble, NoiseKind::pink}, {0, 5, 10, 20});
    const auto b = synth_dataset(6, 9, {NoiseKind::tonal_babble, NoiseKind::pink}, {0, 5, 10, 20});
    ASSERT_EQ(a.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a[i].clean, b[i].clean);
        EXPECT_EQ(a[i].noisy, b[i].noisy);
        EXPECT_EQ(a[i].noise, i % 2 ? NoiseKind::pink : NoiseKind::tonal_babble);
        EXPECT_TRUE(a[i].snr_db == 0 || a[i].snr_db == 5 || a[i].snr_db == 10 || a[i].snr_db == 20);
        EXPECT_EQ(a[i].clean.size(), 16000u);
        EXPECT_GT(a[i].noise_source.size(), a[i].clean.size());
        Waveform residual(16000);
        for (std::size_t t = 0; t < 16000; ++t) residual[t] = a[i].noisy[t] - a[i].clean[t];
        EXPECT_NEAR(20.0 * std::log10(rms(a[i].clean.view()) / rms(residual.view())), a[i].snr_db, 1e-9);
    }
}

// ---------------------------------------------------------------------------

TEST(TrainObjective, IdentityIsFixedPoint) {
    const auto data = clean_dataset(8, 1);
    for (double beta : {0.0, 2.0}) {
        TrainConfig cfg = small_config(Objective::ssl_mse);
        cfg.encoder.beta = beta;
        cfg.init_noise = 0.0;
        const auto result = train_objective(cfg, data);
        EXPECT_EQ(result.params, init_params(0, 17, 0.0));
        for (double l : result.metrics.step_losses) EXPECT_EQ(l, 0.0);
    }
}

TEST(TrainObjective, PadLossVanishesWithoutPositionsOnNoiselessData) {
    const auto data = clean_dataset(6, 2, 1.0);
    TrainConfig cfg = small_config(Objective::ssl_mse_pad);
    cfg.encoder.beta = 0.0;
    const FrozenEncoder enc(cfg.encoder);
    const auto id = init_params(0, 17, 0.0);
    Rng rng(4);
    for (int k = 0; k < 30; ++k) {
        const auto draws = draw_for(cfg.objective, rng, cfg);
        const auto r = sample_gradient(id, enc, cfg, data[k % data.size()], draws);
        ASSERT_EQ(r.loss, 0.0);
        ASSERT_FALSE(r.pad_skipped);
        for (double g : r.grad) ASSERT_EQ(g, 0.0);
    }
}

TEST(TrainObjective, ShortUtterancePadsWithoutDegenerating) {
    // Frame-aligned padding always leaves the original frame count after
    // trimming, even at p = 1 on a one-frame utterance.
    TrainConfig cfg = small_config(Objective::ssl_mse_pad);
    cfg.encoder.beta = 0.0;
    const FrozenEncoder enc(cfg.encoder);
    Utterance u;
    u.clean = Waveform(std::vector<double>(320, 0.1));
    u.noisy = u.clean;
    const auto r = sample_gradient(init_params(0, 3, 0.0), enc, cfg, u, {1.0, 1.0});
    EXPECT_FALSE(r.pad_skipped);
    EXPECT_EQ(r.loss, 0.0);
}

TEST(TrainObjective, DeterministicAcrossRunsAndThreads) {
    const auto data = toy_dataset(10, 5, 5.0);
    const auto held = synth_dataset(4, 6, {NoiseKind::tonal_babble, NoiseKind::pink}, {5.0}, 0.5);
    for (auto obj : {Objective::ssl_mse, Objective::ssl_mse_pad, Objective::ssl_softdtw}) {
        TrainConfig cfg = small_config(obj);
        cfg.lr = 1e-3;
        const auto a = train_objective(cfg, data, held);
        const auto b = train_objective(cfg, data, held);
        cfg.threads = 3;
        const auto c = train_objective(cfg, data, held);
        EXPECT_EQ(a.params, b.params);
        EXPECT_EQ(a.params, c.params);
        EXPECT_EQ(format_metrics_csv(a.metrics), format_metrics_csv(b.metrics));
        EXPECT_EQ(format_metrics_csv(a.metrics), format_metrics_csv(c.metrics));
        ASSERT_EQ(a.metrics.records.size(), 2u);
        EXPECT_EQ(a.metrics.records[0].step, 5u);
        EXPECT_EQ(a.metrics.records[1].step, 10u);
    }
}

TEST(TrainObjective, AccumulationStepsAreEquivalent) {
    const auto data = toy_dataset(20, 7, 5.0, 0.4);
    TrainConfig cfg = small_config(Objective::ssl_mse_pad);
    cfg.effective_batch = 16;
    cfg.steps = 4;
    cfg.lr = 1e-3;
    std::vector<EnhancerParams> results;
    for (std::size_t acc : {1u, 4u, 16u}) {
        cfg.accumulation_steps = acc;
        results.push_back(train_objective(cfg, data).params);
    }
    for (std::size_t r = 1; r < results.size(); ++r) {
        const auto a = results[0].flatten(), b = results[r].flatten();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    }
}

TEST(TrainObjective, TrainingLossDecreases) {
    // 200 steps on 20 utterances of tonal babble at 5 dB. The loss is
    // measured on the training set with fixed draws before and after.
    const auto data = toy_dataset(20, 8, 5.0, 0.5);
    for (auto obj : {Objective::ssl_mse, Objective::ssl_mse_pad, Objective::ssl_softdtw}) {
        TrainConfig cfg = small_config(obj);
        cfg.steps = 200;
        cfg.effective_batch = 2;
        cfg.eval_interval = 100;
        cfg.lr = 1e-3;
        const FrozenEncoder enc(cfg.encoder);
        const auto start = init_params(cfg.seed, cfg.taps, cfg.init_noise);
        const auto result = train_objective(cfg, data);
        const double before = evaluate(start, data, enc, cfg).seen.loss;
        const double after = evaluate(result.params, data, enc, cfg).seen.loss;
        EXPECT_LT(after, before) << to_string(obj);
    }
}

TEST(TrainObjective, NonFiniteInputAborts) {
    auto data = clean_dataset(2, 9);
    data[1].noisy[100] = std::nan("");
    TrainConfig cfg = small_config(Objective::ssl_mse);
    try {
        train_objective(cfg, data);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    }
}

TEST(TrainObjective, MetricsCsvHeader) {
    RunMetrics m;
    m.records.push_back({50, Objective::ssl_softdtw, 0.25});
    const auto csv = format_metrics_csv(m);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
    EXPECT_NE(csv.find("\n50,ssl-softdtw,0.25,nan,nan,nan,nan,0.000000\n"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Evaluate, IdentityAndDegenerateParams) {
    const auto test = synth_dataset(6, 10, {NoiseKind::tonal_babble, NoiseKind::pink}, {0, 5, 10, 20}, 0.5);
    TrainConfig cfg;
    const FrozenEncoder enc(cfg.encoder);
    const auto id = evaluate(init_params(0, 17, 0.0), test, enc, cfg);
    EXPECT_EQ(id.seen.condition, "seen");
    EXPECT_EQ(id.unseen.condition, "unseen");
    EXPECT_EQ(id.seen.count, 3u);
    EXPECT_EQ(id.unseen.count, 3u);
    EXPECT_NEAR(id.seen.sisnr_improvement_db, 0.0, 1e-9);
    EXPECT_NEAR(id.unseen.sisnr_improvement_db, 0.0, 1e-9);

    auto zero = init_params(0, 17, 0.0);
    zero.gain = 0.0;
    const auto z = evaluate(zero, test, enc, cfg);
    EXPECT_LT(z.seen.sisnr_improvement_db, -30.0);
    EXPECT_LT(z.unseen.sisnr_improvement_db, -30.0);

    EXPECT_THROW(evaluate(zero, {}, enc, cfg), Error);
    const auto only_seen = evaluate(init_params(0), toy_dataset(2, 1, 5.0), enc, cfg);
    EXPECT_TRUE(std::isnan(only_seen.unseen.sisnr_improvement_db));
}

// ---------------------------------------------------------------------------

TEST(DiagnosePositional, ZeroWithoutPositions) {
    EncoderConfig cfg;
    cfg.beta = 0.0;
    Rng rng(1);
    EXPECT_EQ(diagnose_positional(cfg, 10, rng), 0.0);
    EXPECT_THROW(diagnose_positional(cfg, 9, rng), Error);
}

TEST(DiagnosePositional, IncreasesWithBetaAndSaturates) {
    auto mean_index = [](double beta) {
        double sum = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            EncoderConfig cfg;
            cfg.beta = beta;
            Rng rng(seed);
            sum += diagnose_positional(cfg, 10, rng, 0.5);
        }
        return sum / 20.0;
    };
    const double i1 = mean_index(1.0), i4 = mean_index(4.0);
    EXPECT_GT(i1, 0.0);
    EXPECT_GT(i4, i1);
    EXPECT_GT(i4, 0.3);
    EncoderConfig big;
    big.beta = 100.0;
    Rng rng(3);
    EXPECT_GT(diagnose_positional(big, 10, rng), 0.9);
}

// ---------------------------------------------------------------------------

class FullChainFd : public ::testing::TestWithParam<Objective> {};

TEST_P(FullChainFd, MatchesCentralDifferences) {
    Rng rng(77);
    for (int instance = 0; instance < 10; ++instance) {
        TrainConfig cfg;
        cfg.objective = GetParam();
        cfg.encoder.seed = rng.next_u64();
        cfg.encoder.beta = rng.uniform(0.0, 2.0);
        cfg.encoder.frontend = instance % 2 ? Frontend::spectral : Frontend::waveform;
        const FrozenEncoder enc(cfg.encoder);
        Utterance u;
        u.clean = synth_speechlike(rng.next_u64(), 1.0);
        u.noisy = mix_at_snr(u.clean, synth_noise(NoiseKind::white, rng.next_u64(), 1.0), 5.0);
        EnhancerParams p = init_params(rng.next_u64(), 17, 0.05);
        const auto draws = draw_for(cfg.objective, rng, cfg);

        const auto analytic = sample_gradient(p, enc, cfg, u, draws).grad;
        const auto numeric = oracle::central_difference(
            [&](const std::vector<double>& v) {
                return sample_loss(EnhancerParams::unflatten(v), enc, cfg, u, draws);
            },
            p.flatten(), oracle::kFdStep);
        const auto check = oracle::compare_gradients(analytic, numeric);
        ASSERT_LT(check.max_rel_error, 1e-4) << "instance " << instance;
    }
}

INSTANTIATE_TEST_SUITE_P(Objectives, FullChainFd,
                         ::testing::Values(Objective::ssl_mse, Objective::ssl_mse_pad, Objective::ssl_softdtw),
                         [](const auto& info) {
                             std::string s = to_string(info.param);
                             std::replace(s.begin(), s.end(), '-', '_');
                             return s;
                         });
