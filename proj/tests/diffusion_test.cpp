#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spectradiff/denoiser.hpp"
#include "spectradiff/diffusion.hpp"
#include "spectradiff/errors.hpp"
#include "spectradiff/gradcheck.hpp"
#include "spectradiff/rng.hpp"
#include "spectradiff/training.hpp"
#include "support/oracles.hpp"

namespace sd = spectradiff;
using oracle::HighPrecision;

namespace {

sd::NoiseSchedule schedule(int T) {
    sd::ScheduleConfig c;
    c.timesteps = T;
    return sd::build_schedule(c);
}

sd::Matrix random_matrix(std::size_t rows, std::size_t cols, sd::Rng& rng, double lo = -1.0, double hi = 1.0) {
    sd::Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.uniform(lo, hi);
    return m;
}

sd::Matrix normal_matrix(std::size_t rows, std::size_t cols, sd::Rng& rng) {
    sd::Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.normal();
    return m;
}

double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

}  // namespace

TEST(QSample, ZeroNoiseScalesSignal) {
    const auto s = schedule(100);
    sd::Rng rng(1);
    const auto x0 = random_matrix(4, 6, rng);
    const std::vector<int> t{1, 20, 50, 100};
    const auto out = sd::q_sample(x0, t, sd::Matrix(4, 6), s);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            EXPECT_EQ(out.xt(r, c), std::sqrt(s.alpha_bar(t[r])) * x0(r, c));
        }
    }
}

TEST(QSample, FirstStepOfLongScheduleStaysClose) {
    const auto s = schedule(1000);
    sd::Rng rng(2);
    const auto x0 = random_matrix(8, 5, rng);
    const auto eps = normal_matrix(8, 5, rng);
    const std::vector<int> t(8, 1);
    const auto out = sd::q_sample(x0, t, eps, s);
    const double noise = std::sqrt(1.0 - s.alpha_bar(1));
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double bound = (1.0 - std::sqrt(s.alpha_bar(1))) * std::abs(x0.data()[i]) + noise * std::abs(eps.data()[i]);
        EXPECT_LE(std::abs(out.xt.data()[i] - x0.data()[i]), bound + 1e-15);
    }
    EXPECT_LT(noise, 0.01);
}

TEST(QSample, TimestepOutOfRangeThrows) {
    const auto s = schedule(10);
    const sd::Matrix x(1, 3);
    EXPECT_THROW(sd::q_sample(x, std::vector<int>{0}, x, s), sd::ContractError);
    EXPECT_THROW(sd::q_sample(x, std::vector<int>{11}, x, s), sd::ContractError);
    EXPECT_THROW(sd::q_sample(x, std::vector<int>{1, 2}, x, s), sd::DimensionError);
}

TEST(QSample, MonteCarloMomentsMatch) {
    const auto s = schedule(100);
    constexpr std::size_t n = 100000;
    const int step = 37;
    const double x0v = 0.7;
    sd::Rng rng(3);
    const sd::Matrix x0(n, 1, x0v);
    const auto eps = normal_matrix(n, 1, rng);
    const auto out = sd::q_sample(x0, std::vector<int>(n, step), eps, s);
    const auto m = oracle::moments(out.xt.data());
    const double ab = s.alpha_bar(step);
    EXPECT_LT(std::abs(m.mean - std::sqrt(ab) * x0v), 3.0 * m.mean_stderr());
    EXPECT_LT(std::abs(m.var - (1.0 - ab)), 3.0 * m.var_stderr_normal());
}

TEST(QPosterior, FirstStepVarianceIsFloor) {
    const auto s = schedule(100);
    sd::Rng rng(4);
    const auto x0 = random_matrix(2, 3, rng);
    const auto q = sd::q_posterior(x0, x0, std::vector<int>{1, 1}, s);
    for (double v : q.var.data()) EXPECT_EQ(v, sd::kVarianceFloor);
}

TEST(QPosterior, VarianceBroadcastsScheduleValue) {
    const auto s = schedule(50);
    sd::Rng rng(5);
    const auto x0 = random_matrix(3, 4, rng);
    const std::vector<int> t{2, 25, 50};
    const auto q = sd::q_posterior(x0, x0, t, s);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(q.var(r, c), s.posterior_var(t[r]));
    }
}

TEST(QPosterior, NoNoiseLimitReturnsInput) {
    sd::ScheduleConfig c;
    c.timesteps = 100000;
    const auto s = sd::build_schedule(c);
    sd::Rng rng(6);
    const auto x = random_matrix(2, 4, rng);
    const auto q = sd::q_posterior(x, x, std::vector<int>{2, 3}, s);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(q.mean.data()[i], x.data()[i], 1e-6);
}

TEST(QPosterior, MeanMatchesHighPrecisionClosedForm) {
    constexpr int T = 10;
    const auto s = schedule(T);
    sd::Rng rng(7);
    const auto x0 = random_matrix(T - 1, 3, rng);
    const auto xt = random_matrix(T - 1, 3, rng);
    std::vector<int> t;
    for (int step = 1; step < T; ++step) t.push_back(step);  // the clipped final step is excluded
    const auto q = sd::q_posterior(x0, xt, t, s);
    for (std::size_t r = 0; r < t.size(); ++r) {
        const HighPrecision ab = oracle::cosine_alpha_bar(t[r], T, 0.008, 1.2);
        const HighPrecision ab_prev = t[r] == 1 ? HighPrecision(1) : oracle::cosine_alpha_bar(t[r] - 1, T, 0.008, 1.2);
        const HighPrecision alpha = ab / ab_prev;
        for (std::size_t c = 0; c < 3; ++c) {
            const HighPrecision mean =
                (boost::multiprecision::sqrt(alpha) * (1 - ab_prev) * HighPrecision(xt(r, c)) +
                 boost::multiprecision::sqrt(ab_prev) * (1 - alpha) * HighPrecision(x0(r, c))) /
                (1 - ab);
            EXPECT_NEAR(q.mean(r, c), mean.convert_to<double>(), 1e-12);
        }
    }
}

TEST(PredictX0, InvertsForwardNoising) {
    const auto s = schedule(1000);
    sd::Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto x0 = random_matrix(4, 7, rng, -3.0, 3.0);
        const auto eps = normal_matrix(4, 7, rng);
        std::vector<int> t(4);
        for (auto& v : t) v = static_cast<int>(rng.uniform_int(1, 990));
        const auto noised = sd::q_sample(x0, t, eps, s);
        const auto back = sd::predict_x0_from_eps(noised.xt, eps, t, s, false);
        for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back.data()[i], x0.data()[i], 1e-10);
    }
}

TEST(PredictX0, ZeroInputsGiveZeroAndClampBounds) {
    const auto s = schedule(100);
    const sd::Matrix zero(2, 3);
    const auto out = sd::predict_x0_from_eps(zero, zero, std::vector<int>{5, 60}, s);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
    const sd::Matrix big(1, 2, 5.0);
    const auto clamped = sd::predict_x0_from_eps(big, sd::Matrix(1, 2), std::vector<int>{50}, s);
    for (double v : clamped.data()) EXPECT_EQ(v, 1.0);
}

TEST(GaussianKl, IdenticalMomentsGiveZero) {
    sd::Rng rng(9);
    sd::GaussianMoments p{random_matrix(3, 4, rng), random_matrix(3, 4, rng, 0.1, 2.0)};
    for (double v : sd::gaussian_kl(p, p)) EXPECT_EQ(v, 0.0);
}

TEST(GaussianKl, EqualVariancesReduceToScaledDistance) {
    sd::Rng rng(10);
    const auto mp = random_matrix(2, 5, rng);
    const auto mq = random_matrix(2, 5, rng);
    const double var = 0.37;
    const auto kl = sd::gaussian_kl({mp, sd::Matrix(2, 5, var)}, {mq, sd::Matrix(2, 5, var)});
    for (std::size_t r = 0; r < 2; ++r) {
        double dist = 0.0;
        for (std::size_t c = 0; c < 5; ++c) dist += (mp(r, c) - mq(r, c)) * (mp(r, c) - mq(r, c));
        EXPECT_NEAR(kl[r], dist / (2.0 * var), 1e-12);
    }
}

TEST(GaussianKl, NonNegativeOnRandomPairs) {
    sd::Rng rng(11);
    sd::GaussianMoments p{random_matrix(10000, 1, rng), random_matrix(10000, 1, rng, 1e-3, 3.0)};
    sd::GaussianMoments q{random_matrix(10000, 1, rng), random_matrix(10000, 1, rng, 1e-3, 3.0)};
    for (double v : sd::gaussian_kl(p, q)) EXPECT_GE(v, 0.0);
}

TEST(GaussianKl, NonPositiveVarianceThrows) {
    sd::GaussianMoments p{sd::Matrix(1, 1), sd::Matrix(1, 1, 0.0)};
    sd::GaussianMoments q{sd::Matrix(1, 1), sd::Matrix(1, 1, 1.0)};
    EXPECT_THROW(sd::gaussian_kl(p, q), sd::ContractError);
}

TEST(GaussianKl, MatchesMonteCarloExpectation) {
    sd::Rng rng(12);
    for (int pair = 0; pair < 4; ++pair) {
        const double mp = rng.uniform(-1, 1), vp = rng.uniform(0.2, 2.0);
        const double mq = rng.uniform(-1, 1), vq = rng.uniform(0.2, 2.0);
        const double kl = sd::gaussian_kl({sd::Matrix(1, 1, mp), sd::Matrix(1, 1, vp)},
                                          {sd::Matrix(1, 1, mq), sd::Matrix(1, 1, vq)})[0];
        std::vector<double> log_ratio(1000000);
        for (auto& lr : log_ratio) {
            const double x = rng.normal(mp, std::sqrt(vp));
            lr = log_normal_pdf(x, mp, vp) - log_normal_pdf(x, mq, vq);
        }
        const auto m = oracle::moments(log_ratio);
        EXPECT_LT(std::abs(m.mean - kl), 3.0 * m.mean_stderr()) << "pair " << pair;
    }
}

TEST(LearnedVariance, EndpointsSelectPosteriorAndBeta) {
    const auto s = schedule(100);
    EXPECT_EQ(sd::learned_log_variance(1.0, 30, s), std::log(s.beta(30)));
    EXPECT_EQ(sd::learned_log_variance(0.0, 30, s), std::log(s.posterior_var(30)));
    EXPECT_EQ(sd::learned_log_variance(0.0, 1, s), std::log(sd::kVarianceFloor));
}

TEST(PMoments, TrueNoiseGivesPosteriorMean) {
    const auto s = schedule(100);
    sd::Rng rng(13);
    const auto x0 = random_matrix(5, 4, rng);
    const auto eps = normal_matrix(5, 4, rng);
    const std::vector<int> t{2, 10, 40, 70, 99};
    const auto noised = sd::q_sample(x0, t, eps, s);
    const auto p = sd::p_moments(noised.xt, eps, sd::Matrix(5, 4), t, s);
    const auto q = sd::q_posterior(x0, noised.xt, t, s);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        EXPECT_NEAR(p.mean.data()[i], q.mean.data()[i], 1e-10);
        EXPECT_NEAR(p.var.data()[i], q.var.data()[i], 1e-15);
    }
}

TEST(HybridLoss, VanishesForTrueNoiseAndPosterior) {
    const auto s = schedule(100);
    sd::Rng rng(14);
    const auto x0 = random_matrix(6, 5, rng);
    const auto eps = normal_matrix(6, 5, rng);
    const std::vector<int> t{1, 2, 17, 50, 80, 99};
    const auto batch = sd::q_sample(x0, t, eps, s);
    sd::Graph g;
    const auto q = sd::q_posterior(x0, batch.xt, t, s);
    const auto fixed = sd::hybrid_loss_from_outputs(g, batch, sd::Tensor::from(eps), sd::Tensor::from(sd::Matrix(6, 5)),
                                                    s, 1e-3, &q.mean);
    EXPECT_NEAR(fixed.loss.item(), 0.0, 1e-10);
    // Without a fixed mean the mean comes from the true noise; rows with t = 1 have a
    // near-zero variance, so only later steps are compared.
    const auto later = sd::q_sample(x0, std::vector<int>{5, 9, 17, 50, 80, 99}, eps, s);
    const auto free = sd::hybrid_loss_from_outputs(g, later, sd::Tensor::from(eps), sd::Tensor::from(sd::Matrix(6, 5)),
                                                   s, 1e-3);
    EXPECT_NEAR(free.loss.item(), 0.0, 1e-10);
}

TEST(HybridLoss, ZeroLambdaIsWeightedMse) {
    const auto s = schedule(100);
    sd::Rng rng(15);
    const auto x0 = random_matrix(4, 3, rng);
    const auto eps = normal_matrix(4, 3, rng);
    const std::vector<int> t{3, 30, 60, 90};
    const auto batch = sd::q_sample(x0, t, eps, s);
    const auto eps_hat = random_matrix(4, 3, rng);
    const auto v = random_matrix(4, 3, rng, 0.0, 1.0);
    sd::Graph g;
    const auto terms = sd::hybrid_loss_from_outputs(g, batch, sd::Tensor::from(eps_hat), sd::Tensor::from(v), s, 0.0);
    double expected = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < 3; ++c) row += (eps_hat(r, c) - eps(r, c)) * (eps_hat(r, c) - eps(r, c));
        expected += s.loss_weight(t[r]) * row / 3.0;
    }
    EXPECT_NEAR(terms.loss.item(), expected / 4.0, 1e-14);
    EXPECT_EQ(terms.loss.item(), terms.mse);
}

TEST(HybridLoss, KlTermMatchesGaussianKl) {
    const auto s = schedule(100);
    sd::Rng rng(16);
    const auto x0 = random_matrix(4, 3, rng);
    const auto eps = normal_matrix(4, 3, rng);
    const std::vector<int> t{3, 30, 60, 90};
    const auto batch = sd::q_sample(x0, t, eps, s);
    const auto eps_hat = random_matrix(4, 3, rng);
    const auto v = random_matrix(4, 3, rng, 0.0, 1.0);
    sd::Graph g;
    const auto terms = sd::hybrid_loss_from_outputs(g, batch, sd::Tensor::from(eps_hat), sd::Tensor::from(v), s, 1e-3);
    const auto kl = sd::gaussian_kl(sd::q_posterior(x0, batch.xt, t, s), sd::p_moments(batch.xt, eps_hat, v, t, s));
    double mean_kl = 0.0;
    for (double k : kl) mean_kl += k / 4.0;
    EXPECT_NEAR(terms.vlb, mean_kl, 1e-10 * std::max(1.0, mean_kl));
    EXPECT_NEAR(terms.loss.item(), terms.mse + 1e-3 * terms.vlb, 1e-12);
}

TEST(HybridLoss, FiniteDifferencesOverEveryDenoiserParameter) {
    sd::DenoiserConfig dc;
    dc.bands = 4;
    dc.patch_size = 2;
    dc.hidden = 8;
    dc.depth = 2;
    dc.heads = 2;
    dc.num_classes = 2;
    sd::ScheduleConfig sc;
    sc.timesteps = 10;
    for (std::uint64_t seed : {0u, 7u}) {
        const auto report = sd::gradcheck_denoiser(dc, sc, seed);
        EXPECT_LT(report.max_rel_error, 1e-4) << "worst " << report.worst_param;
        EXPECT_GT(report.checked, 100u);
    }
}

TEST(HybridLoss, BandMismatchAndBadClassThrow) {
    sd::DenoiserConfig dc;
    dc.bands = 4;
    dc.patch_size = 2;
    dc.hidden = 8;
    dc.depth = 1;
    dc.heads = 2;
    dc.num_classes = 2;
    const sd::Denoiser model(dc, 1);
    const auto s = schedule(10);
    sd::Graph g;
    const auto wide = sd::q_sample(sd::Matrix(1, 5), std::vector<int>{2}, sd::Matrix(1, 5), s);
    EXPECT_THROW(sd::hybrid_loss(g, wide, std::vector<int>{0}, model, s, 1e-3), sd::ConfigError);
    const auto ok = sd::q_sample(sd::Matrix(1, 4), std::vector<int>{2}, sd::Matrix(1, 4), s);
    EXPECT_THROW(sd::hybrid_loss(g, ok, std::vector<int>{2}, model, s, 1e-3), sd::ContractError);
}

namespace {

sd::DenoiserConfig toy_config(int classes) {
    sd::DenoiserConfig dc;
    dc.bands = 8;
    dc.patch_size = 4;
    dc.hidden = 16;
    dc.depth = 1;
    dc.heads = 2;
    dc.num_classes = classes;
    return dc;
}

}  // namespace

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
    const auto s = schedule(50);
    sd::Denoiser model(toy_config(1), 3);
    const auto before = model.clone();
    sd::DiffusionTrainConfig tc;
    tc.adam.lr = 0.0;
    sd::DiffusionTrainer trainer(model, s, tc, 4);
    const auto rec = trainer.train_step(sd::Matrix(4, 8, 0.3), std::vector<int>(4, 0));
    EXPECT_TRUE(std::isfinite(rec.loss));
    EXPECT_GT(rec.loss, 0.0);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto a = model.params()[i].second.data();
        const auto b = before.params()[i].second.data();
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << model.params()[i].first;
    }
}

TEST(TrainStep, EqualSeedsGiveIdenticalTrajectories) {
    const auto s = schedule(50);
    sd::Rng rng(5);
    const auto x = random_matrix(6, 8, rng);
    const std::vector<int> y(6, 0);
    auto run = [&] {
        sd::Denoiser model(toy_config(1), 11);
        sd::DiffusionTrainer trainer(model, s, {}, 12);
        std::vector<double> losses;
        for (int i = 0; i < 10; ++i) losses.push_back(trainer.train_step(x, y).loss);
        return std::pair{losses, model.params()};
    };
    const auto [la, pa] = run();
    const auto [lb, pb] = run();
    EXPECT_EQ(la, lb);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto a = pa[i].second.data();
        const auto b = pb[i].second.data();
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << pa[i].first;
    }
}

TEST(TrainStep, ConstantSpectrumLossHalves) {
    const auto s = schedule(100);
    const sd::Matrix data(16, 8, 0.4);
    const std::vector<int> y(16, 0);
    double first = 0.0, last = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        sd::Denoiser model(toy_config(1), seed);
        sd::DiffusionTrainConfig tc;
        tc.steps = 500;
        tc.batch_size = 16;
        sd::DiffusionTrainer trainer(model, s, tc, seed + 100);
        const auto log = trainer.fit(data, y);
        for (int i = 0; i < 10; ++i) {
            first += log[static_cast<std::size_t>(i)].loss;
            last += log[log.size() - 1 - static_cast<std::size_t>(i)].loss;
        }
    }
    EXPECT_LE(last, 0.5 * first);
}

TEST(TrainConfig, RejectsNegativeValues) {
    sd::DiffusionTrainConfig tc;
    tc.batch_size = 0;
    EXPECT_THROW(tc.validate(), sd::ConfigError);
    tc = {};
    tc.lambda_vlb = -1.0;
    EXPECT_THROW(tc.validate(), sd::ConfigError);
}
