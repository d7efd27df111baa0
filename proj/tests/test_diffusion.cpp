#include <gtest/gtest.h>

#include <cmath>

#include "pogdiff/diffusion_loss.hpp"
#include "pogdiff/experiment.hpp"
#include "pogdiff/grad_check.hpp"
#include "pogdiff/sampler.hpp"
#include "pogdiff/schedule.hpp"
#include "pogdiff/trainer.hpp"

using namespace pogdiff;

namespace {

TrainBatch random_batch(Rng& rng, std::size_t n, std::size_t d, std::size_t c, int T, double psi) {
    TrainBatch b;
    b.x0 = Tensor(Shape{n, d}, standard_normal_vector(rng, n * d));
    b.eps = Tensor(Shape{n, d}, standard_normal_vector(rng, n * d));
    b.y = Tensor(Shape{n, c}, standard_normal_vector(rng, n * c));
    b.y_prime = Tensor(Shape{n, c}, standard_normal_vector(rng, n * c));
    b.psi.assign(n, psi);
    for (std::size_t i = 0; i < n; ++i) b.t.push_back(1 + static_cast<int>(uniform_index(rng, T)));
    return b;
}

/// Loss recomputed from plain forward passes, one row at a time.
struct Recomputed {
    double term1 = 0.0, term2 = 0.0, total = 0.0;
};

Recomputed recompute(const MlpDenoiser& model, const NoiseSchedule& s, const TrainBatch& b,
                     const Tensor* frozen_neighbor = nullptr) {
    Recomputed r;
    const double n = static_cast<double>(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double ab = s.alpha_bar(b.t[i]);
        const std::size_t d = b.x0.cols();
        Tensor x(Shape{1, d});
        for (std::size_t j = 0; j < d; ++j) x[j] = std::sqrt(ab) * b.x0.at(i, j) + std::sqrt(1.0 - ab) * b.eps.at(i, j);
        Tensor y(Shape{1, b.y.cols()}), yp(Shape{1, b.y.cols()});
        std::copy(b.y.row(i).begin(), b.y.row(i).end(), y.data().begin());
        std::copy(b.y_prime.row(i).begin(), b.y_prime.row(i).end(), yp.data().begin());
        const Tensor e = mlp_forward(model, x, b.t[i], y);
        const Tensor en = frozen_neighbor ? Tensor(Shape{1, d}, {frozen_neighbor->row(i).begin(), frozen_neighbor->row(i).end()})
                                          : mlp_forward(model, x, b.t[i], yp);
        double t1 = 0.0, t2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            t1 += (e[j] - b.eps.at(i, j)) * (e[j] - b.eps.at(i, j));
            t2 += (e[j] - en[j]) * (e[j] - en[j]);
        }
        r.term1 += t1 / n;
        r.term2 += t2 / n;
        r.total += (t1 + b.psi[i] * t2) / n;
    }
    return r;
}

ExperimentConfig quick_config(int steps) {
    ExperimentConfig c;
    c.training.steps = steps;
    c.vae.epochs = 200;
    return c;
}

}  // namespace

TEST(Schedule, SingleStep) {
    const NoiseSchedule s(1, 0.3, 0.3);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 1.0 - 0.3);
    EXPECT_DOUBLE_EQ(s.alpha(1), 0.7);
}

TEST(Schedule, ProductOfAlphas) {
    const auto s = NoiseSchedule::from_betas({0.1, 0.2});
    EXPECT_DOUBLE_EQ(s.alpha_bar(2), 0.9 * 0.8);
}

TEST(Schedule, DefaultsAreMonotoneAndPositive) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(100), 0.02);
    for (int t = 1; t <= 100; ++t) {
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        EXPECT_GT(s.alpha(t), 0.0);
        EXPECT_LT(s.alpha(t), 1.0);
        EXPECT_GT(s.posterior_precision(t), 0.0);
    }
    EXPECT_LT(s.alpha_bar(100), s.alpha_bar(1));
    EXPECT_DOUBLE_EQ(s.posterior_precision(1), 1.0 / 1e-4);
    const double expected = s.beta(50) * (1.0 - s.alpha_bar(49)) / (1.0 - s.alpha_bar(50));
    EXPECT_DOUBLE_EQ(s.posterior_variance(50), expected);
}

TEST(Schedule, InvalidRangesRejected) {
    EXPECT_THROW(NoiseSchedule(0, 1e-4, 0.02), ContractError);
    EXPECT_THROW(NoiseSchedule(10, 0.0, 0.02), ContractError);
    EXPECT_THROW(NoiseSchedule(10, 0.03, 0.02), ContractError);
    EXPECT_THROW(NoiseSchedule(10, 1e-4, 1.0), ContractError);
}

TEST(QSample, ZeroNoiseScalesByRootAlphaBar) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    const std::vector<double> x0{1.5, -2.0}, zero{0.0, 0.0};
    const auto x = q_sample(s, x0, 40, zero);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(x[i], std::sqrt(s.alpha_bar(40)) * x0[i]);
}

TEST(QSample, TinyBetaAtFirstStepIsNearlyX0) {
    const NoiseSchedule s(100, 1e-10, 0.02);
    const std::vector<double> x0{1.5, -2.0}, eps{0.7, -0.3};
    const auto x = q_sample(s, x0, 1, eps);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(x[i], x0[i], 1e-4);
}

TEST(QSample, TimestepOutOfRange) {
    const NoiseSchedule s(10, 1e-4, 0.02);
    const std::vector<double> v{0.0};
    EXPECT_THROW(q_sample(s, v, 0, v), ContractError);
    EXPECT_THROW(q_sample(s, v, 11, v), ContractError);
}

// Closed form and the stepwise chain both match N(sqrt(abar) x0, (1 - abar))
// in mean and variance within three standard errors.
TEST(QSample, ForwardMarginalMatchesStepwiseChain) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    const std::vector<double> x0{1.3};
    const int n = 100000;
    for (int t : {1, 50, 100}) {
        Rng rng(static_cast<std::uint64_t>(t));
        double sc = 0, sc2 = 0, sk = 0, sk2 = 0;
        for (int k = 0; k < n; ++k) {
            const std::vector<double> e{standard_normal(rng)};
            const double c = q_sample(s, x0, t, e)[0];
            sc += c;
            sc2 += c * c;
            std::vector<double> x = x0;
            for (int u = 1; u <= t; ++u) {
                const std::vector<double> e2{standard_normal(rng)};
                x = q_step(s, x, u, e2);
            }
            sk += x[0];
            sk2 += x[0] * x[0];
        }
        const double mu = std::sqrt(s.alpha_bar(t)) * x0[0], var = 1.0 - s.alpha_bar(t);
        const double se_mean = std::sqrt(var / n), se_var = var * std::sqrt(2.0 / (n - 1));
        for (auto [m1, m2] : {std::pair{sc, sc2}, std::pair{sk, sk2}}) {
            const double mean = m1 / n, v = (m2 - n * mean * mean) / (n - 1);
            EXPECT_LT(std::abs(mean - mu), 3 * se_mean) << "t=" << t;
            EXPECT_LT(std::abs(v - var), 3 * se_var) << "t=" << t;
        }
    }
}

TEST(ACoeff, ZeroLambdaIsZero) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    EXPECT_EQ(a_coeff(s, 30, 0.0), 0.0);
    EXPECT_THROW(a_coeff(s, 30, -1.0), ContractError);
}

TEST(ACoeff, DirectSubstitution) {
    // alpha_2 = 0.99 and abar_2 = 0.9.
    const auto s = NoiseSchedule::from_betas({1.0 - 0.9 / 0.99, 0.01});
    EXPECT_NEAR(s.alpha_bar(2), 0.9, 1e-15);
    EXPECT_NEAR(a_coeff(s, 2, 1.0), 0.0001 / 0.198, 1e-15);
    EXPECT_NEAR(a_coeff(s, 2, 1.0), 5.0505e-4, 1e-8);
}

TEST(ACoeff, LinearInLambda) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    Rng rng(1);
    for (int k = 0; k < 200; ++k) {
        const int t = 1 + static_cast<int>(uniform_index(rng, 100));
        const double a = 10 * uniform01(rng), b = 10 * uniform01(rng);
        EXPECT_NEAR(a_coeff(s, t, a + b), a_coeff(s, t, a) + a_coeff(s, t, b), 1e-12 * a_coeff(s, t, a + b));
    }
}

// 1/2 lambda |mu_a - mu_b|^2 == A(lambda) |eps_a - eps_b|^2 with
// mu = (x_t - beta / sqrt(1 - abar) eps) / sqrt(alpha) written out here.
TEST(ACoeff, MeanAndNoiseErrorsAgree) {
    const NoiseSchedule s(100, 1e-4, 0.02);
    Rng rng(2);
    for (int k = 0; k < 1000; ++k) {
        const int t = 1 + static_cast<int>(uniform_index(rng, 100));
        const std::size_t d = 1 + uniform_index(rng, 6);
        const double lambda = std::exp(6 * uniform01(rng) - 2);
        const auto x = standard_normal_vector(rng, d), ea = standard_normal_vector(rng, d), eb = standard_normal_vector(rng, d);
        const double c = s.beta(t) / std::sqrt(1 - s.alpha_bar(t)), r = 1 / std::sqrt(s.alpha(t));
        double dm = 0, de = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double ma = r * (x[i] - c * ea[i]), mb = r * (x[i] - c * eb[i]);
            dm += (ma - mb) * (ma - mb);
            de += (ea[i] - eb[i]) * (ea[i] - eb[i]);
        }
        const double lhs = 0.5 * lambda * dm, rhs = a_coeff(s, t, lambda) * de;
        EXPECT_NEAR(lhs, rhs, 1e-9 * rhs);
        const auto mu = mean_from_eps(s, x, t, ea);
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(mu[i], r * (x[i] - c * ea[i]), 1e-12);
    }
}

TEST(Loss, ZeroPsiIsVanillaBitExactly) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto model = MlpDenoiser::create(2, 3, 20, {8, 8}, Activation::tanh, rng);
        const NoiseSchedule s(20, 1e-3, 0.1);
        const auto b = random_batch(rng, 5, 2, 3, 20, 0.0);
        for (bool stop : {false, true}) {
            Graph gp, gv;
            const auto lp = pogdiff_loss(gp, model, s, b, stop);
            const auto lv = vanilla_loss(gv, model, s, b);
            EXPECT_EQ(lp.value(gp), lv.value(gv));
            EXPECT_EQ(gp.backward(lp.total), gv.backward(lv.total));
        }
    }
}

TEST(Loss, IdenticalNeighborConditionZeroesSecondTerm) {
    Rng rng(4);
    const auto model = MlpDenoiser::create(2, 3, 20, {8}, Activation::tanh, rng);
    const NoiseSchedule s(20, 1e-3, 0.1);
    auto b = random_batch(rng, 6, 2, 3, 20, 5.0);
    b.y_prime = b.y;
    Graph g;
    const auto l = pogdiff_loss(g, model, s, b, false);
    EXPECT_EQ(l.term2, 0.0);
    EXPECT_DOUBLE_EQ(l.value(g), l.term1);
}

TEST(Loss, RecomposesFromIndependentlyComputedTerms) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto model = MlpDenoiser::create(2, 4, 50, {16}, Activation::tanh, rng);
        const NoiseSchedule s(50, 1e-4, 0.05);
        const auto b = random_batch(rng, 7, 2, 4, 50, 1.0);
        Graph g;
        const auto l = pogdiff_loss(g, model, s, b, false);
        const auto r = recompute(model, s, b);
        EXPECT_NEAR(l.value(g), r.term1 + r.term2, 1e-12 * r.total);
        EXPECT_NEAR(l.term1, r.term1, 1e-12 * r.term1);
        EXPECT_NEAR(l.term2, r.term2, 1e-12 * r.term2);
    }
}

TEST(Loss, NegativePsiRejected) {
    Rng rng(4);
    const auto model = MlpDenoiser::create(1, 1, 5, {2}, Activation::tanh, rng);
    const NoiseSchedule s(5, 1e-3, 0.1);
    auto b = random_batch(rng, 2, 1, 1, 5, 1.0);
    b.psi[1] = -0.5;
    Graph g;
    EXPECT_THROW(pogdiff_loss(g, model, s, b, false), ContractError);
}

TEST(Loss, GradientsMatchFiniteDifferencesBothSettings) {
    for (bool stop : {false, true}) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed + 1000);
            const std::size_t d = 1 + uniform_index(rng, 3), c = 1 + uniform_index(rng, 3);
            const auto model = MlpDenoiser::create(d, c, 10, {6}, Activation::tanh, rng);
            const NoiseSchedule s(10, 1e-3, 0.2);
            auto b = random_batch(rng, 3, d, c, 10, 0.0);
            for (auto& p : b.psi) p = 2.0 * uniform01(rng);
            Graph g;
            const auto analytic = g.backward(pogdiff_loss(g, model, s, b, stop).total);
            Tensor frozen;
            if (stop) frozen = mlp_forward(model, noised_inputs(s, b), b.t, b.y_prime);
            const auto res = grad_check(
                [&](const ParameterSet& p) {
                    MlpDenoiser m = model;
                    m.params = p;
                    return recompute(m, s, b, stop ? &frozen : nullptr).total;
                },
                model.params, analytic, 1e-5);
            worst = std::max(worst, res.max_error);
        }
        EXPECT_LT(worst, 1e-4) << "stop_grad=" << stop;
    }
}

TEST(Ddim, TimestepsAreEvenlySpacedAndIncludeEnds) {
    const auto ts = ddim_timesteps(100, 50);
    ASSERT_EQ(ts.size(), 50u);
    EXPECT_EQ(ts.front(), 100);
    EXPECT_EQ(ts.back(), 1);
    for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
    const auto all = ddim_timesteps(10, 10);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(all[i], 10 - i);
    EXPECT_THROW(ddim_timesteps(10, 11), ContractError);
}

// eps(x_t) = w x_t: the full-length DDIM recursion written out by hand.
TEST(Ddim, LinearDenoiserMatchesHandRecursion) {
    const int T = 20;
    const NoiseSchedule s(T, 1e-3, 0.2);
    MlpDenoiser m;
    m.data_dim = 1;
    m.cond_dim = 1;
    m.num_steps = T;
    m.shape = MlpShape{{1 + kTimeEmbeddingDim + 1, 1}, Activation::identity};
    const double w = 0.3;
    m.params[layer_weight_name("", 0)] = Tensor::matrix(5, 1, {w, 0, 0, 0, 0});
    m.params[layer_bias_name("", 0)] = Tensor(Shape{1});
    const Tensor y = Tensor::matrix(1, 1, {0.5});
    const Tensor xT = Tensor::matrix(1, 1, {1.7});
    double x = 1.7;
    for (int t = T; t >= 1; --t) {
        const double e = w * x, ab = s.alpha_bar(t), abp = t > 1 ? s.alpha_bar(t - 1) : 1.0;
        const double x0 = (x - std::sqrt(1 - ab) * e) / std::sqrt(ab);
        x = std::sqrt(abp) * x0 + std::sqrt(1 - abp) * e;
    }
    EXPECT_NEAR(ddim_sample(m, s, y, T, xT)[0], x, 1e-12 * std::max(1.0, std::abs(x)));
}

TEST(Ddim, DeterministicGivenStartingNoise) {
    Rng rng(8);
    const auto model = MlpDenoiser::create(2, 3, 50, {8}, Activation::tanh, rng);
    const NoiseSchedule s(50, 1e-4, 0.02);
    const Tensor y(Shape{4, 3}, standard_normal_vector(rng, 12)), xT(Shape{4, 2}, standard_normal_vector(rng, 8));
    EXPECT_EQ(ddim_sample(model, s, y, 25, xT), ddim_sample(model, s, y, 25, xT));
}

TEST(Ddpm, ReproducibleWithSameStream) {
    Rng rng(9);
    const auto model = MlpDenoiser::create(2, 3, 30, {8}, Activation::tanh, rng);
    const NoiseSchedule s(30, 1e-4, 0.02);
    const Tensor y(Shape{3, 3}, standard_normal_vector(rng, 9)), xT(Shape{3, 2}, standard_normal_vector(rng, 6));
    Rng a(1), b(1);
    const Tensor xa = ddpm_sample(model, s, y, xT, a), xb = ddpm_sample(model, s, y, xT, b);
    EXPECT_EQ(xa, xb);
    EXPECT_TRUE(xa.all_finite());
}

TEST(Train, PsiOverrideZeroReproducesVanillaTrajectory) {
    ExperimentConfig c = quick_config(300);
    c.training.psi_override = 0.0;
    const auto v = train_run(c, Method::vanilla, 3);
    const auto p = train_run(c, Method::pogdiff, 3);
    ASSERT_EQ(v.trace.size(), p.trace.size());
    for (std::size_t i = 0; i < v.trace.size(); ++i) ASSERT_EQ(v.trace[i].total, p.trace[i].total) << "step " << i;
    EXPECT_EQ(v.model.params, p.model.params);
}

TEST(Train, SameSeedGivesIdenticalTrace) {
    const ExperimentConfig c = quick_config(200);
    const auto a = train_run(c, Method::pogdiff, 5);
    const auto b = train_run(c, Method::pogdiff, 5);
    ASSERT_EQ(a.trace.size(), 200u);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].total, b.trace[i].total);
        EXPECT_EQ(a.trace[i].term2, b.trace[i].term2);
    }
    EXPECT_EQ(a.model.params, b.model.params);
}

TEST(Train, NonFiniteLossReportsStep) {
    ExperimentConfig c = quick_config(50);
    c.training.lr = 1e12;
    c.training.optimizer = OptimizerMethod::sgd;
    try {
        train_run(c, Method::vanilla, 0);
        FAIL() << "expected a failure";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "train");
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

// A two-sample, near-zero-spread identity: the neighbor is always the other
// copy, and the model should learn to produce that point.
TEST(Train, MemorizesATinyDataset) {
    ExperimentConfig c = quick_config(2000);
    c.dataset.identities = {{"A", 2}};
    c.dataset.spread = 1e-3;
    c.psi.k = 1;
    const auto run = train_run(c, Method::pogdiff, 0);
    const auto sets = sample_identities(c, run.data, run.model, 0);
    const auto& x0 = run.data[0].x0;
    double mse = 0.0;
    for (std::size_t i = 0; i < sets[0].samples.rows(); ++i) mse += squared_distance(sets[0].samples.row(i), x0) / 2.0;
    mse /= static_cast<double>(sets[0].samples.rows());
    EXPECT_LT(mse, 0.05);
}

TEST(Train, ConditionedSamplesLandNearTheirIdentity) {
    const ExperimentConfig c;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        const auto run = train_run(c, Method::pogdiff, seed);
        const auto sets = sample_identities(c, run.data, run.model, seed);
        const auto mean_a = run.data.data_mean("A"), mean_b = run.data.data_mean("B");
        const auto& a = sets[0];
        ASSERT_EQ(a.identity, "A");
        std::size_t near = 0;
        for (std::size_t i = 0; i < a.samples.rows(); ++i)
            near += squared_distance(a.samples.row(i), mean_a) < squared_distance(a.samples.row(i), mean_b) ? 1 : 0;
        EXPECT_GE(static_cast<double>(near), 0.9 * static_cast<double>(a.samples.rows())) << "seed " << seed;
    }
}
