#include "flr/errors.hpp"
#include "flr/random.hpp"
#include "flr/simulation.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flr;
using namespace flr::simulation;
using flr_test::sim_grid;

TEST(Philox, MatchesNumpyStreamFromZero) {
    Philox4x64 rng(0, 0);
    const std::uint64_t expected[8] = {0x2f4ba6408e4d89b,  0x3dd62b0b9ca8c5b2, 0x1c8667a55d902e79,
                                       0x907d7a052fd5b4dc, 0x809bf322883987c3, 0x471128b9e807f7dd,
                                       0xf250ba0dbec065b7, 0xfc6ed66767a457bc};
    for (auto e : expected) EXPECT_EQ(rng(), e);
}

TEST(Philox, MatchesNumpyStreamWithKeyAndCounter) {
    Philox4x64 rng({0x452821e638d01377, 0xbe5466cf34e90c6c},
                   {0x243f6a8885a308d3, 0x13198a2e03707344, 0xa4093822299f31d0, 0x082efa98ec4e6c89});
    const std::uint64_t expected[4] = {0x4c8e672094922aa3, 0x527061cd2884102a, 0xf4c265b2d783d553,
                                       0x0556e76cb0298c8d};
    for (auto e : expected) EXPECT_EQ(rng(), e);
}

TEST(Philox, MatchesReferenceBlockVector) {
    // The first block encrypts counter + 1, so start one below the reference counter.
    Philox4x64 rng({0x452821e638d01377, 0xbe5466cf34e90c6c},
                   {0x243f6a8885a308d2, 0x13198a2e03707344, 0xa4093822299f31d0, 0x082efa98ec4e6c89});
    const std::uint64_t expected[4] = {0xa528f45403e61d95, 0x38c72dbd566e9788, 0xa5a1610e72fd18b5,
                                       0x57bd43b5e52b7fe6};
    for (auto e : expected) EXPECT_EQ(rng(), e);
}

TEST(Philox, DistinctKeysGiveDistinctStreams) {
    Philox4x64 a(1, 0), b(2, 0), c(1, 1);
    const auto x = a();
    EXPECT_NE(x, b());
    EXPECT_NE(x, c());
}

TEST(DrawScores, MixtureMoments) {
    SimConfig c;
    c.scores = ScoreDistribution::Mixture;
    Philox4x64 rng(99, 0);
    constexpr int n = 100000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
    for (int i = 0; i < n; ++i) {
        const auto z = draw_scores(c, rng);
        sum += z;
        sq += z.cwiseProduct(z);
    }
    const Eigen::Vector2d mean = sum / n;
    const Eigen::Vector2d var = sq / n - mean.cwiseProduct(mean);
    EXPECT_LE(std::abs(mean[0]), 0.05);
    EXPECT_LE(std::abs(var[0] - 2.0), 0.1);
    EXPECT_LE(std::abs(mean[1]), 0.05);
    EXPECT_LE(std::abs(var[1] - 1.0), 0.05);
}

TEST(GenPair, DesignShape) {
    for (auto sp : {Sparsity::Sparse, Sparsity::Nonsparse}) {
        SimConfig c;
        c.n = 50;
        c.sparsity = sp;
        Philox4x64 rng(1, 0);
        const auto p = gen_pair(c, rng);
        const auto [lo, hi] = c.count_range();
        ASSERT_EQ(p.x.n_subjects(), 50u);
        ASSERT_EQ(p.truth.subjects.size(), 50u);
        for (std::size_t i = 0; i < 50; ++i) {
            for (const auto* s : {&p.x[i], &p.y[i]}) {
                EXPECT_GE(static_cast<int>(s->size()), lo);
                EXPECT_LE(static_cast<int>(s->size()), hi);
            }
            EXPECT_EQ(p.x[i].id, p.y[i].id);
        }
    }
}

TEST(GenPair, BitIdenticalUnderFixedSeed) {
    SimConfig c;
    c.n = 30;
    Philox4x64 a(5, 0), b(5, 0);
    const auto p = gen_pair(c, a);
    const auto q = gen_pair(c, b);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(p.x[i].times, q.x[i].times);
        EXPECT_EQ(p.x[i].values, q.x[i].values);
        EXPECT_EQ(p.y[i].values, q.y[i].values);
        EXPECT_EQ(p.truth.subjects[i].scores, q.truth.subjects[i].scores);
    }
}

TEST(GenPair, EmpiricalCovarianceConverges) {
    SimConfig c;
    c.n = 10000;
    Philox4x64 rng(7, 0);
    const auto p = gen_pair(c, rng);
    const auto g = sim_grid(21);
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd values(static_cast<Eigen::Index>(c.n), n);
    for (std::size_t i = 0; i < c.n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            values(static_cast<Eigen::Index>(i), j) = p.truth.subjects[i].predictor(g[static_cast<std::size_t>(j)]);
        }
    }
    const Eigen::RowVectorXd mean = values.colwise().mean();
    const Eigen::MatrixXd centered = values.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(c.n - 1);
    double err = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            err = std::max(err, std::abs(cov(a, b) - true_covariance_x(c, g[static_cast<std::size_t>(a)],
                                                                       g[static_cast<std::size_t>(b)])));
        }
    }
    EXPECT_LE(err, 0.15);
}

TEST(GenPair, ConditionalMeanIsIntegralOfBeta) {
    SimConfig c;
    c.n = 25;
    Philox4x64 rng(8, 0);
    const auto p = gen_pair(c, rng);
    constexpr int nq = 2001;
    const double h = 10.0 / (nq - 1);
    for (const auto& tr : p.truth.subjects) {
        for (double t : {0.0, 2.3, 5.0, 8.8, 10.0}) {
            double acc = 0.0;
            for (int i = 0; i < nq; ++i) {
                const double s = i * h;
                const double w = (i == 0 || i == nq - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
                acc += w * true_beta(c, s, t) * tr.predictor(s);
            }
            EXPECT_NEAR(tr.conditional_mean(t), acc * h / 3.0, 1e-6);
        }
    }
}

TEST(TruthAlgebra, QuadratureIdentities) {
    const SimConfig c;
    const auto g = sim_grid(1001);
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::VectorXd p0(n), p1(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        p0[i] = true_eigenfunction(0, g[static_cast<std::size_t>(i)]);
        p1[i] = true_eigenfunction(1, g[static_cast<std::size_t>(i)]);
    }
    EXPECT_NEAR(g.integrate(p0.cwiseProduct(p0)), 1.0, 1e-12);
    EXPECT_NEAR(g.integrate(p1.cwiseProduct(p1)), 1.0, 1e-12);
    EXPECT_NEAR(g.integrate(p0.cwiseProduct(p1)), 0.0, 1e-12);
    // <psi_1, s + sin s> in closed form: -(1/sqrt 5) * integral of cos(pi s/10)(s + sin s).
    const double k = std::numbers::pi / 10.0;
    const double int_s_cos = (std::cos(10.0 * k) - 1.0) / (k * k);  // integral of s cos(ks) on [0, 10]
    const auto int_sin_cos = [&](double s) {  // antiderivative of sin(s) cos(ks)
        return -std::cos((1 + k) * s) / (2 * (1 + k)) - std::cos((1 - k) * s) / (2 * (1 - k));
    };
    const double expected0 = -(int_s_cos + int_sin_cos(10.0) - int_sin_cos(0.0)) / std::sqrt(5.0);
    EXPECT_NEAR(mean_projection()[0], expected0, 1e-10);
    EXPECT_NEAR(true_mean_y(c, 3.7), mean_projection().dot(c.b.transpose() *
                                                           Eigen::Vector2d(true_eigenfunction(0, 3.7),
                                                                           true_eigenfunction(1, 3.7))),
                1e-14);
}

TEST(InScores, OneTermAndZeroCases) {
    const SimConfig c;
    const auto model = flr_test::truth_x_model(c, sim_grid());
    SubjectRecord zero{"z", {1.0, 4.0}, {model.mean(1.0), model.mean(4.0)}};
    EXPECT_EQ(in_scores(model, zero).cwiseAbs().maxCoeff(), 0.0);

    const double s = 3.0, r = 0.8;
    const SubjectRecord one{"o", {s}, {model.mean(s) + r}};
    const auto z = in_scores(model, one);
    for (std::size_t m = 0; m < 2; ++m) {
        EXPECT_NEAR(z[static_cast<Eigen::Index>(m)], r * model.eig.value(m, s) * (s - 0.0), 1e-14);
    }
    const auto shifted = in_scores(model, one, std::nullopt, 2.0);
    EXPECT_NEAR(shifted[1], r * model.eig.value(1, s) * (s - 2.0), 1e-14);
}

TEST(InScores, DenseNoiselessSubjectNearQuadrature) {
    const SimConfig c;
    const auto g = sim_grid();
    const auto model = flr_test::truth_x_model(c, g);
    for (const Eigen::Vector2d zeta : {Eigen::Vector2d(1.4, 0.9), Eigen::Vector2d(-0.7, 1.6)}) {
        SubjectTruth tr{zeta, {}};
        SubjectRecord s{"d", g.points(), {}};
        for (double t : g.points()) s.values.push_back(tr.predictor(t));
        const auto z = in_scores(model, s);
        for (Eigen::Index m = 0; m < 2; ++m) EXPECT_LE(std::abs(z[m] - zeta[m]), 0.02 * std::abs(zeta[m])) << m;
    }
}

TEST(Rmspe, AlgebraicCases) {
    const auto g = sim_grid();
    std::vector<Eigen::VectorXd> truth, doubled;
    for (int i = 1; i <= 4; ++i) {
        Eigen::VectorXd v = (g.as_vector().array() * 0.3 * i).sin() + 0.5 * i;
        truth.push_back(v);
        doubled.push_back(2.0 * v);
    }
    EXPECT_EQ(rmspe(truth, truth, g).value, 0.0);
    EXPECT_EQ(rmspe(doubled, truth, g).value, 1.0);

    auto with_zero = truth;
    with_zero.push_back(Eigen::VectorXd::Zero(51));
    auto pred = doubled;
    pred.push_back(Eigen::VectorXd::Ones(51));
    const auto r = rmspe(pred, with_zero, g);
    EXPECT_EQ(r.excluded, 1u);
    EXPECT_EQ(r.used, 4u);
    EXPECT_EQ(r.value, 1.0);
    EXPECT_THROW(rmspe({}, {}, g), UsageError);
}

TEST(Median, OddAndEven) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
    EXPECT_TRUE(std::isnan(median({})));
}

TEST(MonteCarlo, SingleRunIsReproducible) {
    SimConfig c;
    c.seed = 7;
    const auto a = run_monte_carlo(c, 1, 50);
    const auto b = run_monte_carlo(c, 1, 50);
    ASSERT_EQ(a.runs.size(), 1u);
    ASSERT_TRUE(a.runs[0].ok) << a.runs[0].error;
    EXPECT_EQ(a.ce_median, b.ce_median);
    EXPECT_EQ(a.in_median, b.in_median);
    EXPECT_EQ(a.runs[0].K, b.runs[0].K);
    EXPECT_EQ(a.runs[0].M, b.runs[0].M);
    EXPECT_GT(a.ce_median, 0.0);
}

TEST(MonteCarlo, InvalidRequestsAreUsageErrors) {
    const SimConfig c;
    EXPECT_THROW(run_monte_carlo(c, 0, 10), UsageError);
    EXPECT_THROW(run_monte_carlo(c, 1, 0), UsageError);
    EXPECT_THROW(sparsity_from_string("dense"), UsageError);
    EXPECT_THROW(distribution_from_string("t"), UsageError);
}

TEST(MonteCarlo, AbortsPastFailureThreshold) {
    SimConfig c;
    c.n = 1;  // a single subject cannot support any bandwidth search
    const auto r = run_monte_carlo(c, 10, 5);
    EXPECT_TRUE(r.aborted);
    EXPECT_EQ(r.failures, 3u);
    EXPECT_EQ(r.runs.size(), 3u);
    EXPECT_FALSE(r.runs[0].error.empty());
    EXPECT_TRUE(std::isnan(r.ce_median));
}
