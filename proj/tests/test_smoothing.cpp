#include "flr/errors.hpp"
#include "flr/random.hpp"
#include "flr/simulation.hpp"
#include "flr/smoothing.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace flr;
using namespace flr::smoothing;

namespace {

// Dense weighted least squares at one target: columns 1, (x - s), solved by QR.
double wls_1d(const std::vector<CurvePoint>& pts, double s, double h, Kernel1 k) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(pts.size()), 2);
    Eigen::VectorXd y(x.rows()), w(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto& p = pts[static_cast<std::size_t>(i)];
        x(i, 0) = 1.0;
        x(i, 1) = p.x - s;
        y[i] = p.y;
        w[i] = std::sqrt(p.weight * k((p.x - s) / h));
    }
    const Eigen::MatrixXd a = w.asDiagonal() * x;
    const Eigen::VectorXd b = w.asDiagonal() * y;
    return a.colPivHouseholderQr().solve(b)[0];
}

double wls_2d(const std::vector<SurfacePoint>& pts, double s1, double s2, Bandwidth2 h, Kernel2 k) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(pts.size()), 3);
    Eigen::VectorXd z(x.rows()), w(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto& p = pts[static_cast<std::size_t>(i)];
        x.row(i) << 1.0, p.x1 - s1, p.x2 - s2;
        z[i] = p.z;
        w[i] = std::sqrt(p.weight * k((p.x1 - s1) / h.h1, (p.x2 - s2) / h.h2));
    }
    const Eigen::MatrixXd a = w.asDiagonal() * x;
    const Eigen::VectorXd b = w.asDiagonal() * z;
    return a.colPivHouseholderQr().solve(b)[0];
}

// Brute-force GCV / leave-one-point-out CV for the 1-D smoother, every point
// in its own group. The hat diagonal is e1' (X'WX)^-1 e1 K(0).
double objective_1d(const std::vector<CurvePoint>& pts, double h, BandwidthObjective obj, Kernel1 k) {
    double rss = 0.0, trace = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
        Eigen::Vector2d r = Eigen::Vector2d::Zero();
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (obj == BandwidthObjective::LosoCv && j == i) continue;
            const double d = pts[j].x - pts[i].x;
            const double w = k(d / h);
            const Eigen::Vector2d v(1.0, d);
            m += w * v * v.transpose();
            r += w * pts[j].y * v;
        }
        const Eigen::Vector2d beta = m.inverse() * r;
        rss += std::pow(pts[i].y - beta[0], 2);
        trace += m.inverse()(0, 0) * k(0.0);
    }
    const double n = static_cast<double>(pts.size());
    if (obj == BandwidthObjective::LosoCv) return rss / n;
    return (rss / n) / std::pow(1.0 - trace / n, 2);
}

std::vector<CurvePoint> random_curve(std::size_t n, std::uint64_t seed, auto f, double noise = 0.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::normal_distribution<double> e(0.0, 1.0);
    std::vector<CurvePoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = u(gen);
        pts.push_back({x, f(x) + noise * e(gen), 1.0, i});
    }
    return pts;
}

std::vector<SurfacePoint> random_surface(std::size_t n, std::uint64_t seed, auto f, double lo = 0.0,
                                         double hi = 10.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<SurfacePoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = u(gen), b = u(gen);
        pts.push_back({a, b, f(a, b), 1.0, i});
    }
    return pts;
}

const RegularGrid kGrid(Interval(0.0, 10.0), 51);

}  // namespace

TEST(Kernel, UnitMass) {
    for (auto shape : {KernelShape::Epanechnikov, KernelShape::Quartic}) {
        const Kernel1 k(shape);
        constexpr int n = 2001;
        const double h = 2.0 / (n - 1);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            acc += w * k(-1.0 + i * h);
        }
        EXPECT_NEAR(acc * h / 3.0, 1.0, 1e-8) << to_string(shape);
        EXPECT_EQ(k(1.0), 0.0);
        EXPECT_EQ(k(-1.5), 0.0);
    }
    EXPECT_EQ(kernel_from_string("quartic"), KernelShape::Quartic);
    EXPECT_THROW(kernel_from_string("gauss"), UsageError);
}

TEST(LocalLinear1d, ReproducesAffineFunctions) {
    const auto pts = random_curve(60, 1, [](double x) { return 2.0 * x + 1.0; });
    for (double h : {0.3, 1.0, 4.0, 50.0}) {
        const auto fit = local_linear_1d(pts, h, kGrid);
        for (std::size_t i = 0; i < kGrid.size(); ++i) {
            EXPECT_NEAR(fit.values[static_cast<Eigen::Index>(i)], 2.0 * kGrid[i] + 1.0, 1e-9) << "h=" << h;
        }
    }
}

TEST(LocalLinear1d, ConstantData) {
    const auto pts = random_curve(40, 2, [](double) { return -3.25; });
    const auto fit = local_linear_1d(pts, 0.8, kGrid);
    EXPECT_LT((fit.values.array() + 3.25).abs().maxCoeff(), 1e-12);
}

TEST(LocalLinear1d, MatchesDenseWlsOracle) {
    const std::vector<CurvePoint> pts{{0.0, 1.0}, {0.3, 0.2}, {0.55, 2.0}, {0.9, -1.0}, {1.4, 0.7}};
    const LocalLinear1d smoother(pts);
    const auto got = smoother.fit_at(0.5, 1.0);
    ASSERT_TRUE(got.has_value());
    EXPECT_NEAR(got->value, wls_1d(pts, 0.5, 1.0, Kernel1{}), 1e-12);
    EXPECT_FALSE(got->widened);
    EXPECT_FALSE(got->local_constant);

    const auto noisy = random_curve(80, 3, [](double x) { return std::sin(x); }, 0.3);
    const LocalLinear1d s2(noisy, Kernel1(KernelShape::Quartic));
    for (double s : {0.0, 2.2, 5.0, 9.7}) {
        EXPECT_NEAR(s2.fit_at(s, 1.5)->value, wls_1d(noisy, s, 1.5, Kernel1(KernelShape::Quartic)), 1e-10);
    }
}

TEST(LocalLinear1d, LinearInResponse) {
    const auto a = random_curve(70, 4, [](double x) { return std::cos(x); }, 0.5);
    auto b = random_curve(70, 4, [](double x) { return x * x; }, 0.5);
    auto sum = a;
    for (std::size_t i = 0; i < a.size(); ++i) sum[i].y = a[i].y + b[i].y;
    const auto fa = local_linear_1d(a, 0.7, kGrid);
    const auto fb = local_linear_1d(b, 0.7, kGrid);
    const auto fs = local_linear_1d(sum, 0.7, kGrid);
    EXPECT_LT((fs.values - fa.values - fb.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LocalLinear1d, WidensSparseWindowsAndStaysFinite) {
    const std::vector<CurvePoint> pts{{1.0, 1.0}, {1.2, 2.0}, {8.0, 5.0}};
    const auto fit = local_linear_1d(pts, 0.5, kGrid);
    EXPECT_GT(fit.diagnostics.widened, 0u);
    EXPECT_TRUE(fit.values.allFinite());
    const std::vector<CurvePoint> single{{2.0, 1.0}, {2.0, 3.0}};
    EXPECT_FALSE(LocalLinear1d(single).fit_at(2.0, 1.0).has_value());
}

TEST(LocalLinear2d, ReproducesPlanes) {
    const auto pts = random_surface(300, 5, [](double a, double b) { return 3.0 + a - 2.0 * b; });
    const RegularGrid g(Interval(0.0, 10.0), 11);
    for (Bandwidth2 h : {Bandwidth2{1.5, 1.5}, Bandwidth2{2.0, 4.0}, Bandwidth2{30.0, 30.0}}) {
        const auto fit = local_linear_2d(pts, h, g, g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            for (std::size_t j = 0; j < g.size(); ++j) {
                EXPECT_NEAR(fit.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                            3.0 + g[i] - 2.0 * g[j], 1e-9);
            }
        }
    }
}

TEST(LocalLinear2d, ZeroData) {
    const auto pts = random_surface(100, 6, [](double, double) { return 0.0; });
    const auto fit = local_linear_2d(pts, {2.0, 2.0}, kGrid, kGrid);
    EXPECT_EQ(fit.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LocalLinear2d, MatchesDenseWlsOracle) {
    const auto pts = random_surface(20, 7, [](double a, double b) { return std::sin(a) * b + 0.3 * a * a; }, 0.0,
                                    2.0);
    const RegularGrid g(Interval(0.0, 2.0), 5);
    const Bandwidth2 h{1.0, 1.0};
    const double oracle = wls_2d(pts, 1.0, 1.0, h, Kernel2{});
    const LocalLinear2d smoother(pts);
    const auto at = smoother.fit_at(1.0, 1.0, h);
    ASSERT_TRUE(at.has_value());
    EXPECT_FALSE(at->widened);
    EXPECT_NEAR(at->value, oracle, 1e-10);
    EXPECT_NEAR(smoother.fit(h, g, g).values(2, 2), oracle, 1e-10);
}

TEST(LocalLinear2d, GridFitAgreesWithPointFits) {
    const auto pts = random_surface(400, 8, [](double a, double b) { return std::cos(a - b); });
    const RegularGrid g(Interval(0.0, 10.0), 21);
    const LocalLinear2d smoother(pts, Kernel2(Kernel1(KernelShape::Quartic)));
    const auto fit = smoother.fit({1.3, 0.9}, g, g);
    for (std::size_t i = 0; i < g.size(); i += 3) {
        for (std::size_t j = 0; j < g.size(); j += 4) {
            EXPECT_NEAR(fit.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                        smoother.fit_at(g[i], g[j], {1.3, 0.9})->value, 1e-10);
        }
    }
}

TEST(LocalLinear2d, LinearInResponse) {
    auto a = random_surface(250, 9, [](double x, double y) { return x * y; });
    auto b = random_surface(250, 9, [](double x, double) { return std::exp(-x); });
    auto sum = a;
    for (std::size_t i = 0; i < a.size(); ++i) sum[i].z = a[i].z + b[i].z;
    const RegularGrid g(Interval(0.0, 10.0), 15);
    const auto fa = local_linear_2d(a, {1.2, 1.6}, g, g);
    const auto fb = local_linear_2d(b, {1.2, 1.6}, g, g);
    const auto fs = local_linear_2d(sum, {1.2, 1.6}, g, g);
    EXPECT_LT((fs.values - fa.values - fb.values).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(fs.values.allFinite());
}

TEST(LocalLinear2d, CollinearWindowFallsBackToLocalConstant) {
    std::vector<SurfacePoint> pts;
    for (int i = 0; i <= 40; ++i) pts.push_back({i * 0.25, i * 0.25, 4.0});
    const RegularGrid g(Interval(0.0, 10.0), 6);
    const auto fit = local_linear_2d(pts, {1.0, 1.0}, g, g);
    EXPECT_GT(fit.diagnostics.local_constant, 0u);
    EXPECT_TRUE(fit.values.allFinite());
    EXPECT_NEAR(fit.values(2, 2), 4.0, 1e-12);
}

TEST(LocalLinear2d, EmptyWindowIsWidened) {
    const std::vector<SurfacePoint> pts{{0.0, 0.0, 1.0}, {0.5, 0.1, 1.0}, {0.2, 0.6, 1.0}, {0.4, 0.4, 1.0}};
    const RegularGrid g(Interval(0.0, 10.0), 3);
    const auto fit = local_linear_2d(pts, {0.3, 0.3}, g, g);
    EXPECT_GT(fit.diagnostics.widened, 0u);
    EXPECT_NEAR(fit.values(2, 2), 1.0, 1e-9);
}

TEST(LocalDiagRotated, ConstantAndLinearAlongDiagonal) {
    std::vector<SurfacePoint> pts;
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    while (pts.size() < 2000) {
        const double a = u(gen), b = u(gen);
        if (a != b) pts.push_back({a, b, (a + b) / 2.0});
    }
    auto constant = pts;
    for (auto& p : constant) p.z = 1.75;
    const auto c = local_diag_rotated(constant, 1.0, kGrid);
    EXPECT_LT((c.values.array() - 1.75).abs().maxCoeff(), 1e-10);
    const auto lin = local_diag_rotated(pts, 1.0, kGrid);
    EXPECT_LT((lin.values - kGrid.as_vector()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LocalDiagRotated, RecoversSimulationDiagonal) {
    // True rank-2 predictor covariance sampled at the off-diagonal time pairs
    // of a simulated n = 400 sparse design.
    simulation::SimConfig cfg;
    cfg.n = 400;
    Philox4x64 rng(2024, 0);
    const auto pair = simulation::gen_pair(cfg, rng);
    std::vector<SurfacePoint> pts;
    for (std::size_t i = 0; i < pair.x.n_subjects(); ++i) {
        const auto& s = pair.x[i];
        for (std::size_t a = 0; a < s.size(); ++a) {
            for (std::size_t b = 0; b < s.size(); ++b) {
                if (a == b) continue;
                pts.push_back({s.times[a], s.times[b], simulation::true_covariance_x(cfg, s.times[a], s.times[b]), 1.0, i});
            }
        }
    }
    const auto fit = local_diag_rotated(pts, 1.0, kGrid);
    double err = 0.0;
    for (std::size_t i = 0; i < kGrid.size(); ++i) {
        err = std::max(err, std::abs(fit.values[static_cast<Eigen::Index>(i)] -
                                     simulation::true_covariance_x(cfg, kGrid[i], kGrid[i])));
    }
    EXPECT_LE(err, 0.05);
}

TEST(LocalDiagRotated, TooFewPointsIsAnError) {
    const std::vector<SurfacePoint> pts{{1.0, 2.0, 0.0}, {2.0, 1.0, 0.0}};
    EXPECT_THROW(local_diag_rotated(pts, 1.0, kGrid), NumericalError);
}

TEST(SelectBandwidth, SingleCandidate) {
    const auto pts = random_curve(50, 12, [](double x) { return x; }, 0.1);
    const std::vector<double> one{0.9};
    EXPECT_EQ(select_bandwidth(pts, one, BandwidthObjective::Gcv).bandwidth, 0.9);
}

TEST(SelectBandwidth, EmptyOrInvalidCandidatesAreErrors) {
    const auto pts = random_curve(50, 13, [](double x) { return x; }, 0.1);
    EXPECT_THROW(select_bandwidth(pts, std::vector<double>{}, BandwidthObjective::Gcv), UsageError);
    EXPECT_THROW(select_bandwidth(pts, std::vector<double>{1.0, -1.0}, BandwidthObjective::Gcv), UsageError);
    const std::vector<SurfacePoint> surf{{1.0, 1.0, 0.0}};
    EXPECT_THROW(select_bandwidth(surf, std::vector<Bandwidth2>{}, BandwidthObjective::Gcv), UsageError);
}

TEST(SelectBandwidth, AllDegenerateListsFailures) {
    const std::vector<CurvePoint> pts{{1.0, 0.0, 1.0, 0}, {1.0, 1.0, 1.0, 1}};
    try {
        select_bandwidth(pts, std::vector<double>{0.5, 1.0}, BandwidthObjective::Gcv);
        FAIL();
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("0.5"), std::string::npos);
        EXPECT_NE(msg.find("1.0"), std::string::npos);
    }
}

TEST(SelectBandwidth, ArgminOfBruteForceObjective) {
    const auto pts = random_curve(300, 14, [](double x) { return std::sin(x) + 0.1 * x; }, 0.2);
    const std::vector<double> candidates{0.5, 1.0, 2.0};
    for (auto obj : {BandwidthObjective::Gcv, BandwidthObjective::LosoCv}) {
        const auto sel = select_bandwidth(pts, candidates, obj);
        ASSERT_EQ(sel.table.size(), 3u);
        std::size_t best = 0;
        std::vector<double> oracle;
        for (std::size_t c = 0; c < 3; ++c) {
            oracle.push_back(objective_1d(pts, candidates[c], obj, Kernel1{}));
            EXPECT_NEAR(sel.table[c].score, oracle[c], 1e-10 * oracle[c]) << to_string(obj);
            if (oracle[c] < oracle[best]) best = c;
        }
        EXPECT_EQ(sel.bandwidth, candidates[best]) << to_string(obj);
    }
}

TEST(SelectBandwidth, SurfaceCandidatesScoreMatchesFitAt) {
    const auto pts = random_surface(300, 15, [](double a, double b) { return std::sin(a) * std::cos(b); });
    const std::vector<Bandwidth2> candidates{{1.0, 1.0}, {2.0, 2.0}, {4.0, 4.0}};
    const auto sel = select_bandwidth(pts, candidates, BandwidthObjective::LosoCv);
    const LocalLinear2d smoother(pts);
    std::size_t best = 0;
    std::vector<double> oracle;
    for (std::size_t c = 0; c < 3; ++c) {
        double rss = 0.0;
        for (const auto& p : smoother.points()) {
            rss += std::pow(p.z - smoother.fit_at(p.x1, p.x2, candidates[c], p.group)->value, 2);
        }
        oracle.push_back(rss / 300.0);
        EXPECT_NEAR(sel.table[c].score, oracle[c], 1e-12);
        if (oracle[c] < oracle[best]) best = c;
    }
    EXPECT_EQ(sel.bandwidth, candidates[best]);
}

TEST(BandwidthCandidates, FractionsOfDomain) {
    const auto c = bandwidth_candidates(Interval(0.0, 10.0), std::vector<double>{0.1, 0.25});
    EXPECT_EQ(c, (std::vector<double>{1.0, 2.5}));
    EXPECT_FALSE(default_bandwidth_fractions().empty());
}
