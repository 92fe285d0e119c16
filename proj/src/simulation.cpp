#include "flr/simulation.hpp"

#include "flr/errors.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace flr::simulation {

std::string to_string(Sparsity s) { return s == Sparsity::Sparse ? "sparse" : "nonsparse"; }
std::string to_string(ScoreDistribution d) { return d == ScoreDistribution::Normal ? "normal" : "mixture"; }

Sparsity sparsity_from_string(const std::string& name) {
    if (name == "sparse") return Sparsity::Sparse;
    if (name == "nonsparse") return Sparsity::Nonsparse;
    throw UsageError("unknown sparsity '" + name + "' (expected sparse or nonsparse)");
}

ScoreDistribution distribution_from_string(const std::string& name) {
    if (name == "normal") return ScoreDistribution::Normal;
    if (name == "mixture") return ScoreDistribution::Mixture;
    throw UsageError("unknown score distribution '" + name + "' (expected normal or mixture)");
}

void SimConfig::validate() const {
    if (n < 1) throw UsageError("simulation needs at least one subject");
    if (!(x_noise_var >= 0.0) || !(y_noise_var >= 0.0)) throw UsageError("noise variances must be nonnegative");
    if (!(rho[0] > 0.0) || !(rho[1] > 0.0)) throw UsageError("eigenvalues must be positive");
}

double true_mean_x(double s) { return s + std::sin(s); }

double true_eigenfunction(std::size_t m, double s) {
    const double a = std::numbers::pi * s / 10.0;
    return (m == 0 ? -std::cos(a) : std::sin(a)) / std::sqrt(5.0);
}

double true_covariance_x(const SimConfig& c, double s1, double s2) {
    return c.rho[0] * true_eigenfunction(0, s1) * true_eigenfunction(0, s2) +
           c.rho[1] * true_eigenfunction(1, s1) * true_eigenfunction(1, s2);
}

namespace {

Eigen::Vector2d psi(double t) { return {true_eigenfunction(0, t), true_eigenfunction(1, t)}; }

}  // namespace

double true_beta(const SimConfig& c, double s, double t) { return psi(t).dot(c.b * psi(s)); }

const Eigen::Vector2d& mean_projection() {
    static const Eigen::Vector2d value = [] {
        constexpr int n = 1001;
        const double h = 10.0 / (n - 1);
        Eigen::Vector2d acc = Eigen::Vector2d::Zero();
        for (int i = 0; i < n; ++i) {
            const double s = i * h;
            const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            acc += w * true_mean_x(s) * psi(s);
        }
        return Eigen::Vector2d(acc * h / 3.0);
    }();
    return value;
}

double true_mean_y(const SimConfig& c, double t) { return psi(t).dot(c.b * mean_projection()); }

double true_cross_covariance(const SimConfig& c, double s, double t) {
    return psi(t).dot(c.b * c.rho.asDiagonal() * psi(s));
}

double true_covariance_y(const SimConfig& c, double t1, double t2) {
    return psi(t1).dot(c.b * c.rho.asDiagonal() * c.b.transpose() * psi(t2));
}

double SubjectTruth::conditional_mean(double t) const { return psi(t).dot(response_coef); }

Eigen::VectorXd SubjectTruth::conditional_mean(const RegularGrid& grid) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) out[static_cast<Eigen::Index>(i)] = conditional_mean(grid[i]);
    return out;
}

double SubjectTruth::predictor(double s) const { return true_mean_x(s) + psi(s).dot(scores); }

Eigen::Vector2d draw_scores(const SimConfig& c, Philox4x64& rng) {
    Eigen::Vector2d z;
    for (int m = 0; m < 2; ++m) {
        if (c.scores == ScoreDistribution::Normal) {
            z[m] = boost::random::normal_distribution<double>(0.0, std::sqrt(c.rho[m]))(rng);
        } else {
            const double half = c.rho[m] / 2.0;
            const double centre = boost::random::uniform_int_distribution<int>(0, 1)(rng) == 0 ? std::sqrt(half)
                                                                                              : -std::sqrt(half);
            z[m] = boost::random::normal_distribution<double>(centre, std::sqrt(half))(rng);
        }
    }
    return z;
}

namespace {

std::vector<double> draw_times(int count, Philox4x64& rng) {
    boost::random::uniform_real_distribution<double> unif(0.0, 10.0);
    std::vector<double> t(static_cast<std::size_t>(count));
    for (auto& v : t) v = unif(rng);
    std::sort(t.begin(), t.end());
    return t;
}

std::string subject_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", i + 1);
    return buf;
}

}  // namespace

SimulatedPair gen_pair(const SimConfig& c, Philox4x64& rng) {
    c.validate();
    const auto [cmin, cmax] = c.count_range();
    boost::random::uniform_int_distribution<int> count(cmin, cmax);
    boost::random::normal_distribution<double> x_noise(0.0, std::sqrt(c.x_noise_var));
    boost::random::normal_distribution<double> y_noise(0.0, std::sqrt(c.y_noise_var));

    std::vector<SubjectRecord> xs(c.n);
    std::vector<SubjectRecord> ys(c.n);
    TruthRecord truth;
    truth.subjects.resize(c.n);
    const Eigen::Vector2d mu_proj = mean_projection();
    for (std::size_t i = 0; i < c.n; ++i) {
        auto& tr = truth.subjects[i];
        tr.scores = draw_scores(c, rng);
        tr.response_coef = c.b * (mu_proj + tr.scores);

        xs[i].id = ys[i].id = subject_id(i);
        xs[i].times = draw_times(count(rng), rng);
        for (double s : xs[i].times) {
            xs[i].values.push_back(tr.predictor(s) + (c.x_noise_var > 0.0 ? x_noise(rng) : 0.0));
        }
        ys[i].times = draw_times(count(rng), rng);
        for (double t : ys[i].times) {
            ys[i].values.push_back(tr.conditional_mean(t) + (c.y_noise_var > 0.0 ? y_noise(rng) : 0.0));
        }
    }
    return {SparseFunctionalSample(std::move(xs), c.domain()), SparseFunctionalSample(std::move(ys), c.domain()),
            std::move(truth)};
}

Eigen::VectorXd in_scores(const fpca::FpcaModel& model, const SubjectRecord& subject,
                          std::optional<std::size_t> n_components, std::optional<double> origin) {
    const std::size_t m_count = n_components.value_or(model.n_components);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m_count));
    double prev = origin.value_or(model.domain().lo());
    for (std::size_t l = 0; l < subject.size(); ++l) {
        const double s = subject.times[l];
        const double r = subject.values[l] - model.mean(s);
        for (std::size_t m = 0; m < m_count; ++m) z[static_cast<Eigen::Index>(m)] += r * model.eig.value(m, s) * (s - prev);
        prev = s;
    }
    return z;
}

RmspeResult rmspe(const std::vector<Eigen::VectorXd>& predictions, const std::vector<Eigen::VectorXd>& truths,
                  const RegularGrid& grid) {
    if (predictions.size() != truths.size() || predictions.empty()) {
        throw UsageError("RMSPE needs matching, nonempty prediction and truth sets", "rmspe");
    }
    RmspeResult out;
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double den = grid.integrate(truths[i].cwiseProduct(truths[i]));
        if (!(den > 0.0)) {
            ++out.excluded;
            continue;
        }
        const Eigen::VectorXd d = predictions[i] - truths[i];
        acc += grid.integrate(d.cwiseProduct(d)) / den;
        ++out.used;
    }
    if (out.used == 0) throw NumericalError("every subject has a zero-norm truth", "rmspe");
    out.value = acc / static_cast<double>(out.used);
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

RunResult run_once(const SimConfig& config, std::size_t run, std::size_t n_new,
                   const regression::FlrConfig& fit_config) {
    RunResult out;
    out.run = run;
    try {
        Philox4x64 rng(config.seed + run, 0);
        const auto train = gen_pair(config, rng);
        const auto model = regression::fit_flr(train.x, train.y, fit_config);
        SimConfig fresh = config;
        fresh.n = n_new;
        const auto test = gen_pair(fresh, rng);

        const auto& grid = model.y_model.mean.grid;
        std::vector<Eigen::VectorXd> ce, in, truth;
        for (std::size_t i = 0; i < n_new; ++i) {
            ce.push_back(regression::predict_response(model, test.x[i]).values);
            in.push_back(regression::trajectory_from_scores(
                model, in_scores(model.x_model, test.x[i], model.M, config.in_spacing_origin)));
            truth.push_back(test.truth.subjects[i].conditional_mean(grid));
        }
        out.ce = rmspe(ce, truth, grid).value;
        out.in = rmspe(in, truth, grid).value;
        out.K = model.K;
        out.M = model.M;
        out.ok = true;
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

McReport run_monte_carlo(const SimConfig& config, std::size_t n_runs, std::size_t n_new,
                         const regression::FlrConfig& fit_config) {
    if (n_runs < 1) throw UsageError("at least one Monte Carlo run is required", "simulate");
    if (n_new < 1) throw UsageError("at least one new subject per run is required", "simulate");
    config.validate();
    McReport report{config, n_runs, n_new, {}, 0, false, 0.0, 0.0};
    std::vector<double> ce;
    std::vector<double> in;
    for (std::size_t r = 0; r < n_runs; ++r) {
        auto res = run_once(config, r, n_new, fit_config);
        if (res.ok) {
            ce.push_back(res.ce);
            in.push_back(res.in);
        } else {
            ++report.failures;
        }
        report.runs.push_back(std::move(res));
        if (5 * report.failures > n_runs) {
            report.aborted = true;
            report.ce_median = report.in_median = std::numeric_limits<double>::quiet_NaN();
            return report;
        }
    }
    report.ce_median = median(ce);
    report.in_median = median(in);
    return report;
}

}  // namespace flr::simulation
