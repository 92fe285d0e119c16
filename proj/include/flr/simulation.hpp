#pragma once

#include "flr/data_model.hpp"
#include "flr/fpca.hpp"
#include "flr/random.hpp"
#include "flr/regression.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace flr::simulation {

enum class Sparsity { Sparse, Nonsparse };
enum class ScoreDistribution { Normal, Mixture };

std::string to_string(Sparsity s);
std::string to_string(ScoreDistribution d);
Sparsity sparsity_from_string(const std::string& name);
ScoreDistribution distribution_from_string(const std::string& name);

/// Two-component predictor process on [0, 10] with mean s + sin(s),
/// eigenfunctions -cos(pi s/10)/sqrt(5) and sin(pi s/10)/sqrt(5), and a
/// response whose conditional mean is the integral of
/// beta(s, t) = sum_km b_km psi_m(s) psi_k(t) against X.
struct SimConfig {
    std::size_t n = 100;
    Sparsity sparsity = Sparsity::Sparse;
    ScoreDistribution scores = ScoreDistribution::Normal;
    std::uint64_t seed = 0;
    double x_noise_var = 0.25;
    double y_noise_var = 0.1;
    Eigen::Vector2d rho{2.0, 1.0};
    Eigen::Matrix2d b = (Eigen::Matrix2d() << 2.0, 2.0, 1.0, 2.0).finished();  // b(k, m)
    // Left end used for the first spacing of integral-approximation scores;
    // defaults to the domain start.
    std::optional<double> in_spacing_origin;

    Interval domain() const { return Interval(0.0, 10.0); }
    /// Inclusive range of per-subject observation counts.
    std::pair<int, int> count_range() const {
        return sparsity == Sparsity::Sparse ? std::pair{3, 5} : std::pair{20, 30};
    }
    void validate() const;
};

double true_mean_x(double s);
/// psi_m(s), m in {0, 1}.
double true_eigenfunction(std::size_t m, double s);
double true_covariance_x(const SimConfig& config, double s1, double s2);
double true_beta(const SimConfig& config, double s, double t);
/// <psi_m, mu_X>, by 1001-point composite Simpson quadrature (computed once).
const Eigen::Vector2d& mean_projection();
/// mu_Y(t) = integral of beta(s, t) mu_X(s) ds.
double true_mean_y(const SimConfig& config, double t);
double true_cross_covariance(const SimConfig& config, double s, double t);
double true_covariance_y(const SimConfig& config, double t1, double t2);

struct SubjectTruth {
    Eigen::Vector2d scores;         // zeta_1, zeta_2
    Eigen::Vector2d response_coef;  // E[Y|X](t) = sum_k response_coef_k psi_k(t)

    double conditional_mean(double t) const;
    Eigen::VectorXd conditional_mean(const RegularGrid& grid) const;
    /// X(s) for this subject (noise free).
    double predictor(double s) const;
};

struct TruthRecord {
    std::vector<SubjectTruth> subjects;
};

struct SimulatedPair {
    SparseFunctionalSample x;
    SparseFunctionalSample y;
    TruthRecord truth;
};

SimulatedPair gen_pair(const SimConfig& config, Philox4x64& rng);

/// Draw a single score vector under the configured law.
Eigen::Vector2d draw_scores(const SimConfig& config, Philox4x64& rng);

/// Riemann-sum scores sum_l (U_l - mu(S_l)) psi_m(S_l) (S_l - S_{l-1}) with
/// S_0 = origin (defaults to the model's domain start).
Eigen::VectorXd in_scores(const fpca::FpcaModel& model, const SubjectRecord& subject,
                          std::optional<std::size_t> n_components = std::nullopt,
                          std::optional<double> origin = std::nullopt);

struct RmspeResult {
    double value = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;  // subjects with zero truth norm
};

RmspeResult rmspe(const std::vector<Eigen::VectorXd>& predictions, const std::vector<Eigen::VectorXd>& truths,
                  const RegularGrid& grid);

struct RunResult {
    std::size_t run = 0;
    bool ok = false;
    std::string error;
    double ce = 0.0;
    double in = 0.0;
    std::size_t K = 0;
    std::size_t M = 0;
};

struct McReport {
    SimConfig config;
    std::size_t n_runs = 0;
    std::size_t n_new = 0;
    std::vector<RunResult> runs;
    std::size_t failures = 0;
    bool aborted = false;  // failures exceeded 20% of the requested runs
    double ce_median = 0.0;
    double in_median = 0.0;
};

/// Exact sample median (mean of the two central order statistics for even counts).
double median(std::vector<double> values);

/// One Monte Carlo replicate with generator key (seed + run).
RunResult run_once(const SimConfig& config, std::size_t run, std::size_t n_new,
                   const regression::FlrConfig& fit_config);

/// Runs n_runs replicates and reports CE/IN RMSPE medians over the
/// successful ones. Stops early and marks the report aborted once more than
/// 20% of the requested runs have failed.
McReport run_monte_carlo(const SimConfig& config, std::size_t n_runs, std::size_t n_new,
                         const regression::FlrConfig& fit_config = {});

}  // namespace flr::simulation
