#pragma once

#include "flr/data_model.hpp"
#include "flr/smoothing.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace flr::fpca {

struct MeanEstimate {
    RegularGrid grid;
    Eigen::VectorXd values;

    double operator()(double t) const { return grid.interpolate(values, t); }
};

struct CovarianceEstimate {
    RegularGrid grid;
    Eigen::MatrixXd surface;  // symmetric
    double noise_var = 0.0;

    double operator()(double s, double t) const { return grid.interpolate2(surface, grid, s, t); }
};

/// Eigenpairs of a discretized covariance operator. Row m of
/// `eigenfunctions` is the m-th eigenfunction on the grid, orthonormal under
/// the trapezoid weights.
struct EigenSystem {
    RegularGrid grid;
    Eigen::VectorXd eigenvalues;     // descending, strictly positive
    Eigen::MatrixXd eigenfunctions;  // size() x grid.size()
    double positive_total = 0.0;     // sum of all retained positive eigenvalues (before the component cap)

    std::size_t size() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
    double value(std::size_t m, double t) const {
        return grid.interpolate(eigenfunctions.row(static_cast<Eigen::Index>(m)).transpose(), t);
    }
    /// Values of the first `count` eigenfunctions at arbitrary times (count x times.size()).
    Eigen::MatrixXd evaluate(std::size_t count, const std::vector<double>& times) const;
    /// Copy with eigenfunction m negated.
    EigenSystem flipped(std::size_t m) const;
};

enum class NcompMethod { Fixed, Aic, Cv };
std::string to_string(NcompMethod method);
NcompMethod ncomp_method_from_string(const std::string& name);

enum class BandwidthMode { Fixed, Gcv, LosoCv };
std::string to_string(BandwidthMode mode);
BandwidthMode bandwidth_mode_from_string(const std::string& name);

struct BandwidthPolicy {
    BandwidthMode mode = BandwidthMode::Gcv;
    double fixed = 0.0;  // used when mode == Fixed
    std::vector<double> fractions = smoothing::default_bandwidth_fractions();
};

struct FpcaConfig {
    std::size_t grid_points = 51;
    smoothing::KernelShape kernel = smoothing::KernelShape::Epanechnikov;
    BandwidthPolicy mean_bandwidth;
    // Raw covariances within a subject are dependent, which makes pooled GCV
    // undersmooth; leave-one-subject-out respects that structure.
    BandwidthPolicy cov_bandwidth{BandwidthMode::LosoCv};
    NcompMethod ncomp_method = NcompMethod::Aic;
    std::size_t fixed_ncomp = 2;  // used when ncomp_method == Fixed
    std::size_t max_components = 10;
};

/// How the model was fitted; carried into serialized documents.
struct FpcaFitInfo {
    double mean_bandwidth = 0.0;
    double cov_bandwidth = 0.0;
    NcompMethod ncomp_method = NcompMethod::Fixed;
    std::vector<double> ncomp_criterion;  // AIC or CV value for M = 1..max
    double noise_var_raw = 0.0;           // before truncation at zero
    smoothing::SmootherDiagnostics mean_diagnostics;
    smoothing::SmootherDiagnostics cov_diagnostics;
};

struct FpcaModel {
    MeanEstimate mean;
    CovarianceEstimate cov;
    EigenSystem eig;
    std::size_t n_components = 0;
    FpcaFitInfo info;

    const Interval& domain() const { return mean.grid.interval(); }
};

/// Conditional-expectation (best linear) prediction of one subject's scores.
struct ScorePrediction {
    Eigen::VectorXd scores;   // M
    Eigen::MatrixXd sigma_u;  // L x L, after conditioning repair
    Eigen::MatrixXd h;        // M x L
    Eigen::MatrixXd omega;    // M x M, PSD-projected
    bool ridge_added = false;
    bool omega_repaired = false;
};

struct RawCovariances {
    std::vector<smoothing::SurfacePoint> off_diag;  // all ordered pairs l1 != l2
    std::vector<smoothing::CurvePoint> diag;        // (S_il, residual^2)
};

MeanEstimate estimate_mean(const SparseFunctionalSample& sample, double bandwidth, const RegularGrid& grid,
                           smoothing::Kernel1 kernel = smoothing::Kernel1{},
                           smoothing::SmootherDiagnostics* diagnostics = nullptr);

RawCovariances raw_covariances(const SparseFunctionalSample& sample, const MeanEstimate& mean);

/// Smoothed covariance surface (noise_var left at 0). Throws when no subject
/// has two or more observations.
CovarianceEstimate estimate_covariance(const RawCovariances& raw, double bandwidth, const RegularGrid& grid,
                                       smoothing::Kernel1 kernel = smoothing::Kernel1{},
                                       smoothing::SmootherDiagnostics* diagnostics = nullptr);

CovarianceEstimate estimate_covariance(const SparseFunctionalSample& sample, const MeanEstimate& mean,
                                       double bandwidth, const RegularGrid& grid,
                                       smoothing::Kernel1 kernel = smoothing::Kernel1{});

struct NoiseVarianceEstimate {
    double value = 0.0;  // truncated at zero
    double raw = 0.0;
};

/// Measurement-error variance from the gap between the smoothed diagonal of
/// the raw covariances and the off-diagonal surface's diagonal, averaged over
/// the middle half of the domain.
NoiseVarianceEstimate estimate_noise_variance(const RawCovariances& raw, double bandwidth, const Interval& domain,
                                              std::size_t grid_points,
                                              smoothing::Kernel1 kernel = smoothing::Kernel1{});

/// Eigen-decomposition of the covariance operator under trapezoid quadrature.
/// Throws NumericalError if no eigenvalue is positive.
EigenSystem eigendecompose(const CovarianceEstimate& cov, std::size_t max_components);

/// Conditional-expectation scores for the first `n_components` components
/// (defaults to model.n_components). The observation covariance is built from
/// all retained eigenpairs plus the noise variance.
ScorePrediction pace_scores(const FpcaModel& model, const SubjectRecord& subject,
                            std::optional<std::size_t> n_components = std::nullopt);

/// AIC(M) for M = 1..max_components.
std::vector<double> aic_values(const SparseFunctionalSample& sample, const FpcaModel& model,
                               std::size_t max_components);

/// Leave-one-curve-out CV(M) for M = 1..max_components; mean and
/// eigenfunctions are refitted without each subject using the model's bandwidths.
std::vector<double> cv_values(const SparseFunctionalSample& sample, const FpcaModel& model,
                              std::size_t max_components, smoothing::Kernel1 kernel = smoothing::Kernel1{});

std::size_t select_ncomp(const SparseFunctionalSample& sample, const FpcaModel& model, NcompMethod method,
                         std::size_t max_components, std::vector<double>* criterion = nullptr,
                         smoothing::Kernel1 kernel = smoothing::Kernel1{});

/// Full single-process pipeline: bandwidths, mean, covariance, noise
/// variance, eigensystem and component count.
FpcaModel fit_fpca(const SparseFunctionalSample& sample, const FpcaConfig& config);

/// Model with explicitly given components (used for known-truth checks).
FpcaModel make_model(MeanEstimate mean, CovarianceEstimate cov, EigenSystem eig, std::size_t n_components);

}  // namespace flr::fpca
