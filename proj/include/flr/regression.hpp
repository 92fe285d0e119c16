#pragma once

#include "flr/data_model.hpp"
#include "flr/fpca.hpp"
#include "flr/smoothing.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <vector>

namespace flr::regression {

struct CrossCovarianceEstimate {
    RegularGrid grid_s;
    RegularGrid grid_t;
    Eigen::MatrixXd surface;  // grid_s x grid_t
};

struct R2Summary {
    double global = 0.0;
    Eigen::VectorXd pointwise;  // on the response grid; NaN where undefined
    double integrated = 0.0;
    // Unclipped plug-in values, kept as quality diagnostics.
    double global_raw = 0.0;
    Eigen::VectorXd pointwise_raw;
    double integrated_raw = 0.0;
    // R2_km = sigma_km^2 / (rho_m lambda_k) and R2_k = sum_m R2_km.
    Eigen::MatrixXd per_pair;
    Eigen::VectorXd per_response_component;
};

enum class ComponentPolicy {
    Separate,  // each process uses its own FpcaConfig selection (AIC by default)
    JointCv,   // leave-one-curve-out response prediction error over (K, M)
};

struct FlrConfig {
    fpca::FpcaConfig x;
    fpca::FpcaConfig y;
    fpca::BandwidthPolicy cross_bandwidth{fpca::BandwidthMode::LosoCv};
    std::optional<smoothing::Bandwidth2> cross_fixed;  // used when cross_bandwidth.mode == Fixed
    ComponentPolicy components = ComponentPolicy::Separate;
};

struct FlrModel {
    fpca::FpcaModel x_model;
    fpca::FpcaModel y_model;
    CrossCovarianceEstimate cross;
    smoothing::Bandwidth2 cross_bandwidth{0.0, 0.0};
    Eigen::MatrixXd sigma;  // K x M
    Eigen::MatrixXd beta;   // grid_s x grid_t
    std::size_t K = 0;
    std::size_t M = 0;
    R2Summary r2;
    std::vector<double> joint_cv;  // row-major K x M table when JointCv was used

    /// P_{K,M} = (sigma_km / rho_m).
    Eigen::MatrixXd coefficient_matrix() const;
};

struct TrajectoryPrediction {
    RegularGrid grid;
    Eigen::VectorXd values;
    Eigen::VectorXd variance;
    double level = 0.0;
    Eigen::VectorXd band_lo;
    Eigen::VectorXd band_hi;
    bool no_data = false;
    bool ridge_added = false;
    bool omega_repaired = false;
};

std::vector<smoothing::SurfacePoint> raw_cross_covariances(const SparseFunctionalSample& x,
                                                           const SparseFunctionalSample& y,
                                                           const fpca::MeanEstimate& x_mean,
                                                           const fpca::MeanEstimate& y_mean);

/// Smooths all L_i * N_i raw cross products per subject (samples must be aligned).
CrossCovarianceEstimate estimate_cross_covariance(const SparseFunctionalSample& x, const SparseFunctionalSample& y,
                                                  const fpca::MeanEstimate& x_mean, const fpca::MeanEstimate& y_mean,
                                                  smoothing::Bandwidth2 bandwidths, const RegularGrid& grid_s,
                                                  const RegularGrid& grid_t,
                                                  smoothing::Kernel2 kernel = smoothing::Kernel2{});

/// sigma_km = double trapezoid integral of psi_m(s) C(s,t) phi_k(t); K x M.
Eigen::MatrixXd estimate_sigma_km(const CrossCovarianceEstimate& cross, const fpca::EigenSystem& x_eig,
                                  const fpca::EigenSystem& y_eig, std::size_t K, std::size_t M);

Eigen::MatrixXd estimate_beta(const Eigen::MatrixXd& sigma, const fpca::EigenSystem& x_eig,
                              const fpca::EigenSystem& y_eig, std::size_t K, std::size_t M);

/// Response trajectory mu_Y + phi^T P zeta for given predictor scores.
Eigen::VectorXd trajectory_from_scores(const FlrModel& model, const Eigen::VectorXd& scores);

TrajectoryPrediction predict_response(const FlrModel& model, const SubjectRecord& x_subject);

/// Prediction with pointwise asymptotic bands at coverage `level` (e.g. 0.95).
TrajectoryPrediction prediction_band(const FlrModel& model, const SubjectRecord& x_subject, double level);

/// Standard normal quantile used as the band multiplier for coverage `level`.
double band_multiplier(double level);

double r2_global(const Eigen::MatrixXd& sigma, const fpca::EigenSystem& x_eig, const fpca::EigenSystem& y_eig,
                 double* unclipped = nullptr);

/// Pointwise R^2(t) on the response grid. Points with denominator <= 1e-12
/// are NaN.
Eigen::VectorXd r2_pointwise(const Eigen::MatrixXd& sigma, const fpca::EigenSystem& x_eig,
                             const fpca::EigenSystem& y_eig, Eigen::VectorXd* unclipped = nullptr);

/// Trapezoid average of R^2(t). Throws if any point is undefined.
double r2_integrated(const Eigen::VectorXd& pointwise, const RegularGrid& grid_t);

R2Summary r2_summary(const Eigen::MatrixXd& sigma, const fpca::EigenSystem& x_eig, const fpca::EigenSystem& y_eig);

/// Assembles an FlrModel from fitted parts (computes sigma, beta and R^2).
FlrModel assemble_model(fpca::FpcaModel x_model, fpca::FpcaModel y_model, CrossCovarianceEstimate cross,
                        smoothing::Bandwidth2 cross_bandwidth);

FlrModel fit_flr(const SparseFunctionalSample& x_sample, const SparseFunctionalSample& y_sample,
                 const FlrConfig& config);

}  // namespace flr::regression
