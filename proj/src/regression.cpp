#include "flr/regression.hpp"

#include "flr/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace flr::regression {

using fpca::EigenSystem;
using fpca::FpcaModel;
using smoothing::Bandwidth2;
using smoothing::SurfacePoint;

namespace {

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.kind(), e.stage().empty() ? stage : stage + "/" + e.stage(),
                    e.stage().empty() ? e.what() : std::string(e.what()).substr(e.stage().size() + 2));
    }
}

}  // namespace

Eigen::MatrixXd FlrModel::coefficient_matrix() const {
    return sigma * x_model.eig.eigenvalues.head(idx(M)).cwiseInverse().asDiagonal();
}

std::vector<SurfacePoint> raw_cross_covariances(const SparseFunctionalSample& x, const SparseFunctionalSample& y,
                                                const fpca::MeanEstimate& x_mean, const fpca::MeanEstimate& y_mean) {
    if (x.n_subjects() != y.n_subjects()) {
        throw UsageError("predictor and response samples must be aligned", "cross-covariance");
    }
    std::vector<SurfacePoint> raw;
    for (std::size_t i = 0; i < x.n_subjects(); ++i) {
        const auto& xs = x[i];
        const auto& ys = y[i];
        if (xs.id != ys.id) throw UsageError("predictor and response rosters differ at index " + std::to_string(i), "cross-covariance");
        for (std::size_t l = 0; l < xs.size(); ++l) {
            const double rx = xs.values[l] - x_mean(xs.times[l]);
            for (std::size_t j = 0; j < ys.size(); ++j) {
                raw.push_back({xs.times[l], ys.times[j], rx * (ys.values[j] - y_mean(ys.times[j])), 1.0, i});
            }
        }
    }
    return raw;
}

CrossCovarianceEstimate estimate_cross_covariance(const SparseFunctionalSample& x, const SparseFunctionalSample& y,
                                                  const fpca::MeanEstimate& x_mean, const fpca::MeanEstimate& y_mean,
                                                  Bandwidth2 bandwidths, const RegularGrid& grid_s,
                                                  const RegularGrid& grid_t, smoothing::Kernel2 kernel) {
    const auto raw = raw_cross_covariances(x, y, x_mean, y_mean);
    if (raw.empty()) {
        throw NumericalError("no subject has observations of both processes; cross-covariance is unfittable",
                             "cross-covariance");
    }
    auto fit = in_stage("cross-covariance",
                        [&] { return smoothing::local_linear_2d(raw, bandwidths, grid_s, grid_t, kernel); });
    return {grid_s, grid_t, std::move(fit.values)};
}

Eigen::MatrixXd estimate_sigma_km(const CrossCovarianceEstimate& cross, const EigenSystem& x_eig,
                                  const EigenSystem& y_eig, std::size_t K, std::size_t M) {
    if (M > x_eig.size() || K > y_eig.size()) throw UsageError("component counts exceed the eigensystems", "sigma");
    if (x_eig.grid.size() != cross.grid_s.size() || y_eig.grid.size() != cross.grid_t.size()) {
        throw UsageError("eigenfunction grids do not match the cross-covariance grids", "sigma");
    }
    // psi_w: M x S with quadrature weights folded in; likewise phi_w: K x T.
    const Eigen::MatrixXd psi_w = x_eig.eigenfunctions.topRows(idx(M)) * cross.grid_s.weights().asDiagonal();
    const Eigen::MatrixXd phi_w = y_eig.eigenfunctions.topRows(idx(K)) * cross.grid_t.weights().asDiagonal();
    return phi_w * cross.surface.transpose() * psi_w.transpose();
}

Eigen::MatrixXd estimate_beta(const Eigen::MatrixXd& sigma, const EigenSystem& x_eig, const EigenSystem& y_eig,
                              std::size_t K, std::size_t M) {
    const Eigen::MatrixXd p = sigma.topLeftCorner(idx(K), idx(M)) *
                              x_eig.eigenvalues.head(idx(M)).cwiseInverse().asDiagonal();
    // beta(s, t) = sum_km p_km psi_m(s) phi_k(t)
    return x_eig.eigenfunctions.topRows(idx(M)).transpose() * p.transpose() * y_eig.eigenfunctions.topRows(idx(K));
}

Eigen::VectorXd trajectory_from_scores(const FlrModel& model, const Eigen::VectorXd& scores) {
    const Eigen::MatrixXd phi = model.y_model.eig.eigenfunctions.topRows(idx(model.K));
    return model.y_model.mean.values + phi.transpose() * (model.coefficient_matrix() * scores.head(idx(model.M)));
}

TrajectoryPrediction predict_response(const FlrModel& model, const SubjectRecord& x_subject) {
    const auto pred = fpca::pace_scores(model.x_model, x_subject, model.M);
    TrajectoryPrediction out{model.y_model.mean.grid, trajectory_from_scores(model, pred.scores), {}, 0.0, {}, {}};
    out.no_data = x_subject.size() == 0;
    out.ridge_added = pred.ridge_added;
    out.omega_repaired = pred.omega_repaired;
    return out;
}

double band_multiplier(double level) {
    if (!(level > 0.0 && level < 1.0)) throw UsageError("band level must lie in (0, 1)", "band");
    const double alpha = 1.0 - level;
    return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

TrajectoryPrediction prediction_band(const FlrModel& model, const SubjectRecord& x_subject, double level) {
    const double z = band_multiplier(level);
    const auto pred = fpca::pace_scores(model.x_model, x_subject, model.M);
    TrajectoryPrediction out{model.y_model.mean.grid, trajectory_from_scores(model, pred.scores), {}, level, {}, {}};
    out.no_data = x_subject.size() == 0;
    out.ridge_added = pred.ridge_added;
    out.omega_repaired = pred.omega_repaired;

    // a(t) = P^T phi_tK, variance(t) = a(t)^T Omega a(t)
    const Eigen::MatrixXd a = model.y_model.eig.eigenfunctions.topRows(idx(model.K)).transpose() *
                              model.coefficient_matrix();  // T x M
    out.variance = ((a * pred.omega).cwiseProduct(a)).rowwise().sum().cwiseMax(0.0);
    const Eigen::VectorXd half = z * out.variance.cwiseSqrt();
    out.band_lo = out.values - half;
    out.band_hi = out.values + half;
    return out;
}

double r2_global(const Eigen::MatrixXd& sigma, const EigenSystem& x_eig, const EigenSystem& y_eig, double* unclipped) {
    const auto K = sigma.rows();
    const auto M = sigma.cols();
    const double denom = y_eig.eigenvalues.head(K).sum();
    if (!(denom > 0.0)) throw NumericalError("response eigenvalues sum to zero; R^2 undefined", "r2");
    const double num = (sigma.array().square().rowwise() / x_eig.eigenvalues.head(M).transpose().array()).sum();
    const double raw = num / denom;
    if (unclipped) *unclipped = raw;
    return std::clamp(raw, 0.0, 1.0);
}

Eigen::VectorXd r2_pointwise(const Eigen::MatrixXd& sigma, const EigenSystem& x_eig, const EigenSystem& y_eig,
                             Eigen::VectorXd* unclipped) {
    const auto K = sigma.rows();
    const auto M = sigma.cols();
    const Eigen::MatrixXd phi = y_eig.eigenfunctions.topRows(K);  // K x T
    // numerator(t) = sum_m (sum_k sigma_km phi_k(t))^2 / rho_m
    const Eigen::MatrixXd proj = sigma.transpose() * phi;  // M x T
    const Eigen::VectorXd num =
        (proj.array().square().colwise() / x_eig.eigenvalues.head(M).array()).colwise().sum().transpose();
    const Eigen::VectorXd den =
        (phi.array().square().colwise() * y_eig.eigenvalues.head(K).array()).colwise().sum().transpose();
    Eigen::VectorXd raw(num.size());
    Eigen::VectorXd out(num.size());
    for (Eigen::Index t = 0; t < num.size(); ++t) {
        if (den[t] <= 1e-12) {
            raw[t] = out[t] = std::numeric_limits<double>::quiet_NaN();
        } else {
            raw[t] = num[t] / den[t];
            out[t] = std::clamp(raw[t], 0.0, 1.0);
        }
    }
    if (unclipped) *unclipped = raw;
    return out;
}

double r2_integrated(const Eigen::VectorXd& pointwise, const RegularGrid& grid_t) {
    std::vector<std::size_t> bad;
    for (Eigen::Index t = 0; t < pointwise.size(); ++t) {
        if (!std::isfinite(pointwise[t])) bad.push_back(static_cast<std::size_t>(t));
    }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg << "pointwise R^2 undefined at grid points";
        for (auto b : bad) msg << ' ' << grid_t[b];
        throw NumericalError(msg.str(), "r2");
    }
    return grid_t.integrate(pointwise) / grid_t.interval().length();
}

R2Summary r2_summary(const Eigen::MatrixXd& sigma, const EigenSystem& x_eig, const EigenSystem& y_eig) {
    R2Summary out;
    out.global = r2_global(sigma, x_eig, y_eig, &out.global_raw);
    out.pointwise = r2_pointwise(sigma, x_eig, y_eig, &out.pointwise_raw);
    out.integrated_raw = std::numeric_limits<double>::quiet_NaN();
    bool defined = out.pointwise.allFinite();
    if (defined) {
        out.integrated = r2_integrated(out.pointwise, y_eig.grid);
        out.integrated_raw = y_eig.grid.integrate(out.pointwise_raw) / y_eig.grid.interval().length();
    } else {
        out.integrated = std::numeric_limits<double>::quiet_NaN();
    }
    const auto K = sigma.rows();
    const auto M = sigma.cols();
    out.per_pair = sigma.array().square().rowwise() / x_eig.eigenvalues.head(M).transpose().array();
    out.per_pair.array().colwise() /= y_eig.eigenvalues.head(K).array();
    out.per_response_component = out.per_pair.rowwise().sum();
    return out;
}

FlrModel assemble_model(FpcaModel x_model, FpcaModel y_model, CrossCovarianceEstimate cross, Bandwidth2 cross_bandwidth) {
    FlrModel out;
    out.M = x_model.n_components;
    out.K = y_model.n_components;
    out.sigma = estimate_sigma_km(cross, x_model.eig, y_model.eig, out.K, out.M);
    out.beta = estimate_beta(out.sigma, x_model.eig, y_model.eig, out.K, out.M);
    out.r2 = r2_summary(out.sigma, x_model.eig, y_model.eig);
    out.x_model = std::move(x_model);
    out.y_model = std::move(y_model);
    out.cross = std::move(cross);
    out.cross_bandwidth = cross_bandwidth;
    return out;
}

namespace {

// Refit one process with bandwidths frozen from a full-sample fit.
FpcaModel refit_fixed(const SparseFunctionalSample& sample, const FpcaModel& reference, std::size_t max_components,
                      smoothing::Kernel1 kernel) {
    const auto& grid = reference.mean.grid;
    auto mean = fpca::estimate_mean(sample, reference.info.mean_bandwidth, grid, kernel);
    const auto raw = fpca::raw_covariances(sample, mean);
    auto cov = fpca::estimate_covariance(raw, reference.info.cov_bandwidth, grid, kernel);
    cov.noise_var = fpca::estimate_noise_variance(raw, reference.info.cov_bandwidth, sample.domain(), grid.size(), kernel).value;
    auto eig = fpca::eigendecompose(cov, max_components);
    const std::size_t n = eig.size();
    return FpcaModel{std::move(mean), std::move(cov), std::move(eig), n, reference.info};
}

SparseFunctionalSample drop_subject(const SparseFunctionalSample& sample, std::size_t i) {
    std::vector<SubjectRecord> rest;
    rest.reserve(sample.n_subjects());
    for (std::size_t j = 0; j < sample.n_subjects(); ++j) {
        if (j != i) rest.push_back(sample[j]);
    }
    return SparseFunctionalSample(std::move(rest), sample.domain());
}

// Leave-one-curve-out squared error of response predictions for every (K, M).
std::vector<double> joint_cv_table(const SparseFunctionalSample& x, const SparseFunctionalSample& y,
                                   const FpcaModel& x_ref, const FpcaModel& y_ref, Bandwidth2 cross_bw,
                                   std::size_t k_max, std::size_t m_max, const FlrConfig& config) {
    std::vector<double> table(k_max * m_max, 0.0);
    const smoothing::Kernel1 kx(config.x.kernel);
    const smoothing::Kernel1 ky(config.y.kernel);
    for (std::size_t i = 0; i < x.n_subjects(); ++i) {
        if (y[i].size() == 0) continue;
        const auto x_rest = drop_subject(x, i);
        const auto y_rest = drop_subject(y, i);
        const auto xm = refit_fixed(x_rest, x_ref, m_max, kx);
        const auto ym = refit_fixed(y_rest, y_ref, k_max, ky);
        const auto cross = estimate_cross_covariance(x_rest, y_rest, xm.mean, ym.mean, cross_bw, xm.mean.grid,
                                                     ym.mean.grid, smoothing::Kernel2(kx));
        const std::size_t mm = std::min(m_max, xm.eig.size());
        const std::size_t kk = std::min(k_max, ym.eig.size());
        const Eigen::MatrixXd sigma = estimate_sigma_km(cross, xm.eig, ym.eig, kk, mm);
        const auto scores = fpca::pace_scores(xm, x[i], mm).scores;
        const Eigen::MatrixXd phi = ym.eig.evaluate(kk, y[i].times);  // kk x N
        for (std::size_t k = 1; k <= k_max; ++k) {
            for (std::size_t m = 1; m <= m_max; ++m) {
                const std::size_t ke = std::min(k, kk);
                const std::size_t me = std::min(m, mm);
                const Eigen::MatrixXd p = sigma.topLeftCorner(idx(ke), idx(me)) *
                                          xm.eig.eigenvalues.head(idx(me)).cwiseInverse().asDiagonal();
                const Eigen::VectorXd coef = p * scores.head(idx(me));
                double sse = 0.0;
                for (std::size_t j = 0; j < y[i].size(); ++j) {
                    const double pred = ym.mean(y[i].times[j]) + phi.col(idx(j)).head(idx(ke)).dot(coef);
                    const double r = y[i].values[j] - pred;
                    sse += r * r;
                }
                table[(k - 1) * m_max + (m - 1)] += sse;
            }
        }
    }
    return table;
}

}  // namespace

FlrModel fit_flr(const SparseFunctionalSample& x_sample, const SparseFunctionalSample& y_sample,
                 const FlrConfig& config) {
    const auto [x, y] = align_samples(x_sample, y_sample);
    auto x_model = in_stage("predictor", [&] { return fpca::fit_fpca(x, config.x); });
    auto y_model = in_stage("response", [&] { return fpca::fit_fpca(y, config.y); });

    const smoothing::Kernel2 kernel{smoothing::Kernel1(config.x.kernel)};
    const auto raw = raw_cross_covariances(x, y, x_model.mean, y_model.mean);
    if (raw.empty()) {
        throw NumericalError("no subject has observations of both processes; cross-covariance is unfittable",
                             "cross-covariance");
    }
    Bandwidth2 cross_bw{0.0, 0.0};
    if (config.cross_bandwidth.mode == fpca::BandwidthMode::Fixed) {
        if (!config.cross_fixed) throw UsageError("fixed cross-covariance bandwidth not given", "cross-covariance");
        cross_bw = *config.cross_fixed;
    } else {
        const auto candidates = smoothing::bandwidth_candidates(x.domain(), y.domain(), config.cross_bandwidth.fractions);
        const auto objective = config.cross_bandwidth.mode == fpca::BandwidthMode::Gcv
                                   ? smoothing::BandwidthObjective::Gcv
                                   : smoothing::BandwidthObjective::LosoCv;
        cross_bw = in_stage("cross-covariance",
                            [&] { return smoothing::select_bandwidth(raw, candidates, objective, kernel).bandwidth; });
    }
    auto cross = in_stage("cross-covariance", [&] {
        auto fit = smoothing::local_linear_2d(raw, cross_bw, x_model.mean.grid, y_model.mean.grid, kernel);
        return CrossCovarianceEstimate{x_model.mean.grid, y_model.mean.grid, std::move(fit.values)};
    });

    std::vector<double> table;
    if (config.components == ComponentPolicy::JointCv) {
        const std::size_t k_max = std::min(config.y.max_components, y_model.eig.size());
        const std::size_t m_max = std::min(config.x.max_components, x_model.eig.size());
        table = in_stage("ncomp", [&] {
            return joint_cv_table(x, y, x_model, y_model, cross_bw, k_max, m_max, config);
        });
        const auto best = static_cast<std::size_t>(std::min_element(table.begin(), table.end()) - table.begin());
        y_model.n_components = best / m_max + 1;
        x_model.n_components = best % m_max + 1;
    }
    auto model = in_stage("regression", [&] {
        return assemble_model(std::move(x_model), std::move(y_model), std::move(cross), cross_bw);
    });
    model.joint_cv = std::move(table);
    return model;
}

}  // namespace flr::regression
