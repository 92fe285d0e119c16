#include "flr/fpca.hpp"

#include "flr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace flr::fpca {

using smoothing::Bandwidth2;
using smoothing::CurvePoint;
using smoothing::Kernel1;
using smoothing::Kernel2;
using smoothing::SurfacePoint;

std::string to_string(NcompMethod method) {
    switch (method) {
        case NcompMethod::Fixed: return "fixed";
        case NcompMethod::Aic: return "aic";
        case NcompMethod::Cv: return "cv";
    }
    return "unknown";
}

NcompMethod ncomp_method_from_string(const std::string& name) {
    if (name == "fixed") return NcompMethod::Fixed;
    if (name == "aic") return NcompMethod::Aic;
    if (name == "cv") return NcompMethod::Cv;
    throw UsageError("unknown component selection method '" + name + "' (expected fixed, aic or cv)");
}

std::string to_string(BandwidthMode mode) {
    switch (mode) {
        case BandwidthMode::Fixed: return "fixed";
        case BandwidthMode::Gcv: return "gcv";
        case BandwidthMode::LosoCv: return "cv";
    }
    return "unknown";
}

BandwidthMode bandwidth_mode_from_string(const std::string& name) {
    if (name == "fixed") return BandwidthMode::Fixed;
    if (name == "gcv") return BandwidthMode::Gcv;
    if (name == "cv" || name == "loso-cv") return BandwidthMode::LosoCv;
    throw UsageError("unknown bandwidth policy '" + name + "' (expected fixed, gcv or cv)");
}

Eigen::MatrixXd EigenSystem::evaluate(std::size_t count, const std::vector<double>& times) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(times.size()));
    for (std::size_t m = 0; m < count; ++m) {
        for (std::size_t l = 0; l < times.size(); ++l) {
            out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(l)) = value(m, times[l]);
        }
    }
    return out;
}

EigenSystem EigenSystem::flipped(std::size_t m) const {
    EigenSystem out = *this;
    out.eigenfunctions.row(static_cast<Eigen::Index>(m)) *= -1.0;
    return out;
}

namespace {

template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        throw Error(e.kind(), stage, e.what());
    }
}

std::vector<CurvePoint> curve_points(const SparseFunctionalSample& sample) {
    std::vector<CurvePoint> pts;
    for (const auto& p : pooled_points(sample)) pts.push_back({p.time, p.value, 1.0, p.subject});
    return pts;
}

// Inverse of a symmetric positive definite matrix through its spectrum.
Eigen::MatrixXd spd_inverse(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es) {
    return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

MeanEstimate estimate_mean(const SparseFunctionalSample& sample, double bandwidth, const RegularGrid& grid,
                           Kernel1 kernel, smoothing::SmootherDiagnostics* diagnostics) {
    const auto pts = curve_points(sample);
    if (pts.size() < 2) throw NumericalError("mean estimation needs at least 2 observations", "mean");
    auto fit = in_stage("mean", [&] { return smoothing::local_linear_1d(pts, bandwidth, grid, kernel); });
    if (diagnostics) *diagnostics = fit.diagnostics;
    return {grid, std::move(fit.values)};
}

RawCovariances raw_covariances(const SparseFunctionalSample& sample, const MeanEstimate& mean) {
    RawCovariances raw;
    for (std::size_t i = 0; i < sample.n_subjects(); ++i) {
        const auto& s = sample[i];
        std::vector<double> resid(s.size());
        for (std::size_t l = 0; l < s.size(); ++l) resid[l] = s.values[l] - mean(s.times[l]);
        for (std::size_t l1 = 0; l1 < s.size(); ++l1) {
            raw.diag.push_back({s.times[l1], resid[l1] * resid[l1], 1.0, i});
            for (std::size_t l2 = 0; l2 < s.size(); ++l2) {
                if (l1 == l2) continue;
                raw.off_diag.push_back({s.times[l1], s.times[l2], resid[l1] * resid[l2], 1.0, i});
            }
        }
    }
    return raw;
}

CovarianceEstimate estimate_covariance(const RawCovariances& raw, double bandwidth, const RegularGrid& grid,
                                       Kernel1 kernel, smoothing::SmootherDiagnostics* diagnostics) {
    if (raw.off_diag.empty()) {
        throw NumericalError("no subject has two or more observations; covariance is unfittable", "covariance");
    }
    auto fit = in_stage("covariance", [&] {
        return smoothing::local_linear_2d(raw.off_diag, Bandwidth2{bandwidth, bandwidth}, grid, grid, Kernel2(kernel));
    });
    if (diagnostics) *diagnostics = fit.diagnostics;
    Eigen::MatrixXd sym = 0.5 * (fit.values + fit.values.transpose());
    return {grid, std::move(sym), 0.0};
}

CovarianceEstimate estimate_covariance(const SparseFunctionalSample& sample, const MeanEstimate& mean,
                                       double bandwidth, const RegularGrid& grid, Kernel1 kernel) {
    return estimate_covariance(raw_covariances(sample, mean), bandwidth, grid, kernel);
}

NoiseVarianceEstimate estimate_noise_variance(const RawCovariances& raw, double bandwidth, const Interval& domain,
                                              std::size_t grid_points, Kernel1 kernel) {
    if (raw.diag.empty()) throw NumericalError("no diagonal raw covariances", "noise-variance");
    const double quarter = domain.length() / 4.0;
    const RegularGrid middle(Interval(domain.lo() + quarter, domain.hi() - quarter), std::max<std::size_t>(grid_points, 2));
    const auto [v_hat, g_tilde] = in_stage("noise-variance", [&] {
        return std::pair{smoothing::local_linear_1d(raw.diag, bandwidth, middle, kernel).values,
                         smoothing::local_diag_rotated(raw.off_diag, bandwidth, middle, kernel).values};
    });
    NoiseVarianceEstimate out;
    out.raw = 2.0 * middle.integrate(v_hat - g_tilde) / domain.length();
    out.value = out.raw > 0.0 ? out.raw : 0.0;
    return out;
}

EigenSystem eigendecompose(const CovarianceEstimate& cov, std::size_t max_components) {
    const auto& grid = cov.grid;
    const Eigen::VectorXd sqrt_w = grid.weights().cwiseSqrt();
    const Eigen::MatrixXd a = sqrt_w.asDiagonal() * cov.surface * sqrt_w.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
    if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed", "eigen");

    // Eigen returns ascending order.
    const Eigen::Index n = es.eigenvalues().size();
    const double largest = es.eigenvalues()[n - 1];
    if (!(largest > 0.0)) throw NumericalError("covariance operator has no positive eigenvalue", "eigen");
    const double floor = 1e-10 * largest;

    std::vector<Eigen::Index> keep;
    double total = 0.0;
    for (Eigen::Index k = n - 1; k >= 0; --k) {
        const double ev = es.eigenvalues()[k];
        if (!(ev > floor)) break;
        total += ev;
        keep.push_back(k);
    }
    const std::size_t count = std::min(max_components, keep.size());

    EigenSystem out{grid, Eigen::VectorXd(static_cast<Eigen::Index>(count)),
                    Eigen::MatrixXd(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(grid.size())), total};
    for (std::size_t m = 0; m < count; ++m) {
        const auto row = static_cast<Eigen::Index>(m);
        out.eigenvalues[row] = es.eigenvalues()[keep[m]];
        Eigen::VectorXd f = es.eigenvectors().col(keep[m]).cwiseQuotient(sqrt_w);
        f /= std::sqrt(grid.weights().dot(f.cwiseProduct(f)));
        const double mass = grid.integrate(f);
        bool flip = mass < 0.0;
        if (std::abs(mass) < 1e-8) {
            Eigen::Index arg = 0;
            f.cwiseAbs().maxCoeff(&arg);
            flip = f[arg] < 0.0;
        }
        if (flip) f = -f;
        out.eigenfunctions.row(row) = f.transpose();
    }
    return out;
}

FpcaModel make_model(MeanEstimate mean, CovarianceEstimate cov, EigenSystem eig, std::size_t n_components) {
    if (n_components < 1 || n_components > eig.size()) {
        throw UsageError("component count must be between 1 and the number of positive eigenvalues");
    }
    return FpcaModel{std::move(mean), std::move(cov), std::move(eig), n_components, {}};
}

ScorePrediction pace_scores(const FpcaModel& model, const SubjectRecord& subject,
                            std::optional<std::size_t> n_components) {
    const std::size_t m_count = n_components.value_or(model.n_components);
    if (m_count > model.eig.size()) throw UsageError("more components requested than fitted", "scores");
    const auto big_m = static_cast<Eigen::Index>(m_count);
    const auto big_l = static_cast<Eigen::Index>(subject.size());
    const Eigen::VectorXd rho = model.eig.eigenvalues.head(big_m);

    ScorePrediction out;
    if (big_l == 0) {
        out.scores = Eigen::VectorXd::Zero(big_m);
        out.sigma_u.resize(0, 0);
        out.h.resize(big_m, 0);
        out.omega = rho.asDiagonal();
        return out;
    }
    for (double t : subject.times) {
        if (!model.domain().contains(t)) throw DataError("observation time outside the model domain", "scores");
    }

    // Covariance at the observation times from the positive part of the
    // smoothed surface (its retained eigenpairs); the raw smoothed surface is
    // generally indefinite and can make the plug-in matrix near singular.
    const Eigen::MatrixXd phi = model.eig.evaluate(model.eig.size(), subject.times);
    Eigen::MatrixXd sigma = phi.transpose() * model.eig.eigenvalues.asDiagonal() * phi;
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma.diagonal().array() += model.cov.noise_var;
    Eigen::VectorXd resid(big_l);
    for (Eigen::Index j = 0; j < big_l; ++j) {
        resid[j] = subject.values[static_cast<std::size_t>(j)] - model.mean(subject.times[static_cast<std::size_t>(j)]);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    const double trace = sigma.trace();
    const double lmin = es.eigenvalues()[0];
    const double lmax = es.eigenvalues()[big_l - 1];
    if (!(lmin > 0.0) || lmax / lmin > 1e12) {
        double ridge = 1e-8 * std::abs(trace) / static_cast<double>(big_l);
        if (!(ridge > 0.0)) ridge = 1e-8;
        // An indefinite plug-in matrix needs a shift past its negative spectrum.
        if (lmin + ridge < 1e-12 * std::abs(trace)) ridge += -lmin;
        sigma.diagonal().array() += ridge;
        es.compute(sigma);
        out.ridge_added = true;
    }

    out.h = rho.asDiagonal() * phi.topRows(big_m);
    const Eigen::MatrixXd sigma_inv = spd_inverse(es);
    out.scores = out.h * (sigma_inv * resid);
    Eigen::MatrixXd omega = Eigen::MatrixXd(rho.asDiagonal()) - out.h * sigma_inv * out.h.transpose();
    omega = 0.5 * (omega + omega.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eo(omega);
    if (eo.eigenvalues().minCoeff() < 0.0) {
        omega = eo.eigenvectors() * eo.eigenvalues().cwiseMax(0.0).asDiagonal() * eo.eigenvectors().transpose();
        omega = 0.5 * (omega + omega.transpose());
        out.omega_repaired = true;
    }
    out.omega = std::move(omega);
    out.sigma_u = std::move(sigma);
    return out;
}

std::vector<double> aic_values(const SparseFunctionalSample& sample, const FpcaModel& model,
                               std::size_t max_components) {
    if (max_components < 1) throw UsageError("component cap must be at least 1", "ncomp");
    max_components = std::min(max_components, model.eig.size());
    // Pseudo-likelihood is undefined at zero noise; floor it relative to the
    // surface scale.
    const double mean_diag = model.cov.surface.diagonal().cwiseAbs().mean();
    const double sigma2 = std::max(model.cov.noise_var, 1e-6 * std::max(mean_diag, 1e-12));
    const double log_2pi = std::log(2.0 * std::numbers::pi);

    std::vector<double> aic(max_components, 0.0);
    for (const auto& s : sample.subjects()) {
        if (s.size() == 0) continue;
        const auto pred = pace_scores(model, s, max_components);
        const Eigen::MatrixXd psi = model.eig.evaluate(max_components, s.times);
        Eigen::VectorXd resid(static_cast<Eigen::Index>(s.size()));
        for (std::size_t l = 0; l < s.size(); ++l) resid[static_cast<Eigen::Index>(l)] = s.values[l] - model.mean(s.times[l]);
        const double lterm = static_cast<double>(s.size()) / 2.0 * (log_2pi + std::log(sigma2));
        for (std::size_t m = 0; m < max_components; ++m) {
            resid -= pred.scores[static_cast<Eigen::Index>(m)] * psi.row(static_cast<Eigen::Index>(m)).transpose();
            aic[m] += resid.squaredNorm() / (2.0 * sigma2) + lterm;
        }
    }
    for (std::size_t m = 0; m < max_components; ++m) aic[m] += static_cast<double>(m + 1);
    return aic;
}

std::vector<double> cv_values(const SparseFunctionalSample& sample, const FpcaModel& model,
                              std::size_t max_components, Kernel1 kernel) {
    if (max_components < 1) throw UsageError("component cap must be at least 1", "ncomp");
    max_components = std::min(max_components, model.eig.size());
    const auto& grid = model.mean.grid;
    std::vector<double> cv(max_components, 0.0);
    for (std::size_t i = 0; i < sample.n_subjects(); ++i) {
        const auto& target = sample[i];
        if (target.size() == 0) continue;
        std::vector<SubjectRecord> rest;
        rest.reserve(sample.n_subjects() - 1);
        for (std::size_t j = 0; j < sample.n_subjects(); ++j) {
            if (j != i) rest.push_back(sample[j]);
        }
        const SparseFunctionalSample without(std::move(rest), sample.domain());
        const auto mean = estimate_mean(without, model.info.mean_bandwidth, grid, kernel);
        const auto raw = raw_covariances(without, mean);
        auto cov = estimate_covariance(raw, model.info.cov_bandwidth, grid, kernel);
        cov.noise_var = estimate_noise_variance(raw, model.info.cov_bandwidth, sample.domain(), grid.size(), kernel).value;
        auto eig = eigendecompose(cov, max_components);
        const std::size_t avail = std::min(max_components, eig.size());
        const FpcaModel loo{mean, cov, eig, avail, {}};
        const auto pred = pace_scores(loo, target, avail);
        const Eigen::MatrixXd psi = eig.evaluate(avail, target.times);
        Eigen::VectorXd resid(static_cast<Eigen::Index>(target.size()));
        for (std::size_t l = 0; l < target.size(); ++l) resid[static_cast<Eigen::Index>(l)] = target.values[l] - mean(target.times[l]);
        for (std::size_t m = 0; m < max_components; ++m) {
            if (m < avail) resid -= pred.scores[static_cast<Eigen::Index>(m)] * psi.row(static_cast<Eigen::Index>(m)).transpose();
            cv[m] += resid.squaredNorm();
        }
    }
    return cv;
}

std::size_t select_ncomp(const SparseFunctionalSample& sample, const FpcaModel& model, NcompMethod method,
                         std::size_t max_components, std::vector<double>* criterion, Kernel1 kernel) {
    if (max_components < 1) throw UsageError("component cap must be at least 1", "ncomp");
    if (method == NcompMethod::Fixed) {
        if (max_components > model.eig.size()) {
            throw NumericalError("requested " + std::to_string(max_components) + " components but only " +
                                 std::to_string(model.eig.size()) + " positive eigenvalues", "ncomp");
        }
        return max_components;
    }
    auto values = method == NcompMethod::Aic ? aic_values(sample, model, max_components)
                                             : cv_values(sample, model, max_components, kernel);
    const auto best = std::min_element(values.begin(), values.end());
    const auto chosen = static_cast<std::size_t>(best - values.begin()) + 1;
    if (criterion) *criterion = std::move(values);
    return chosen;
}

namespace {

double choose_mean_bandwidth(const std::vector<CurvePoint>& pts, const FpcaConfig& config, const Interval& domain) {
    const auto& policy = config.mean_bandwidth;
    if (policy.mode == BandwidthMode::Fixed) return policy.fixed;
    const auto candidates = smoothing::bandwidth_candidates(domain, policy.fractions);
    const auto objective = policy.mode == BandwidthMode::Gcv ? smoothing::BandwidthObjective::Gcv
                                                             : smoothing::BandwidthObjective::LosoCv;
    return smoothing::select_bandwidth(pts, candidates, objective, Kernel1(config.kernel)).bandwidth;
}

double choose_cov_bandwidth(const RawCovariances& raw, const FpcaConfig& config, const Interval& domain) {
    const auto& policy = config.cov_bandwidth;
    if (policy.mode == BandwidthMode::Fixed) return policy.fixed;
    const auto candidates = smoothing::bandwidth_candidates(domain, domain, policy.fractions);
    const auto objective = policy.mode == BandwidthMode::Gcv ? smoothing::BandwidthObjective::Gcv
                                                             : smoothing::BandwidthObjective::LosoCv;
    return smoothing::select_bandwidth(raw.off_diag, candidates, objective, Kernel2(Kernel1(config.kernel)))
        .bandwidth.h1;
}

}  // namespace

FpcaModel fit_fpca(const SparseFunctionalSample& sample, const FpcaConfig& config) {
    const Kernel1 kernel(config.kernel);
    const RegularGrid grid(sample.domain(), config.grid_points);
    // The covariance requirement implies the mean's, so it is checked first.
    const bool has_pair = std::any_of(sample.subjects().begin(), sample.subjects().end(),
                                      [](const SubjectRecord& s) { return s.size() >= 2; });
    if (!has_pair) {
        throw NumericalError("no subject has two or more observations; covariance is unfittable", "covariance");
    }
    const auto pts = curve_points(sample);

    FpcaModel model{MeanEstimate{grid, {}}, CovarianceEstimate{grid, {}, 0.0}, EigenSystem{grid, {}, {}, 0.0}, 0, {}};
    model.info.mean_bandwidth = in_stage("mean", [&] { return choose_mean_bandwidth(pts, config, sample.domain()); });
    model.mean = estimate_mean(sample, model.info.mean_bandwidth, grid, kernel, &model.info.mean_diagnostics);

    const auto raw = raw_covariances(sample, model.mean);
    model.info.cov_bandwidth = in_stage("covariance", [&] { return choose_cov_bandwidth(raw, config, sample.domain()); });
    model.cov = estimate_covariance(raw, model.info.cov_bandwidth, grid, kernel, &model.info.cov_diagnostics);
    const auto noise = estimate_noise_variance(raw, model.info.cov_bandwidth, sample.domain(), config.grid_points, kernel);
    model.cov.noise_var = noise.value;
    model.info.noise_var_raw = noise.raw;

    model.eig = eigendecompose(model.cov, config.max_components);
    model.info.ncomp_method = config.ncomp_method;
    model.n_components = in_stage("ncomp", [&] {
        const std::size_t cap = config.ncomp_method == NcompMethod::Fixed
                                    ? config.fixed_ncomp
                                    : std::min(config.max_components, model.eig.size());
        model.n_components = std::min(cap, model.eig.size());
        return select_ncomp(sample, model, config.ncomp_method, cap, &model.info.ncomp_criterion, kernel);
    });
    return model;
}

}  // namespace flr::fpca
