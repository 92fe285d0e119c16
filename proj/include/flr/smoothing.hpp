#pragma once

#include "flr/data_model.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flr::smoothing {

enum class KernelShape { Epanechnikov, Quartic };

std::string to_string(KernelShape shape);
KernelShape kernel_from_string(const std::string& name);

/// Compactly supported symmetric density on [-1, 1].
class Kernel1 {
public:
    constexpr explicit Kernel1(KernelShape shape = KernelShape::Epanechnikov) : shape_(shape) {}

    constexpr KernelShape shape() const noexcept { return shape_; }

    constexpr double operator()(double u) const noexcept {
        if (u <= -1.0 || u >= 1.0) return 0.0;
        const double a = 1.0 - u * u;
        switch (shape_) {
            case KernelShape::Epanechnikov: return 0.75 * a;
            case KernelShape::Quartic: return 0.9375 * a * a;
        }
        return 0.0;
    }

private:
    KernelShape shape_;
};

/// Product kernel K2(u, v) = K1(u) K1(v).
class Kernel2 {
public:
    constexpr explicit Kernel2(Kernel1 k = Kernel1{}) : k_(k) {}
    constexpr double operator()(double u, double v) const noexcept { return k_(u) * k_(v); }
    constexpr const Kernel1& marginal() const noexcept { return k_; }

private:
    Kernel1 k_;
};

/// Observation for the 1-D smoother. `group` identifies the subject so that
/// leave-one-subject-out fits can drop all of a subject's points at once.
struct CurvePoint {
    double x;
    double y;
    double weight = 1.0;
    std::size_t group = 0;
};

/// Observation for the surface smoothers.
struct SurfacePoint {
    double x1;
    double x2;
    double z;
    double weight = 1.0;
    std::size_t group = 0;
};

struct Bandwidth2 {
    double h1;
    double h2;
    friend bool operator==(const Bandwidth2&, const Bandwidth2&) = default;
};

/// Per-fit diagnostics: how many evaluation nodes needed an adaptively widened
/// window and how many fell back to a local-constant fit.
struct SmootherDiagnostics {
    std::size_t widened = 0;
    std::size_t local_constant = 0;
};

struct CurveFit {
    Eigen::VectorXd values;
    SmootherDiagnostics diagnostics;
};

struct SurfaceFit {
    Eigen::MatrixXd values;  // rows follow the first grid, columns the second
    SmootherDiagnostics diagnostics;
};

/// Result of one local fit at a single target location.
struct LocalFit {
    double value = std::numeric_limits<double>::quiet_NaN();
    // Weight that the observation located exactly at the target (with unit
    // point weight) receives in the fitted value; the hat-matrix diagonal.
    double self_influence = 0.0;
    bool widened = false;
    bool local_constant = false;
};

/// Local linear scatterplot smoother. Points are sorted once on construction,
/// after which fits at any location are O(window) apart from a binary search.
class LocalLinear1d {
public:
    LocalLinear1d(std::span<const CurvePoint> points, Kernel1 kernel = Kernel1{});

    /// Fit at s using bandwidth h. Points whose group equals `exclude_group`
    /// are ignored. Returns nullopt when fewer than 2 distinct x remain.
    std::optional<LocalFit> fit_at(double s, double h,
                                   std::optional<std::size_t> exclude_group = std::nullopt) const;

    CurveFit fit(double h, const RegularGrid& grid) const;

    std::size_t size() const noexcept { return points_.size(); }
    std::span<const CurvePoint> points() const noexcept { return points_; }

private:
    std::vector<CurvePoint> points_;  // sorted by x
    Kernel1 kernel_;
};

/// Local linear surface smoother: at each node fits
/// b0 + b1 (s1 - x1) + b2 (s2 - x2) under product-kernel weights.
class LocalLinear2d {
public:
    LocalLinear2d(std::span<const SurfacePoint> points, Kernel2 kernel = Kernel2{});

    std::optional<LocalFit> fit_at(double s1, double s2, Bandwidth2 h,
                                   std::optional<std::size_t> exclude_group = std::nullopt) const;

    SurfaceFit fit(Bandwidth2 h, const RegularGrid& grid1, const RegularGrid& grid2) const;

    std::size_t size() const noexcept { return points_.size(); }
    std::span<const SurfacePoint> points() const noexcept { return points_; }

private:
    std::vector<SurfacePoint> points_;  // sorted by x1
    Kernel2 kernel_;
};

CurveFit local_linear_1d(std::span<const CurvePoint> points, double bandwidth, const RegularGrid& eval,
                         Kernel1 kernel = Kernel1{});

SurfaceFit local_linear_2d(std::span<const SurfacePoint> points, Bandwidth2 bandwidths,
                           const RegularGrid& eval1, const RegularGrid& eval2, Kernel2 kernel = Kernel2{});

/// Diagonal of a surface estimated from off-diagonal observations.
///
/// Coordinates are rotated to d = (x1 + x2)/√2 along the diagonal and
/// o = (x2 - x1)/√2 across it; locally b0 + b1 d' + b2 o'^2 is fitted (linear
/// along, quadratic across) and the value at o = 0 is returned for each grid
/// point s (i.e. at d = √2 s).
CurveFit local_diag_rotated(std::span<const SurfacePoint> points, double bandwidth, const RegularGrid& eval,
                            Kernel1 kernel = Kernel1{});

enum class BandwidthObjective { Gcv, LosoCv };

std::string to_string(BandwidthObjective objective);

/// Objective evaluation budget: GCV/CV scores are computed on at most this
/// many data points (curves) or surface points, taken at a fixed stride in
/// canonical order. Below the cap every point is used.
inline constexpr std::size_t kMaxScoredPoints = 4000;
inline constexpr std::size_t kMaxScoredSurfacePoints = 1500;

template <class Candidate>
struct CandidateScore {
    Candidate bandwidth;
    double score = std::numeric_limits<double>::infinity();
    bool ok = false;
    std::string failure;
};

template <class Candidate>
struct BandwidthSelection {
    Candidate bandwidth;
    std::vector<CandidateScore<Candidate>> table;
};

/// Returns the candidate minimizing the objective. Throws UsageError on an
/// empty or non-positive candidate set and NumericalError when every
/// candidate is degenerate (the message lists each failure).
BandwidthSelection<double> select_bandwidth(std::span<const CurvePoint> points, std::span<const double> candidates,
                                            BandwidthObjective objective, Kernel1 kernel = Kernel1{});

BandwidthSelection<Bandwidth2> select_bandwidth(std::span<const SurfacePoint> points,
                                                std::span<const Bandwidth2> candidates,
                                                BandwidthObjective objective, Kernel2 kernel = Kernel2{});

/// Objective value for a single bandwidth; nullopt when degenerate.
std::optional<double> bandwidth_objective(const LocalLinear1d& smoother, double h, BandwidthObjective objective);
std::optional<double> bandwidth_objective(const LocalLinear2d& smoother, Bandwidth2 h, BandwidthObjective objective);

/// Default search grid: fractions of the domain length
/// (0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5).
std::vector<double> default_bandwidth_fractions();
std::vector<double> bandwidth_candidates(const Interval& domain, std::span<const double> fractions);
std::vector<Bandwidth2> bandwidth_candidates(const Interval& d1, const Interval& d2,
                                             std::span<const double> fractions);

}  // namespace flr::smoothing
