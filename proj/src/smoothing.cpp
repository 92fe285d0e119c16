#include "flr/smoothing.hpp"

#include "flr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace flr::smoothing {

std::string to_string(KernelShape shape) {
    switch (shape) {
        case KernelShape::Epanechnikov: return "epanechnikov";
        case KernelShape::Quartic: return "quartic";
    }
    return "unknown";
}

KernelShape kernel_from_string(const std::string& name) {
    if (name == "epanechnikov") return KernelShape::Epanechnikov;
    if (name == "quartic") return KernelShape::Quartic;
    throw UsageError("unknown kernel '" + name + "' (expected epanechnikov or quartic)");
}

std::string to_string(BandwidthObjective objective) {
    return objective == BandwidthObjective::Gcv ? "gcv" : "loso-cv";
}

namespace {

// Relative determinant threshold below which a local normal system is
// treated as singular.
constexpr double kSingularTol = 1e-10;
// Widened windows reach slightly past the k-th nearest point so that it gets
// a strictly positive kernel weight.
constexpr double kWidenFactor = 1.05;

// Symmetric 3x3 normal system; returns (first component of A^{-1} b, (A^{-1})_00)
// or nullopt when A is numerically singular.
struct Sym3 {
    double a00 = 0, a01 = 0, a02 = 0, a11 = 0, a12 = 0, a22 = 0;
    double b0 = 0, b1 = 0, b2 = 0;

    void add(double w, double u, double v, double z) {
        a00 += w;
        a01 += w * u;
        a02 += w * v;
        a11 += w * u * u;
        a12 += w * u * v;
        a22 += w * v * v;
        b0 += w * z;
        b1 += w * u * z;
        b2 += w * v * z;
    }

    std::optional<std::pair<double, double>> solve_first() const {
        const double c00 = a11 * a22 - a12 * a12;
        const double c01 = a02 * a12 - a01 * a22;
        const double c02 = a01 * a12 - a11 * a02;
        const double det = a00 * c00 + a01 * c01 + a02 * c02;
        const double scale = a00 * a11 * a22;
        if (!(scale > 0.0) || !(det > kSingularTol * scale)) return std::nullopt;
        return std::pair{(c00 * b0 + c01 * b1 + c02 * b2) / det, c00 / det};
    }

    // Fit with the second regressor dropped: (1, u) only.
    std::optional<std::pair<double, double>> solve_first_linear() const {
        const double det = a00 * a11 - a01 * a01;
        const double scale = a00 * a11;
        if (!(scale > 0.0) || !(det > kSingularTol * scale)) return std::nullopt;
        return std::pair{(a11 * b0 - a01 * b1) / det, a11 / det};
    }
};

}  // namespace

// ---------------------------------------------------------------- 1-D

LocalLinear1d::LocalLinear1d(std::span<const CurvePoint> points, Kernel1 kernel)
    : points_(points.begin(), points.end()), kernel_(kernel) {
    std::stable_sort(points_.begin(), points_.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.x < b.x; });
}

std::optional<LocalFit> LocalLinear1d::fit_at(double s, double h, std::optional<std::size_t> exclude_group) const {
    auto eligible = [&](const CurvePoint& p) { return p.weight > 0.0 && (!exclude_group || p.group != *exclude_group); };

    auto accumulate = [&](double bw, std::size_t& distinct) {
        Sym3 m;
        distinct = 0;
        double first_x = 0.0;
        const auto lo = std::lower_bound(points_.begin(), points_.end(), s - bw,
                                         [](const CurvePoint& p, double v) { return p.x < v; });
        for (auto it = lo; it != points_.end() && it->x <= s + bw; ++it) {
            if (!eligible(*it)) continue;
            const double u = (it->x - s) / bw;
            const double k = kernel_(u);
            if (k <= 0.0) continue;
            if (distinct == 0) {
                first_x = it->x;
                distinct = 1;
            } else if (distinct == 1 && it->x != first_x) {
                distinct = 2;
            }
            m.add(it->weight * k, u, 0.0, it->y);
        }
        return m;
    };

    LocalFit out;
    double bw = h;
    std::size_t distinct = 0;
    Sym3 m = accumulate(bw, distinct);
    if (distinct < 2) {
        // Distance to the second-nearest distinct x among eligible points.
        std::vector<std::pair<double, double>> by_distance;
        for (const auto& p : points_) {
            if (eligible(p)) by_distance.emplace_back(std::abs(p.x - s), p.x);
        }
        std::sort(by_distance.begin(), by_distance.end());
        std::optional<double> first;
        std::optional<double> reach;
        for (const auto& [dist, x] : by_distance) {
            if (!first) first = x;
            else if (x != *first) { reach = dist; break; }
        }
        if (!reach) return std::nullopt;
        bw = std::max(h, *reach * kWidenFactor);
        out.widened = true;
        m = accumulate(bw, distinct);
        if (distinct < 2) return std::nullopt;
    }

    const double k0 = kernel_(0.0);
    if (auto sol = m.solve_first_linear()) {
        out.value = sol->first;
        out.self_influence = k0 * sol->second;
    } else {
        out.value = m.b0 / m.a00;
        out.self_influence = k0 / m.a00;
        out.local_constant = true;
    }
    return out;
}

CurveFit LocalLinear1d::fit(double h, const RegularGrid& grid) const {
    if (!(h > 0.0)) throw UsageError("bandwidth must be positive", "smoothing");
    CurveFit out;
    out.values.resize(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto f = fit_at(grid[i], h);
        if (!f) {
            throw NumericalError("fewer than 2 distinct design points; cannot fit a local line", "smoothing");
        }
        out.values[static_cast<Eigen::Index>(i)] = f->value;
        out.diagnostics.widened += f->widened;
        out.diagnostics.local_constant += f->local_constant;
    }
    return out;
}

CurveFit local_linear_1d(std::span<const CurvePoint> points, double bandwidth, const RegularGrid& eval, Kernel1 kernel) {
    return LocalLinear1d(points, kernel).fit(bandwidth, eval);
}

// ---------------------------------------------------------------- 2-D

namespace {

// Generic local fit of b0 + b1 u + b2 v over points in rotated or plain
// coordinates. `coords` maps a point to (a, b) coordinates where the window is
// |a - a0| < ha, |b - b0| < hb; `regressor2` maps the scaled (ua, ub) to the
// second regressor (ub for a plane, ub^2 for the rotated diagonal fit).
template <class Point, class Coords, class Reg2>
std::optional<LocalFit> local_surface_fit(std::span<const Point> sorted, double a0, double b0, double ha, double hb,
                                          const Kernel2& kernel, std::optional<std::size_t> exclude_group,
                                          Coords coords, Reg2 regressor2, bool slope_fallback) {
    auto eligible = [&](const Point& p) { return p.weight > 0.0 && (!exclude_group || p.group != *exclude_group); };

    auto accumulate = [&](double wa, double wb, std::size_t& count) {
        Sym3 m;
        count = 0;
        const double ia = 1.0 / wa;
        const double ib = 1.0 / wb;
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), a0 - wa,
                                         [&](const Point& p, double v) { return coords(p).first < v; });
        for (auto it = lo; it != sorted.end(); ++it) {
            const auto [a, b] = coords(*it);
            if (a > a0 + wa) break;
            const double ub = (b - b0) * ib;
            if (ub <= -1.0 || ub >= 1.0 || !eligible(*it)) continue;
            const double ua = (a - a0) * ia;
            const double k = kernel(ua, ub);
            if (k <= 0.0) continue;
            ++count;
            m.add(it->weight * k, ua, regressor2(ub), it->z);
        }
        return m;
    };

    LocalFit out;
    double wa = ha;
    double wb = hb;
    std::size_t count = 0;
    Sym3 m = accumulate(wa, wb, count);
    if (count < 3) {
        std::vector<double> reach;
        for (const auto& p : sorted) {
            if (!eligible(p)) continue;
            const auto [a, b] = coords(p);
            reach.push_back(std::max(std::abs(a - a0) / ha, std::abs(b - b0) / hb));
        }
        if (reach.size() < 3) return std::nullopt;
        std::nth_element(reach.begin(), reach.begin() + 2, reach.end());
        const double scale = std::max(1.0, reach[2] * kWidenFactor);
        wa = ha * scale;
        wb = hb * scale;
        out.widened = true;
        m = accumulate(wa, wb, count);
        if (count < 3) return std::nullopt;
    }

    const double k00 = kernel(0.0, 0.0);
    if (auto sol = m.solve_first()) {
        out.value = sol->first;
        out.self_influence = k00 * sol->second;
    } else if (auto lin = m.solve_first_linear(); slope_fallback && lin) {
        // Rotated fit: drop the curvature term but keep the slope along the diagonal.
        out.value = lin->first;
        out.self_influence = k00 * lin->second;
        out.local_constant = true;
    } else {
        out.value = m.b0 / m.a00;
        out.self_influence = k00 / m.a00;
        out.local_constant = true;
    }
    return out;
}

constexpr auto plane_coords = [](const SurfacePoint& p) { return std::pair{p.x1, p.x2}; };
constexpr auto identity_reg = [](double v) { return v; };

}  // namespace

LocalLinear2d::LocalLinear2d(std::span<const SurfacePoint> points, Kernel2 kernel)
    : points_(points.begin(), points.end()), kernel_(kernel) {
    std::stable_sort(points_.begin(), points_.end(),
                     [](const SurfacePoint& a, const SurfacePoint& b) { return a.x1 < b.x1; });
}

std::optional<LocalFit> LocalLinear2d::fit_at(double s1, double s2, Bandwidth2 h,
                                              std::optional<std::size_t> exclude_group) const {
    return local_surface_fit<SurfacePoint>(points_, s1, s2, h.h1, h.h2, kernel_, exclude_group, plane_coords,
                                           identity_reg, false);
}

SurfaceFit LocalLinear2d::fit(Bandwidth2 h, const RegularGrid& grid1, const RegularGrid& grid2) const {
    if (!(h.h1 > 0.0) || !(h.h2 > 0.0)) throw UsageError("bandwidths must be positive", "smoothing");
    SurfaceFit out;
    out.values.resize(static_cast<Eigen::Index>(grid1.size()), static_cast<Eigen::Index>(grid2.size()));
    // Points of the current x1-strip with their first-coordinate kernel
    // factor folded into the weight, ordered by x2 so that each node only
    // visits its own window.
    struct StripPoint {
        double x2;
        double ua;
        double wk;
        double z;
    };
    std::vector<StripPoint> strip;
    const Kernel1& k1 = kernel_.marginal();
    const double ia = 1.0 / h.h1;
    const double ib = 1.0 / h.h2;
    for (std::size_t i = 0; i < grid1.size(); ++i) {
        const double a0 = grid1[i];
        strip.clear();
        const auto lo = std::lower_bound(points_.begin(), points_.end(), a0 - h.h1,
                                         [](const SurfacePoint& p, double v) { return p.x1 < v; });
        for (auto it = lo; it != points_.end() && it->x1 <= a0 + h.h1; ++it) {
            const double ua = (it->x1 - a0) * ia;
            const double wk = it->weight * k1(ua);
            if (wk > 0.0) strip.push_back({it->x2, ua, wk, it->z});
        }
        std::sort(strip.begin(), strip.end(), [](const StripPoint& a, const StripPoint& b) { return a.x2 < b.x2; });

        for (std::size_t j = 0; j < grid2.size(); ++j) {
            const double b0 = grid2[j];
            Sym3 m;
            std::size_t count = 0;
            auto it = std::lower_bound(strip.begin(), strip.end(), b0 - h.h2,
                                       [](const StripPoint& p, double v) { return p.x2 < v; });
            for (; it != strip.end() && it->x2 <= b0 + h.h2; ++it) {
                const double ub = (it->x2 - b0) * ib;
                const double k = it->wk * k1(ub);
                if (k <= 0.0) continue;
                ++count;
                m.add(k, it->ua, ub, it->z);
            }
            double value = 0.0;
            if (count < 3) {
                // Sparse corner: the pointwise fit widens the window.
                const auto f = fit_at(a0, b0, h);
                if (!f) throw NumericalError("fewer than 3 design points; cannot fit a local plane", "smoothing");
                value = f->value;
                out.diagnostics.widened += f->widened;
                out.diagnostics.local_constant += f->local_constant;
            } else if (auto sol = m.solve_first()) {
                value = sol->first;
            } else {
                value = m.b0 / m.a00;
                ++out.diagnostics.local_constant;
            }
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
        }
    }
    return out;
}

SurfaceFit local_linear_2d(std::span<const SurfacePoint> points, Bandwidth2 bandwidths, const RegularGrid& eval1,
                           const RegularGrid& eval2, Kernel2 kernel) {
    return LocalLinear2d(points, kernel).fit(bandwidths, eval1, eval2);
}

CurveFit local_diag_rotated(std::span<const SurfacePoint> points, double bandwidth, const RegularGrid& eval,
                            Kernel1 kernel) {
    if (!(bandwidth > 0.0)) throw UsageError("bandwidth must be positive", "smoothing");
    // Store rotated coordinates in (x1, x2) = (d, o).
    std::vector<SurfacePoint> rotated;
    rotated.reserve(points.size());
    for (const auto& p : points) {
        rotated.push_back({(p.x1 + p.x2) / std::numbers::sqrt2, (p.x2 - p.x1) / std::numbers::sqrt2, p.z, p.weight,
                           p.group});
    }
    std::stable_sort(rotated.begin(), rotated.end(),
                     [](const SurfacePoint& a, const SurfacePoint& b) { return a.x1 < b.x1; });
    if (rotated.size() < 3) {
        throw NumericalError("fewer than 3 off-diagonal raw covariances; increase the covariance bandwidth",
                             "noise-variance");
    }
    const Kernel2 k2(kernel);
    const auto squared = [](double v) { return v * v; };
    CurveFit out;
    out.values.resize(static_cast<Eigen::Index>(eval.size()));
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto f = local_surface_fit<SurfacePoint>(rotated, std::numbers::sqrt2 * eval[i], 0.0, bandwidth,
                                                       bandwidth, k2, std::nullopt, plane_coords, squared, true);
        if (!f) {
            throw NumericalError("insufficient off-diagonal raw covariances near the diagonal; increase the bandwidth",
                                 "noise-variance");
        }
        out.values[static_cast<Eigen::Index>(i)] = f->value;
        out.diagnostics.widened += f->widened;
        out.diagnostics.local_constant += f->local_constant;
    }
    return out;
}

// ---------------------------------------------------------------- bandwidths

namespace {

std::size_t scoring_stride(std::size_t n, std::size_t cap) {
    return n <= cap ? 1 : (n + cap - 1) / cap;
}

struct ScoreAccumulator {
    double rss = 0.0;
    double weight = 0.0;
    double trace = 0.0;
    std::size_t fitted = 0;
    std::size_t attempted = 0;

    void add(double residual, double w, double influence) {
        rss += w * residual * residual;
        weight += w;
        trace += w * influence;
        ++fitted;
    }

    std::optional<double> finish(BandwidthObjective objective) const {
        if (fitted == 0 || !(weight > 0.0) || 2 * fitted < attempted) return std::nullopt;
        const double mse = rss / weight;
        double score = mse;
        if (objective == BandwidthObjective::Gcv) {
            const double df = 1.0 - trace / static_cast<double>(fitted);
            if (!(df > 1e-8)) return std::nullopt;
            score = mse / (df * df);
        }
        if (!std::isfinite(score)) return std::nullopt;
        return score;
    }
};

template <class Candidate, class Eval>
BandwidthSelection<Candidate> select_from(std::span<const Candidate> candidates, Eval eval,
                                          auto positive, auto describe) {
    if (candidates.empty()) throw UsageError("empty bandwidth candidate set", "bandwidth");
    BandwidthSelection<Candidate> out{candidates.front(), {}};
    std::optional<std::size_t> best;
    for (const auto& c : candidates) {
        if (!positive(c)) throw UsageError("bandwidth candidates must be positive", "bandwidth");
        CandidateScore<Candidate> row;
        row.bandwidth = c;
        try {
            if (auto score = eval(c)) {
                row.score = *score;
                row.ok = true;
            } else {
                row.failure = "degenerate objective";
            }
        } catch (const Error& e) {
            row.failure = e.what();
        }
        if (row.ok && (!best || row.score < out.table[*best].score)) best = out.table.size();
        out.table.push_back(row);
    }
    if (!best) {
        std::ostringstream msg;
        msg << "all bandwidth candidates failed:";
        for (const auto& row : out.table) msg << " [" << describe(row.bandwidth) << ": " << row.failure << "]";
        throw NumericalError(msg.str(), "bandwidth");
    }
    out.bandwidth = out.table[*best].bandwidth;
    return out;
}

}  // namespace

std::optional<double> bandwidth_objective(const LocalLinear1d& smoother, double h, BandwidthObjective objective) {
    const auto pts = smoother.points();
    const std::size_t stride = scoring_stride(pts.size(), kMaxScoredPoints);
    ScoreAccumulator acc;
    for (std::size_t i = 0; i < pts.size(); i += stride) {
        const auto& p = pts[i];
        if (!(p.weight > 0.0)) continue;
        ++acc.attempted;
        const auto f = objective == BandwidthObjective::Gcv ? smoother.fit_at(p.x, h)
                                                            : smoother.fit_at(p.x, h, p.group);
        if (!f) continue;
        acc.add(p.y - f->value, p.weight, f->self_influence);
    }
    return acc.finish(objective);
}

std::optional<double> bandwidth_objective(const LocalLinear2d& smoother, Bandwidth2 h, BandwidthObjective objective) {
    const auto pts = smoother.points();
    const std::size_t stride = scoring_stride(pts.size(), kMaxScoredSurfacePoints);
    ScoreAccumulator acc;
    for (std::size_t i = 0; i < pts.size(); i += stride) {
        const auto& p = pts[i];
        if (!(p.weight > 0.0)) continue;
        ++acc.attempted;
        const auto f = objective == BandwidthObjective::Gcv ? smoother.fit_at(p.x1, p.x2, h)
                                                            : smoother.fit_at(p.x1, p.x2, h, p.group);
        if (!f) continue;
        acc.add(p.z - f->value, p.weight, f->self_influence);
    }
    return acc.finish(objective);
}

BandwidthSelection<double> select_bandwidth(std::span<const CurvePoint> points, std::span<const double> candidates,
                                            BandwidthObjective objective, Kernel1 kernel) {
    const LocalLinear1d smoother(points, kernel);
    return select_from<double>(
        candidates, [&](double h) { return bandwidth_objective(smoother, h, objective); },
        [](double h) { return h > 0.0; }, [](double h) { return std::to_string(h); });
}

BandwidthSelection<Bandwidth2> select_bandwidth(std::span<const SurfacePoint> points,
                                                std::span<const Bandwidth2> candidates,
                                                BandwidthObjective objective, Kernel2 kernel) {
    const LocalLinear2d smoother(points, kernel);
    return select_from<Bandwidth2>(
        candidates, [&](Bandwidth2 h) { return bandwidth_objective(smoother, h, objective); },
        [](Bandwidth2 h) { return h.h1 > 0.0 && h.h2 > 0.0; },
        [](Bandwidth2 h) { return "(" + std::to_string(h.h1) + ", " + std::to_string(h.h2) + ")"; });
}

std::vector<double> default_bandwidth_fractions() { return {0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5}; }

std::vector<double> bandwidth_candidates(const Interval& domain, std::span<const double> fractions) {
    std::vector<double> out;
    for (double f : fractions) out.push_back(f * domain.length());
    return out;
}

std::vector<Bandwidth2> bandwidth_candidates(const Interval& d1, const Interval& d2, std::span<const double> fractions) {
    std::vector<Bandwidth2> out;
    for (double f : fractions) out.push_back({f * d1.length(), f * d2.length()});
    return out;
}

}  // namespace flr::smoothing
