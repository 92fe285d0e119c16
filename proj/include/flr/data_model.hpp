#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flr {

/// Closed, finite time interval [lo, hi] with lo < hi.
class Interval {
public:
    Interval(double lo, double hi);

    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    double length() const noexcept { return hi_ - lo_; }
    bool contains(double t) const noexcept { return t >= lo_ && t <= hi_; }

    friend bool operator==(const Interval&, const Interval&) = default;

private:
    double lo_;
    double hi_;
};

/// Equispaced discretization of an Interval. Every surface and curve in the
/// pipeline lives on one of these; integrals use the trapezoid rule.
class RegularGrid {
public:
    RegularGrid(Interval interval, std::size_t n_points);
    /// Placeholder two-point grid on [0, 1].
    RegularGrid() : RegularGrid(Interval(0.0, 1.0), 2) {}

    const Interval& interval() const noexcept { return interval_; }
    std::size_t size() const noexcept { return points_.size(); }
    double spacing() const noexcept { return spacing_; }
    double operator[](std::size_t i) const { return points_[i]; }
    const std::vector<double>& points() const noexcept { return points_; }
    Eigen::VectorXd as_vector() const;

    /// Trapezoid weights: Δ/2 at the endpoints, Δ elsewhere.
    const Eigen::VectorXd& weights() const noexcept { return weights_; }

    double integrate(const Eigen::Ref<const Eigen::VectorXd>& values) const;

    /// Linear interpolation of grid values at t; t is clamped to the interval.
    double interpolate(const Eigen::Ref<const Eigen::VectorXd>& values, double t) const;

    /// Bilinear interpolation of a surface discretized on (rows: this) x (cols: other).
    double interpolate2(const Eigen::Ref<const Eigen::MatrixXd>& surface, const RegularGrid& cols,
                        double s, double t) const;

    friend bool operator==(const RegularGrid& a, const RegularGrid& b) {
        return a.interval_ == b.interval_ && a.points_.size() == b.points_.size();
    }

private:
    // Index of the left node of the cell holding t, and the fractional offset.
    std::pair<std::size_t, double> locate(double t) const;

    Interval interval_;
    double spacing_;
    std::vector<double> points_;
    Eigen::VectorXd weights_;
};

struct SubjectRecord {
    std::string id;
    std::vector<double> times;
    std::vector<double> values;

    std::size_t size() const noexcept { return times.size(); }
};

/// Validated collection of per-subject irregular observations of one process.
///
/// Invariants (checked on construction): every time within the domain,
/// times ascending within a subject, all values finite, ids unique.
/// Subjects with zero observations are allowed.
class SparseFunctionalSample {
public:
    SparseFunctionalSample(std::vector<SubjectRecord> subjects, Interval domain);

    const std::vector<SubjectRecord>& subjects() const noexcept { return subjects_; }
    const SubjectRecord& operator[](std::size_t i) const { return subjects_[i]; }
    std::size_t n_subjects() const noexcept { return subjects_.size(); }
    const Interval& domain() const noexcept { return domain_; }
    std::size_t total_observations() const noexcept;

    /// Index of the subject with this id, if present.
    std::optional<std::size_t> find(const std::string& id) const;

private:
    std::vector<SubjectRecord> subjects_;
    Interval domain_;
};

struct ColumnMap {
    std::string id = "id";
    std::string time = "time";
    std::string value = "value";
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rows_outside_domain = 0;
};

/// Reads long-format CSV (header row required). Rows are grouped by id in
/// order of first appearance and sorted by time within subject; rows with time
/// outside `domain` are dropped and counted. With no domain the range of the
/// observed times is used.
SparseFunctionalSample load_sample(const std::string& path, const ColumnMap& columns,
                                   std::optional<Interval> domain, LoadReport* report = nullptr);

/// Writes the sample in the long format understood by load_sample. Values are
/// printed with round-trip precision.
void save_sample(const SparseFunctionalSample& sample, const std::string& path,
                 const ColumnMap& columns = {});

struct PooledPoint {
    double time;
    double value;
    std::size_t subject;
};

std::vector<PooledPoint> pooled_points(const SparseFunctionalSample& sample);

struct SampleSummary {
    std::size_t n_subjects = 0;
    std::size_t n_observations = 0;
    // Order statistics of per-subject counts; empty when there are no subjects.
    std::optional<std::size_t> min_points;
    std::optional<double> median_points;
    std::optional<std::size_t> max_points;
    // Range of observed times; empty when no observations exist.
    std::optional<double> time_min;
    std::optional<double> time_max;
};

SampleSummary summarize(const SparseFunctionalSample& sample);

/// Re-indexes two samples onto the union of their ids (predictor order first,
/// then ids seen only in the response). A subject missing from one process
/// gets an empty record there.
std::pair<SparseFunctionalSample, SparseFunctionalSample> align_samples(
    const SparseFunctionalSample& x, const SparseFunctionalSample& y);

}  // namespace flr
