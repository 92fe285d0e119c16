#include "flr/data_model.hpp"

#include "flr/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace flr {

Interval::Interval(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        throw DataError("interval endpoints must be finite");
    }
    if (!(lo < hi)) {
        throw DataError("interval requires lo < hi");
    }
}

RegularGrid::RegularGrid(Interval interval, std::size_t n_points)
    : interval_(interval), spacing_(0.0) {
    if (n_points < 2) {
        throw UsageError("a grid needs at least 2 points");
    }
    spacing_ = interval.length() / static_cast<double>(n_points - 1);
    points_.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        points_[i] = interval.lo() + static_cast<double>(i) * spacing_;
    }
    points_.back() = interval.hi();
    weights_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_points), spacing_);
    weights_[0] = weights_[weights_.size() - 1] = spacing_ / 2.0;
}

Eigen::VectorXd RegularGrid::as_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(points_.data(), static_cast<Eigen::Index>(points_.size()));
}

double RegularGrid::integrate(const Eigen::Ref<const Eigen::VectorXd>& values) const {
    return weights_.dot(values);
}

std::pair<std::size_t, double> RegularGrid::locate(double t) const {
    const double u = (std::clamp(t, interval_.lo(), interval_.hi()) - interval_.lo()) / spacing_;
    auto left = static_cast<std::size_t>(std::floor(u));
    if (left >= points_.size() - 1) {
        left = points_.size() - 2;
    }
    return {left, u - static_cast<double>(left)};
}

double RegularGrid::interpolate(const Eigen::Ref<const Eigen::VectorXd>& values, double t) const {
    const auto [i, frac] = locate(t);
    const auto k = static_cast<Eigen::Index>(i);
    return (1.0 - frac) * values[k] + frac * values[k + 1];
}

double RegularGrid::interpolate2(const Eigen::Ref<const Eigen::MatrixXd>& surface,
                                 const RegularGrid& cols, double s, double t) const {
    const auto [i, fs] = locate(s);
    const auto [j, ft] = cols.locate(t);
    const auto r = static_cast<Eigen::Index>(i);
    const auto c = static_cast<Eigen::Index>(j);
    return (1.0 - fs) * ((1.0 - ft) * surface(r, c) + ft * surface(r, c + 1)) +
           fs * ((1.0 - ft) * surface(r + 1, c) + ft * surface(r + 1, c + 1));
}

SparseFunctionalSample::SparseFunctionalSample(std::vector<SubjectRecord> subjects, Interval domain)
    : subjects_(std::move(subjects)), domain_(domain) {
    std::unordered_set<std::string> seen;
    for (const auto& s : subjects_) {
        if (!seen.insert(s.id).second) {
            throw DataError("duplicate subject id '" + s.id + "'");
        }
        if (s.times.size() != s.values.size()) {
            throw DataError("subject '" + s.id + "' has mismatched times/values");
        }
        for (std::size_t l = 0; l < s.times.size(); ++l) {
            if (!std::isfinite(s.times[l]) || !std::isfinite(s.values[l])) {
                throw DataError("subject '" + s.id + "' has a non-finite observation");
            }
            if (!domain_.contains(s.times[l])) {
                throw DataError("subject '" + s.id + "' has a time outside the domain");
            }
            if (l > 0 && s.times[l] < s.times[l - 1]) {
                throw DataError("subject '" + s.id + "' times are not sorted");
            }
        }
    }
}

std::size_t SparseFunctionalSample::total_observations() const noexcept {
    std::size_t n = 0;
    for (const auto& s : subjects_) n += s.size();
    return n;
}

std::optional<std::size_t> SparseFunctionalSample::find(const std::string& id) const {
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        if (subjects_[i].id == id) return i;
    }
    return std::nullopt;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

std::optional<double> parse_real(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    const char* begin = t.data();
    if (*begin == '+') ++begin;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

SparseFunctionalSample load_sample(const std::string& path, const ColumnMap& columns,
                                   std::optional<Interval> domain, LoadReport* report) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path + "'", "load");
    }
    std::string line;
    if (!std::getline(in, line) || trim(line).empty()) {
        throw DataError("empty input '" + path + "'", "load");
    }
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
        line.erase(0, 3);  // UTF-8 BOM
    }
    const auto header = split_csv_line(line);
    auto column_index = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) return i;
        }
        throw DataError("missing column '" + name + "' in '" + path + "'", "load");
    };
    const std::size_t id_col = column_index(columns.id);
    const std::size_t time_col = column_index(columns.time);
    const std::size_t value_col = column_index(columns.value);
    const std::size_t needed = std::max({id_col, time_col, value_col});

    struct Row { std::size_t subject; double time; double value; };
    std::vector<std::string> ids;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<Row> rows;

    std::size_t row_number = 1;
    while (std::getline(in, line)) {
        ++row_number;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() <= needed) {
            throw DataError("row " + std::to_string(row_number) + " has too few fields", "load");
        }
        const auto t = parse_real(fields[time_col]);
        const auto v = parse_real(fields[value_col]);
        if (!t || !v) {
            throw DataError("row " + std::to_string(row_number) + ": non-numeric time or value", "load");
        }
        if (!std::isfinite(*t) || !std::isfinite(*v)) {
            throw DataError("row " + std::to_string(row_number) + ": non-finite time or value", "load");
        }
        const std::string id = trim(fields[id_col]);
        auto [it, inserted] = index.try_emplace(id, ids.size());
        if (inserted) ids.push_back(id);
        rows.push_back({it->second, *t, *v});
    }
    if (rows.empty()) {
        throw DataError("empty input '" + path + "' (header only)", "load");
    }

    if (!domain) {
        const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return a.time < b.time; });
        domain = Interval(lo->time, hi->time);
    }

    std::vector<SubjectRecord> subjects(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) subjects[i].id = ids[i];
    std::size_t excluded = 0;
    // Group first, then sort each subject stably by time so that duplicate
    // times keep their file order.
    std::vector<std::vector<std::pair<double, double>>> grouped(ids.size());
    for (const auto& r : rows) {
        if (!domain->contains(r.time)) {
            ++excluded;
            continue;
        }
        grouped[r.subject].emplace_back(r.time, r.value);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto& g = grouped[i];
        std::stable_sort(g.begin(), g.end(), [](auto& a, auto& b) { return a.first < b.first; });
        for (const auto& [t, v] : g) {
            subjects[i].times.push_back(t);
            subjects[i].values.push_back(v);
        }
    }
    if (report) {
        report->rows_read = rows.size();
        report->rows_outside_domain = excluded;
    }
    return SparseFunctionalSample(std::move(subjects), *domain);
}

void save_sample(const SparseFunctionalSample& sample, const std::string& path, const ColumnMap& columns) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write '" + path + "'", "save");
    }
    out << csv_quote(columns.id) << ',' << csv_quote(columns.time) << ',' << csv_quote(columns.value) << '\n';
    for (const auto& s : sample.subjects()) {
        for (std::size_t l = 0; l < s.size(); ++l) {
            out << csv_quote(s.id) << ',' << format_real(s.times[l]) << ',' << format_real(s.values[l]) << '\n';
        }
    }
}

std::vector<PooledPoint> pooled_points(const SparseFunctionalSample& sample) {
    std::vector<PooledPoint> pts;
    pts.reserve(sample.total_observations());
    for (std::size_t i = 0; i < sample.n_subjects(); ++i) {
        const auto& s = sample[i];
        for (std::size_t l = 0; l < s.size(); ++l) {
            pts.push_back({s.times[l], s.values[l], i});
        }
    }
    return pts;
}

SampleSummary summarize(const SparseFunctionalSample& sample) {
    SampleSummary out;
    out.n_subjects = sample.n_subjects();
    out.n_observations = sample.total_observations();
    if (out.n_subjects == 0) return out;

    std::vector<std::size_t> counts;
    counts.reserve(out.n_subjects);
    double tmin = sample.domain().hi();
    double tmax = sample.domain().lo();
    for (const auto& s : sample.subjects()) {
        counts.push_back(s.size());
        if (!s.times.empty()) {
            tmin = std::min(tmin, s.times.front());
            tmax = std::max(tmax, s.times.back());
        }
    }
    std::sort(counts.begin(), counts.end());
    out.min_points = counts.front();
    out.max_points = counts.back();
    const std::size_t n = counts.size();
    out.median_points = n % 2 == 1 ? static_cast<double>(counts[n / 2])
                                   : 0.5 * static_cast<double>(counts[n / 2 - 1] + counts[n / 2]);
    if (out.n_observations > 0) {
        out.time_min = tmin;
        out.time_max = tmax;
    }
    return out;
}

std::pair<SparseFunctionalSample, SparseFunctionalSample> align_samples(
    const SparseFunctionalSample& x, const SparseFunctionalSample& y) {
    std::vector<std::string> ids;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto* sample : {&x, &y}) {
        for (const auto& s : sample->subjects()) {
            if (index.try_emplace(s.id, ids.size()).second) ids.push_back(s.id);
        }
    }
    auto remap = [&](const SparseFunctionalSample& sample) {
        std::vector<SubjectRecord> out(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) out[i].id = ids[i];
        for (const auto& s : sample.subjects()) out[index.at(s.id)] = s;
        return SparseFunctionalSample(std::move(out), sample.domain());
    };
    return {remap(x), remap(y)};
}

}  // namespace flr
