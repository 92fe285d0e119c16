// flr: fit, predict, simulate and report for functional linear regression on
// sparse longitudinal data.

#include "flr/data_model.hpp"
#include "flr/errors.hpp"
#include "flr/fpca.hpp"
#include "flr/regression.hpp"
#include "flr/serialization.hpp"
#include "flr/simulation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

ordered_json finite_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json vec_json(const Eigen::VectorXd& v) {
    ordered_json out = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v[i]));
    return out;
}

class OutFile {
public:
    explicit OutFile(const fs::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw flr::DataError("cannot write '" + path.string() + "'", "output");
    }
    ~OutFile() = default;
    std::ostream& stream() { return out_; }
    void close() {
        out_.close();
        if (!out_) throw flr::DataError("failed writing '" + path_.string() + "'", "output");
    }

private:
    fs::path path_;
    std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
    OutFile f(path);
    f.stream() << text;
    f.close();
}

void write_json(const fs::path& path, const ordered_json& doc) { write_text(path, doc.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw flr::DataError("cannot create output directory '" + dir.string() + "'", "output");
}

// ------------------------------------------------------------ options

struct CommonOptions {
    std::string out = ".";
    std::uint64_t seed = 0;
};

struct FitOptions {
    std::size_t grid_points = 51;
    std::string kernel = "epanechnikov";
    std::string mean_bw_mode = "gcv";
    std::string cov_bw_mode = "loso-cv";
    std::string cross_bw_mode = "loso-cv";
    std::optional<double> bandwidth;
    std::vector<double> bandwidth_grid = flr::smoothing::default_bandwidth_fractions();
    std::string ncomp_method = "aic";
    std::optional<std::size_t> ncomp;
    std::size_t max_components = 10;
};

struct ColumnOptions {
    std::string id = "id";
    std::string time = "time";
    std::string value = "value";

    flr::ColumnMap map() const { return {id, time, value}; }
};

void add_fit_options(CLI::App* cmd, FitOptions& o) {
    cmd->add_option("--grid-points", o.grid_points, "Evaluation grid size per axis")->capture_default_str()->check(CLI::Range(2, 100000));
    cmd->add_option("--kernel", o.kernel, "Smoothing kernel: epanechnikov or quartic")->capture_default_str();
    cmd->add_option("--mean-bandwidth-mode", o.mean_bw_mode, "Mean smoother bandwidth policy: gcv, loso-cv")->capture_default_str();
    cmd->add_option("--cov-bandwidth-mode", o.cov_bw_mode, "Covariance smoother bandwidth policy: gcv, loso-cv")->capture_default_str();
    cmd->add_option("--cross-bandwidth-mode", o.cross_bw_mode, "Cross-covariance bandwidth policy: gcv, loso-cv")->capture_default_str();
    cmd->add_option("--bandwidth", o.bandwidth, "Fixed bandwidth for every smoother (disables selection)");
    cmd->add_option("--bandwidth-grid", o.bandwidth_grid, "Candidate bandwidths as fractions of the domain length")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--ncomp-method", o.ncomp_method, "Component selection: aic, cv, joint-cv or fixed")->capture_default_str();
    cmd->add_option("--ncomp", o.ncomp, "Fixed number of components for both processes (implies --ncomp-method fixed)");
    cmd->add_option("--max-components", o.max_components, "Largest component count considered")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_column_options(CLI::App* cmd, ColumnOptions& c) {
    cmd->add_option("--id-col", c.id, "Subject id column name")->capture_default_str();
    cmd->add_option("--time-col", c.time, "Time column name")->capture_default_str();
    cmd->add_option("--value-col", c.value, "Value column name")->capture_default_str();
}

flr::regression::FlrConfig build_config(const FitOptions& o) {
    using namespace flr;
    regression::FlrConfig cfg;
    fpca::FpcaConfig base;
    base.grid_points = o.grid_points;
    base.kernel = smoothing::kernel_from_string(o.kernel);
    base.max_components = o.max_components;
    for (double f : o.bandwidth_grid) {
        if (!(f > 0.0) || !(f < 1.0)) throw UsageError("bandwidth-grid fractions must lie in (0, 1)");
    }
    base.mean_bandwidth.fractions = base.cov_bandwidth.fractions = o.bandwidth_grid;
    base.mean_bandwidth.mode = fpca::bandwidth_mode_from_string(o.mean_bw_mode);
    base.cov_bandwidth.mode = fpca::bandwidth_mode_from_string(o.cov_bw_mode);
    cfg.cross_bandwidth.fractions = o.bandwidth_grid;
    cfg.cross_bandwidth.mode = fpca::bandwidth_mode_from_string(o.cross_bw_mode);
    if (base.mean_bandwidth.mode == fpca::BandwidthMode::Fixed || base.cov_bandwidth.mode == fpca::BandwidthMode::Fixed ||
        cfg.cross_bandwidth.mode == fpca::BandwidthMode::Fixed) {
        if (!o.bandwidth) throw UsageError("a fixed bandwidth policy needs --bandwidth");
    }
    if (o.bandwidth) {
        if (!(*o.bandwidth > 0.0)) throw UsageError("--bandwidth must be positive");
        base.mean_bandwidth.mode = base.cov_bandwidth.mode = fpca::BandwidthMode::Fixed;
        base.mean_bandwidth.fixed = base.cov_bandwidth.fixed = *o.bandwidth;
        cfg.cross_bandwidth.mode = fpca::BandwidthMode::Fixed;
        cfg.cross_fixed = smoothing::Bandwidth2{*o.bandwidth, *o.bandwidth};
    }

    std::string method = o.ncomp ? std::string("fixed") : o.ncomp_method;
    if (method == "joint-cv") {
        cfg.components = regression::ComponentPolicy::JointCv;
        base.ncomp_method = fpca::NcompMethod::Aic;
    } else {
        base.ncomp_method = fpca::ncomp_method_from_string(method);
        if (base.ncomp_method == fpca::NcompMethod::Fixed) {
            if (!o.ncomp) throw UsageError("--ncomp-method fixed needs --ncomp");
            if (*o.ncomp < 1) throw UsageError("--ncomp must be at least 1");
            base.fixed_ncomp = *o.ncomp;
        }
    }
    cfg.x = cfg.y = base;
    return cfg;
}

ordered_json fit_options_json(const FitOptions& o) {
    ordered_json j;
    j["grid_points"] = o.grid_points;
    j["kernel"] = o.kernel;
    j["mean_bandwidth_mode"] = o.bandwidth ? "fixed" : o.mean_bw_mode;
    j["cov_bandwidth_mode"] = o.bandwidth ? "fixed" : o.cov_bw_mode;
    j["cross_bandwidth_mode"] = o.bandwidth ? "fixed" : o.cross_bw_mode;
    j["bandwidth"] = o.bandwidth ? ordered_json(*o.bandwidth) : ordered_json(nullptr);
    j["bandwidth_grid"] = o.bandwidth_grid;
    j["ncomp_method"] = o.ncomp ? "fixed" : o.ncomp_method;
    j["ncomp"] = o.ncomp ? ordered_json(*o.ncomp) : ordered_json(nullptr);
    j["max_components"] = o.max_components;
    return j;
}

ordered_json columns_json(const ColumnOptions& c) { return {{"id", c.id}, {"time", c.time}, {"value", c.value}}; }

std::optional<flr::Interval> parse_domain(const std::vector<double>& v, const char* flag) {
    if (v.empty()) return std::nullopt;
    if (v.size() != 2) throw flr::UsageError(std::string(flag) + " expects LO,HI");
    return flr::Interval(v[0], v[1]);
}

ordered_json summary_json(const flr::SparseFunctionalSample& s, const flr::LoadReport& r) {
    const auto sum = flr::summarize(s);
    ordered_json j;
    j["rows_read"] = r.rows_read;
    j["rows_outside_domain"] = r.rows_outside_domain;
    j["domain"] = {s.domain().lo(), s.domain().hi()};
    j["n_subjects"] = sum.n_subjects;
    j["n_observations"] = sum.n_observations;
    j["min_points"] = sum.min_points ? ordered_json(*sum.min_points) : ordered_json(nullptr);
    j["median_points"] = sum.median_points ? ordered_json(*sum.median_points) : ordered_json(nullptr);
    j["max_points"] = sum.max_points ? ordered_json(*sum.max_points) : ordered_json(nullptr);
    return j;
}

void warn_dropped(const std::string& what, const flr::LoadReport& r) {
    if (r.rows_outside_domain > 0) {
        std::cerr << "warning: " << r.rows_outside_domain << " " << what << " row(s) outside the domain were dropped\n";
    }
}

ordered_json fpca_diagnostics(const flr::fpca::FpcaModel& m) {
    ordered_json j;
    j["mean_bandwidth"] = m.info.mean_bandwidth;
    j["cov_bandwidth"] = m.info.cov_bandwidth;
    j["noise_var"] = m.cov.noise_var;
    j["noise_var_raw"] = m.info.noise_var_raw;
    j["n_components"] = m.n_components;
    j["ncomp_method"] = flr::fpca::to_string(m.info.ncomp_method);
    j["ncomp_criterion"] = m.info.ncomp_criterion;
    j["scree"] = vec_json(m.eig.eigenvalues);
    j["positive_eigenvalue_total"] = m.eig.positive_total;
    j["mean_smoother"] = {{"widened", m.info.mean_diagnostics.widened},
                          {"local_constant", m.info.mean_diagnostics.local_constant}};
    j["cov_smoother"] = {{"widened", m.info.cov_diagnostics.widened},
                         {"local_constant", m.info.cov_diagnostics.local_constant}};
    return j;
}

void write_r2_curve(const fs::path& path, const flr::regression::FlrModel& m) {
    OutFile f(path);
    auto& os = f.stream();
    os << "t,r2,r2_raw\n";
    const auto& grid = m.cross.grid_t;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        os << num(grid[i]) << ',' << num(m.r2.pointwise[k]) << ',' << num(m.r2.pointwise_raw[k]) << '\n';
    }
    f.close();
}

ordered_json manifest_base(const std::string& command, const CommonOptions& c) {
    ordered_json j;
    j["tool"] = "flr";
    j["command"] = command;
    j["model_format"] = std::string(flr::io::kModelFormat) + "/" + std::to_string(flr::io::kModelVersion);
    j["seed"] = c.seed;
    j["out"] = c.out;
    return j;
}

// ------------------------------------------------------------ fit

struct FitArgs {
    CommonOptions common;
    FitOptions fit;
    ColumnOptions x_cols;
    ColumnOptions y_cols;
    std::string x_path;
    std::string y_path;
    std::vector<double> x_domain;
    std::vector<double> y_domain;
};

int cmd_fit(const FitArgs& a) {
    const auto cfg = build_config(a.fit);
    flr::LoadReport xr;
    flr::LoadReport yr;
    const auto x = flr::load_sample(a.x_path, a.x_cols.map(), parse_domain(a.x_domain, "--x-domain"), &xr);
    const auto y = flr::load_sample(a.y_path, a.y_cols.map(), parse_domain(a.y_domain, "--y-domain"), &yr);
    warn_dropped("predictor", xr);
    warn_dropped("response", yr);

    const auto model = flr::regression::fit_flr(x, y, cfg);

    const fs::path out(a.common.out);
    ensure_dir(out);
    flr::io::save_model(model, (out / "model.json").string());

    ordered_json diag;
    diag["predictor"] = fpca_diagnostics(model.x_model);
    diag["response"] = fpca_diagnostics(model.y_model);
    diag["cross_bandwidth"] = {model.cross_bandwidth.h1, model.cross_bandwidth.h2};
    diag["K"] = model.K;
    diag["M"] = model.M;
    diag["r2_global"] = model.r2.global;
    diag["r2_global_raw"] = model.r2.global_raw;
    diag["r2_integrated"] = model.r2.integrated;
    diag["r2_integrated_raw"] = model.r2.integrated_raw;
    if (!model.joint_cv.empty()) diag["joint_cv"] = model.joint_cv;
    write_json(out / "diagnostics.json", diag);
    write_r2_curve(out / "r2_pointwise.csv", model);

    auto manifest = manifest_base("fit", a.common);
    manifest["inputs"] = {{"x", a.x_path}, {"y", a.y_path}};
    manifest["x_columns"] = columns_json(a.x_cols);
    manifest["y_columns"] = columns_json(a.y_cols);
    manifest["x_domain"] = {x.domain().lo(), x.domain().hi()};
    manifest["y_domain"] = {y.domain().lo(), y.domain().hi()};
    manifest["x_domain_inferred"] = a.x_domain.empty();
    manifest["y_domain_inferred"] = a.y_domain.empty();
    manifest["options"] = fit_options_json(a.fit);
    manifest["x_sample"] = summary_json(x, xr);
    manifest["y_sample"] = summary_json(y, yr);
    manifest["outputs"] = {"model.json", "diagnostics.json", "r2_pointwise.csv"};
    write_json(out / "manifest.json", manifest);

    std::cout << "fitted K=" << model.K << " M=" << model.M << " R2=" << num(model.r2.global)
              << " R2~=" << num(model.r2.integrated) << " -> " << (out / "model.json").string() << "\n";
    return 0;
}

// ------------------------------------------------------------ predict

struct PredictArgs {
    CommonOptions common;
    ColumnOptions cols;
    std::string model_path;
    std::string x_path;
    std::vector<std::string> ids;
    double level = 0.95;
};

std::string file_stem(const std::string& id, std::set<std::string>& used) {
    std::string s;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_' || c == '.';
        s.push_back(ok ? c : '_');
    }
    if (s.empty() || s.front() == '.') s.insert(s.begin(), '_');
    std::string stem = "pred_" + s;
    for (int k = 2; used.count(stem) > 0; ++k) stem = "pred_" + s + "~" + std::to_string(k);
    used.insert(stem);
    return stem;
}

int cmd_predict(const PredictArgs& a) {
    if (!(a.level > 0.0 && a.level < 1.0)) throw flr::UsageError("--level must lie strictly between 0 and 1");
    const auto model = flr::io::load_model(a.model_path);
    flr::LoadReport xr;
    const auto x = flr::load_sample(a.x_path, a.cols.map(), model.x_model.domain(), &xr);
    warn_dropped("predictor", xr);

    // Roster: subjects in the file, then requested ids not present there.
    std::vector<std::string> roster;
    std::set<std::string> seen;
    for (const auto& s : x.subjects()) {
        if (seen.insert(s.id).second) roster.push_back(s.id);
    }
    for (const auto& id : a.ids) {
        if (seen.insert(id).second) roster.push_back(id);
    }

    const fs::path out(a.common.out);
    ensure_dir(out);
    OutFile index(out / "predictions.csv");
    index.stream() << "id,n_obs,flag,file,ridge_added,omega_repaired\n";
    std::set<std::string> used;
    std::size_t no_data = 0;
    for (const auto& id : roster) {
        const auto pos = x.find(id);
        const flr::SubjectRecord empty{id, {}, {}};
        const flr::SubjectRecord& subject = pos ? x[*pos] : empty;
        const auto pred = flr::regression::prediction_band(model, subject, a.level);
        const std::string stem = file_stem(id, used);
        OutFile f(out / (stem + ".csv"));
        f.stream() << "t,yhat,lo,hi,variance\n";
        for (std::size_t i = 0; i < pred.grid.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            f.stream() << num(pred.grid[i]) << ',' << num(pred.values[k]) << ',' << num(pred.band_lo[k]) << ','
                       << num(pred.band_hi[k]) << ',' << num(pred.variance[k]) << '\n';
        }
        f.close();
        no_data += pred.no_data;
        std::string quoted = id;
        if (quoted.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char c : id) {
                if (c == '"') q.push_back('"');
                q.push_back(c);
            }
            quoted = q + "\"";
        }
        index.stream() << quoted << ',' << subject.size() << ',' << (pred.no_data ? "no-data" : "ok") << ',' << stem
                       << ".csv," << (pred.ridge_added ? 1 : 0) << ',' << (pred.omega_repaired ? 1 : 0) << '\n';
    }
    index.close();

    auto manifest = manifest_base("predict", a.common);
    manifest["inputs"] = {{"model", a.model_path}, {"x", a.x_path}};
    manifest["columns"] = columns_json(a.cols);
    manifest["ids"] = a.ids;
    manifest["level"] = a.level;
    manifest["band_multiplier"] = flr::regression::band_multiplier(a.level);
    manifest["x_sample"] = summary_json(x, xr);
    manifest["subjects"] = roster.size();
    manifest["no_data_subjects"] = no_data;
    write_json(out / "manifest.json", manifest);
    std::cout << "predicted " << roster.size() << " subject(s) (" << no_data << " without data) -> " << out.string()
              << "\n";
    return 0;
}

// ------------------------------------------------------------ simulate

struct SimulateArgs {
    CommonOptions common;
    FitOptions fit;
    std::size_t runs = 100;
    std::size_t n = 100;
    std::size_t n_new = 100;
    std::string sparsity = "sparse";
    std::string dist = "normal";
    std::optional<double> in_origin;
};

int cmd_simulate(const SimulateArgs& a) {
    if (a.runs < 1) throw flr::UsageError("--runs must be at least 1");
    if (a.n < 1 || a.n_new < 1) throw flr::UsageError("--n and --n-new must be at least 1");
    flr::simulation::SimConfig sim;
    sim.n = a.n;
    sim.seed = a.common.seed;
    sim.sparsity = flr::simulation::sparsity_from_string(a.sparsity);
    sim.scores = flr::simulation::distribution_from_string(a.dist);
    sim.in_spacing_origin = a.in_origin;
    const auto cfg = build_config(a.fit);

    const auto report = flr::simulation::run_monte_carlo(sim, a.runs, a.n_new, cfg);

    const fs::path out(a.common.out);
    ensure_dir(out);
    {
        OutFile f(out / "runs.csv");
        f.stream() << "run,method,rmspe\n";
        for (const auto& r : report.runs) {
            if (!r.ok) continue;
            f.stream() << r.run << ",CE," << num(r.ce) << '\n';
            f.stream() << r.run << ",IN," << num(r.in) << '\n';
        }
        f.close();
    }
    {
        OutFile f(out / "components.csv");
        f.stream() << "run,K,M\n";
        for (const auto& r : report.runs) {
            if (r.ok) f.stream() << r.run << ',' << r.K << ',' << r.M << '\n';
        }
        f.close();
    }
    {
        OutFile f(out / "failures.log");
        for (const auto& r : report.runs) {
            if (!r.ok) f.stream() << "run " << r.run << ": " << r.error << '\n';
        }
        f.close();
    }

    std::ostringstream table;
    table << "Medians of RMSPE over " << (report.runs.size() - report.failures) << " successful run(s) of "
          << a.runs << " (n = " << a.n << ", " << a.n_new << " new subjects per run)\n\n";
    table << "design     scores    CE          IN\n";
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %-9s %-11.4g %-11.4g\n", a.sparsity.c_str(), a.dist.c_str(),
                  report.ce_median, report.in_median);
    table << line;
    table << "\nfailed runs: " << report.failures << (report.aborted ? " (aborted: more than 20% failed)" : "") << "\n";
    write_text(out / "summary.txt", table.str());

    auto manifest = manifest_base("simulate", a.common);
    manifest["runs"] = a.runs;
    manifest["n"] = a.n;
    manifest["n_new"] = a.n_new;
    manifest["sparsity"] = a.sparsity;
    manifest["dist"] = a.dist;
    manifest["in_spacing_origin"] = sim.in_spacing_origin.value_or(sim.domain().lo());
    manifest["x_noise_var"] = sim.x_noise_var;
    manifest["y_noise_var"] = sim.y_noise_var;
    manifest["rho"] = {sim.rho[0], sim.rho[1]};
    manifest["b"] = {{sim.b(0, 0), sim.b(0, 1)}, {sim.b(1, 0), sim.b(1, 1)}};
    manifest["domain"] = {sim.domain().lo(), sim.domain().hi()};
    manifest["options"] = fit_options_json(a.fit);
    manifest["failures"] = report.failures;
    manifest["aborted"] = report.aborted;
    manifest["ce_median"] = finite_or_null(report.ce_median);
    manifest["in_median"] = finite_or_null(report.in_median);
    write_json(out / "manifest.json", manifest);

    std::cout << table.str();
    if (report.aborted) {
        std::cerr << "error: simulate: more than 20% of runs failed; see " << (out / "failures.log").string() << "\n";
        return kExitNumerical;
    }
    return 0;
}

// ------------------------------------------------------------ report

struct ReportArgs {
    CommonOptions common;
    std::string model_path;
};

void write_mean(const fs::path& path, const flr::fpca::MeanEstimate& mean) {
    OutFile f(path);
    f.stream() << "t,mean\n";
    for (std::size_t i = 0; i < mean.grid.size(); ++i) {
        f.stream() << num(mean.grid[i]) << ',' << num(mean.values[static_cast<Eigen::Index>(i)]) << '\n';
    }
    f.close();
}

void write_eigenfunctions(const fs::path& path, const flr::fpca::FpcaModel& m) {
    OutFile f(path);
    auto& os = f.stream();
    os << "component,eigenvalue,variance_explained";
    for (std::size_t i = 0; i < m.eig.grid.size(); ++i) os << ",t=" << num(m.eig.grid[i]);
    os << '\n';
    for (std::size_t c = 0; c < m.n_components; ++c) {
        const auto r = static_cast<Eigen::Index>(c);
        const double ev = m.eig.eigenvalues[r];
        os << c + 1 << ',' << num(ev) << ',' << num(m.eig.positive_total > 0.0 ? ev / m.eig.positive_total : 0.0);
        for (std::size_t i = 0; i < m.eig.grid.size(); ++i) os << ',' << num(m.eig.eigenfunctions(r, static_cast<Eigen::Index>(i)));
        os << '\n';
    }
    f.close();
}

void write_matrix(const fs::path& path, const Eigen::MatrixXd& mat) {
    OutFile f(path);
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) f.stream() << (c ? "," : "") << num(mat(r, c));
        f.stream() << '\n';
    }
    f.close();
}

int cmd_report(const ReportArgs& a) {
    const auto model = flr::io::load_model(a.model_path);
    const fs::path out(a.common.out);
    ensure_dir(out);
    write_mean(out / "mean_x.csv", model.x_model.mean);
    write_mean(out / "mean_y.csv", model.y_model.mean);
    write_eigenfunctions(out / "eigenfunctions_x.csv", model.x_model);
    write_eigenfunctions(out / "eigenfunctions_y.csv", model.y_model);
    write_matrix(out / "beta.csv", model.beta);
    {
        OutFile f(out / "beta_axes.csv");
        f.stream() << "axis,index,value\n";
        for (std::size_t i = 0; i < model.cross.grid_s.size(); ++i) f.stream() << "s," << i << ',' << num(model.cross.grid_s[i]) << '\n';
        for (std::size_t i = 0; i < model.cross.grid_t.size(); ++i) f.stream() << "t," << i << ',' << num(model.cross.grid_t[i]) << '\n';
        f.close();
    }
    write_r2_curve(out / "r2_pointwise.csv", model);
    {
        OutFile f(out / "r2_summary.csv");
        f.stream() << "measure,value,raw\n";
        f.stream() << "global," << num(model.r2.global) << ',' << num(model.r2.global_raw) << '\n';
        f.stream() << "integrated," << num(model.r2.integrated) << ',' << num(model.r2.integrated_raw) << '\n';
        for (Eigen::Index k = 0; k < model.r2.per_response_component.size(); ++k) {
            const double v = model.r2.per_response_component[k];
            f.stream() << "component_" << k + 1 << ',' << num(v) << ',' << num(v) << '\n';
        }
        f.close();
    }
    auto manifest = manifest_base("report", a.common);
    manifest["inputs"] = {{"model", a.model_path}};
    manifest["outputs"] = {"mean_x.csv",   "mean_y.csv",  "eigenfunctions_x.csv", "eigenfunctions_y.csv",
                           "beta.csv",     "beta_axes.csv", "r2_pointwise.csv",   "r2_summary.csv"};
    write_json(out / "manifest.json", manifest);
    std::cout << "report written to " << out.string() << "\n";
    return 0;
}

int exit_code(flr::ErrorKind kind) {
    switch (kind) {
        case flr::ErrorKind::Usage: return kExitUsage;
        case flr::ErrorKind::Data: return kExitData;
        case flr::ErrorKind::Numerical: return kExitNumerical;
    }
    return kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Functional linear regression for sparse longitudinal data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("flr ") + flr::io::kModelFormat + "/" + std::to_string(flr::io::kModelVersion));

    auto common = [](CLI::App* cmd, CommonOptions& c) {
        cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
        cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    };

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit a functional linear regression model");
    fit_cmd->add_option("--x", fit.x_path, "Predictor CSV (long format)")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--y", fit.y_path, "Response CSV (long format)")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--x-domain", fit.x_domain, "Predictor domain LO,HI (default: observed range)")->delimiter(',');
    fit_cmd->add_option("--y-domain", fit.y_domain, "Response domain LO,HI (default: observed range)")->delimiter(',');
    add_column_options(fit_cmd, fit.x_cols);
    fit_cmd->callback([&] { fit.y_cols = fit.x_cols; });
    add_fit_options(fit_cmd, fit.fit);
    common(fit_cmd, fit.common);

    PredictArgs pred;
    auto* pred_cmd = app.add_subcommand("predict", "Predict response trajectories with pointwise bands");
    pred_cmd->add_option("--model", pred.model_path, "Fitted model document")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--x", pred.x_path, "New predictor CSV (long format)")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--ids", pred.ids, "Extra subject ids to predict (comma separated)")->delimiter(',');
    pred_cmd->add_option("--level", pred.level, "Pointwise band coverage")->capture_default_str();
    add_column_options(pred_cmd, pred.cols);
    common(pred_cmd, pred.common);

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo comparison of CE and IN predictions");
    sim_cmd->add_option("--runs", sim.runs, "Monte Carlo runs")->capture_default_str();
    sim_cmd->add_option("--n", sim.n, "Training subjects per run")->capture_default_str();
    sim_cmd->add_option("--n-new", sim.n_new, "New subjects per run")->capture_default_str();
    sim_cmd->add_option("--sparsity", sim.sparsity, "sparse or nonsparse")->capture_default_str();
    sim_cmd->add_option("--dist", sim.dist, "Score distribution: normal or mixture")->capture_default_str();
    sim_cmd->add_option("--in-origin", sim.in_origin, "S_0 for integral-approximation scores (default: domain start)");
    add_fit_options(sim_cmd, sim.fit);
    common(sim_cmd, sim.common);

    ReportArgs rep;
    auto* rep_cmd = app.add_subcommand("report", "Write plot-ready CSVs from a fitted model");
    rep_cmd->add_option("--model", rep.model_path, "Fitted model document")->required()->check(CLI::ExistingFile);
    common(rep_cmd, rep.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*fit_cmd) return cmd_fit(fit);
        if (*pred_cmd) return cmd_predict(pred);
        if (*sim_cmd) return cmd_simulate(sim);
        if (*rep_cmd) return cmd_report(rep);
    } catch (const flr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitUsage;
}
