#include "flr/serialization.hpp"

#include "flr/errors.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace flr::io {

using nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v[i])) {
            out.push_back(v[i]);
        } else {
            out.push_back(nullptr);
        }
    }
    return out;
}

json mat_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose()));
    return out;
}

json grid_json(const RegularGrid& g) {
    return {{"lo", g.interval().lo()}, {"hi", g.interval().hi()}, {"points", g.size()}};
}

json diag_json(const smoothing::SmootherDiagnostics& d) {
    return {{"widened", d.widened}, {"local_constant", d.local_constant}};
}

json fpca_json(const fpca::FpcaModel& m) {
    return {
        {"grid", grid_json(m.mean.grid)},
        {"mean", vec_json(m.mean.values)},
        {"covariance", mat_json(m.cov.surface)},
        {"noise_var", m.cov.noise_var},
        {"eigenvalues", vec_json(m.eig.eigenvalues)},
        {"eigenfunctions", mat_json(m.eig.eigenfunctions)},
        {"positive_total", m.eig.positive_total},
        {"n_components", m.n_components},
        {"selection",
         {{"method", fpca::to_string(m.info.ncomp_method)},
          {"criterion", m.info.ncomp_criterion},
          {"mean_bandwidth", m.info.mean_bandwidth},
          {"cov_bandwidth", m.info.cov_bandwidth},
          {"noise_var_raw", m.info.noise_var_raw},
          {"mean_diagnostics", diag_json(m.info.mean_diagnostics)},
          {"cov_diagnostics", diag_json(m.info.cov_diagnostics)}}},
    };
}

// Reading ---------------------------------------------------------------

double real(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw DataError("expected a number in model document", "model");
    return j.get<double>();
}

Eigen::VectorXd read_vec(const json& j) {
    if (!j.is_array()) throw DataError("expected an array in model document", "model");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = real(j[i]);
    return v;
}

Eigen::MatrixXd read_mat(const json& j, std::size_t cols) {
    if (!j.is_array()) throw DataError("expected a matrix in model document", "model");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Eigen::VectorXd row = read_vec(j[r]);
        if (static_cast<std::size_t>(row.size()) != cols) {
            throw DataError("ragged matrix in model document", "model");
        }
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

RegularGrid read_grid(const json& j) {
    return RegularGrid(Interval(j.at("lo").get<double>(), j.at("hi").get<double>()),
                       j.at("points").get<std::size_t>());
}

smoothing::SmootherDiagnostics read_diag(const json& j) {
    return {j.at("widened").get<std::size_t>(), j.at("local_constant").get<std::size_t>()};
}

void check_size(Eigen::Index got, std::size_t want, const char* what) {
    if (static_cast<std::size_t>(got) != want) {
        throw DataError(std::string("size mismatch for ") + what + " in model document", "model");
    }
}

fpca::FpcaModel read_fpca(const json& j) {
    const RegularGrid grid = read_grid(j.at("grid"));
    const std::size_t n = grid.size();
    fpca::FpcaModel m{
        fpca::MeanEstimate{grid, read_vec(j.at("mean"))},
        fpca::CovarianceEstimate{grid, read_mat(j.at("covariance"), n), real(j.at("noise_var"))},
        fpca::EigenSystem{grid, read_vec(j.at("eigenvalues")), read_mat(j.at("eigenfunctions"), n),
                          real(j.at("positive_total"))},
        j.at("n_components").get<std::size_t>(),
        {},
    };
    check_size(m.mean.values.size(), n, "mean");
    check_size(m.cov.surface.rows(), n, "covariance");
    check_size(m.eig.eigenfunctions.rows(), m.eig.size(), "eigenfunctions");
    if (m.n_components < 1 || m.n_components > m.eig.size()) {
        throw DataError("component count exceeds the stored eigensystem", "model");
    }
    const json& sel = j.at("selection");
    m.info.ncomp_method = fpca::ncomp_method_from_string(sel.at("method").get<std::string>());
    for (const auto& v : sel.at("criterion")) m.info.ncomp_criterion.push_back(real(v));
    m.info.mean_bandwidth = real(sel.at("mean_bandwidth"));
    m.info.cov_bandwidth = real(sel.at("cov_bandwidth"));
    m.info.noise_var_raw = real(sel.at("noise_var_raw"));
    m.info.mean_diagnostics = read_diag(sel.at("mean_diagnostics"));
    m.info.cov_diagnostics = read_diag(sel.at("cov_diagnostics"));
    return m;
}

}  // namespace

std::string model_to_json(const regression::FlrModel& model) {
    const auto& r2 = model.r2;
    json doc = {
        {"format", kModelFormat},
        {"version", kModelVersion},
        {"predictor", fpca_json(model.x_model)},
        {"response", fpca_json(model.y_model)},
        {"cross",
         {{"grid_s", grid_json(model.cross.grid_s)},
          {"grid_t", grid_json(model.cross.grid_t)},
          {"bandwidth", {model.cross_bandwidth.h1, model.cross_bandwidth.h2}},
          {"surface", mat_json(model.cross.surface)}}},
        {"K", model.K},
        {"M", model.M},
        {"sigma", mat_json(model.sigma)},
        {"beta", mat_json(model.beta)},
        {"r2",
         {{"global", r2.global},
          {"integrated", r2.integrated},
          {"pointwise", vec_json(r2.pointwise)},
          {"global_raw", r2.global_raw},
          {"integrated_raw", r2.integrated_raw},
          {"pointwise_raw", vec_json(r2.pointwise_raw)},
          {"per_pair", mat_json(r2.per_pair)},
          {"per_response_component", vec_json(r2.per_response_component)}}},
        {"joint_cv", model.joint_cv},
    };
    return doc.dump(1) + "\n";
}

regression::FlrModel model_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model document is not valid JSON: ") + e.what(), "model");
    }
    try {
        if (!doc.is_object() || doc.value("format", std::string{}) != kModelFormat) {
            throw DataError("not an flr model document", "model");
        }
        const int version = doc.at("version").get<int>();
        if (version != kModelVersion) {
            throw DataError("unsupported model document version " + std::to_string(version) + " (expected " +
                                std::to_string(kModelVersion) + ")",
                            "model");
        }
        regression::FlrModel m;
        m.x_model = read_fpca(doc.at("predictor"));
        m.y_model = read_fpca(doc.at("response"));
        const json& c = doc.at("cross");
        m.cross = regression::CrossCovarianceEstimate{read_grid(c.at("grid_s")), read_grid(c.at("grid_t")), {}};
        m.cross.surface = read_mat(c.at("surface"), m.cross.grid_t.size());
        check_size(m.cross.surface.rows(), m.cross.grid_s.size(), "cross surface");
        m.cross_bandwidth = {real(c.at("bandwidth").at(0)), real(c.at("bandwidth").at(1))};
        m.K = doc.at("K").get<std::size_t>();
        m.M = doc.at("M").get<std::size_t>();
        if (m.K != m.y_model.n_components || m.M != m.x_model.n_components) {
            throw DataError("K, M disagree with the component counts", "model");
        }
        m.sigma = read_mat(doc.at("sigma"), m.M);
        check_size(m.sigma.rows(), m.K, "sigma");
        m.beta = read_mat(doc.at("beta"), m.cross.grid_t.size());
        check_size(m.beta.rows(), m.cross.grid_s.size(), "beta");
        const json& r = doc.at("r2");
        m.r2.global = real(r.at("global"));
        m.r2.integrated = real(r.at("integrated"));
        m.r2.pointwise = read_vec(r.at("pointwise"));
        m.r2.global_raw = real(r.at("global_raw"));
        m.r2.integrated_raw = real(r.at("integrated_raw"));
        m.r2.pointwise_raw = read_vec(r.at("pointwise_raw"));
        m.r2.per_pair = read_mat(r.at("per_pair"), m.M);
        m.r2.per_response_component = read_vec(r.at("per_response_component"));
        for (const auto& v : doc.at("joint_cv")) m.joint_cv.push_back(real(v));
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model document: ") + e.what(), "model");
    }
}

void save_model(const regression::FlrModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model file '" + path + "'", "model");
    out << model_to_json(model);
    if (!out) throw DataError("failed writing model file '" + path + "'", "model");
}

regression::FlrModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file '" + path + "'", "model");
    std::ostringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

}  // namespace flr::io
