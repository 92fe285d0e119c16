#pragma once

// Shared fixtures: the known two-component simulation truth expressed as
// fitted-model objects, plus a scratch directory helper.

#include "flr/fpca.hpp"
#include "flr/regression.hpp"
#include "flr/simulation.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace flr_test {

using namespace flr;

inline RegularGrid sim_grid(std::size_t points = 51) { return RegularGrid(Interval(0.0, 10.0), points); }

/// Psi basis on the grid, one row per component.
inline Eigen::MatrixXd psi_rows(const RegularGrid& grid) {
    Eigen::MatrixXd out(2, static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t m = 0; m < 2; ++m) {
            out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) =
                simulation::true_eigenfunction(m, grid[i]);
        }
    }
    return out;
}

/// Eigenvalues and eigenvectors (columns, descending) of the response
/// coefficient covariance B diag(rho) B^T in the psi basis.
inline std::pair<Eigen::Vector2d, Eigen::Matrix2d> response_rotation(const simulation::SimConfig& c) {
    const Eigen::Matrix2d a = c.b * c.rho.asDiagonal() * c.b.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(a);
    Eigen::Vector2d values(es.eigenvalues()[1], es.eigenvalues()[0]);
    Eigen::Matrix2d vectors;
    vectors.col(0) = es.eigenvectors().col(1);
    vectors.col(1) = es.eigenvectors().col(0);
    return {values, vectors};
}

inline fpca::FpcaModel truth_x_model(const simulation::SimConfig& c, const RegularGrid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::VectorXd mean(n);
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mean[i] = simulation::true_mean_x(grid[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j) {
            cov(i, j) = simulation::true_covariance_x(c, grid[static_cast<std::size_t>(i)],
                                                      grid[static_cast<std::size_t>(j)]);
        }
    }
    fpca::EigenSystem eig{grid, c.rho, psi_rows(grid), c.rho.sum()};
    return fpca::make_model({grid, mean}, {grid, cov, c.x_noise_var}, std::move(eig), 2);
}

inline fpca::FpcaModel truth_y_model(const simulation::SimConfig& c, const RegularGrid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    const auto [lambda, v] = response_rotation(c);
    Eigen::VectorXd mean(n);
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mean[i] = simulation::true_mean_y(c, grid[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j) {
            cov(i, j) = simulation::true_covariance_y(c, grid[static_cast<std::size_t>(i)],
                                                      grid[static_cast<std::size_t>(j)]);
        }
    }
    Eigen::MatrixXd phi = v.transpose() * psi_rows(grid);
    fpca::EigenSystem eig{grid, lambda, phi, lambda.sum()};
    return fpca::make_model({grid, mean}, {grid, cov, c.y_noise_var}, std::move(eig), 2);
}

inline regression::CrossCovarianceEstimate truth_cross(const simulation::SimConfig& c, const RegularGrid& gs,
                                                       const RegularGrid& gt) {
    regression::CrossCovarianceEstimate out{gs, gt, Eigen::MatrixXd(gs.size(), gt.size())};
    for (std::size_t i = 0; i < gs.size(); ++i) {
        for (std::size_t j = 0; j < gt.size(); ++j) {
            out.surface(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                simulation::true_cross_covariance(c, gs[i], gt[j]);
        }
    }
    return out;
}

inline regression::FlrModel truth_flr_model(const simulation::SimConfig& c, const RegularGrid& grid) {
    return regression::assemble_model(truth_x_model(c, grid), truth_y_model(c, grid), truth_cross(c, grid, grid),
                                      {1.0, 1.0});
}

/// sup |a - b| allowing a global sign flip of b.
inline double signed_sup_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::min((a - b).cwiseAbs().maxCoeff(), (a + b).cwiseAbs().maxCoeff());
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("flr_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

    std::string write(const std::string& name, const std::string& content) const {
        const std::string p = file(name);
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace flr_test
