#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/basis.hpp"
#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/quadrature.hpp"

namespace fcqr {

enum class CoefficientDistribution { gaussian, t2, t3 };
enum class ErrorDistribution { gaussian, t3 };

inline CoefficientDistribution parse_coefficient_distribution(std::string_view s) {
    if (s == "gaussian" || s == "normal") return CoefficientDistribution::gaussian;
    if (s == "t2") return CoefficientDistribution::t2;
    if (s == "t3") return CoefficientDistribution::t3;
    throw invalid_argument_error("unknown coefficient distribution '" + std::string(s) + "'");
}

inline ErrorDistribution parse_error_distribution(std::string_view s) {
    if (s == "gaussian" || s == "normal") return ErrorDistribution::gaussian;
    if (s == "t3") return ErrorDistribution::t3;
    throw invalid_argument_error("unknown error distribution '" + std::string(s) + "'");
}

inline std::string_view to_string(CoefficientDistribution d) {
    switch (d) {
    case CoefficientDistribution::gaussian: return "gaussian";
    case CoefficientDistribution::t2: return "t2";
    case CoefficientDistribution::t3: return "t3";
    }
    return "?";
}

inline std::string_view to_string(ErrorDistribution d) {
    return d == ErrorDistribution::gaussian ? "gaussian" : "t3";
}

struct SimConfig {
    Eigen::Index N = 10000;
    int grid_size = 100;
    CoefficientDistribution coefficients = CoefficientDistribution::gaussian;
    double rho = 0.5;
    ErrorDistribution errors = ErrorDistribution::gaussian;
    double sigma = 0.5;
    int beta_id = 1;
    int generator_basis_count = 20;
    std::uint64_t seed = 1;

    void validate() const {
        if (N < 1) throw invalid_argument_error("N must be >= 1");
        if (grid_size < 2) throw invalid_argument_error("grid size must be >= 2");
        if (!(sigma > 0.0)) throw invalid_argument_error("sigma must be positive");
        if (generator_basis_count < 4) throw invalid_argument_error("generator basis count J must be >= 4");
        if (!(std::abs(rho) < 1.0)) throw invalid_argument_error("AR(1) correlation must lie in (-1, 1)");
        if (beta_id < 1 || beta_id > 3) throw invalid_argument_error("beta_id must be 1, 2 or 3");
    }
};

/// Seed of replication r derived from a root seed.
constexpr std::uint64_t replication_seed(std::uint64_t root, std::uint64_t r) noexcept { return root ^ r; }

inline double true_beta(int beta_id, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw domain_error("t must lie in [0,1]");
    constexpr double pi = std::numbers::pi, sqrt2 = std::numbers::sqrt2;
    switch (beta_id) {
    case 1: return sqrt2 * std::cos(2 * pi * t);
    case 2: return std::exp(-32.0 * (t - 0.5) * (t - 0.5)) + 2 * t - sqrt2 * (std::sin(2 * pi * t) + std::cos(2 * pi * t));
    case 3: return 2 * t * t + 0.25 * t + 1.0;
    default: throw invalid_argument_error("beta_id must be 1, 2 or 3, got " + std::to_string(beta_id));
    }
}

inline std::function<double(double)> true_beta(int beta_id) {
    true_beta(beta_id, 0.0);
    return [beta_id](double t) { return true_beta(beta_id, t); };
}

/// Sigma_ij = rho^|i-j|.
inline Eigen::MatrixXd ar1_covariance(int J, double rho) {
    Eigen::MatrixXd S(J, J);
    for (int i = 0; i < J; ++i)
        for (int j = 0; j < J; ++j) S(i, j) = std::pow(rho, std::abs(i - j));
    return S;
}

/// Draws one coefficient vector. `chol` is the lower Cholesky factor of
/// Sigma; t draws divide the Gaussian draw by sqrt(chi2_nu / nu).
template <class Rng>
Eigen::VectorXd sample_coefficients(CoefficientDistribution dist, const Eigen::MatrixXd& chol, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(chol.rows());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(rng);
    Eigen::VectorXd a = chol.triangularView<Eigen::Lower>() * z;
    if (dist != CoefficientDistribution::gaussian) {
        const double nu = dist == CoefficientDistribution::t2 ? 2.0 : 3.0;
        std::chi_squared_distribution<double> chi2(nu);
        a /= std::sqrt(chi2(rng) / nu);
    }
    return a;
}

inline Eigen::VectorXd sample_coefficients(CoefficientDistribution dist, const Eigen::MatrixXd& sigma, std::uint64_t seed) {
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw numerical_error("coefficient covariance is not positive definite");
    std::mt19937_64 rng(seed);
    return sample_coefficients(dist, Eigen::MatrixXd(llt.matrixL()), rng);
}

template <class Rng>
double sample_error(ErrorDistribution dist, Rng& rng) {
    if (dist == ErrorDistribution::gaussian) return std::normal_distribution<double>(0.0, 1.0)(rng);
    return std::student_t_distribution<double>(3.0)(rng);
}

/// x_i(t) = sum_j a_ij B_j(t) on a uniform grid with J cubic generator
/// splines; y_i = int x_i beta + sigma eps_i, the integral taken by
/// 1001-point Simpson against `beta`.
inline FunctionalDataset generate_dataset(const SimConfig& config, const std::function<double(double)>& beta) {
    config.validate();
    const BSplineBasis generator(3, config.generator_basis_count - 4);
    const int J = generator.size();

    Eigen::VectorXd projections = Eigen::VectorXd::Zero(J);
    {
        const int pts = 1001;
        const auto grid = linspace(0.0, 1.0, pts);
        const auto w = quadrature_weights(grid, QuadratureRule::simpson);
        for (int j = 0; j < pts; ++j) projections += w[static_cast<std::size_t>(j)] * beta(grid[static_cast<std::size_t>(j)]) *
                                                     generator.evaluate(grid[static_cast<std::size_t>(j)]);
    }

    FunctionalDataset data;
    data.grid = linspace(0.0, 1.0, config.grid_size);
    Eigen::MatrixXd basis_on_grid(config.grid_size, J);
    for (int g = 0; g < config.grid_size; ++g) basis_on_grid.row(g) = generator.evaluate(data.grid[static_cast<std::size_t>(g)]).transpose();

    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(ar1_covariance(J, config.rho)).matrixL();
    std::mt19937_64 rng(config.seed);
    Eigen::MatrixXd coefficients(config.N, J);
    data.y.resize(config.N);
    for (Eigen::Index i = 0; i < config.N; ++i) {
        const Eigen::VectorXd a = sample_coefficients(config.coefficients, chol, rng);
        coefficients.row(i) = a.transpose();
        data.y[i] = a.dot(projections) + config.sigma * sample_error(config.errors, rng);
    }
    data.curves = coefficients * basis_on_grid.transpose();
    return data;
}

inline FunctionalDataset generate_dataset(const SimConfig& config) {
    config.validate();
    return generate_dataset(config, true_beta(config.beta_id));
}

/// sqrt(int_0^1 (f - g)^2 dt) by 1001-point Simpson.
inline double root_integrated_squared_error(const std::function<double(double)>& f, const std::function<double(double)>& g) {
    const double ise = simpson_unit([&](double t) {
        const double e = f(t) - g(t);
        return e * e;
    });
    return std::sqrt(std::max(0.0, ise));
}

inline double imse(const std::vector<std::function<double(double)>>& estimates, const std::function<double(double)>& truth) {
    if (estimates.empty()) throw invalid_argument_error("imse needs at least one estimate");
    double s = 0.0;
    for (const auto& e : estimates) s += root_integrated_squared_error(e, truth);
    return s / static_cast<double>(estimates.size());
}

/// Same as imse with the truth replaced by the full-data estimate.
inline double eimse(const std::vector<std::function<double(double)>>& estimates, const std::function<double(double)>& full_fit) {
    return imse(estimates, full_fit);
}

/// imse for curves tabulated on a common grid (one row per estimate).
/// Uses Simpson when the grid allows it, else the trapezoid rule.
inline double imse_on_grid(const std::vector<double>& grid, const Eigen::MatrixXd& estimates, const Eigen::VectorXd& reference) {
    validate_grid(grid);
    if (estimates.rows() == 0) throw invalid_argument_error("imse needs at least one estimate");
    if (estimates.cols() != static_cast<Eigen::Index>(grid.size()) || reference.size() != estimates.cols())
        throw data_error("curve grids do not match");
    std::vector<double> w;
    try {
        w = quadrature_weights(grid, QuadratureRule::simpson);
    } catch (const domain_error&) {
        w = quadrature_weights(grid, QuadratureRule::trapezoid);
    }
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
    double s = 0.0;
    for (Eigen::Index r = 0; r < estimates.rows(); ++r) {
        const Eigen::VectorXd e = estimates.row(r).transpose() - reference;
        s += std::sqrt(std::max(0.0, wv.dot(e.cwiseAbs2())));
    }
    return s / static_cast<double>(estimates.rows());
}

/// beta-hat(t) = B(t)^T theta as a callable.
inline std::function<double(double)> spline_curve(const BSplineBasis& basis, Eigen::VectorXd theta) {
    if (theta.size() != basis.size()) throw invalid_argument_error("coefficient length does not match basis size");
    return [basis, theta = std::move(theta)](double t) { return evaluate_curve(basis, theta, t); };
}

} // namespace fcqr
