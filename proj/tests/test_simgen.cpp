#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fcqr/simgen.hpp"
#include "fcqr/solver.hpp"

using namespace fcqr;

TEST(TrueBeta, HandValues) {
    EXPECT_NEAR(true_beta(1, 0.0), std::numbers::sqrt2, 1e-15);
    EXPECT_NEAR(true_beta(3, 1.0), 3.25, 1e-15);
    EXPECT_NEAR(true_beta(2, 0.5), 2.0 + std::numbers::sqrt2, 1e-14);
    EXPECT_THROW(true_beta(4, 0.5), invalid_argument_error);
    EXPECT_THROW(true_beta(1, 1.5), domain_error);
}

TEST(Coefficients, GaussianCovarianceMatchesAr1) {
    const Eigen::MatrixXd sigma = ar1_covariance(6, 0.5);
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    std::mt19937_64 rng(9);
    const int draws = 100000;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(6, 6);
    for (int r = 0; r < draws; ++r) {
        const Eigen::VectorXd a = sample_coefficients(CoefficientDistribution::gaussian, chol, rng);
        S += a * a.transpose();
    }
    S /= draws;
    EXPECT_LT((S - sigma).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Coefficients, HeavyTailsHaveLargerKurtosis) {
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(ar1_covariance(4, 0.5)).matrixL();
    auto kurtosis = [&](CoefficientDistribution dist) {
        std::mt19937_64 rng(10);
        double m2 = 0, m4 = 0;
        const int draws = 100000;
        for (int r = 0; r < draws; ++r) {
            const double a = sample_coefficients(dist, chol, rng)[0];
            m2 += a * a;
            m4 += a * a * a * a;
        }
        m2 /= draws;
        m4 /= draws;
        return m4 / (m2 * m2);
    };
    const double g = kurtosis(CoefficientDistribution::gaussian);
    EXPECT_NEAR(g, 3.0, 0.1);
    EXPECT_GT(kurtosis(CoefficientDistribution::t3), g);
}

TEST(Coefficients, SeedReproducible) {
    const Eigen::MatrixXd sigma = ar1_covariance(10, 0.5);
    EXPECT_EQ(sample_coefficients(CoefficientDistribution::t2, sigma, 4), sample_coefficients(CoefficientDistribution::t2, sigma, 4));
    EXPECT_NE(sample_coefficients(CoefficientDistribution::t2, sigma, 4), sample_coefficients(CoefficientDistribution::t2, sigma, 5));
}

TEST(Generate, ShapesAndDeterminism) {
    SimConfig c;
    c.N = 50;
    c.seed = 3;
    const auto a = generate_dataset(c), b = generate_dataset(c);
    EXPECT_EQ(a.curves.rows(), 50);
    EXPECT_EQ(a.curves.cols(), 100);
    EXPECT_EQ(a.grid.front(), 0.0);
    EXPECT_EQ(a.grid.back(), 1.0);
    EXPECT_EQ(a.curves, b.curves);
    EXPECT_EQ(a.y, b.y);
    c.seed = 4;
    EXPECT_NE(generate_dataset(c).y, a.y);
}

// y - sigma eps equals the integral of x beta; with sigma tiny the response
// must match a direct fine-grid quadrature of the reconstructed curve.
TEST(Generate, ResponseIsIntegralOfCurveTimesBeta) {
    SimConfig c;
    c.N = 5;
    c.sigma = 1e-12;
    c.grid_size = 2001;
    c.beta_id = 2;
    const auto data = generate_dataset(c);
    const auto w = quadrature_weights(data.grid, QuadratureRule::simpson);
    for (Eigen::Index i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < data.grid.size(); ++j)
            s += w[j] * data.curves(i, static_cast<Eigen::Index>(j)) * true_beta(2, data.grid[j]);
        EXPECT_NEAR(data.y[i], s, 1e-8);
    }
}

TEST(Generate, NullBetaGivesPureNoise) {
    SimConfig c;
    c.N = 20000;
    c.sigma = 0.5;
    const auto data = generate_dataset(c, [](double) { return 0.0; });
    EXPECT_NEAR(data.y.mean(), 0.0, 0.02);
    const double sd = std::sqrt((data.y.array() - data.y.mean()).square().sum() / (c.N - 1));
    EXPECT_NEAR(sd, 0.5, 0.02);
}

TEST(Generate, EstimationBasisDoesNotAffectData) {
    SimConfig c;
    c.N = 30;
    const auto a = generate_dataset(c);
    const auto da = build_design(a, BSplineBasis(3, 4), 2);
    const auto db = build_design(generate_dataset(c), BSplineBasis(3, 8), 2);
    EXPECT_NE(da.cols(), db.cols());
    EXPECT_EQ(generate_dataset(c).y, a.y);
}

TEST(Generate, ConfigValidation) {
    SimConfig c;
    c.generator_basis_count = 3;
    EXPECT_THROW(generate_dataset(c), invalid_argument_error);
    c = {};
    c.sigma = 0.0;
    EXPECT_THROW(generate_dataset(c), invalid_argument_error);
    c = {};
    c.N = 0;
    EXPECT_THROW(generate_dataset(c), invalid_argument_error);
    c = {};
    c.beta_id = 7;
    EXPECT_THROW(generate_dataset(c), invalid_argument_error);
}

TEST(Generate, ErrorFitConsistentAsNoiseVanishes) {
    // Nearly noiseless data: the full-data fit error shrinks from N=1e3 to 1e4.
    auto error_at = [](Eigen::Index N) {
        SimConfig c;
        c.N = N;
        c.sigma = 1e-3;
        c.seed = 8;
        const auto data = generate_dataset(c);
        const BSplineBasis basis(3, 8);
        const auto design = build_design(data, basis, 2);
        const auto fit = solve(CqrProblem::full(design.U, data.y, quantile_grid(3), 0.0, design.penalty));
        return root_integrated_squared_error(spline_curve(basis, fit.theta), true_beta(1));
    };
    EXPECT_LT(error_at(10000), error_at(1000));
}

TEST(Imse, KnownValues) {
    const auto truth = true_beta(1);
    EXPECT_NEAR(imse({truth}, truth), 0.0, 1e-15);
    const auto shifted = [&](double t) { return truth(t) + 0.3; };
    EXPECT_NEAR(imse({shifted}, truth), 0.3, 1e-12);
    const auto wavy = [&](double t) { return truth(t) + std::sin(2 * std::numbers::pi * t); };
    EXPECT_NEAR(imse({wavy}, truth), std::sqrt(0.5), 1e-10);
    EXPECT_NEAR(imse({shifted, wavy}, truth), 0.5 * (0.3 + std::sqrt(0.5)), 1e-10);
    EXPECT_NEAR(imse({wavy, shifted}, truth), imse({shifted, wavy}, truth), 1e-15);
    EXPECT_NEAR(eimse({shifted}, shifted), 0.0, 1e-15);
    EXPECT_THROW(imse({}, truth), invalid_argument_error);
}

TEST(Imse, TabulatedCurves) {
    const auto grid = linspace(0, 1, 201);
    Eigen::VectorXd ref(201);
    Eigen::MatrixXd est(2, 201);
    for (int j = 0; j < 201; ++j) {
        ref[j] = true_beta(3, grid[static_cast<std::size_t>(j)]);
        est(0, j) = ref[j] - 0.2;
        est(1, j) = ref[j] + std::sin(2 * std::numbers::pi * grid[static_cast<std::size_t>(j)]);
    }
    EXPECT_NEAR(imse_on_grid(grid, est, ref), 0.5 * (0.2 + std::sqrt(0.5)), 1e-9);
    EXPECT_THROW(imse_on_grid(grid, est.leftCols(100), ref), data_error);
}

TEST(Seeds, ReplicationSeedScheme) {
    EXPECT_EQ(replication_seed(0, 5), 5u);
    EXPECT_EQ(replication_seed(12, 5), 12u ^ 5u);
    EXPECT_NE(replication_seed(7, 1), replication_seed(7, 2));
}
