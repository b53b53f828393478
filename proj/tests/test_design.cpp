#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "fcqr/design.hpp"

using namespace fcqr;

namespace {

FunctionalSample sampled(const std::vector<double>& grid, double (*f)(double), double y = 0.0) {
    FunctionalSample s{grid, {}, y};
    for (double t : grid) s.values.push_back(f(t));
    return s;
}

double smooth(double t) { return std::sin(3 * t) + t * t; }
double other(double t) { return std::exp(-t) * std::cos(5 * t); }

} // namespace

TEST(DesignVector, ZeroCurve) {
    const BSplineBasis basis(3, 5);
    const auto grid = linspace(0, 1, 37);
    const FunctionalSample s{grid, std::vector<double>(37, 0.0), 1.0};
    EXPECT_EQ(design_vector(s, basis), Eigen::VectorXd::Zero(9));
}

TEST(DesignVector, IndicatorIntegrals) {
    const BSplineBasis basis(0, 1);
    const auto grid = linspace(0, 1, 101);
    const FunctionalSample s{grid, std::vector<double>(101, 1.0), 0.0};
    const Eigen::VectorXd u = design_vector(s, basis);
    EXPECT_NEAR(u[0], 0.5, 1e-12);
    EXPECT_NEAR(u[1], 0.5, 1e-12);
}

TEST(DesignVector, BasisFunctionGivesGramRow) {
    const BSplineBasis basis(3, 5);
    const auto grid = linspace(0, 1, 1001);
    FunctionalSample s{grid, {}, 0.0};
    for (double t : grid) s.values.push_back(basis.evaluate(t)[2]);
    const Eigen::VectorXd gram_row = basis.gram(0).row(2).transpose();
    EXPECT_LT((design_vector(s, basis) - gram_row).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((design_vector(s, basis, QuadratureRule::simpson) - gram_row).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(DesignVector, LinearInValues) {
    const BSplineBasis basis(3, 6);
    const auto grid = linspace(0, 1, 100);
    const auto x = sampled(grid, smooth), z = sampled(grid, other);
    FunctionalSample combo{grid, {}, 0.0};
    for (std::size_t j = 0; j < grid.size(); ++j) combo.values.push_back(2.5 * x.values[j] - 0.75 * z.values[j]);
    const Eigen::VectorXd lhs = design_vector(combo, basis);
    const Eigen::VectorXd rhs = 2.5 * design_vector(x, basis) - 0.75 * design_vector(z, basis);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DesignVector, GridRefinementConverges) {
    const BSplineBasis basis(3, 6);
    const Eigen::VectorXd coarse = design_vector(sampled(linspace(0, 1, 1001), smooth), basis);
    const Eigen::VectorXd fine = design_vector(sampled(linspace(0, 1, 10001), smooth), basis);
    EXPECT_LT((coarse - fine).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(DesignVector, ScalesInverselyWithKnots) {
    const auto grid = linspace(0, 1, 2001);
    const auto x = sampled(grid, smooth);
    std::vector<double> scaled;
    for (int M : {4, 8, 16, 32}) scaled.push_back(design_vector(x, BSplineBasis(3, M)).cwiseAbs().maxCoeff() * M);
    const double lo = *std::min_element(scaled.begin(), scaled.end());
    const double hi = *std::max_element(scaled.begin(), scaled.end());
    EXPECT_LT(hi / lo, 2.0);
}

TEST(DesignVector, GridErrors) {
    const BSplineBasis basis(2, 2);
    auto bad_end = sampled(linspace(0, 0.9, 20), smooth);
    EXPECT_THROW(design_vector(bad_end, basis), domain_error);
    auto unsorted = sampled(linspace(0, 1, 20), smooth);
    std::swap(unsorted.grid[3], unsorted.grid[4]);
    EXPECT_THROW(design_vector(unsorted, basis), data_error);
    auto nan = sampled(linspace(0, 1, 20), smooth);
    nan.values[5] = std::nan("");
    EXPECT_THROW(design_vector(nan, basis), data_error);
    auto even = sampled(linspace(0, 1, 20), smooth);
    EXPECT_THROW(design_vector(even, basis, QuadratureRule::simpson), domain_error);
}

TEST(BuildDesign, ShapesAndPenalty) {
    const BSplineBasis basis(3, 5);
    const auto grid = linspace(0, 1, 50);
    const std::vector<FunctionalSample> zeros(3, FunctionalSample{grid, std::vector<double>(50, 0.0), 0.0});
    const DesignMatrix d = build_design(zeros, basis, 2);
    EXPECT_EQ(d.rows(), 3);
    EXPECT_EQ(d.cols(), 9);
    EXPECT_EQ(d.U, Eigen::MatrixXd::Zero(3, 9));
    EXPECT_EQ(d.penalty, basis.gram(2));

    const std::vector<FunctionalSample> one{sampled(grid, smooth, 2.0)};
    EXPECT_EQ(build_design(one, basis, 2).U.rows(), 1);
}

TEST(BuildDesign, RowsMatchDesignVector) {
    const BSplineBasis basis(3, 4);
    const auto grid = linspace(0, 1, 100);
    const std::vector<FunctionalSample> samples{sampled(grid, smooth, 1.0), sampled(grid, other, 2.0)};
    const DesignMatrix d = build_design(samples, basis, 1);
    for (int i = 0; i < 2; ++i)
        EXPECT_LT((d.U.row(i).transpose() - design_vector(samples[static_cast<std::size_t>(i)], basis)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BuildDesign, EntriesBoundedByBasisIntegrals) {
    const BSplineBasis basis(3, 8);
    const auto grid = linspace(0, 1, 100);
    const auto x = sampled(grid, smooth);
    double xmax = 0.0;
    for (double v : x.values) xmax = std::max(xmax, std::abs(v));
    const Eigen::VectorXd u = design_vector(x, basis);
    EXPECT_LE(u.cwiseAbs().maxCoeff(), xmax * basis.integrals().maxCoeff() * 1.05);
}

TEST(BuildDesign, InconsistentGridsRejected) {
    const BSplineBasis basis(3, 4);
    const std::vector<FunctionalSample> samples{sampled(linspace(0, 1, 100), smooth), sampled(linspace(0, 1, 101), smooth)};
    EXPECT_THROW(build_design(samples, basis, 2), data_error);
    EXPECT_THROW(build_design(std::vector<FunctionalSample>{}, basis, 2), data_error);
}

TEST(Augment, AppendsUnitVector) {
    const Eigen::Vector2d u(1, 2);
    EXPECT_EQ(augment(u, 1, 2).values, Eigen::Vector4d(1, 2, 1, 0));
    EXPECT_EQ(augment(u, 2, 2).values, Eigen::Vector4d(1, 2, 0, 1));
    const auto row = augment(Eigen::VectorXd::Zero(9), 5, 9, 3);
    ASSERT_EQ(row.values.size(), 18);
    EXPECT_EQ(row.values.sum(), 1.0);
    EXPECT_EQ(row.values[13], 1.0);  // 14th entry
    EXPECT_EQ(row.index, 3);
    EXPECT_THROW(augment(u, 0, 2), invalid_argument_error);
    EXPECT_THROW(augment(u, 3, 2), invalid_argument_error);
}

TEST(PaddedPenalty, BlockStructure) {
    const Eigen::Matrix2d D = Eigen::Vector2d(0.5, 0.5).asDiagonal();
    const Eigen::MatrixXd p = padded_penalty(D, 1);
    EXPECT_EQ(p, Eigen::Vector3d(0.5, 0.5, 0).asDiagonal().toDenseMatrix());
    const Eigen::MatrixXd g = BSplineBasis(3, 4).gram(2);
    EXPECT_EQ(padded_penalty(g, 0), g);
    EXPECT_DOUBLE_EQ(padded_penalty(g, 9).trace(), g.trace());
}

TEST(DefaultKnots, Rule) {
    EXPECT_EQ(default_interior_knots(10), 4);
    EXPECT_EQ(default_interior_knots(10000), 10);
    EXPECT_EQ(default_interior_knots(100000), 15);
    EXPECT_THROW(default_interior_knots(0), invalid_argument_error);
}
