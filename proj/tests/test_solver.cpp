#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fcqr/basis.hpp"
#include "fcqr/solver.hpp"
#include "oracle/epigraph_qp.hpp"

using namespace fcqr;

namespace {

CqrProblem intercept_only(std::vector<double> ys, int K) {
    const auto n = static_cast<Eigen::Index>(ys.size());
    return CqrProblem::full(Eigen::MatrixXd(n, 0), Eigen::Map<Eigen::VectorXd>(ys.data(), n), quantile_grid(K), 0.0,
                            Eigen::MatrixXd(0, 0));
}

struct RandomInstance {
    CqrProblem problem;
};

CqrProblem random_problem(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d, int K, double lambda,
                          bool random_weights) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.2, 3.0);
    Eigen::MatrixXd U(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) U(i, j) = z(rng);
    Eigen::VectorXd theta0(d);
    for (Eigen::Index j = 0; j < d; ++j) theta0[j] = z(rng);
    Eigen::VectorXd y = U * theta0;
    for (Eigen::Index i = 0; i < n; ++i) y[i] += 0.7 * z(rng);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    if (random_weights)
        for (Eigen::Index i = 0; i < n; ++i) w[i] = u(rng);
    const BSplineBasis basis(3, std::max<Eigen::Index>(0, d - 4));
    Eigen::MatrixXd D = d >= 4 ? basis.gram(2) : Eigen::MatrixXd::Identity(d, d);
    return CqrProblem{U, y, w, quantile_grid(K), lambda, D};
}

} // namespace

TEST(CheckLoss, Values) {
    EXPECT_DOUBLE_EQ(check_loss(0.0, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(check_loss(2.0, 0.25), 0.5);
    EXPECT_DOUBLE_EQ(check_loss(-2.0, 0.25), 1.5);
    EXPECT_THROW(check_loss(1.0, 0.0), invalid_argument_error);
    EXPECT_THROW(check_loss(1.0, 1.0), invalid_argument_error);
}

TEST(QuantileGrid, Levels) {
    const auto nine = quantile_grid(9);
    ASSERT_EQ(nine.size(), 9u);
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(nine[static_cast<std::size_t>(k)], 0.1 * (k + 1), 1e-15);
    EXPECT_EQ(quantile_grid(1), std::vector<double>{0.5});
    EXPECT_EQ(quantile_grid(3), (std::vector<double>{0.25, 0.5, 0.75}));
    EXPECT_THROW(quantile_grid(0), invalid_argument_error);
}

TEST(Objective, SimpleValues) {
    auto p = intercept_only({0.0, 0.0}, 2);
    EXPECT_DOUBLE_EQ(objective(p, Eigen::VectorXd(0), Eigen::VectorXd::Zero(2)), 0.0);
    auto single = intercept_only({1.0}, 1);
    EXPECT_DOUBLE_EQ(objective(single, Eigen::VectorXd(0), Eigen::VectorXd::Zero(1)), 0.5);
    EXPECT_THROW(objective(single, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1)), invalid_argument_error);
    EXPECT_THROW(objective(single, Eigen::VectorXd(0), Eigen::VectorXd::Zero(2)), invalid_argument_error);
}

TEST(Objective, PenaltyNullSpaceContributesNothing) {
    const BSplineBasis basis(3, 5);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(3, basis.size());
    auto p = CqrProblem::full(U, Eigen::Vector3d(1, 2, 3), quantile_grid(1), 5.0, basis.gram(2));
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(basis.size());  // represents beta(t) = 1
    auto p0 = p;
    p0.lambda = 0.0;
    EXPECT_NEAR(objective(p, ones, Eigen::VectorXd::Constant(1, 2.0)),
                objective(p0, ones, Eigen::VectorXd::Constant(1, 2.0)), 1e-9);
}

TEST(Solve, MedianOfFivePoints) {
    const auto fit = solve(intercept_only({1, 2, 3, 4, 5}, 1));
    // Grid-search oracle over b in [0, 6] with step 1e-4.
    double best = 1e300, arg = 0;
    for (int j = 0; j <= 60000; ++j) {
        const double b = j * 1e-4;
        double s = 0;
        for (double y : {1, 2, 3, 4, 5}) s += check_loss(y - b, 0.5);
        if (s < best) best = s, arg = b;
    }
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(arg, 3.0, 1e-9);
    EXPECT_NEAR(fit.intercepts[0], 3.0, 1e-6);
    EXPECT_NEAR(fit.objective, best, 1e-7);
    EXPECT_NEAR(best, 3.0, 1e-12);
}

TEST(Solve, TwoLevelInterceptsAgainstGridOracle) {
    const auto problem = intercept_only({1, 2, 3}, 2);
    const auto fit = solve(problem);
    double best = 1e300;
    for (int a = 0; a <= 400; ++a)
        for (int c = 0; c <= 400; ++c) {
            const Eigen::Vector2d b(a * 0.01, c * 0.01);
            best = std::min(best, objective(problem, Eigen::VectorXd(0), b));
        }
    EXPECT_NEAR(best, 2.0, 1e-12);
    EXPECT_NEAR(fit.objective, best, 1e-6);
    // Minimizers: any b1 in [1,2] and b2 in [2,3].
    EXPECT_GE(fit.intercepts[0], 1.0 - 1e-6);
    EXPECT_LE(fit.intercepts[0], 2.0 + 1e-6);
    EXPECT_GE(fit.intercepts[1], 2.0 - 1e-6);
    EXPECT_LE(fit.intercepts[1], 3.0 + 1e-6);
}

TEST(Solve, HugePenaltyShrinksSlopeToZero) {
    std::mt19937_64 rng(1);
    auto p = random_problem(rng, 40, 3, 2, 1e9, false);
    p.penalty = Eigen::MatrixXd::Identity(3, 3);
    const auto fit = solve(p);
    EXPECT_LT(fit.theta.norm(), 1e-6);
    const auto ionly = CqrProblem::full(Eigen::MatrixXd(40, 0), p.y, p.taus, 0.0, Eigen::MatrixXd(0, 0));
    const auto ref = solve(ionly);
    EXPECT_NEAR(fit.objective - 0.5 * p.lambda * fit.theta.squaredNorm(), ref.objective, 1e-4 * ref.objective);
}

TEST(Solve, MatchesEpigraphOracleOnSmallInstance) {
    std::mt19937_64 rng(30);
    const auto p = random_problem(rng, 30, 4, 3, 0.1, false);
    const auto fit = solve(p);
    const auto ref = oracle::solve_epigraph(p.U, p.y, p.weights, p.taus, p.lambda, p.penalty);
    EXPECT_TRUE(fit.converged);
    EXPECT_LE(std::abs(fit.objective - ref.objective), 1e-6 * std::abs(ref.objective));
}

TEST(Solve, RejectsNonFiniteInputs) {
    auto p = intercept_only({1, 2, std::nan("")}, 1);
    EXPECT_THROW(solve(p), data_error);
    auto q = intercept_only({1, 2, 3}, 1);
    q.weights[1] = 0.0;
    EXPECT_THROW(solve(q), data_error);
}

TEST(Solve, LocalOptimalityAgainstRandomPerturbations) {
    std::mt19937_64 rng(8);
    const auto p = random_problem(rng, 50, 5, 3, 0.1, true);
    const auto fit = solve(p);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::VectorXd th = fit.theta, b = fit.intercepts;
        const double scale = rep < 50 ? 1e-3 : 1e-1;
        for (Eigen::Index j = 0; j < th.size(); ++j) th[j] += scale * z(rng);
        for (Eigen::Index j = 0; j < b.size(); ++j) b[j] += scale * z(rng);
        EXPECT_LE(fit.objective, objective(p, th, b) + 1e-10 * fit.objective);
    }
}

TEST(Solve, SmoothedGradientVanishesAtFit) {
    std::mt19937_64 rng(9);
    const auto p = random_problem(rng, 60, 6, 3, 0.0, false);
    const auto fit = solve(p);
    ASSERT_TRUE(fit.converged);
    // The smoothed derivative tau - Phi(-r/h) lies in [tau-1, tau], so the
    // smoothed gradient is a valid subgradient certificate.
    EXPECT_LE(fit.gradient_norm, 1e-6 * p.weights.sum());
}

TEST(Solve, WeightScalingKeepsArgmin) {
    std::mt19937_64 rng(10);
    auto p = random_problem(rng, 40, 4, 2, 0.0, true);
    const auto base = solve(p);
    auto scaled = p;
    scaled.weights *= 7.5;
    const auto fit = solve(scaled);
    EXPECT_NEAR(fit.objective, 7.5 * base.objective, 1e-6 * fit.objective);
    // argmin invariance checked through the objective at the other argmin.
    EXPECT_NEAR(objective(p, fit.theta, fit.intercepts), base.objective, 1e-6 * base.objective);
    const auto ref = oracle::solve_epigraph(scaled.U, scaled.y, scaled.weights, scaled.taus, 0.0, scaled.penalty);
    EXPECT_NEAR(fit.objective, ref.objective, 1e-6 * ref.objective);
}

TEST(Objective, ConvexAlongSegments) {
    std::mt19937_64 rng(12);
    const auto p = random_problem(rng, 30, 4, 3, 0.1, true);
    std::normal_distribution<double> z;
    for (int pair = 0; pair < 20; ++pair) {
        Eigen::VectorXd a(7), b(7);
        for (int j = 0; j < 7; ++j) a[j] = z(rng), b[j] = z(rng);
        const double fa = objective(p, a.head(4), a.tail(3)), fb = objective(p, b.head(4), b.tail(3));
        for (int s = 1; s <= 20; ++s) {
            const double t = s / 21.0;
            const Eigen::VectorXd c = (1 - t) * a + t * b;
            EXPECT_LE(objective(p, c.head(4), c.tail(3)), (1 - t) * fa + t * fb + 1e-12);
        }
    }
}

TEST(SmoothedObjective, GradientAndHessianMatchFiniteDifferences) {
    std::mt19937_64 rng(13);
    const auto p = random_problem(rng, 25, 4, 3, 0.3, true);
    std::normal_distribution<double> z;
    for (double h : {1.0, 0.1, 0.01}) {
        Eigen::VectorXd x(7);
        for (int j = 0; j < 7; ++j) x[j] = 0.5 * z(rng);
        Eigen::VectorXd g;
        Eigen::MatrixXd H;
        smoothed_objective(p, x.head(4), x.tail(3), h, &g, &H);
        const double e = 1e-6 * h;
        for (int j = 0; j < 7; ++j) {
            Eigen::VectorXd xp = x, xm = x;
            xp[j] += e;
            xm[j] -= e;
            const double fd = (smoothed_objective(p, xp.head(4), xp.tail(3), h) -
                               smoothed_objective(p, xm.head(4), xm.tail(3), h)) / (2 * e);
            EXPECT_NEAR(fd, g[j], 1e-5 * std::max(1.0, std::abs(g[j]))) << "h=" << h << " j=" << j;
            Eigen::VectorXd gp, gm;
            smoothed_objective(p, xp.head(4), xp.tail(3), h, &gp);
            smoothed_objective(p, xm.head(4), xm.tail(3), h, &gm);
            const Eigen::VectorXd col = (gp - gm) / (2 * e);
            EXPECT_LT((col - H.col(j)).cwiseAbs().maxCoeff(), 1e-4 * std::max(1.0, H.col(j).cwiseAbs().maxCoeff()));
        }
    }
}

TEST(SmoothedObjective, UpperBoundsExactWithinBandwidth) {
    std::mt19937_64 rng(14);
    const auto p = random_problem(rng, 30, 3, 2, 0.0, true);
    const Eigen::VectorXd th = Eigen::VectorXd::Constant(3, 0.2), b = Eigen::Vector2d(-0.1, 0.3);
    const double exact = objective(p, th, b);
    for (double h : {1.0, 0.1, 0.001}) {
        const double smooth = smoothed_objective(p, th, b, h);
        EXPECT_GE(smooth, exact);
        EXPECT_LE(smooth - exact, h * 0.39894228 * p.weights.sum() * 2 + 1e-12);
    }
}

TEST(Solve, DeterministicAcrossRuns) {
    std::mt19937_64 rng(15);
    const auto p = random_problem(rng, 40, 4, 3, 0.1, true);
    const auto a = solve(p), b = solve(p);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_EQ(a.intercepts, b.intercepts);
    EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Solve, MatchesOracleAcrossRandomInstances) {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> nd(10, 60), dd(1, 6), kd(1, 3);
    for (int rep = 0; rep < 20; ++rep) {
        const auto p = random_problem(rng, nd(rng), dd(rng), kd(rng), rep % 2 ? 0.1 : 0.0, rep % 3 == 0);
        const auto fit = solve(p);
        const auto ref = oracle::solve_epigraph(p.U, p.y, p.weights, p.taus, p.lambda, p.penalty);
        EXPECT_LE(fit.objective - ref.objective, 1e-6 * std::abs(ref.objective))
            << "rep " << rep << " n=" << p.rows() << " d=" << p.dim() << " K=" << p.levels();
        EXPECT_GE(fit.objective - ref.objective, -1e-6 * std::abs(ref.objective)) << "oracle not optimal, rep " << rep;
    }
}
