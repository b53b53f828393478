#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/basis.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/quadrature.hpp"

namespace fcqr {

/// One observation: covariate curve sampled on `grid` plus scalar response.
struct FunctionalSample {
    std::vector<double> grid;
    std::vector<double> values;
    double y = 0.0;
};

/// A set of curves sharing one observation grid. Row i of `curves` holds
/// x_i evaluated on `grid`.
struct FunctionalDataset {
    std::vector<double> grid;
    Eigen::MatrixXd curves;
    Eigen::VectorXd y;

    Eigen::Index size() const noexcept { return y.size(); }

    FunctionalSample sample(Eigen::Index i) const {
        FunctionalSample s{grid, std::vector<double>(static_cast<std::size_t>(curves.cols())), y[i]};
        for (Eigen::Index j = 0; j < curves.cols(); ++j) s.values[static_cast<std::size_t>(j)] = curves(i, j);
        return s;
    }

    static FunctionalDataset from_samples(std::span<const FunctionalSample> samples);
};

/// Validates a grid: length >= 2, strictly increasing, endpoints at 0 and 1
/// within 1e-9.
inline void validate_grid(std::span<const double> grid) {
    if (grid.size() < 2) throw data_error("observation grid needs at least two points");
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (!std::isfinite(grid[j])) throw data_error("observation grid contains a non-finite value");
        if (j > 0 && !(grid[j] > grid[j - 1])) throw data_error("observation grid must be strictly increasing");
    }
    if (std::abs(grid.front()) > 1e-9 || std::abs(grid.back() - 1.0) > 1e-9)
        throw domain_error("observation grid must cover [0,1] (endpoints within 1e-9)");
}

inline FunctionalDataset FunctionalDataset::from_samples(std::span<const FunctionalSample> samples) {
    if (samples.empty()) throw data_error("empty sample list");
    FunctionalDataset out;
    out.grid = samples.front().grid;
    const auto n = static_cast<Eigen::Index>(samples.size());
    const auto g = static_cast<Eigen::Index>(out.grid.size());
    out.curves.resize(n, g);
    out.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.grid != out.grid) throw data_error("sample " + std::to_string(i) + " uses a different grid");
        if (s.values.size() != out.grid.size())
            throw data_error("sample " + std::to_string(i) + " has " + std::to_string(s.values.size()) +
                             " values for a grid of " + std::to_string(out.grid.size()));
        for (Eigen::Index j = 0; j < g; ++j) out.curves(i, j) = s.values[static_cast<std::size_t>(j)];
        out.y[i] = s.y;
    }
    return out;
}

/// Matrix P with U = curves * P. The curve is interpolated between grid
/// points (piecewise linear for the trapezoid rule, piecewise quadratic over
/// point pairs for Simpson) and the product with each B_l is integrated
/// exactly, splitting at both grid points and knots.
inline Eigen::MatrixXd quadrature_projector(std::span<const double> grid, const BSplineBasis& basis,
                                            QuadratureRule rule) {
    validate_grid(grid);
    const std::size_t n = grid.size();
    if (rule == QuadratureRule::simpson && n % 2 == 0)
        throw domain_error("Simpson rule needs an odd number of grid points");
    const int p = basis.degree();
    const GaussLegendre gl(p + 2);
    const auto knots = basis.breakpoints();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), basis.size());
    std::vector<double> local(static_cast<std::size_t>(p + 1));

    // Integrates the Lagrange cardinal functions on nodes[0..m) against the
    // basis over [a, b], splitting at interior knots.
    auto accumulate = [&](std::size_t first_node, std::size_t m) {
        const double a = std::clamp(grid[first_node], 0.0, 1.0), b = std::clamp(grid[first_node + m - 1], 0.0, 1.0);
        std::vector<double> cuts{a};
        for (double k : knots)
            if (k > a && k < b) cuts.push_back(k);
        cuts.push_back(b);
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            const double lo = cuts[c], hi = cuts[c + 1], half = 0.5 * (hi - lo), mid = 0.5 * (lo + hi);
            for (std::size_t g = 0; g < gl.nodes.size(); ++g) {
                const double t = mid + half * gl.nodes[g], w = half * gl.weights[g];
                const int fb = basis.nonzero(t, 0, local);
                for (std::size_t j = 0; j < m; ++j) {
                    double lj = 1.0;
                    for (std::size_t i = 0; i < m; ++i)
                        if (i != j) lj *= (t - grid[first_node + i]) / (grid[first_node + j] - grid[first_node + i]);
                    for (int l = 0; l <= p; ++l)
                        out(static_cast<Eigen::Index>(first_node + j), fb + l) += w * lj * local[static_cast<std::size_t>(l)];
                }
            }
        }
    };
    if (rule == QuadratureRule::trapezoid) {
        for (std::size_t j = 0; j + 1 < n; ++j) accumulate(j, 2);
    } else {
        for (std::size_t j = 0; j + 2 < n; j += 2) accumulate(j, 3);
    }
    return out;
}

/// U_i = integral of x_i(t) B(t) over [0, 1], by composite quadrature on the
/// sample's own grid.
inline Eigen::VectorXd design_vector(const FunctionalSample& sample, const BSplineBasis& basis,
                                     QuadratureRule rule = QuadratureRule::trapezoid) {
    if (sample.values.size() != sample.grid.size())
        throw data_error("sample has " + std::to_string(sample.values.size()) + " values for a grid of " +
                         std::to_string(sample.grid.size()));
    for (double v : sample.values)
        if (!std::isfinite(v)) throw data_error("sample curve contains a non-finite value");
    const Eigen::MatrixXd proj = quadrature_projector(sample.grid, basis, rule);
    const Eigen::Map<const Eigen::VectorXd> x(sample.values.data(), static_cast<Eigen::Index>(sample.values.size()));
    return proj.transpose() * x;
}

/// Finite-dimensional CQR design: rows U_i and the roughness penalty D_q.
struct DesignMatrix {
    Eigen::MatrixXd U;
    Eigen::MatrixXd penalty;
    BSplineBasis basis;
    int penalty_order;
    QuadratureRule rule;

    Eigen::Index rows() const noexcept { return U.rows(); }
    Eigen::Index cols() const noexcept { return U.cols(); }
};

inline DesignMatrix build_design(const FunctionalDataset& data, const BSplineBasis& basis, int penalty_order,
                                 QuadratureRule rule = QuadratureRule::trapezoid) {
    if (data.size() == 0) throw data_error("cannot build a design from an empty dataset");
    if (static_cast<std::size_t>(data.curves.cols()) != data.grid.size())
        throw data_error("curve matrix width does not match grid length");
    if (!data.curves.allFinite()) throw data_error("dataset curves contain non-finite values");
    if (!data.y.allFinite()) throw data_error("dataset responses contain non-finite values");
    const Eigen::MatrixXd proj = quadrature_projector(data.grid, basis, rule);
    return DesignMatrix{data.curves * proj, basis.gram(penalty_order), basis, penalty_order, rule};
}

inline DesignMatrix build_design(std::span<const FunctionalSample> samples, const BSplineBasis& basis,
                                 int penalty_order, QuadratureRule rule = QuadratureRule::trapezoid) {
    return build_design(FunctionalDataset::from_samples(samples), basis, penalty_order, rule);
}

/// Row U_i extended by the k-th unit vector of length K (k is 1-based).
struct AugmentedRow {
    Eigen::Index index = 0;
    int level = 1;
    Eigen::VectorXd values;
};

inline AugmentedRow augment(const Eigen::Ref<const Eigen::VectorXd>& row, int level, int levels,
                            Eigen::Index index = 0) {
    if (levels < 1 || level < 1 || level > levels)
        throw invalid_argument_error("quantile level " + std::to_string(level) + " outside [1, " +
                                     std::to_string(levels) + "]");
    AugmentedRow out{index, level, Eigen::VectorXd::Zero(row.size() + levels)};
    out.values.head(row.size()) = row;
    out.values[row.size() + level - 1] = 1.0;
    return out;
}

/// blkdiag(D_q, 0_{K x K}); intercepts are never penalized.
inline Eigen::MatrixXd padded_penalty(const Eigen::Ref<const Eigen::MatrixXd>& penalty, int levels) {
    if (penalty.rows() != penalty.cols()) throw invalid_argument_error("penalty matrix must be square");
    if (levels < 0) throw invalid_argument_error("number of quantile levels must be >= 0");
    const Eigen::Index d = penalty.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d + levels, d + levels);
    out.topLeftCorner(d, d) = penalty;
    return out;
}

/// Default interior knot count: ceil(1.5 N^{1/5}) limited to
/// [4, floor(sqrt(N)/2)] (the lower bound wins for very small N).
inline int default_interior_knots(Eigen::Index n) {
    if (n < 1) throw invalid_argument_error("sample size must be positive");
    const double nd = static_cast<double>(n);
    const int grow = static_cast<int>(std::ceil(1.5 * std::pow(nd, 0.2) - 1e-9));
    const int upper = static_cast<int>(std::floor(std::sqrt(nd) / 2.0));
    return std::max(4, std::min(grow, upper));
}

} // namespace fcqr
