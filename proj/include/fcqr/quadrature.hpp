#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fcqr/errors.hpp"

namespace fcqr {

/// Gauss-Legendre nodes and weights on [-1, 1], exact for polynomials of
/// degree 2*count - 1.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(int count) : nodes(count), weights(count) {
        if (count < 1) throw invalid_argument_error("Gauss-Legendre rule needs at least one node");
        for (int i = 0; i < (count + 1) / 2; ++i) {
            // Tricomi initial guess, then Newton on P_count.
            double x = std::cos(std::numbers::pi * (i + 0.75) / (count + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= count; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = count * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            // Recompute the derivative at the converged node.
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= count; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = count * (x * p1 - p0) / (x * x - 1.0);
            const double w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[count - 1 - i] = x;
            weights[i] = w;
            weights[count - 1 - i] = w;
        }
    }

    /// Integrate f over [a, b].
    template <class F>
    double integrate(F&& f, double a, double b) const {
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(mid + half * nodes[i]);
        return s * half;
    }
};

enum class QuadratureRule { trapezoid, simpson };

inline QuadratureRule parse_quadrature_rule(std::string_view name) {
    if (name == "trapezoid") return QuadratureRule::trapezoid;
    if (name == "simpson") return QuadratureRule::simpson;
    throw invalid_argument_error("unknown quadrature rule: " + std::string(name));
}

/// Weights w such that sum_j w_j f(grid_j) approximates the integral of f
/// over [grid.front(), grid.back()].
///
/// Simpson requires an odd number of uniformly spaced points; otherwise a
/// domain error is raised so the caller can fall back to the trapezoid rule.
inline std::vector<double> quadrature_weights(std::span<const double> grid, QuadratureRule rule) {
    const std::size_t n = grid.size();
    if (n < 2) throw domain_error("quadrature grid needs at least two points");
    std::vector<double> w(n, 0.0);
    if (rule == QuadratureRule::trapezoid) {
        for (std::size_t j = 0; j + 1 < n; ++j) {
            const double h = grid[j + 1] - grid[j];
            w[j] += 0.5 * h;
            w[j + 1] += 0.5 * h;
        }
        return w;
    }
    if (n % 2 == 0) throw domain_error("Simpson rule needs an odd number of grid points");
    const double h = (grid.back() - grid.front()) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(grid[j] - (grid.front() + h * static_cast<double>(j))) > 1e-9 * (1.0 + std::abs(grid[j])))
            throw domain_error("Simpson rule needs a uniform grid");
    }
    for (std::size_t j = 0; j < n; ++j) {
        const double c = (j == 0 || j == n - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
        w[j] = c * h / 3.0;
    }
    return w;
}

/// n equally spaced points from a to b inclusive.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = a;
        return out;
    }
    for (std::size_t j = 0; j < n; ++j)
        out[j] = (j + 1 == n) ? b : a + (b - a) * static_cast<double>(j) / static_cast<double>(n - 1);
    return out;
}

/// Composite Simpson integral of f over [0, 1] on `points` nodes (odd).
template <class F>
double simpson_unit(F&& f, std::size_t points = 1001) {
    const auto grid = linspace(0.0, 1.0, points);
    const auto w = quadrature_weights(grid, QuadratureRule::simpson);
    double s = 0.0;
    for (std::size_t j = 0; j < points; ++j) s += w[j] * f(grid[j]);
    return s;
}

} // namespace fcqr
