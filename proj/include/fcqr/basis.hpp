#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/errors.hpp"
#include "fcqr/quadrature.hpp"

namespace fcqr {

/// Clamped, uniform, normalized B-spline basis on [0, 1].
///
/// Degree p with M equally spaced interior knots gives M + p + 1 basis
/// functions. The knot vector repeats 0 and 1 exactly p + 1 times. At t = 1
/// evaluation uses the last non-degenerate interval, so the last basis
/// function equals one there (right-endpoint continuity).
///
/// Immutable after construction; all member functions are const and
/// thread-safe.
class BSplineBasis {
public:
    BSplineBasis(int degree, int interior_knots) : degree_(degree), interior_(interior_knots) {
        if (degree < 0) throw invalid_argument_error("B-spline degree must be >= 0, got " + std::to_string(degree));
        if (interior_knots < 0)
            throw invalid_argument_error("interior knot count must be >= 0, got " + std::to_string(interior_knots));
        knots_.reserve(static_cast<std::size_t>(interior_ + 2 * (degree_ + 1)));
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree_ + 1), 0.0);
        for (int j = 1; j <= interior_; ++j) knots_.push_back(static_cast<double>(j) / (interior_ + 1));
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree_ + 1), 1.0);
    }

    int degree() const noexcept { return degree_; }
    int interior_knot_count() const noexcept { return interior_; }
    int size() const noexcept { return interior_ + degree_ + 1; }
    const std::vector<double>& knots() const noexcept { return knots_; }

    /// Breakpoints 0 = t_0 < t_1 < ... < t_{M+1} = 1.
    std::vector<double> breakpoints() const {
        return linspace(0.0, 1.0, static_cast<std::size_t>(interior_ + 2));
    }

    /// Index s with knots[s] <= t < knots[s+1]; the nonzero functions at t
    /// are s - p, ..., s.
    int span(double t) const {
        check_point(t);
        const int last = size() - 1;
        if (t >= 1.0) return last;
        // Uniform interior spacing makes the interval index direct; the
        // upper_bound fix-up guards against rounding at knot boundaries.
        int s = degree_ + static_cast<int>(std::floor(t * (interior_ + 1)));
        s = std::clamp(s, degree_, last);
        while (s > degree_ && t < knots_[static_cast<std::size_t>(s)]) --s;
        while (s < last && t >= knots_[static_cast<std::size_t>(s + 1)]) ++s;
        return s;
    }

    /// Derivative `order` of the p + 1 nonzero basis functions at t.
    /// Writes out[j] = B^{(order)}_{first + j}(t) and returns `first`.
    int nonzero(double t, int order, std::span<double> out) const {
        check_order(order);
        if (out.size() < static_cast<std::size_t>(degree_ + 1))
            throw invalid_argument_error("output buffer too small for nonzero basis values");
        const int s = span(t);
        derivatives_at(s, t, order, out);
        return s - degree_;
    }

    /// Full vector (B_1^{(order)}(t), ..., B_{M+p+1}^{(order)}(t)).
    Eigen::VectorXd evaluate(double t, int order = 0) const {
        std::vector<double> local(static_cast<std::size_t>(degree_ + 1));
        const int first = nonzero(t, order, local);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
        for (int j = 0; j <= degree_; ++j) out[first + j] = local[static_cast<std::size_t>(j)];
        return out;
    }

    /// Exact integrals of each basis function over [0, 1]:
    /// (knot_{l+p+1} - knot_l) / (p + 1).
    Eigen::VectorXd integrals() const {
        Eigen::VectorXd out(size());
        for (int l = 0; l < size(); ++l)
            out[l] = (knots_[static_cast<std::size_t>(l + degree_ + 1)] - knots_[static_cast<std::size_t>(l)]) /
                     (degree_ + 1);
        return out;
    }

    /// D_q = integral of B^{(q)}(t) B^{(q)}(t)^T over [0, 1].
    ///
    /// The integrand is a polynomial of degree 2(p - q) on each knot
    /// interval, so per-interval Gauss-Legendre with enough nodes is exact
    /// up to rounding.
    Eigen::MatrixXd gram(int q) const {
        check_order(q);
        const int nodes = (2 * (degree_ - q) + 2) / 2 + 1;
        const GaussLegendre rule(nodes);
        const auto breaks = breakpoints();
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(size(), size());
        std::vector<double> local(static_cast<std::size_t>(degree_ + 1));
        for (std::size_t j = 0; j + 1 < breaks.size(); ++j) {
            const double a = breaks[j], b = breaks[j + 1];
            const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
            // The interval's span is fixed; evaluating at interior nodes
            // keeps every node on the same polynomial piece.
            const int s = degree_ + static_cast<int>(j);
            for (std::size_t g = 0; g < rule.nodes.size(); ++g) {
                const double t = mid + half * rule.nodes[g];
                derivatives_at(s, t, q, local);
                const double w = rule.weights[g] * half;
                const int first = s - degree_;
                for (int r = 0; r <= degree_; ++r)
                    for (int c = 0; c <= degree_; ++c)
                        d(first + r, first + c) += w * local[static_cast<std::size_t>(r)] * local[static_cast<std::size_t>(c)];
            }
        }
        return 0.5 * (d + d.transpose());
    }

private:
    void check_point(double t) const {
        if (!(t >= 0.0 && t <= 1.0)) throw domain_error("basis evaluation point outside [0,1]: " + std::to_string(t));
    }
    void check_order(int order) const {
        if (order < 0 || order > degree_)
            throw invalid_argument_error("derivative order " + std::to_string(order) + " outside [0, " +
                                         std::to_string(degree_) + "]");
    }

    // Derivatives of the nonzero basis functions on knot span s
    // (de Boor triangular recursion with derivative differencing).
    void derivatives_at(int s, double t, int order, std::span<double> out) const {
        const int p = degree_;
        const auto& u = knots_;
        const auto P = static_cast<std::size_t>(p + 1);
        // ndu(j, r): upper triangle holds basis values, lower holds knot differences.
        std::vector<double> ndu(P * P), left(P), right(P);
        auto at = [P](std::vector<double>& m, int r, int c) -> double& {
            return m[static_cast<std::size_t>(r) * P + static_cast<std::size_t>(c)];
        };
        at(ndu, 0, 0) = 1.0;
        for (int j = 1; j <= p; ++j) {
            left[static_cast<std::size_t>(j)] = t - u[static_cast<std::size_t>(s + 1 - j)];
            right[static_cast<std::size_t>(j)] = u[static_cast<std::size_t>(s + j)] - t;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                at(ndu, j, r) = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
                const double tmp = at(ndu, r, j - 1) / at(ndu, j, r);
                at(ndu, r, j) = saved + right[static_cast<std::size_t>(r + 1)] * tmp;
                saved = left[static_cast<std::size_t>(j - r)] * tmp;
            }
            at(ndu, j, j) = saved;
        }
        if (order == 0) {
            for (int j = 0; j <= p; ++j) out[static_cast<std::size_t>(j)] = at(ndu, j, p);
            return;
        }
        std::vector<double> a(2 * P);
        auto A = [&a, P](int row, int c) -> double& {
            return a[static_cast<std::size_t>(row) * P + static_cast<std::size_t>(c)];
        };
        for (int r = 0; r <= p; ++r) {
            int s1 = 0, s2 = 1;
            A(0, 0) = 1.0;
            double value = 0.0;
            for (int k = 1; k <= order; ++k) {
                double d = 0.0;
                const int rk = r - k, pk = p - k;
                if (r >= k) {
                    A(s2, 0) = A(s1, 0) / at(ndu, pk + 1, rk);
                    d = A(s2, 0) * at(ndu, rk, pk);
                }
                const int j1 = (rk >= -1) ? 1 : -rk;
                const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
                for (int j = j1; j <= j2; ++j) {
                    A(s2, j) = (A(s1, j) - A(s1, j - 1)) / at(ndu, pk + 1, rk + j);
                    d += A(s2, j) * at(ndu, rk + j, pk);
                }
                if (r <= pk) {
                    A(s2, k) = -A(s1, k - 1) / at(ndu, pk + 1, r);
                    d += A(s2, k) * at(ndu, r, pk);
                }
                value = d;
                std::swap(s1, s2);
            }
            double factor = 1.0;
            for (int k = p; k > p - order; --k) factor *= k;
            out[static_cast<std::size_t>(r)] = value * factor;
        }
    }

    int degree_;
    int interior_;
    std::vector<double> knots_;
};

/// Spline curve t -> B(t)^T coefficients.
inline double evaluate_curve(const BSplineBasis& basis, const Eigen::VectorXd& coefficients, double t,
                             int order = 0) {
    if (coefficients.size() != basis.size())
        throw invalid_argument_error("coefficient length does not match basis size");
    std::vector<double> local(static_cast<std::size_t>(basis.degree() + 1));
    const int first = basis.nonzero(t, order, local);
    double s = 0.0;
    for (int j = 0; j <= basis.degree(); ++j) s += local[static_cast<std::size_t>(j)] * coefficients[first + j];
    return s;
}

} // namespace fcqr
