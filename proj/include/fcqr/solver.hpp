#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/errors.hpp"

namespace fcqr {

/// rho_tau(u) = u (tau - I(u < 0)).
inline double check_loss(double u, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw invalid_argument_error("quantile level must lie in (0,1)");
    return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

/// Equally spaced levels k / (K + 1), k = 1..K.
inline std::vector<double> quantile_grid(int levels) {
    if (levels < 1) throw invalid_argument_error("number of quantile levels must be >= 1");
    std::vector<double> taus(static_cast<std::size_t>(levels));
    for (int k = 1; k <= levels; ++k) taus[static_cast<std::size_t>(k - 1)] = static_cast<double>(k) / (levels + 1);
    return taus;
}

/// Type-7 sample quantile of `values` (copied, not modified).
inline double sample_quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw data_error("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Smallest v with weighted CDF(v) >= prob; a minimizer of
/// sum_i w_i rho_prob(y_i - v).
inline double weighted_quantile(const Eigen::VectorXd& values, const Eigen::VectorXd& weights, double prob) {
    if (values.size() == 0) throw data_error("quantile of an empty sample");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
    const double total = weights.sum();
    double acc = 0.0;
    for (auto i : order) {
        acc += weights[i];
        if (acc >= prob * total) return values[i];
    }
    return values[order.back()];
}

/// Weighted, penalized composite quantile regression problem
///
///   sum_i w_i sum_k rho_{tau_k}(y_i - b_k - U_i^T theta) + (lambda/2) theta^T D theta.
///
/// Full-data fits use unit weights; subsample fits use R_i / (N pi_i).
struct CqrProblem {
    Eigen::MatrixXd U;
    Eigen::VectorXd y;
    Eigen::VectorXd weights;
    std::vector<double> taus;
    double lambda = 0.0;
    Eigen::MatrixXd penalty;

    Eigen::Index rows() const noexcept { return y.size(); }
    Eigen::Index dim() const noexcept { return U.cols(); }
    int levels() const noexcept { return static_cast<int>(taus.size()); }

    void validate() const {
        if (U.rows() != y.size()) throw invalid_argument_error("design rows do not match response length");
        if (weights.size() != y.size()) throw invalid_argument_error("weight length does not match response length");
        if (penalty.rows() != U.cols() || penalty.cols() != U.cols())
            throw invalid_argument_error("penalty matrix must be d x d with d = design columns");
        if (taus.empty()) throw invalid_argument_error("at least one quantile level is required");
        for (std::size_t k = 0; k < taus.size(); ++k) {
            if (!(taus[k] > 0.0 && taus[k] < 1.0)) throw invalid_argument_error("quantile levels must lie in (0,1)");
            if (k > 0 && !(taus[k] > taus[k - 1]))
                throw invalid_argument_error("quantile levels must be strictly increasing");
        }
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw invalid_argument_error("lambda must be finite and >= 0");
        if (!U.allFinite() || !y.allFinite() || !penalty.allFinite())
            throw data_error("problem contains non-finite design, response, or penalty entries");
        if (!weights.allFinite() || (weights.size() > 0 && weights.minCoeff() <= 0.0))
            throw data_error("weights must be finite and positive");
    }

    /// Unit weights, the full-data objective.
    static CqrProblem full(Eigen::MatrixXd U, Eigen::VectorXd y, std::vector<double> taus, double lambda,
                           Eigen::MatrixXd penalty) {
        const auto n = y.size();
        return CqrProblem{std::move(U), std::move(y), Eigen::VectorXd::Ones(n), std::move(taus), lambda,
                          std::move(penalty)};
    }
};

struct CqrFit {
    Eigen::VectorXd theta;
    Eigen::VectorXd intercepts;
    double objective = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    int stages = 0;
    bool converged = false;
    double bandwidth = 0.0;
    /// Infinity norm of the minimum-norm subgradient of the exact objective
    /// (see subgradient_residual), kinks detected within 20 bandwidths.
    double gradient_norm = 0.0;
    bool intercepts_monotone = true;
    std::vector<std::string> diagnostics;
};

/// Exact (unsmoothed) weighted objective.
inline double objective(const CqrProblem& problem, const Eigen::VectorXd& theta, const Eigen::VectorXd& intercepts) {
    if (theta.size() != problem.dim()) throw invalid_argument_error("theta length does not match design columns");
    if (intercepts.size() != problem.levels())
        throw invalid_argument_error("intercept count does not match number of quantile levels");
    if (problem.U.rows() != problem.y.size() || problem.weights.size() != problem.y.size())
        throw invalid_argument_error("problem dimensions are inconsistent");
    const Eigen::VectorXd base = problem.y - problem.U * theta;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        double row = 0.0;
        for (int k = 0; k < problem.levels(); ++k) {
            const double u = base[i] - intercepts[k];
            const double tau = problem.taus[static_cast<std::size_t>(k)];
            row += u * (tau - (u < 0.0 ? 1.0 : 0.0));
        }
        loss += problem.weights[i] * row;
    }
    double pen = 0.0;
    if (problem.lambda > 0.0 && theta.size() > 0) pen = 0.5 * problem.lambda * theta.dot(problem.penalty * theta);
    return loss + pen;
}

/// Convolution-smoothed check loss with a Gaussian kernel of bandwidth h:
/// l_h(u) = u (tau - Phi(-u/h)) + h phi(u/h). Convex, C-infinity, and
/// 0 <= l_h(u) - rho_tau(u) <= h / sqrt(2 pi).
struct SmoothedCheck {
    double value;
    double first;
    double second;
};

inline SmoothedCheck smoothed_check(double u, double tau, double h) {
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    const double z = u / h;
    const double tail = 0.5 * std::erfc(z * std::numbers::sqrt2 / 2.0);
    const double dens = inv_sqrt2pi * std::exp(-0.5 * z * z);
    return {u * (tau - tail) + h * dens, tau - tail, dens / h};
}

/// Smoothed objective with optional gradient and Hessian over the stacked
/// parameter (theta, b).
inline double smoothed_objective(const CqrProblem& problem, const Eigen::VectorXd& theta,
                                 const Eigen::VectorXd& intercepts, double bandwidth,
                                 Eigen::VectorXd* gradient = nullptr, Eigen::MatrixXd* hessian = nullptr) {
    if (!(bandwidth > 0.0)) throw invalid_argument_error("smoothing bandwidth must be positive");
    const Eigen::Index n = problem.rows(), d = problem.dim();
    const int K = problem.levels();
    const Eigen::VectorXd base = problem.y - problem.U * theta;
    Eigen::MatrixXd first, second;
    if (gradient) first.resize(n, K);
    if (hessian) second.resize(n, K);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = problem.weights[i];
        double row = 0.0;
        for (int k = 0; k < K; ++k) {
            const auto s = smoothed_check(base[i] - intercepts[k], problem.taus[static_cast<std::size_t>(k)], bandwidth);
            row += s.value;
            if (gradient) first(i, k) = w * s.first;
            if (hessian) second(i, k) = w * s.second;
        }
        loss += w * row;
    }
    const Eigen::VectorXd Dtheta = d > 0 ? Eigen::VectorXd(problem.penalty * theta) : Eigen::VectorXd();
    const double pen = (problem.lambda > 0.0 && d > 0) ? 0.5 * problem.lambda * theta.dot(Dtheta) : 0.0;
    if (gradient) {
        gradient->resize(d + K);
        if (d > 0) gradient->head(d) = -problem.U.transpose() * first.rowwise().sum() + problem.lambda * Dtheta;
        gradient->tail(K) = -first.colwise().sum().transpose();
    }
    if (hessian) {
        hessian->setZero(d + K, d + K);
        if (d > 0) {
            const Eigen::VectorXd rowcurv = second.rowwise().sum();
            hessian->topLeftCorner(d, d) = problem.U.transpose() * (problem.U.array().colwise() * rowcurv.array()).matrix();
            if (problem.lambda > 0.0) hessian->topLeftCorner(d, d) += problem.lambda * problem.penalty;
            const Eigen::MatrixXd cross = problem.U.transpose() * second;
            hessian->topRightCorner(d, K) = cross;
            hessian->bottomLeftCorner(K, d) = cross.transpose();
        }
        for (int k = 0; k < K; ++k) (*hessian)(d + k, d + k) = second.col(k).sum();
    }
    return loss + pen;
}

/// Infinity norm of the smallest subgradient of the exact objective at
/// (theta, b). Residuals within `band` of zero are treated as sitting on a
/// kink, where the check-loss derivative may take any value in
/// [tau - 1, tau]; the best choice is found by coordinate descent on the
/// resulting box-constrained least-squares problem.
inline double subgradient_residual(const CqrProblem& problem, const Eigen::VectorXd& theta,
                                   const Eigen::VectorXd& intercepts, double band) {
    const Eigen::Index n = problem.rows(), d = problem.dim();
    const int K = problem.levels();
    const Eigen::VectorXd base = problem.y - problem.U * theta;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d + K);
    if (d > 0 && problem.lambda > 0.0) g.head(d) = problem.lambda * (problem.penalty * theta);

    struct Kink {
        Eigen::Index row;
        int level;
        double lo, hi, s, norm2;  // s is the weighted kink slope; norm2 = |(U_i, e_k)|^2
    };
    std::vector<Kink> kinks;
    Eigen::VectorXd rowcoef = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = problem.weights[i];
        for (int k = 0; k < K; ++k) {
            const double tau = problem.taus[static_cast<std::size_t>(k)];
            const double r = base[i] - intercepts[k];
            if (std::abs(r) <= band) {
                const double norm2 = 1.0 + (d > 0 ? problem.U.row(i).squaredNorm() : 0.0);
                kinks.push_back({i, k, w * (tau - 1.0), w * tau, 0.0, norm2});
                continue;
            }
            const double slope = w * (tau - (r < 0.0 ? 1.0 : 0.0));
            rowcoef[i] += slope;
            g[d + k] -= slope;
        }
    }
    if (d > 0) g.head(d) -= problem.U.transpose() * rowcoef;
    // Each kink adds -s (U_i, e_k) to the gradient.
    auto apply = [&](const Kink& kk, double delta) {
        if (d > 0) g.head(d) -= delta * problem.U.row(kk.row).transpose();
        g[d + kk.level] -= delta;
    };
    for (auto& kk : kinks) {
        kk.s = std::clamp(0.0, kk.lo, kk.hi);
        apply(kk, kk.s);
    }
    for (int sweep = 0; sweep < 5000 && !kinks.empty(); ++sweep) {
        double moved = 0.0;
        for (auto& kk : kinks) {
            double dot = g[d + kk.level];
            if (d > 0) dot += problem.U.row(kk.row).dot(g.head(d));
            const double target = std::clamp(kk.s + dot / kk.norm2, kk.lo, kk.hi);
            const double delta = target - kk.s;
            if (delta != 0.0) {
                apply(kk, delta);
                kk.s = target;
                moved = std::max(moved, std::abs(delta));
            }
        }
        if (moved <= 1e-15 * (1.0 + problem.weights.maxCoeff())) break;
    }
    return g.size() > 0 ? g.cwiseAbs().maxCoeff() : 0.0;
}

struct SolveOptions {
    /// Relative change of the exact objective between bandwidth stages that
    /// ends the continuation.
    double tol_rel = 1e-8;
    /// Newton iterations per bandwidth stage.
    int max_iter = 500;
    /// Starting bandwidth; <= 0 selects IQR(y) / 10.
    double initial_bandwidth = 0.0;
    double shrink = 0.25;
    int max_stages = 60;
};

namespace detail {

inline double default_bandwidth(const Eigen::VectorXd& y) {
    std::vector<double> v(y.data(), y.data() + y.size());
    const double iqr = sample_quantile(v, 0.75) - sample_quantile(v, 0.25);
    if (iqr > 0.0) return iqr / 10.0;
    const double range = y.maxCoeff() - y.minCoeff();
    if (range > 0.0) return range / 10.0;
    return 1e-3 * (1.0 + std::abs(y[0]));
}

// Solves H x = rhs, adding a growing ridge when H is numerically singular.
inline Eigen::VectorXd robust_solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& rhs) {
    const double scale = std::max(H.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const auto dvals = ldlt.vectorD();
        if (dvals.minCoeff() > 1e-13 * scale) {
            Eigen::VectorXd x = ldlt.solve(rhs);
            if (x.allFinite()) return x;
        }
    }
    double ridge = 1e-12 * scale;
    const Eigen::Index m = H.rows();
    for (int attempt = 0; attempt < 30; ++attempt, ridge *= 10.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(H + ridge * Eigen::MatrixXd::Identity(m, m));
        if (llt.info() == Eigen::Success) {
            Eigen::VectorXd x = llt.solve(rhs);
            if (x.allFinite()) return x;
        }
    }
    throw numerical_error("Newton system could not be regularized", std::numeric_limits<double>::infinity());
}

} // namespace detail

/// Minimizes the exact objective by smoothing continuation: Newton's method
/// on the smoothed objective for a decreasing sequence of bandwidths, warm
/// started, until the exact objective changes by at most tol_rel between
/// consecutive stages.
inline CqrFit solve(const CqrProblem& problem, const SolveOptions& options = {}) {
    problem.validate();
    if (!(options.tol_rel > 0.0) || options.max_iter < 1 || !(options.shrink > 0.0 && options.shrink < 1.0) ||
        options.max_stages < 1)
        throw invalid_argument_error("invalid solver options");
    const Eigen::Index n = problem.rows(), d = problem.dim();
    const int K = problem.levels();
    if (n == 0) throw data_error("cannot fit an empty problem");

    CqrFit fit;
    if (n < K + d)
        fit.diagnostics.push_back("fewer observations (" + std::to_string(n) + ") than parameters (" +
                                  std::to_string(K + d) + "); solution may not be unique");

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + K);
    for (int k = 0; k < K; ++k)
        beta[d + k] = weighted_quantile(problem.y, problem.weights, problem.taus[static_cast<std::size_t>(k)]);

    const double wsum = problem.weights.sum();
    const double yscale = std::max({detail::default_bandwidth(problem.y) * 10.0, problem.y.cwiseAbs().mean(), 1.0});
    const double floor = 1e-14 * wsum * K * yscale;

    double h = options.initial_bandwidth > 0.0 ? options.initial_bandwidth : detail::default_bandwidth(problem.y);
    double previous = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    bool stage_ok = false;

    for (int stage = 0; stage < options.max_stages; ++stage) {
        fit.stages = stage + 1;
        stage_ok = false;
        for (int it = 0; it < options.max_iter; ++it) {
            const Eigen::VectorXd theta = beta.head(d), b = beta.tail(K);
            const double f = smoothed_objective(problem, theta, b, h, &grad, &hess);
            ++fit.iterations;
            const Eigen::VectorXd step = detail::robust_solve(hess, -grad);
            const double decrement = -grad.dot(step);
            if (!(decrement > 0.0) || 0.5 * decrement <= 0.1 * options.tol_rel * std::max(std::abs(f), floor)) {
                stage_ok = true;
                break;
            }
            double alpha = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
                const Eigen::VectorXd trial = beta + alpha * step;
                const double ft = smoothed_objective(problem, trial.head(d), trial.tail(K), h);
                if (ft <= f - 1e-4 * alpha * decrement) {
                    beta = trial;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                // No descent possible within rounding: treat as stationary.
                stage_ok = true;
                break;
            }
        }
        const double current = objective(problem, beta.head(d), beta.tail(K));
        fit.bandwidth = h;
        if (stage > 0 && stage_ok &&
            std::abs(previous - current) <= options.tol_rel * std::max(std::abs(current), floor)) {
            fit.converged = true;
            break;
        }
        previous = current;
        h *= options.shrink;
    }

    fit.theta = beta.head(d);
    fit.intercepts = beta.tail(K);
    fit.objective = objective(problem, fit.theta, fit.intercepts);
    fit.gradient_norm = subgradient_residual(problem, fit.theta, fit.intercepts,
                                             std::max(20.0 * fit.bandwidth, 1e-12 * yscale));
    for (int k = 1; k < K; ++k)
        if (fit.intercepts[k] < fit.intercepts[k - 1]) fit.intercepts_monotone = false;
    if (!fit.intercepts_monotone) fit.diagnostics.push_back("estimated intercepts are not monotone in tau");
    if (!fit.converged)
        fit.diagnostics.push_back("smoothing continuation did not stabilize within " +
                                  std::to_string(options.max_stages) + " stages");
    return fit;
}

} // namespace fcqr
