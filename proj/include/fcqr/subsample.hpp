#pragma once

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/basis.hpp"
#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/solver.hpp"

namespace fcqr {

enum class Criterion { uniform, lopt, aopt };

inline Criterion parse_criterion(std::string_view name) {
    if (name == "unif" || name == "uniform") return Criterion::uniform;
    if (name == "lopt") return Criterion::lopt;
    if (name == "aopt") return Criterion::aopt;
    throw invalid_argument_error("unknown subsampling method '" + std::string(name) + "' (expected unif, lopt or aopt)");
}

inline std::string_view to_string(Criterion c) {
    switch (c) {
    case Criterion::uniform: return "unif";
    case Criterion::lopt: return "lopt";
    case Criterion::aopt: return "aopt";
    }
    return "?";
}

/// Throws unless pi is a strictly positive probability vector summing to one
/// within 1e-12 (relative to N).
inline void validate_probabilities(const Eigen::VectorXd& pi) {
    if (pi.size() == 0) throw invalid_argument_error("empty probability vector");
    if (!pi.allFinite()) throw data_error("probability vector contains non-finite entries");
    if (pi.minCoeff() <= 0.0) throw invalid_argument_error("subsampling probabilities must all be positive");
    if (std::abs(pi.sum() - 1.0) > 1e-12 * std::max<double>(1.0, static_cast<double>(pi.size()) * 1e-3))
        throw invalid_argument_error("subsampling probabilities must sum to one");
}

/// Rescales nonnegative scores to a probability vector, optionally mixed
/// with the uniform distribution: (1 - alpha) pi + alpha / N.
inline Eigen::VectorXd normalize_scores(const Eigen::VectorXd& scores, double alpha = 0.0) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw invalid_argument_error("uniform mixing weight must lie in [0,1]");
    if (!scores.allFinite() || scores.minCoeff() < 0.0) throw data_error("probability scores must be finite and >= 0");
    const double total = scores.sum();
    if (!(total > 0.0)) throw numerical_error("all probability scores are zero");
    const auto n = static_cast<double>(scores.size());
    Eigen::VectorXd pi = (1.0 - alpha) * scores / total;
    pi.array() += alpha / n;
    return pi / pi.sum();
}

/// psi_i = sum_k (tau_k - I(residual < b_k)) (U_i, e_k).
inline Eigen::VectorXd score_vector(double residual, const Eigen::VectorXd& intercepts,
                                    const Eigen::Ref<const Eigen::VectorXd>& row, const std::vector<double>& taus) {
    const auto K = static_cast<Eigen::Index>(taus.size());
    if (intercepts.size() != K) throw invalid_argument_error("intercept count does not match number of quantile levels");
    Eigen::VectorXd psi(row.size() + K);
    double s = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
        const double c = taus[static_cast<std::size_t>(k)] - (residual < intercepts[k] ? 1.0 : 0.0);
        psi[row.size() + k] = c;
        s += c;
    }
    psi.head(row.size()) = s * row;
    return psi;
}

/// Residuals y_i - U_i^T theta (no intercept), the quantity compared with
/// each b_k in the indicator of the score.
inline Eigen::VectorXd slope_residuals(const Eigen::MatrixXd& U, const Eigen::VectorXd& y, const Eigen::VectorXd& theta) {
    if (U.rows() != y.size() || U.cols() != theta.size()) throw invalid_argument_error("residual dimensions mismatch");
    return y - U * theta;
}

namespace detail {

inline void check_score_inputs(const Eigen::VectorXd& residuals, const Eigen::VectorXd& intercepts,
                               const Eigen::MatrixXd& U, const std::vector<double>& taus) {
    if (residuals.size() != U.rows()) throw invalid_argument_error("residual count does not match design rows");
    if (intercepts.size() != static_cast<Eigen::Index>(taus.size()))
        throw invalid_argument_error("intercept count does not match number of quantile levels");
    if (!residuals.allFinite()) throw data_error("residuals contain non-finite values");
    if (!intercepts.allFinite()) throw data_error("intercepts contain non-finite values");
}

// Per-row level coefficients c_ik = tau_k - I(eps_i < b_k), as an N x K matrix.
inline Eigen::MatrixXd level_coefficients(const Eigen::VectorXd& residuals, const Eigen::VectorXd& intercepts,
                                          const std::vector<double>& taus) {
    const auto K = static_cast<Eigen::Index>(taus.size());
    Eigen::MatrixXd c(residuals.size(), K);
    for (Eigen::Index i = 0; i < residuals.size(); ++i)
        for (Eigen::Index k = 0; k < K; ++k)
            c(i, k) = taus[static_cast<std::size_t>(k)] - (residuals[i] < intercepts[k] ? 1.0 : 0.0);
    return c;
}

} // namespace detail

/// L-optimal probabilities: pi_i proportional to |psi_i|_2.
inline Eigen::VectorXd lopt_probabilities(const Eigen::VectorXd& residuals, const Eigen::VectorXd& intercepts,
                                          const Eigen::MatrixXd& U, const std::vector<double>& taus,
                                          double alpha = 0.0) {
    detail::check_score_inputs(residuals, intercepts, U, taus);
    const Eigen::MatrixXd c = detail::level_coefficients(residuals, intercepts, taus);
    const Eigen::VectorXd s = c.rowwise().sum();
    const Eigen::VectorXd unorm2 = U.rowwise().squaredNorm();
    const Eigen::VectorXd scores =
        (s.array().square() * unorm2.array() + c.rowwise().squaredNorm().array()).sqrt().matrix();
    return normalize_scores(scores, alpha);
}

/// A-optimal probabilities: pi_i proportional to |H^{-1} psi_i|_2.
inline Eigen::VectorXd aopt_probabilities(const Eigen::VectorXd& residuals, const Eigen::VectorXd& intercepts,
                                          const Eigen::MatrixXd& U, const std::vector<double>& taus,
                                          const Eigen::MatrixXd& H, double alpha = 0.0) {
    detail::check_score_inputs(residuals, intercepts, U, taus);
    const Eigen::Index d = U.cols(), K = static_cast<Eigen::Index>(taus.size());
    if (H.rows() != d + K || H.cols() != d + K) throw invalid_argument_error("H must be (d+K) x (d+K)");
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(H);
    const auto& sv = svd.singularValues();
    const double cond = sv.size() ? sv[0] / std::max(sv[sv.size() - 1], std::numeric_limits<double>::min()) : 0.0;
    if (!lu.isInvertible() || !(cond < 1e14))
        throw numerical_error("H is singular or ill-conditioned (condition number " + std::to_string(cond) + ")", cond);
    const Eigen::MatrixXd Hinv = lu.inverse();
    const Eigen::MatrixXd c = detail::level_coefficients(residuals, intercepts, taus);
    const Eigen::VectorXd s = c.rowwise().sum();
    // H^{-1} psi_i = s_i Hinv_{:,theta} U_i + Hinv_{:,b} c_i, evaluated for all rows at once.
    Eigen::MatrixXd mapped = c * Hinv.rightCols(K).transpose();
    if (d > 0) mapped += (U.array().colwise() * s.array()).matrix() * Hinv.leftCols(d).transpose();
    return normalize_scores(mapped.rowwise().norm(), alpha);
}

/// Walker/Vose alias table: O(N) construction, O(1) per draw.
class AliasTable {
public:
    explicit AliasTable(const Eigen::VectorXd& pi) : prob_(static_cast<std::size_t>(pi.size())), alias_(prob_.size()) {
        validate_probabilities(pi);
        const std::size_t n = prob_.size();
        std::vector<double> scaled(n);
        std::vector<std::size_t> small, large;
        for (std::size_t i = 0; i < n; ++i) {
            scaled[i] = pi[static_cast<Eigen::Index>(i)] * static_cast<double>(n);
            (scaled[i] < 1.0 ? small : large).push_back(i);
        }
        while (!small.empty() && !large.empty()) {
            const std::size_t s = small.back(), l = large.back();
            small.pop_back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if (scaled[l] < 1.0) {
                large.pop_back();
                small.push_back(l);
            }
        }
        for (auto i : large) prob_[i] = 1.0, alias_[i] = i;
        for (auto i : small) prob_[i] = 1.0, alias_[i] = i;
    }

    template <std::uniform_random_bit_generator Rng>
    std::size_t operator()(Rng& rng) const {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double u = unit(rng) * static_cast<double>(prob_.size());
        const auto column = std::min(static_cast<std::size_t>(u), prob_.size() - 1);
        return (u - static_cast<double>(column)) < prob_[column] ? column : alias_[column];
    }

private:
    std::vector<double> prob_;
    std::vector<std::size_t> alias_;
};

/// n with-replacement draws from pi. `rows` are the distinct drawn indices
/// in increasing order with their counts R_i and weights R_i / (N pi_i).
struct SubsamplePlan {
    Eigen::VectorXd probabilities;
    std::vector<Eigen::Index> drawn_indices;
    std::vector<Eigen::Index> rows;
    std::vector<int> counts;
    Eigen::VectorXd weights;
    std::uint64_t seed = 0;

    Eigen::Index draws() const noexcept { return static_cast<Eigen::Index>(drawn_indices.size()); }
};

template <std::uniform_random_bit_generator Rng>
SubsamplePlan draw_with_replacement(const Eigen::VectorXd& pi, Eigen::Index n, Rng& rng, std::uint64_t seed = 0) {
    if (n < 1) throw invalid_argument_error("subsample size must be >= 1");
    const AliasTable table(pi);
    SubsamplePlan plan;
    plan.probabilities = pi;
    plan.seed = seed;
    plan.drawn_indices.resize(static_cast<std::size_t>(n));
    std::map<Eigen::Index, int> tally;
    for (auto& idx : plan.drawn_indices) {
        idx = static_cast<Eigen::Index>(table(rng));
        ++tally[idx];
    }
    const auto N = static_cast<double>(pi.size());
    plan.weights.resize(static_cast<Eigen::Index>(tally.size()));
    Eigen::Index j = 0;
    for (const auto& [row, count] : tally) {
        plan.rows.push_back(row);
        plan.counts.push_back(count);
        plan.weights[j++] = count / (N * pi[row]);
    }
    return plan;
}

inline SubsamplePlan draw_with_replacement(const Eigen::VectorXd& pi, Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return draw_with_replacement(pi, n, rng, seed);
}

/// Weighted CQR problem restricted to the plan's distinct rows.
inline CqrProblem subsample_problem(const DesignMatrix& design, const Eigen::VectorXd& y, const SubsamplePlan& plan,
                                    const std::vector<double>& taus, double lambda) {
    const auto m = static_cast<Eigen::Index>(plan.rows.size());
    Eigen::MatrixXd U(m, design.cols());
    Eigen::VectorXd ys(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        U.row(j) = design.U.row(plan.rows[static_cast<std::size_t>(j)]);
        ys[j] = y[plan.rows[static_cast<std::size_t>(j)]];
    }
    return CqrProblem{std::move(U), std::move(ys), plan.weights, taus, lambda, design.penalty};
}

/// Gaussian-kernel density estimate of the residual distribution at each
/// b_k, Silverman's rule-of-thumb bandwidth.
inline Eigen::VectorXd density_at_quantiles(const Eigen::VectorXd& residuals, const Eigen::VectorXd& points) {
    const Eigen::Index n = residuals.size();
    if (n < 50) throw data_error("density estimation needs at least 50 residuals, got " + std::to_string(n));
    if (!residuals.allFinite()) throw data_error("residuals contain non-finite values");
    const double mean = residuals.mean();
    const double sd = std::sqrt((residuals.array() - mean).square().sum() / static_cast<double>(n - 1));
    std::vector<double> v(residuals.data(), residuals.data() + n);
    const double iqr = sample_quantile(v, 0.75) - sample_quantile(v, 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) throw numerical_error("residuals have zero spread; density is degenerate");
    const double bw = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    Eigen::VectorXd f(points.size());
    for (Eigen::Index k = 0; k < points.size(); ++k) {
        const double s = ((residuals.array() - points[k]) / bw).square().unaryExpr([](double z) { return std::exp(-0.5 * z); }).sum();
        f[k] = std::max(inv_sqrt2pi * s / (static_cast<double>(n) * bw), std::numeric_limits<double>::min());
    }
    return f;
}

/// Sandwich covariance pieces for the subsample estimator.
///
///   V = (1/M) sum_i psi_i psi_i^T / (N^2 pi_i)
///   G = (1/N) sum_i sum_k f(b_k) Ut_ik Ut_ik^T
///   H = G + (lambda / N) blkdiag(D_q, 0)
///
/// M is the interior knot count (at least one), matching the sqrt(n/M)
/// normalization; it cancels in pointwise_sd.
struct SandwichVariance {
    Eigen::MatrixXd V;
    Eigen::MatrixXd G;
    Eigen::MatrixXd H;
    Eigen::VectorXd density;
    double knot_scale = 1.0;
    Eigen::Index subsample_size = 0;
    BSplineBasis basis;

    /// Covariance of theta-hat (the d x d block of H^{-1} V H^{-1} M / n).
    Eigen::MatrixXd theta_covariance() const {
        const Eigen::LLT<Eigen::MatrixXd> llt(H);
        const Eigen::MatrixXd left = llt.solve(V);
        const Eigen::MatrixXd full = llt.solve(left.transpose()).transpose();
        const Eigen::Index d = basis.size();
        return full.topLeftCorner(d, d) * knot_scale / static_cast<double>(subsample_size);
    }

    double pointwise_sd(double t) const {
        const Eigen::MatrixXd cov = theta_covariance();
        const Eigen::VectorXd b = basis.evaluate(t);
        return std::sqrt(std::max(0.0, b.dot(cov * b)));
    }
};

struct VarianceOptions {
    /// Use 1/(N^2 pi_i) - (n-1)/N^2 in V (the finite-sample form of the
    /// conditional variance) instead of 1/(N^2 pi_i).
    bool finite_sample_correction = false;
};

inline SandwichVariance sandwich_variance(const CqrFit& fit, const Eigen::VectorXd& pi, const DesignMatrix& design,
                                          const Eigen::VectorXd& y, const std::vector<double>& taus, double lambda,
                                          const Eigen::VectorXd& density, Eigen::Index subsample_size,
                                          const VarianceOptions& options = {}) {
    const Eigen::Index N = design.rows(), d = design.cols(), K = static_cast<Eigen::Index>(taus.size());
    if (pi.size() != N) throw invalid_argument_error("probability vector length does not match design rows");
    validate_probabilities(pi);
    if (density.size() != K) throw invalid_argument_error("need one density value per quantile level");
    if (subsample_size < 1) throw invalid_argument_error("subsample size must be >= 1");
    if (fit.theta.size() != d || fit.intercepts.size() != K) throw invalid_argument_error("fit dimensions mismatch design");

    const Eigen::VectorXd eps = slope_residuals(design.U, y, fit.theta);
    const Eigen::MatrixXd c = detail::level_coefficients(eps, fit.intercepts, taus);
    const Eigen::VectorXd s = c.rowwise().sum();
    const auto Nd = static_cast<double>(N);
    Eigen::VectorXd rowweight = (Nd * Nd * pi.array()).inverse().matrix();
    if (options.finite_sample_correction)
        rowweight.array() -= static_cast<double>(subsample_size - 1) / (Nd * Nd);

    Eigen::MatrixXd scores(N, d + K);
    if (d > 0) scores.leftCols(d) = (design.U.array().colwise() * s.array()).matrix();
    scores.rightCols(K) = c;

    SandwichVariance out{Eigen::MatrixXd(), Eigen::MatrixXd::Zero(d + K, d + K), Eigen::MatrixXd(), density,
                         static_cast<double>(std::max(1, design.basis.interior_knot_count())), subsample_size,
                         design.basis};
    out.V = scores.transpose() * (scores.array().colwise() * rowweight.array()).matrix() / out.knot_scale;
    out.V = 0.5 * (out.V + out.V.transpose());

    const double fsum = density.sum();
    if (d > 0) {
        out.G.topLeftCorner(d, d) = fsum * design.U.transpose() * design.U / Nd;
        const Eigen::VectorXd ubar = design.U.colwise().mean().transpose();
        for (Eigen::Index k = 0; k < K; ++k) {
            out.G.block(0, d + k, d, 1) = density[k] * ubar;
            out.G.block(d + k, 0, 1, d) = density[k] * ubar.transpose();
        }
    }
    for (Eigen::Index k = 0; k < K; ++k) out.G(d + k, d + k) = density[k];
    out.H = out.G;
    if (lambda != 0.0) {
        const Eigen::MatrixXd D = padded_penalty(design.penalty, static_cast<int>(K));
        out.H += (lambda / Nd) * 0.5 * (D + D.transpose());
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(out.H);
    if (llt.info() != Eigen::Success) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.H, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        throw numerical_error("H is not positive definite (eigenvalues in [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "])",
                              lo > 0 ? hi / lo : std::numeric_limits<double>::infinity());
    }
    return out;
}

/// Uniform-pilot estimate used to build the optimal probabilities.
struct PilotEstimate {
    Eigen::VectorXd theta;
    Eigen::VectorXd intercepts;
    Eigen::Index size = 0;
    SubsamplePlan plan;

    /// Slope residuals y - U theta over all N rows.
    Eigen::VectorXd residuals(const DesignMatrix& design, const Eigen::VectorXd& y) const {
        return slope_residuals(design.U, y, theta);
    }
    /// Slope residuals over the pilot draws, with multiplicity.
    Eigen::VectorXd sample_residuals(const DesignMatrix& design, const Eigen::VectorXd& y) const {
        Eigen::VectorXd r(static_cast<Eigen::Index>(plan.drawn_indices.size()));
        for (std::size_t j = 0; j < plan.drawn_indices.size(); ++j) {
            const auto i = plan.drawn_indices[j];
            r[static_cast<Eigen::Index>(j)] = y[i] - design.U.row(i).dot(theta);
        }
        return r;
    }
};

struct TwoStepConfig {
    Criterion criterion = Criterion::lopt;
    int levels = 9;
    Eigen::Index pilot_size = 0;  // 0 selects max(500, 5 (d + K))
    Eigen::Index subsample_size = 1000;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double uniform_mix = 0.0;
    SolveOptions solver{};
};

struct PhaseTimings {
    double pilot = 0.0;
    double probabilities = 0.0;
    double draw = 0.0;
    double solve = 0.0;

    double total() const noexcept { return pilot + probabilities + draw + solve; }
};

struct TwoStepResult {
    CqrFit fit;
    SubsamplePlan plan;
    std::optional<PilotEstimate> pilot;
    Eigen::VectorXd pilot_density;  // empty unless the criterion needed it
    PhaseTimings timings;
    std::vector<std::string> warnings;
};

inline Eigen::Index default_pilot_size(Eigen::Index dim, int levels) {
    return std::max<Eigen::Index>(500, 5 * (dim + levels));
}

class pilot_error : public std::runtime_error {
public:
    pilot_error(const std::string& what, CqrFit fit) : std::runtime_error(what), fit_(std::move(fit)) {}
    const CqrFit& pilot_fit() const noexcept { return fit_; }

private:
    CqrFit fit_;
};

/// Two-step subsampled estimator. Step 1 fits a uniform pilot of size n0
/// and turns its residuals into L- or A-optimal probabilities; step 2 draws
/// n rows with those probabilities and fits the inverse-probability weighted
/// objective. The uniform criterion skips step 1.
inline TwoStepResult two_step(const DesignMatrix& design, const Eigen::VectorXd& y, const TwoStepConfig& config) {
    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

    const Eigen::Index N = design.rows(), d = design.cols();
    if (y.size() != N) throw invalid_argument_error("response length does not match design rows");
    const auto taus = quantile_grid(config.levels);
    std::mt19937_64 rng(config.seed);
    TwoStepResult out;

    Eigen::VectorXd pi;
    if (config.criterion == Criterion::uniform) {
        const auto t0 = clock::now();
        pi = Eigen::VectorXd::Constant(N, 1.0 / static_cast<double>(N));
        out.timings.probabilities = seconds(t0, clock::now());
    } else {
        const Eigen::Index n0 = config.pilot_size > 0 ? config.pilot_size : default_pilot_size(d, config.levels);
        if (n0 < 10 * (d + config.levels))
            out.warnings.push_back("pilot size " + std::to_string(n0) + " is below 10 (d + K) = " +
                                   std::to_string(10 * (d + config.levels)));
        if (n0 + config.subsample_size > N)
            out.warnings.push_back("pilot plus subsample size exceeds N = " + std::to_string(N));
        const auto t0 = clock::now();
        const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(N, 1.0 / static_cast<double>(N));
        PilotEstimate pilot;
        pilot.size = n0;
        pilot.plan = draw_with_replacement(uniform, n0, rng, config.seed);
        const auto pilot_fit = solve(subsample_problem(design, y, pilot.plan, taus, config.lambda), config.solver);
        if (!pilot_fit.converged || !pilot_fit.theta.allFinite())
            throw pilot_error("pilot fit failed to converge", pilot_fit);
        pilot.theta = pilot_fit.theta;
        pilot.intercepts = pilot_fit.intercepts;
        const auto t1 = clock::now();
        out.timings.pilot = seconds(t0, t1);

        const Eigen::VectorXd eps = pilot.residuals(design, y);
        if (config.criterion == Criterion::lopt) {
            pi = lopt_probabilities(eps, pilot.intercepts, design.U, taus, config.uniform_mix);
        } else {
            out.pilot_density = density_at_quantiles(pilot.sample_residuals(design, y), pilot.intercepts);
            const auto sandwich = sandwich_variance(pilot_fit, uniform, design, y, taus, config.lambda,
                                                    out.pilot_density, n0);
            pi = aopt_probabilities(eps, pilot.intercepts, design.U, taus, sandwich.H, config.uniform_mix);
        }
        out.timings.probabilities = seconds(t1, clock::now());
        out.pilot = std::move(pilot);
    }

    const auto t2 = clock::now();
    out.plan = draw_with_replacement(pi, config.subsample_size, rng, config.seed);
    const auto t3 = clock::now();
    out.timings.draw = seconds(t2, t3);
    out.fit = solve(subsample_problem(design, y, out.plan, taus, config.lambda), config.solver);
    out.timings.solve = seconds(t3, clock::now());
    return out;
}

/// Density estimate for variance estimation: pilot residuals when a pilot
/// exists, else residuals of the subsample fit over its draws.
inline Eigen::VectorXd variance_density(const TwoStepResult& result, const DesignMatrix& design, const Eigen::VectorXd& y) {
    if (result.pilot_density.size() > 0) return result.pilot_density;
    if (result.pilot) return density_at_quantiles(result.pilot->sample_residuals(design, y), result.pilot->intercepts);
    Eigen::VectorXd r(static_cast<Eigen::Index>(result.plan.drawn_indices.size()));
    for (std::size_t j = 0; j < result.plan.drawn_indices.size(); ++j) {
        const auto i = result.plan.drawn_indices[j];
        r[static_cast<Eigen::Index>(j)] = y[i] - design.U.row(i).dot(result.fit.theta);
    }
    return density_at_quantiles(r, result.fit.intercepts);
}

} // namespace fcqr
