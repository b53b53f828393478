#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fcqr/basis.hpp"
#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/parallel.hpp"
#include "fcqr/simgen.hpp"
#include "fcqr/solver.hpp"
#include "fcqr/subsample.hpp"

namespace fcqr {

/// Replicated comparison of subsampling methods. Without `data` each
/// replication draws a fresh dataset from `sim` (seed root ^ r) and IMSE is
/// taken against the true slope; with `data` every replication reuses that
/// dataset and the reference is the full-data fit (eIMSE).
struct BenchmarkConfig {
    SimConfig sim{};
    std::optional<FunctionalDataset> data;
    std::vector<Eigen::Index> n_grid{600, 800, 1000, 1200, 1400, 1600};
    std::vector<Criterion> methods{Criterion::uniform, Criterion::lopt};
    int replications = 500;
    int levels = 9;
    int degree = 3;
    int interior_knots = 0;  // 0 selects default_interior_knots(N)
    int penalty_order = 2;
    double lambda = 0.0;
    Eigen::Index pilot_size = 0;
    QuadratureRule rule = QuadratureRule::trapezoid;
    std::uint64_t seed = 1;
    unsigned threads = 0;  // 0 selects thread_count()
    SolveOptions solver{};

    void validate() const {
        if (n_grid.empty()) throw invalid_argument_error("the subsample size grid is empty");
        for (auto n : n_grid)
            if (n < 1) throw invalid_argument_error("subsample sizes must be >= 1");
        if (methods.empty()) throw invalid_argument_error("no subsampling method selected");
        if (replications < 1) throw invalid_argument_error("replications must be >= 1");
        if (levels < 1) throw invalid_argument_error("K must be >= 1");
        if (degree < 0) throw invalid_argument_error("spline degree must be >= 0");
        if (interior_knots < 0) throw invalid_argument_error("interior knot count must be >= 0");
        if (penalty_order < 0 || penalty_order > degree) throw invalid_argument_error("penalty order must lie in [0, p]");
        if (!(lambda >= 0.0)) throw invalid_argument_error("lambda must be >= 0");
        if (!data) sim.validate();
    }
};

struct BenchmarkRow {
    Criterion method = Criterion::uniform;
    Eigen::Index n = 0;
    int replication = 0;
    double imse = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
    std::string status = "ok";

    bool ok() const noexcept { return status == "ok"; }
};

struct BenchmarkSummary {
    Criterion method = Criterion::uniform;
    Eigen::Index n = 0;
    double mean_imse = std::numeric_limits<double>::quiet_NaN();
    double mean_seconds = std::numeric_limits<double>::quiet_NaN();
    int completed = 0;
    int failed = 0;
};

struct BenchmarkResult {
    std::vector<BenchmarkRow> rows;  // ordered by replication, n, method
    std::vector<BenchmarkSummary> summary;  // ordered by method, n
    int interior_knots = 0;
    double full_fit_seconds = 0.0;  // eIMSE reference fit, 0 for simulations

    const BenchmarkSummary& cell(Criterion method, Eigen::Index n) const {
        for (const auto& s : summary)
            if (s.method == method && s.n == n) return s;
        throw invalid_argument_error("no summary cell for the requested method and n");
    }
};

/// Seed for the subsampling draws of replication r at size n. Methods share
/// it so that each (r, n) comparison is paired.
constexpr std::uint64_t subsample_seed(std::uint64_t root, int replication, Eigen::Index n) noexcept {
    std::uint64_t z = replication_seed(root, static_cast<std::uint64_t>(replication)) + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(n + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::vector<BenchmarkSummary> summarize(const std::vector<BenchmarkRow>& rows, const std::vector<Criterion>& methods,
                                               const std::vector<Eigen::Index>& n_grid) {
    std::vector<BenchmarkSummary> out;
    for (auto m : methods) {
        for (auto n : n_grid) {
            BenchmarkSummary s{m, n};
            double imse_sum = 0.0, sec_sum = 0.0;
            for (const auto& r : rows) {
                if (r.method != m || r.n != n) continue;
                if (!r.ok()) {
                    ++s.failed;
                    continue;
                }
                ++s.completed;
                imse_sum += r.imse;
                sec_sum += r.seconds;
            }
            if (s.completed > 0) {
                s.mean_imse = imse_sum / s.completed;
                s.mean_seconds = sec_sum / s.completed;
            }
            out.push_back(s);
        }
    }
    return out;
}

inline BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
    config.validate();
    const auto taus = quantile_grid(config.levels);
    const Eigen::Index N = config.data ? config.data->size() : config.sim.N;
    BenchmarkResult result;
    result.interior_knots = config.interior_knots > 0 ? config.interior_knots : default_interior_knots(N);
    const BSplineBasis basis(config.degree, result.interior_knots);

    // Shared design and reference curve for the real-data protocol.
    std::optional<DesignMatrix> shared_design;
    std::function<double(double)> reference;
    if (config.data) {
        shared_design = build_design(*config.data, basis, config.penalty_order, config.rule);
        const auto t0 = std::chrono::steady_clock::now();
        const auto full = solve(CqrProblem::full(shared_design->U, config.data->y, taus, config.lambda, shared_design->penalty),
                                config.solver);
        result.full_fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!full.converged) throw convergence_error("full-data reference fit did not converge");
        reference = spline_curve(basis, full.theta);
    } else {
        reference = true_beta(config.sim.beta_id);
    }

    const std::size_t per_rep = config.n_grid.size() * config.methods.size();
    std::vector<std::vector<BenchmarkRow>> slots(static_cast<std::size_t>(config.replications));
    auto replicate = [&](std::size_t r_index) {
        const int r = static_cast<int>(r_index);
        auto& rows = slots[r_index];
        rows.reserve(per_rep);
        std::optional<DesignMatrix> local_design;
        const Eigen::VectorXd* y = nullptr;
        FunctionalDataset generated;
        std::string setup_error;
        try {
            if (config.data) {
                y = &config.data->y;
            } else {
                SimConfig sim = config.sim;
                sim.seed = replication_seed(config.sim.seed, static_cast<std::uint64_t>(r));
                generated = generate_dataset(sim);
                local_design = build_design(generated, basis, config.penalty_order, config.rule);
                y = &generated.y;
            }
        } catch (const std::exception& e) {
            setup_error = std::string("error: ") + e.what();
        }
        const DesignMatrix* design = config.data ? &*shared_design : (local_design ? &*local_design : nullptr);
        for (auto n : config.n_grid) {
            for (auto m : config.methods) {
                BenchmarkRow row{m, n, r};
                if (!setup_error.empty()) {
                    row.status = setup_error;
                    rows.push_back(row);
                    continue;
                }
                try {
                    TwoStepConfig tc;
                    tc.criterion = m;
                    tc.levels = config.levels;
                    tc.pilot_size = config.pilot_size;
                    tc.subsample_size = n;
                    tc.lambda = config.lambda;
                    tc.seed = subsample_seed(config.seed, r, n);
                    tc.solver = config.solver;
                    const auto res = two_step(*design, *y, tc);
                    row.seconds = res.timings.total();
                    row.imse = root_integrated_squared_error(spline_curve(basis, res.fit.theta), reference);
                    if (!res.fit.converged) row.status = "nonconverged";
                } catch (const std::exception& e) {
                    row.status = std::string("error: ") + e.what();
                }
                rows.push_back(row);
            }
        }
    };
    parallel_for(slots.size(), replicate, config.threads > 0 ? config.threads : thread_count());

    result.rows.reserve(slots.size() * per_rep);
    for (auto& s : slots)
        for (auto& row : s) result.rows.push_back(std::move(row));
    result.summary = summarize(result.rows, config.methods, config.n_grid);
    return result;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw invalid_argument_error("spearman needs two equal-length series of length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Eigen::Index>(rx.size())),
        b(ry.data(), static_cast<Eigen::Index>(ry.size()));
    const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
    const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return ca.dot(cb) / den;
}

} // namespace fcqr
