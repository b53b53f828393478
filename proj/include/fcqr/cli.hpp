#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fcqr/basis.hpp"
#include "fcqr/benchmark.hpp"
#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/hash.hpp"
#include "fcqr/ingest.hpp"
#include "fcqr/io.hpp"
#include "fcqr/simgen.hpp"
#include "fcqr/solver.hpp"
#include "fcqr/subsample.hpp"

namespace fcqr::cli {

namespace fs = std::filesystem;
using json = io::json;

inline constexpr const char* version = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration: one flat JSON object. Command-line flags are merged into it
// before a command runs, so the snapshot in the manifest is what ran.

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        // simulation
        "N", "grid_size", "coefficients", "rho", "errors", "sigma", "beta", "J", "seed",
        // model
        "K", "p", "M", "q", "lambda", "rule",
        // subsampling
        "method", "n", "n0", "uniform_mix", "variance_correction",
        // benchmark
        "n_grid", "methods", "reps", "threads",
        // data files
        "dataset", "grid",
        // ingestion
        "input", "timestamp", "year", "month", "day", "hour", "value", "response", "group", "first_hour", "last_hour",
        // eIMSE
        "full_curve", "runs"};
    return keys;
}

inline void check_keys(const json& config) {
    if (!config.is_object()) throw invalid_argument_error("configuration must be a JSON object");
    for (const auto& [key, value] : config.items())
        if (!known_keys().count(key)) throw invalid_argument_error("unknown configuration key '" + key + "'");
}

inline json load_config(const std::optional<fs::path>& path) {
    if (!path) return json::object();
    json config;
    try {
        config = json::parse(io::read_file(*path));
    } catch (const json::parse_error& e) {
        throw invalid_argument_error("malformed configuration " + path->string() + ": " + e.what());
    }
    check_keys(config);
    return config;
}

template <class T>
T value(const json& config, const std::string& key, T fallback) {
    if (!config.contains(key) || config[key].is_null()) return fallback;
    try {
        return config[key].get<T>();
    } catch (const json::exception&) {
        throw invalid_argument_error("configuration key '" + key + "' has the wrong type");
    }
}

template <class T>
T required(const json& config, const std::string& key) {
    if (!config.contains(key) || config[key].is_null())
        throw invalid_argument_error("configuration key '" + key + "' is required");
    return value<T>(config, key, T{});
}

inline std::uint64_t seed_of(const json& config) {
    const auto& v = config.contains("seed") ? config["seed"] : json();
    if (v.is_null()) return 1;
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw invalid_argument_error("seed must be a non-negative integer");
}

inline SimConfig sim_config(const json& config) {
    SimConfig s;
    s.N = value<Eigen::Index>(config, "N", s.N);
    s.grid_size = value<int>(config, "grid_size", s.grid_size);
    s.coefficients = parse_coefficient_distribution(value<std::string>(config, "coefficients", "gaussian"));
    s.rho = value<double>(config, "rho", s.rho);
    s.errors = parse_error_distribution(value<std::string>(config, "errors", "gaussian"));
    s.sigma = value<double>(config, "sigma", s.sigma);
    s.beta_id = value<int>(config, "beta", s.beta_id);
    s.generator_basis_count = value<int>(config, "J", s.generator_basis_count);
    s.seed = seed_of(config);
    s.validate();
    return s;
}

struct ModelConfig {
    int levels = 9;
    int degree = 3;
    int interior_knots = 0;
    int penalty_order = 2;
    double lambda = 0.0;
    QuadratureRule rule = QuadratureRule::trapezoid;

    BSplineBasis basis(Eigen::Index N) const {
        return BSplineBasis(degree, interior_knots > 0 ? interior_knots : default_interior_knots(N));
    }
};

inline ModelConfig model_config(const json& config) {
    ModelConfig m;
    m.levels = value<int>(config, "K", m.levels);
    m.degree = value<int>(config, "p", m.degree);
    m.interior_knots = value<int>(config, "M", m.interior_knots);
    m.penalty_order = value<int>(config, "q", m.penalty_order);
    m.lambda = value<double>(config, "lambda", m.lambda);
    m.rule = parse_quadrature_rule(value<std::string>(config, "rule", "trapezoid"));
    if (m.levels < 1) throw invalid_argument_error("K must be >= 1");
    if (m.degree < 0) throw invalid_argument_error("p must be >= 0");
    if (m.interior_knots < 0) throw invalid_argument_error("M must be >= 0 (0 selects the default)");
    if (m.penalty_order < 0 || m.penalty_order > m.degree) throw invalid_argument_error("q must lie in [0, p]");
    if (!(m.lambda >= 0.0)) throw invalid_argument_error("lambda must be >= 0");
    return m;
}

// ---------------------------------------------------------------------------
// Run manifest. Output paths are stored relative to the output directory.
// `payload_sha1` hashes the manifest without its timings, without the
// hashes of outputs that record timings and without the thread count, so
// reruns of the same inputs and configuration reproduce it exactly.

class Manifest {
public:
    Manifest(std::string command, json config, fs::path out_dir) : out_dir_(std::move(out_dir)) {
        j_["command"] = std::move(command);
        j_["version"] = version;
        j_["seed"] = seed_of(config);
        j_["config"] = std::move(config);
        j_["inputs"] = json::array();
        j_["outputs"] = json::array();
        j_["warnings"] = json::array();
        j_["diagnostics"] = json::array();
        j_["status"] = "ok";
        j_["timings"] = json::object();
    }

    void input(const fs::path& path) {
        j_["inputs"].push_back({{"path", path.generic_string()}, {"git_sha1", git_blob_sha1(io::read_file(path))}});
    }

    /// Writes `text` to out_dir/name and records it.
    void output(const std::string& name, std::string_view text, bool timed = false) {
        io::write_text(out_dir_ / name, text);
        j_["outputs"].push_back({{"path", name}, {"git_sha1", git_blob_sha1(text)}, {"timed", timed}});
    }

    void output_json(const std::string& name, json body) {
        body["manifest"] = "manifest.json";
        output(name, body.dump(2) + "\n");
    }

    void timing(const std::string& phase, double seconds) { j_["timings"][phase] = std::max(0.0, seconds); }
    void warning(const std::string& text) { j_["warnings"].push_back(text); }
    void diagnostic(const std::string& text) { j_["diagnostics"].push_back(text); }
    void status(const std::string& s) { j_["status"] = s; }
    json& extra(const std::string& key) { return j_[key]; }
    const json& body() const noexcept { return j_; }

    std::string payload_sha1() const {
        json p = j_;
        p.erase("timings");
        p["config"].erase("threads");
        for (auto& o : p["outputs"])
            if (o["timed"].get<bool>()) o.erase("git_sha1");
        return sha1_hex(p.dump());
    }

    json write() {
        j_["payload_sha1"] = payload_sha1();
        io::write_json(out_dir_ / "manifest.json", j_);
        return j_;
    }

private:
    json j_;
    fs::path out_dir_;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline FunctionalDataset load_dataset(const json& config, Manifest& manifest) {
    const fs::path path = required<std::string>(config, "dataset");
    std::optional<fs::path> grid;
    if (config.contains("grid") && !config["grid"].is_null()) grid = fs::path(config["grid"].get<std::string>());
    manifest.input(path);
    auto sidecar = path;
    sidecar.replace_extension(".grid.json");
    if (grid) manifest.input(*grid);
    else if (fs::exists(sidecar)) manifest.input(sidecar);
    return io::read_dataset(path, grid);
}

inline void record_fit(Manifest& manifest, const CqrFit& fit) {
    for (const auto& d : fit.diagnostics) manifest.diagnostic(d);
    if (!fit.intercepts_monotone) manifest.warning("estimated intercepts are not monotone in tau");
    if (!fit.converged) manifest.status("nonconverged");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each writes its files plus manifest.json into out_dir and
// returns the manifest.

inline json simulate(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("simulate", config, out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = generate_dataset(sim_config(config));
    manifest.timing("generate", detail::seconds_since(t0));
    const auto t1 = std::chrono::steady_clock::now();
    manifest.output("dataset.csv", io::dataset_csv(data));
    manifest.timing("write", detail::seconds_since(t1));
    return manifest.write();
}

inline json fit_full(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("fit-full", config, out_dir);
    const auto data = detail::load_dataset(config, manifest);
    const auto model = model_config(config);
    const auto basis = model.basis(data.size());
    const auto taus = quantile_grid(model.levels);

    const auto t0 = std::chrono::steady_clock::now();
    const auto design = build_design(data, basis, model.penalty_order, model.rule);
    manifest.timing("design", detail::seconds_since(t0));
    const auto t1 = std::chrono::steady_clock::now();
    const auto fit = solve(CqrProblem::full(design.U, data.y, taus, model.lambda, design.penalty));
    manifest.timing("solve", detail::seconds_since(t1));
    manifest.timing("full_fit", detail::seconds_since(t0));
    detail::record_fit(manifest, fit);

    manifest.output_json("fit.json", io::fit_json(fit, basis, taus, model.lambda, model.penalty_order));
    manifest.output("curve.csv", io::curve_csv(basis, fit.theta));
    manifest.extra("interior_knots") = basis.interior_knot_count();
    auto out = manifest.write();
    if (!fit.converged) throw convergence_error("full-data fit did not converge; see " + (out_dir / "manifest.json").string());
    return out;
}

inline json subsample(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("subsample", config, out_dir);
    const auto data = detail::load_dataset(config, manifest);
    const auto model = model_config(config);
    const auto basis = model.basis(data.size());
    const auto taus = quantile_grid(model.levels);

    TwoStepConfig tc;
    tc.criterion = parse_criterion(value<std::string>(config, "method", "lopt"));
    tc.levels = model.levels;
    tc.pilot_size = value<Eigen::Index>(config, "n0", 0);
    tc.subsample_size = value<Eigen::Index>(config, "n", 1000);
    tc.lambda = model.lambda;
    tc.seed = seed_of(config);
    tc.uniform_mix = value<double>(config, "uniform_mix", 0.0);
    if (tc.pilot_size < 0) throw invalid_argument_error("n0 must be >= 0 (0 selects the default)");
    if (tc.subsample_size < 1) throw invalid_argument_error("n must be >= 1");

    const auto t0 = std::chrono::steady_clock::now();
    const auto design = build_design(data, basis, model.penalty_order, model.rule);
    manifest.timing("design", detail::seconds_since(t0));
    const auto result = two_step(design, data.y, tc);
    manifest.timing("pilot", result.timings.pilot);
    manifest.timing("probabilities", result.timings.probabilities);
    manifest.timing("draw", result.timings.draw);
    manifest.timing("solve", result.timings.solve);
    manifest.timing("subsample_total", result.timings.total());
    for (const auto& w : result.warnings) manifest.warning(w);
    detail::record_fit(manifest, result.fit);

    std::optional<SandwichVariance> variance;
    try {
        const auto density = variance_density(result, design, data.y);
        VarianceOptions vo;
        vo.finite_sample_correction = value<bool>(config, "variance_correction", false);
        variance = sandwich_variance(result.fit, result.plan.probabilities, design, data.y, taus, model.lambda, density,
                                     tc.subsample_size, vo);
    } catch (const std::exception& e) {
        manifest.warning(std::string("pointwise standard errors unavailable: ") + e.what());
    }

    json fit = io::fit_json(result.fit, basis, taus, model.lambda, model.penalty_order);
    fit["method"] = std::string(to_string(tc.criterion));
    fit["n"] = tc.subsample_size;
    if (result.pilot) fit["n0"] = result.pilot->size;
    manifest.output_json("fit.json", fit);
    manifest.output("plan.csv", io::plan_csv(result.plan));
    manifest.output("curve.csv", io::curve_csv(basis, result.fit.theta, variance ? &*variance : nullptr));
    manifest.extra("interior_knots") = basis.interior_knot_count();
    auto out = manifest.write();
    if (!result.fit.converged)
        throw convergence_error("subsample fit did not converge; see " + (out_dir / "manifest.json").string());
    return out;
}

inline BenchmarkConfig benchmark_config(const json& config) {
    BenchmarkConfig b;
    const auto model = model_config(config);
    b.levels = model.levels;
    b.degree = model.degree;
    b.interior_knots = model.interior_knots;
    b.penalty_order = model.penalty_order;
    b.lambda = model.lambda;
    b.rule = model.rule;
    b.seed = seed_of(config);
    b.replications = value<int>(config, "reps", 500);
    b.pilot_size = value<Eigen::Index>(config, "n0", 0);
    b.threads = value<unsigned>(config, "threads", 0u);
    if (config.contains("n_grid")) b.n_grid = value<std::vector<Eigen::Index>>(config, "n_grid", {});
    else if (config.contains("n")) b.n_grid = {value<Eigen::Index>(config, "n", 1000)};
    if (config.contains("methods")) {
        b.methods.clear();
        for (const auto& m : value<std::vector<std::string>>(config, "methods", {})) b.methods.push_back(parse_criterion(m));
    } else if (config.contains("method")) {
        b.methods = {parse_criterion(value<std::string>(config, "method", "lopt"))};
    }
    if (!config.contains("dataset")) b.sim = sim_config(config);
    b.validate();
    return b;
}

inline std::string results_csv(const BenchmarkResult& r) {
    std::string s = "method,n,replication,imse,seconds,status\n";
    for (const auto& row : r.rows) {
        s += std::string(to_string(row.method)) + "," + std::to_string(row.n) + "," + std::to_string(row.replication) + ",";
        s += (std::isfinite(row.imse) ? io::format_double(row.imse) : std::string("NA")) + ",";
        s += io::format_double(row.seconds) + "," + io::csv_field(row.status) + "\n";
    }
    return s;
}

inline std::string summary_csv(const BenchmarkResult& r) {
    std::string s = "method,n,mean_imse,mean_seconds,completed,failed\n";
    for (const auto& c : r.summary) {
        s += std::string(to_string(c.method)) + "," + std::to_string(c.n) + ",";
        s += (c.completed ? io::format_double(c.mean_imse) : std::string("NA")) + ",";
        s += (c.completed ? io::format_double(c.mean_seconds) : std::string("NA")) + ",";
        s += std::to_string(c.completed) + "," + std::to_string(c.failed) + "\n";
    }
    return s;
}

inline json benchmark(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("benchmark", config, out_dir);
    auto b = benchmark_config(config);
    if (config.contains("dataset")) b.data = detail::load_dataset(config, manifest);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = run_benchmark(b);
    manifest.timing("benchmark", detail::seconds_since(t0));
    if (b.data) manifest.timing("full_fit", result.full_fit_seconds);
    manifest.extra("interior_knots") = result.interior_knots;
    manifest.extra("reference") = b.data ? "full-data fit" : "true slope";

    int failed = 0;
    for (const auto& row : result.rows)
        if (!row.ok()) ++failed;
    if (failed > 0)
        manifest.warning(std::to_string(failed) + " of " + std::to_string(result.rows.size()) + " replications did not complete");
    std::string untimed;
    for (const auto& row : result.rows)
        untimed += std::to_string(row.replication) + "," + std::string(to_string(row.method)) + "," + std::to_string(row.n) +
                   "," + (std::isfinite(row.imse) ? io::format_double(row.imse) : std::string("NA")) + "," + row.status + "\n";
    manifest.extra("results_sha1_without_seconds") = sha1_hex(untimed);
    manifest.output("results.csv", results_csv(result), true);
    manifest.output("summary.csv", summary_csv(result), true);
    auto out = manifest.write();
    if (failed == static_cast<int>(result.rows.size())) throw convergence_error("every benchmark replication failed");
    return out;
}

inline LongRecordSchema schema_config(const json& config) {
    LongRecordSchema s;
    s.timestamp = value<std::string>(config, "timestamp", s.timestamp);
    s.year = value<std::string>(config, "year", s.year);
    s.month = value<std::string>(config, "month", s.month);
    s.day = value<std::string>(config, "day", s.day);
    s.hour = value<std::string>(config, "hour", s.hour);
    s.value = value<std::string>(config, "value", s.value);
    s.response = value<std::string>(config, "response", s.response);
    s.group = value<std::string>(config, "group", s.group);
    s.first_hour = value<int>(config, "first_hour", s.first_hour);
    s.last_hour = value<int>(config, "last_hour", s.last_hour);
    return s;
}

inline json ingest_long(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("ingest-long", config, out_dir);
    const fs::path input = required<std::string>(config, "input");
    manifest.input(input);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = fcqr::ingest_long(io::read_file(input), schema_config(config));
    manifest.timing("ingest", detail::seconds_since(t0));
    const auto& r = result.report;
    manifest.extra("report") = {{"rows", r.rows},
                                {"malformed_rows", r.malformed_rows},
                                {"days_seen", r.days_seen},
                                {"days_kept", r.days_kept},
                                {"incomplete_days", r.incomplete_days}};
    if (r.malformed_rows > 0) manifest.warning(std::to_string(r.malformed_rows) + " malformed rows were skipped");
    manifest.output("dataset.csv", io::dataset_csv(result.dataset));
    std::string days = "row,day\n";
    for (std::size_t i = 0; i < result.day_labels.size(); ++i)
        days += std::to_string(i + 1) + "," + io::csv_field(result.day_labels[i]) + "\n";
    manifest.output("days.csv", days);
    return manifest.write();
}

struct EimseCell {
    std::string method;
    Eigen::Index n = 0;
    int runs = 0;
    double eimse = 0.0;
};

/// Groups subsample runs by (method, n) and scores each group against the
/// full-data curve.
inline std::vector<EimseCell> eimse_table(const io::Curve& full, const std::vector<std::pair<std::string, Eigen::Index>>& keys,
                                          const std::vector<io::Curve>& curves) {
    if (keys.size() != curves.size()) throw invalid_argument_error("one key per curve is required");
    if (curves.empty()) throw invalid_argument_error("no subsample runs given");
    std::map<std::pair<std::string, Eigen::Index>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (curves[i].t != full.t) throw data_error("curve grid of run " + std::to_string(i + 1) + " does not match the full fit");
        groups[keys[i]].push_back(i);
    }
    std::vector<EimseCell> out;
    for (const auto& [key, members] : groups) {
        Eigen::MatrixXd est(static_cast<Eigen::Index>(members.size()), full.beta.size());
        for (std::size_t r = 0; r < members.size(); ++r) est.row(static_cast<Eigen::Index>(r)) = curves[members[r]].beta.transpose();
        out.push_back({key.first, key.second, static_cast<int>(members.size()), imse_on_grid(full.t, est, full.beta)});
    }
    return out;
}

inline json eimse(const json& config, const fs::path& out_dir) {
    check_keys(config);
    Manifest manifest("eimse", config, out_dir);
    const fs::path full_path = required<std::string>(config, "full_curve");
    const auto runs = required<std::vector<std::string>>(config, "runs");
    if (runs.empty()) throw invalid_argument_error("no subsample runs given");
    manifest.input(full_path);
    const auto full = io::read_curve(full_path);
    std::vector<std::pair<std::string, Eigen::Index>> keys;
    std::vector<io::Curve> curves;
    for (const auto& dir : runs) {
        const fs::path m = fs::path(dir) / "manifest.json", c = fs::path(dir) / "curve.csv";
        const auto run = io::read_json(m);
        if (run.value("command", "") != "subsample") throw data_error(m.string() + " is not a subsample manifest");
        const auto& rc = run["config"];
        keys.emplace_back(std::string(to_string(parse_criterion(value<std::string>(rc, "method", "lopt")))),
                          value<Eigen::Index>(rc, "n", 1000));
        manifest.input(c);
        curves.push_back(io::read_curve(c));
    }
    const auto table = eimse_table(full, keys, curves);

    std::string csv = "method,n,runs,eimse\n";
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> trend;
    for (const auto& cell : table) {
        csv += cell.method + "," + std::to_string(cell.n) + "," + std::to_string(cell.runs) + "," + io::format_double(cell.eimse) + "\n";
        trend[cell.method].first.push_back(static_cast<double>(cell.n));
        trend[cell.method].second.push_back(cell.eimse);
    }
    json rho = json::object();
    for (const auto& [method, series] : trend) {
        if (series.first.size() < 2) continue;
        const double r = spearman(series.first, series.second);
        rho[method] = std::isfinite(r) ? json(r) : json(nullptr);
        if (!(r < 0.0)) manifest.warning("eIMSE of " + method + " does not decrease with n (Spearman rho " + std::to_string(r) + ")");
    }
    manifest.extra("spearman_rho") = rho;
    manifest.output("eimse.csv", csv);
    return manifest.write();
}

/// Exit status for an exception escaping a command.
inline int exit_code(const std::exception& e) {
    if (dynamic_cast<const invalid_argument_error*>(&e)) return 2;
    if (dynamic_cast<const data_error*>(&e)) return 3;
    if (dynamic_cast<const domain_error*>(&e)) return 4;
    if (dynamic_cast<const numerical_error*>(&e)) return 5;
    if (dynamic_cast<const io_error*>(&e)) return 6;
    if (dynamic_cast<const convergence_error*>(&e)) return 7;
    if (dynamic_cast<const pilot_error*>(&e)) return 7;
    return 1;
}

} // namespace fcqr::cli
