#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcqr/cli.hpp"

namespace {

using fcqr::cli::json;

// Flags shared by every subcommand. Values given on the command line take
// precedence over the --config file.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<long> n, n0, reps;
    std::optional<int> K, p, M, q, threads;
    std::optional<double> lambda;
    std::optional<std::string> dataset, grid, input, full_curve, rule;
    std::vector<long> n_grid;
    std::vector<std::string> methods, runs, sets;
    std::string out_dir = "fcqr-out";
};

void add_flags(CLI::App& app, Flags& f) {
    app.add_option("--config", f.config, "JSON configuration file");
    app.add_option("--seed", f.seed, "Root random seed");
    app.add_option("--method", f.method, "Subsampling method: unif, lopt or aopt");
    app.add_option("--n", f.n, "Subsample size");
    app.add_option("--n0", f.n0, "Pilot size (0 = max(500, 5(d+K)))");
    app.add_option("--K", f.K, "Number of quantile levels");
    app.add_option("--p", f.p, "Spline degree");
    app.add_option("--M", f.M, "Interior knots (0 = default rule)");
    app.add_option("--q", f.q, "Penalty derivative order");
    app.add_option("--lambda", f.lambda, "Roughness penalty weight");
    app.add_option("--reps", f.reps, "Benchmark replications");
    app.add_option("--out-dir", f.out_dir, "Output directory")->capture_default_str();
    app.add_option("--dataset", f.dataset, "Dataset CSV");
    app.add_option("--grid", f.grid, "Grid sidecar JSON for a non-uniform dataset grid");
    app.add_option("--rule", f.rule, "Quadrature rule: trapezoid or simpson");
    app.add_option("--threads", f.threads, "Benchmark worker threads (overrides FCQR_THREADS)");
    app.add_option("--set", f.sets, "Extra configuration entry key=value (value parsed as JSON, else as a string)");
}

json merged_config(const Flags& f) {
    json c = fcqr::cli::load_config(f.config ? std::optional<std::filesystem::path>(*f.config) : std::nullopt);
    auto put = [&](const char* key, const auto& v) {
        if (v) c[key] = *v;
    };
    put("seed", f.seed);
    put("method", f.method);
    put("n", f.n);
    put("n0", f.n0);
    put("reps", f.reps);
    put("K", f.K);
    put("p", f.p);
    put("M", f.M);
    put("q", f.q);
    put("threads", f.threads);
    put("lambda", f.lambda);
    put("dataset", f.dataset);
    put("grid", f.grid);
    put("input", f.input);
    put("full_curve", f.full_curve);
    put("rule", f.rule);
    if (!f.n_grid.empty()) c["n_grid"] = f.n_grid;
    if (!f.methods.empty()) c["methods"] = f.methods;
    if (!f.runs.empty()) c["runs"] = f.runs;
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw fcqr::invalid_argument_error("--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
        c[key] = json::accept(text) ? json::parse(text) : json(text);
    }
    fcqr::cli::check_keys(c);
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal subsampling for functional composite quantile regression"};
    app.require_subcommand(1);
    app.set_version_flag("--version", fcqr::cli::version);

    Flags flags;
    using Command = std::function<json(const json&, const std::filesystem::path&)>;
    Command command;
    auto sub = [&](const char* name, const char* help, Command run) {
        auto* s = app.add_subcommand(name, help);
        add_flags(*s, flags);
        s->callback([&command, run] { command = run; });
        return s;
    };

    sub("simulate", "Generate a simulated functional dataset", fcqr::cli::simulate);
    sub("fit-full", "Fit the full-data CQR estimator", fcqr::cli::fit_full);
    sub("subsample", "Run the two-step subsampled estimator", fcqr::cli::subsample);
    auto* bench = sub("benchmark", "Replicated IMSE and timing comparison of subsampling methods", fcqr::cli::benchmark);
    bench->add_option("--n-grid", flags.n_grid, "Subsample sizes to sweep");
    bench->add_option("--methods", flags.methods, "Methods to compare");
    auto* ingest = sub("ingest-long", "Turn hourly long-format records into a dataset", fcqr::cli::ingest_long);
    ingest->add_option("--input", flags.input, "Long-format CSV");
    auto* eimse = sub("eimse", "Score subsample runs against a full-data fit", fcqr::cli::eimse);
    eimse->add_option("--full-curve", flags.full_curve, "curve.csv of the full-data fit");
    eimse->add_option("runs", flags.runs, "Output directories of subsample runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const json config = merged_config(flags);
        const json manifest = command(config, flags.out_dir);
        std::cout << (std::filesystem::path(flags.out_dir) / "manifest.json").string() << "\n";
        for (const auto& w : manifest["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return fcqr::cli::exit_code(e);
    }
}
