#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fcqr/basis.hpp"
#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/quadrature.hpp"
#include "fcqr/solver.hpp"
#include "fcqr/subsample.hpp"

namespace fcqr::io {

using json = nlohmann::ordered_json;

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
    if (!std::isfinite(v)) throw data_error("refusing to write a non-finite value");
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> try_parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline double parse_double(std::string_view s, std::string_view context = "value") {
    if (auto v = try_parse_double(s)) return *v;
    throw data_error("cannot parse " + std::string(context) + " '" + std::string(s) + "' as a finite number");
}

/// Splits one RFC-4180 record. Quoted fields may contain commas and doubled
/// quotes; embedded line breaks are not supported.
inline std::vector<std::string> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> out;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && field.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else {
            field += c;
        }
    }
    if (quoted) throw data_error("unterminated quoted CSV field");
    out.push_back(std::move(field));
    return out;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw io_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string() + " for reading");
    return in;
}

inline std::string read_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    auto out = open_output(path);
    out << text;
    if (!out) throw io_error("failed writing " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw data_error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset CSV: header t_1,...,t_G,y then one row per sample. The grid is
// uniform on [0,1] unless a sidecar JSON {"grid": [...]} supplies it.

inline bool is_uniform_grid(const std::vector<double>& grid) {
    const auto u = linspace(0.0, 1.0, grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j)
        if (grid[j] != u[j]) return false;
    return true;
}

inline std::string dataset_csv(const FunctionalDataset& data) {
    std::string s;
    const auto G = data.curves.cols();
    for (Eigen::Index j = 0; j < G; ++j) s += "t_" + std::to_string(j + 1) + ",";
    s += "y\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < G; ++j) s += format_double(data.curves(i, j)) + ",";
        s += format_double(data.y[i]) + "\n";
    }
    return s;
}

/// Writes the CSV and, for non-uniform grids, a sidecar next to it
/// (`<stem>.grid.json`). Returns the sidecar path when one was written.
inline std::optional<std::filesystem::path> write_dataset(const std::filesystem::path& path, const FunctionalDataset& data) {
    validate_grid(data.grid);
    write_text(path, dataset_csv(data));
    if (is_uniform_grid(data.grid)) return std::nullopt;
    auto sidecar = path;
    sidecar.replace_extension(".grid.json");
    json j;
    j["grid"] = data.grid;
    write_json(sidecar, j);
    return sidecar;
}

inline FunctionalDataset parse_dataset(std::string_view text, std::optional<std::vector<double>> grid = std::nullopt) {
    FunctionalDataset out;
    std::vector<std::vector<double>> rows;
    std::size_t pos = 0, line_no = 0, width = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (line_no == 1) {
            width = fields.size();
            if (width < 3) throw data_error("dataset header needs at least two grid columns and y");
            for (std::size_t j = 0; j + 1 < width; ++j)
                if (fields[j] != "t_" + std::to_string(j + 1))
                    throw data_error("dataset header column " + std::to_string(j + 1) + " should be t_" + std::to_string(j + 1));
            if (fields.back() != "y") throw data_error("dataset header must end with column y");
            continue;
        }
        if (fields.size() != width)
            throw data_error("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(width));
        std::vector<double> row(width);
        for (std::size_t j = 0; j < width; ++j)
            row[j] = parse_double(fields[j], "field " + std::to_string(j + 1) + " on line " + std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    if (width == 0) throw data_error("dataset is empty");
    if (rows.empty()) throw data_error("dataset has a header but no rows");
    const auto G = static_cast<Eigen::Index>(width - 1);
    out.grid = grid ? *grid : linspace(0.0, 1.0, static_cast<std::size_t>(G));
    if (static_cast<Eigen::Index>(out.grid.size()) != G) throw data_error("grid sidecar length does not match dataset columns");
    validate_grid(out.grid);
    out.curves.resize(static_cast<Eigen::Index>(rows.size()), G);
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < G; ++j) out.curves(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        out.y[static_cast<Eigen::Index>(i)] = rows[i].back();
    }
    return out;
}

/// Reads a dataset CSV; picks up `<stem>.grid.json` automatically when
/// present and no explicit grid file is given.
inline FunctionalDataset read_dataset(const std::filesystem::path& path, std::optional<std::filesystem::path> grid_file = std::nullopt) {
    if (!grid_file) {
        auto sidecar = path;
        sidecar.replace_extension(".grid.json");
        if (std::filesystem::exists(sidecar)) grid_file = sidecar;
    }
    std::optional<std::vector<double>> grid;
    if (grid_file) {
        const json j = read_json(*grid_file);
        if (!j.contains("grid") || !j["grid"].is_array()) throw data_error("grid sidecar must hold an array 'grid'");
        grid = j["grid"].get<std::vector<double>>();
    }
    return parse_dataset(read_file(path), grid);
}

// ---------------------------------------------------------------------------
// Fits, curves and plans.

inline json fit_json(const CqrFit& fit, const BSplineBasis& basis, const std::vector<double>& taus, double lambda, int penalty_order) {
    json j;
    j["degree"] = basis.degree();
    j["interior_knots"] = basis.interior_knot_count();
    j["penalty_order"] = penalty_order;
    j["lambda"] = lambda;
    j["taus"] = taus;
    j["theta"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
    j["intercepts"] = std::vector<double>(fit.intercepts.data(), fit.intercepts.data() + fit.intercepts.size());
    j["objective"] = fit.objective;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["stages"] = fit.stages;
    j["subgradient_norm"] = fit.gradient_norm;
    j["intercepts_monotone"] = fit.intercepts_monotone;
    return j;
}

constexpr std::size_t curve_points = 201;

/// t,beta[,sd] on a uniform 201-point grid.
inline std::string curve_csv(const BSplineBasis& basis, const Eigen::VectorXd& theta, const SandwichVariance* sd = nullptr) {
    std::string s = sd ? "t,beta,sd\n" : "t,beta\n";
    std::optional<Eigen::MatrixXd> cov;
    if (sd) cov = sd->theta_covariance();
    for (double t : linspace(0.0, 1.0, curve_points)) {
        s += format_double(t) + "," + format_double(evaluate_curve(basis, theta, t));
        if (sd) {
            const Eigen::VectorXd b = basis.evaluate(t);
            s += "," + format_double(std::sqrt(std::max(0.0, b.dot(*cov * b))));
        }
        s += "\n";
    }
    return s;
}

struct Curve {
    std::vector<double> t;
    Eigen::VectorXd beta;
};

inline Curve read_curve(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw data_error(path.string() + " is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "t" || header[1] != "beta")
        throw data_error(path.string() + " is not a curve file (expected header t,beta)");
    Curve c;
    std::vector<double> beta;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() < 2) throw data_error("short row in " + path.string());
        c.t.push_back(parse_double(f[0], "t"));
        beta.push_back(parse_double(f[1], "beta"));
    }
    c.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    return c;
}

/// One row per distinct drawn index: index,count,probability,weight.
inline std::string plan_csv(const SubsamplePlan& plan) {
    std::string s = "index,count,probability,weight\n";
    for (std::size_t j = 0; j < plan.rows.size(); ++j) {
        const auto i = plan.rows[j];
        s += std::to_string(i) + "," + std::to_string(plan.counts[j]) + "," + format_double(plan.probabilities[i]) + "," +
             format_double(plan.weights[static_cast<Eigen::Index>(j)]) + "\n";
    }
    return s;
}

} // namespace fcqr::io
