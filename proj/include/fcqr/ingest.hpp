#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "fcqr/design.hpp"
#include "fcqr/errors.hpp"
#include "fcqr/io.hpp"

namespace fcqr {

/// Column mapping for hourly long-format records. Either `timestamp` names a
/// column holding "YYYY-MM-DD HH[:MM[:SS]]" (a 'T' separator also works) or,
/// when empty, the date comes from the year/month/day/hour columns.
struct LongRecordSchema {
    std::string timestamp;
    std::string year = "year";
    std::string month = "month";
    std::string day = "day";
    std::string hour = "hour";
    std::string value = "CO";
    std::string response = "PM2.5";
    std::string group;  // optional, e.g. "station"
    int first_hour = 0;
    int last_hour = 22;
};

struct IngestReport {
    std::size_t rows = 0;
    std::size_t malformed_rows = 0;
    std::size_t days_seen = 0;
    std::size_t days_kept = 0;
    std::size_t incomplete_days = 0;
};

struct IngestResult {
    FunctionalDataset dataset;
    std::vector<std::string> day_labels;  // "group/YYYY-MM-DD" or "YYYY-MM-DD"
    IngestReport report;
};

namespace detail {

inline bool is_missing_token(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

inline std::optional<int> parse_int(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        // Accept integral values written as reals, e.g. "7.0".
        const auto d = io::try_parse_double(s);
        if (!d || *d != std::floor(*d) || std::abs(*d) > 1e9) return std::nullopt;
        return static_cast<int>(*d);
    }
    return v;
}

// (year, month, day, hour) from "YYYY-MM-DD HH[:MM[:SS]]".
inline std::optional<std::array<int, 4>> parse_timestamp(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    if (s.size() < 13 || s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T')) return std::nullopt;
    const auto y = parse_int(s.substr(0, 4)), m = parse_int(s.substr(5, 2)), d = parse_int(s.substr(8, 2)),
               h = parse_int(s.substr(11, 2));
    if (!y || !m || !d || !h) return std::nullopt;
    return std::array<int, 4>{*y, *m, *d, *h};
}

} // namespace detail

/// Groups hourly rows into (group, calendar day) curves. A day is kept when
/// every hour in [first_hour, last_hour] has a finite curve value and at
/// least one finite response value exists; its response is the day's
/// maximum. Hours are rescaled to [0, 1].
inline IngestResult ingest_long(std::string_view text, const LongRecordSchema& schema) {
    if (schema.first_hour < 0 || schema.last_hour > 23 || schema.last_hour - schema.first_hour < 1)
        throw invalid_argument_error("curve hours must satisfy 0 <= first < last <= 23");
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw data_error("input is empty");
    const auto header = io::split_csv_line(line);
    auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
        if (name.empty()) return std::nullopt;
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            if (required) throw data_error("input has no column '" + name + "'");
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto c_value = *column(schema.value, true), c_resp = *column(schema.response, true);
    const auto c_group = column(schema.group, true);
    std::optional<std::size_t> c_ts, c_y, c_m, c_d, c_h;
    if (!schema.timestamp.empty()) {
        c_ts = column(schema.timestamp, true);
    } else {
        c_y = column(schema.year, true);
        c_m = column(schema.month, true);
        c_d = column(schema.day, true);
        c_h = column(schema.hour, true);
    }

    const int hours = schema.last_hour - schema.first_hour + 1;
    struct Day {
        std::vector<double> curve;
        std::vector<bool> seen;
        double response = -std::numeric_limits<double>::infinity();
        bool has_response = false;
    };
    using Key = std::tuple<std::string, int, int, int>;
    std::map<Key, Day> days;
    IngestResult result;
    bool any_response = false;

    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++result.report.rows;
        std::vector<std::string> f;
        try {
            f = io::split_csv_line(line);
        } catch (const data_error&) {
            ++result.report.malformed_rows;
            continue;
        }
        if (f.size() != header.size()) {
            ++result.report.malformed_rows;
            continue;
        }
        std::optional<std::array<int, 4>> stamp;
        if (c_ts) {
            stamp = detail::parse_timestamp(f[*c_ts]);
        } else {
            const auto y = detail::parse_int(f[*c_y]), m = detail::parse_int(f[*c_m]), d = detail::parse_int(f[*c_d]),
                       h = detail::parse_int(f[*c_h]);
            if (y && m && d && h) stamp = std::array<int, 4>{*y, *m, *d, *h};
        }
        if (!stamp || (*stamp)[1] < 1 || (*stamp)[1] > 12 || (*stamp)[2] < 1 || (*stamp)[2] > 31 || (*stamp)[3] < 0 ||
            (*stamp)[3] > 23) {
            ++result.report.malformed_rows;
            continue;
        }
        const auto [y, m, d, h] = *stamp;
        auto& day = days[Key{c_group ? f[*c_group] : std::string(), y, m, d}];
        if (day.curve.empty()) {
            day.curve.assign(static_cast<std::size_t>(hours), 0.0);
            day.seen.assign(static_cast<std::size_t>(hours), false);
        }
        bool malformed = false;
        if (!detail::is_missing_token(f[c_resp])) {
            if (const auto r = io::try_parse_double(f[c_resp])) {
                day.response = std::max(day.response, *r);
                day.has_response = any_response = true;
            } else {
                malformed = true;
            }
        }
        if (h >= schema.first_hour && h <= schema.last_hour && !detail::is_missing_token(f[c_value])) {
            if (const auto v = io::try_parse_double(f[c_value])) {
                const auto slot = static_cast<std::size_t>(h - schema.first_hour);
                day.curve[slot] = *v;
                day.seen[slot] = true;
            } else {
                malformed = true;
            }
        }
        if (malformed) ++result.report.malformed_rows;
    }
    if (!any_response) throw data_error("response column '" + schema.response + "' has no usable values");

    result.report.days_seen = days.size();
    std::vector<const Day*> kept;
    for (const auto& [key, day] : days) {
        const bool complete = day.has_response && std::all_of(day.seen.begin(), day.seen.end(), [](bool b) { return b; });
        if (!complete) {
            ++result.report.incomplete_days;
            continue;
        }
        kept.push_back(&day);
        char date[16];
        std::snprintf(date, sizeof date, "%04d-%02d-%02d", std::get<1>(key), std::get<2>(key), std::get<3>(key));
        result.day_labels.push_back(std::get<0>(key).empty() ? std::string(date) : std::get<0>(key) + "/" + date);
    }
    if (kept.empty()) throw data_error("no day has a complete curve and a response value");
    result.report.days_kept = kept.size();

    auto& ds = result.dataset;
    ds.grid = linspace(0.0, 1.0, static_cast<std::size_t>(hours));
    ds.curves.resize(static_cast<Eigen::Index>(kept.size()), hours);
    ds.y.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
        for (int j = 0; j < hours; ++j) ds.curves(static_cast<Eigen::Index>(i), j) = kept[i]->curve[static_cast<std::size_t>(j)];
        ds.y[static_cast<Eigen::Index>(i)] = kept[i]->response;
    }
    return result;
}

} // namespace fcqr
