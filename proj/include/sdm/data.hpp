#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "sdm/error.hpp"
#include "sdm/rng.hpp"
#include "sdm/types.hpp"

namespace sdm {

struct PointSet {
    PointBatch points; ///< N x 2
    std::string generator = "external";
    std::uint64_t seed = 0;
    double jitter = 0.0;
    std::array<double, 2> mean{0.0, 0.0}; ///< per-coordinate stats removed by normalization
    std::array<double, 2> std{1.0, 1.0};

    Eigen::Index size() const { return points.rows(); }
};

/// Rescales each column to zero mean and unit (population) std; returns the
/// removed statistics.
inline std::array<std::array<double, 2>, 2> normalize_columns(PointBatch& p) {
    if (p.cols() != 2) throw ArgumentError("normalize_columns expects two columns");
    std::array<std::array<double, 2>, 2> stats{};
    const auto n = static_cast<double>(p.rows());
    for (int c = 0; c < 2; ++c) {
        const double m = p.col(c).sum() / n;
        p.col(c).array() -= m;
        const double s = std::sqrt(p.col(c).squaredNorm() / n);
        if (!(s > 0.0)) throw NumericError("cannot normalize a constant column");
        p.col(c) /= s;
        // One more centering pass removes the residual rounding of the first.
        p.col(c).array() -= p.col(c).sum() / n;
        stats[0][static_cast<std::size_t>(c)] = m;
        stats[1][static_cast<std::size_t>(c)] = s;
    }
    return stats;
}

inline constexpr double swirl_theta_min = 0.5 * std::numbers::pi;
inline constexpr double swirl_theta_max = 3.0 * std::numbers::pi;

/// Un-normalized point on the spiral arm at angle theta.
inline std::array<double, 2> swirl_curve(double theta) {
    return {theta * std::cos(theta) / swirl_theta_max, theta * std::sin(theta) / swirl_theta_max};
}

/// Single-arm Archimedean spiral. theta = theta_min + (theta_max - theta_min) sqrt(u)
/// makes the density along the arm roughly uniform in arc length. Gaussian
/// jitter is added before normalizing to zero mean, unit std.
inline PointSet generate_swirl(Eigen::Index n, std::uint64_t seed, double jitter) {
    if (n < 1) throw ArgumentError("generate_swirl: n must be >= 1");
    if (!(jitter >= 0.0)) throw ArgumentError("generate_swirl: jitter must be >= 0");
    Rng rng = Rng::derive(seed, Stream::data);
    PointSet ps;
    ps.points.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double theta = swirl_theta_min + (swirl_theta_max - swirl_theta_min) * std::sqrt(rng.uniform());
        const auto p = swirl_curve(theta);
        ps.points(i, 0) = p[0];
        ps.points(i, 1) = p[1];
        if (jitter > 0.0) {
            ps.points(i, 0) += jitter * rng.normal();
            ps.points(i, 1) += jitter * rng.normal();
        }
    }
    if (n > 1) {
        const auto stats = normalize_columns(ps.points);
        ps.mean = stats[0];
        ps.std = stats[1];
    }
    ps.generator = "swirl";
    ps.seed = seed;
    ps.jitter = jitter;
    return ps;
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

namespace detail {

inline double parse_double(std::string_view s, const std::string& path, std::size_t line) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ParseError(path, line, "not a number: '" + std::string(s) + "'");
    return v;
}

inline std::string meta_path(const std::string& path) { return path + ".meta"; }

} // namespace detail

inline void write_points_csv(const PointBatch& p, const std::string& path) {
    if (p.cols() != 2) throw ArgumentError("points CSV needs exactly two columns");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "x,y\n";
    for (Eigen::Index i = 0; i < p.rows(); ++i) out << format_double(p(i, 0)) << ',' << format_double(p(i, 1)) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline PointBatch read_points_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,y") throw ParseError(path, 1, "expected header 'x,y', got '" + line + "'");
    std::vector<double> xs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw ParseError(path, lineno, "expected two comma-separated values");
        const std::string_view sv(line);
        const double x = detail::parse_double(sv.substr(0, comma), path, lineno);
        const double y = detail::parse_double(sv.substr(comma + 1), path, lineno);
        if (!std::isfinite(x) || !std::isfinite(y)) throw ParseError(path, lineno, "non-finite coordinate");
        xs.push_back(x);
        xs.push_back(y);
    }
    if (xs.empty()) throw ParseError(path, lineno, "no points");
    PointBatch p(static_cast<Eigen::Index>(xs.size() / 2), 2);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        p(i, 0) = xs[static_cast<std::size_t>(2 * i)];
        p(i, 1) = xs[static_cast<std::size_t>(2 * i + 1)];
    }
    return p;
}

/// Writes `path` (CSV) and `path.meta` (key=value lines).
inline void save_points(const PointSet& ps, const std::string& path) {
    write_points_csv(ps.points, path);
    const std::string mpath = detail::meta_path(path);
    std::ofstream meta(mpath, std::ios::binary);
    if (!meta) throw IoError("cannot open '" + mpath + "' for writing");
    meta << "generator=" << ps.generator << '\n'
         << "n=" << ps.size() << '\n'
         << "seed=" << ps.seed << '\n'
         << "jitter=" << format_double(ps.jitter) << '\n'
         << "mean_x=" << format_double(ps.mean[0]) << '\n'
         << "mean_y=" << format_double(ps.mean[1]) << '\n'
         << "std_x=" << format_double(ps.std[0]) << '\n'
         << "std_y=" << format_double(ps.std[1]) << '\n';
    if (!meta) throw IoError("failed writing '" + mpath + "'");
}

/// Reads the CSV and, when present, its metadata sidecar.
inline PointSet load_points(const std::string& path) {
    PointSet ps;
    ps.points = read_points_csv(path);
    const std::string mpath = detail::meta_path(path);
    std::ifstream meta(mpath, std::ios::binary);
    if (!meta) return ps;
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(mpath, lineno, "expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto num = [&](const char* key, double fallback) {
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : detail::parse_double(it->second, mpath, 0);
    };
    if (auto it = kv.find("generator"); it != kv.end()) ps.generator = it->second;
    if (auto it = kv.find("seed"); it != kv.end()) {
        const auto& v = it->second;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), ps.seed);
        if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ParseError(mpath, 0, "bad seed '" + v + "'");
    }
    ps.jitter = num("jitter", 0.0);
    ps.mean = {num("mean_x", 0.0), num("mean_y", 0.0)};
    ps.std = {num("std_x", 1.0), num("std_y", 1.0)};
    return ps;
}

} // namespace sdm
