#pragma once

// File formats and artifact plumbing: surface CSVs, atomic writes,
// checksums and the run manifest.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crcterm/rng.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

#ifndef CRCTERM_VERSION_STRING
#define CRCTERM_VERSION_STRING "0.1.0"
#endif

namespace crcterm::io {

namespace fs = std::filesystem;

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Write to a temporary sibling and rename over the target.
inline void write_atomic(const fs::path& p, const std::string& content) {
    const fs::path tmp = p.parent_path() / ("." + p.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, p, ec);
    require(!ec, ErrorCode::Io, "cannot rename into '" + p.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Surface CSV
// ---------------------------------------------------------------------------

inline std::string surface_header(std::size_t dim, bool with_t) {
    std::string h = with_t ? "t," : "";
    for (std::size_t j = 1; j <= dim; ++j) h += "re_u_" + std::to_string(j) + ",";
    for (std::size_t j = 1; j <= dim; ++j) h += "im_u_" + std::to_string(j) + ",";
    return h + "x,re_theta,im_theta\n";
}

inline void append_surface_rows(std::string& out, const CharSurface& s, std::optional<double> t) {
    const UGrid& grid = s.grid();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::string prefix = t ? fmt17(*t) + "," : "";
        for (const auto& c : grid.point(g)) prefix += fmt17(c.real()) + ",";
        for (const auto& c : grid.point(g)) prefix += fmt17(c.imag()) + ",";
        for (std::size_t x = 0; x < s.horizon(); ++x) {
            const Complex v = s(g, x);
            out += prefix + std::to_string(x) + "," + fmt17(v.real()) + "," + fmt17(v.imag()) + "\n";
        }
    }
}

inline std::string surface_csv(const CharSurface& s) {
    std::string out = surface_header(s.grid().dim(), false);
    append_surface_rows(out, s, std::nullopt);
    return out;
}

inline std::string surface_sequence_csv(const std::vector<CharSurface>& seq) {
    require(!seq.empty(), ErrorCode::InvalidArgument, "surface_sequence_csv: empty sequence");
    std::string out = surface_header(seq.front().grid().dim(), true);
    for (std::size_t t = 0; t < seq.size(); ++t) append_surface_rows(out, seq[t], static_cast<double>(t));
    return out;
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    require(end != s.c_str() && *end == '\0', ErrorCode::Parse,
            "line " + std::to_string(line) + ": not a number '" + s + "'");
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> line_numbers;

    std::size_t column(const std::string& name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        fail(ErrorCode::Parse, "missing column '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline CsvTable read_numeric_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        require(cells.size() == t.header.size(), ErrorCode::Parse,
                "line " + std::to_string(n) + ": expected " + std::to_string(t.header.size()) + " fields");
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_double(c, n));
        t.rows.push_back(std::move(row));
        t.line_numbers.push_back(n);
    }
    require(!t.header.empty(), ErrorCode::Parse, "empty CSV");
    return t;
}

}  // namespace detail

/// Reads one surface, or a sequence when a `t` column is present. The grid
/// is rebuilt from the listed points in order of appearance.
inline std::vector<CharSurface> read_surfaces_csv(const std::string& text) {
    const auto tab = detail::read_numeric_csv(text);
    std::size_t dim = 0;
    while (tab.has("re_u_" + std::to_string(dim + 1))) ++dim;
    require(dim >= 1, ErrorCode::Parse, "surface CSV: no re_u_1 column");
    const bool with_t = tab.has("t");
    const std::size_t cx = tab.column("x"), cre = tab.column("re_theta"), cim = tab.column("im_theta");
    std::vector<std::size_t> cu_re, cu_im;
    for (std::size_t j = 1; j <= dim; ++j) {
        cu_re.push_back(tab.column("re_u_" + std::to_string(j)));
        cu_im.push_back(tab.column("im_u_" + std::to_string(j)));
    }
    const std::size_t ct = with_t ? tab.column("t") : 0;
    require(!tab.rows.empty(), ErrorCode::Parse, "surface CSV: no data rows");

    // Group rows by t, then by point, preserving order.
    std::vector<double> times;
    std::map<double, std::vector<std::size_t>> by_t;
    for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        const double t = with_t ? tab.rows[r][ct] : 0.0;
        if (!by_t.count(t)) times.push_back(t);
        by_t[t].push_back(r);
    }
    std::vector<CVec> points;
    std::size_t horizon = 0;
    const auto& first = by_t[times.front()];
    for (auto r : first) {
        CVec u(dim);
        for (std::size_t j = 0; j < dim; ++j) u[j] = Complex(tab.rows[r][cu_re[j]], tab.rows[r][cu_im[j]]);
        if (points.empty() || points.back() != u) points.push_back(u);
        horizon = std::max(horizon, static_cast<std::size_t>(tab.rows[r][cx]) + 1);
    }
    std::vector<RVec> real, imag;
    for (const auto& u : points) {
        bool is_real = true, is_imag = true;
        for (const auto& c : u) {
            is_real = is_real && c.imag() == 0.0;
            is_imag = is_imag && c.real() == 0.0;
        }
        RVec p(dim);
        if (is_real) {
            require(imag.empty(), ErrorCode::Parse, "surface CSV: real points must precede imaginary pins");
            for (std::size_t j = 0; j < dim; ++j) p[j] = u[j].real();
            real.push_back(p);
        } else {
            require(is_imag, ErrorCode::Parse, "surface CSV: grid points must be real or purely imaginary");
            for (std::size_t j = 0; j < dim; ++j) p[j] = u[j].imag();
            imag.push_back(p);
        }
    }
    const auto grid = make_grid(UGrid(dim, real, imag));
    std::vector<CharSurface> out;
    for (double t : times) {
        const auto& rows = by_t[t];
        require(rows.size() == grid->size() * horizon, ErrorCode::Parse,
                "surface CSV: time " + fmt17(t) + " does not have grid x horizon rows");
        CVec vals(grid->size() * horizon);
        std::vector<bool> seen(vals.size(), false);
        for (auto r : rows) {
            CVec u(dim);
            for (std::size_t j = 0; j < dim; ++j) u[j] = Complex(tab.rows[r][cu_re[j]], tab.rows[r][cu_im[j]]);
            const auto g = grid->find(u, 0.0);
            const double xv = tab.rows[r][cx];
            require(g.has_value() && xv >= 0 && xv < static_cast<double>(horizon), ErrorCode::Parse,
                    "line " + std::to_string(tab.line_numbers[r]) + ": point or maturity off the grid");
            const std::size_t j = *g * horizon + static_cast<std::size_t>(xv);
            require(!seen[j], ErrorCode::Parse, "line " + std::to_string(tab.line_numbers[r]) + ": duplicate entry");
            seen[j] = true;
            vals[j] = Complex(tab.rows[r][cre], tab.rows[r][cim]);
        }
        out.emplace_back(grid, horizon, std::move(vals), t);
    }
    return out;
}

/// Two-column series (t, value) keyed by header name.
inline RVec read_series_csv(const std::string& text, const std::string& column) {
    const auto tab = detail::read_numeric_csv(text);
    const std::size_t c = tab.column(column);
    RVec out;
    for (const auto& r : tab.rows) out.push_back(r[c]);
    return out;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

/// Output directory with a RUNNING marker while work is in progress and a
/// FAILED marker if it ends without `commit`.
class RunDir {
public:
    RunDir(fs::path dir, std::string subcommand, std::string config_text, std::uint64_t seed)
        : dir_(std::move(dir)), subcommand_(std::move(subcommand)), config_hash_(hex64(fnv1a(config_text))),
          seed_(seed), start_(std::chrono::steady_clock::now()) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        require(!ec, ErrorCode::Io, "cannot create '" + dir_.string() + "': " + ec.message());
        fs::remove(dir_ / "FAILED", ec);
        write_atomic(dir_ / "RUNNING", subcommand_ + "\n");
    }

    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    ~RunDir() {
        if (!committed_) mark_failed("aborted");
    }

    const fs::path& path() const { return dir_; }

    void write(const std::string& name, const std::string& content) {
        write_atomic(dir_ / name, content);
        outputs_[name] = {content.size(), hex64(fnv1a(content))};
    }

    void add_check(const std::string& name, bool pass, double residual, double tolerance) {
        checks_.push_back({{"name", name}, {"pass", pass}, {"residual", residual}, {"tolerance", tolerance}});
    }

    void mark_failed(const std::string& why) {
        committed_ = true;
        std::error_code ec;
        try {
            write_atomic(dir_ / "FAILED", why + "\n");
        } catch (const Error&) {
        }
        fs::remove(dir_ / "RUNNING", ec);
    }

    /// Writes the manifest last and clears the RUNNING marker.
    void commit(int exit_code) {
        nlohmann::json m;
        m["tool"] = "crcterm";
        m["version"] = CRCTERM_VERSION_STRING;
        m["subcommand"] = subcommand_;
        m["config_hash"] = config_hash_;
        m["seed"] = seed_;
        m["rng"] = rng::kAlgorithmName;
        m["exit_code"] = exit_code;
        m["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        nlohmann::json outs = nlohmann::json::object();
        for (const auto& [name, info] : outputs_) outs[name] = {{"bytes", info.first}, {"fnv1a", info.second}};
        m["outputs"] = outs;
        m["checks"] = checks_;
        write_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
        committed_ = true;
        std::error_code ec;
        fs::remove(dir_ / "RUNNING", ec);
    }

private:
    fs::path dir_;
    std::string subcommand_;
    std::string config_hash_;
    std::uint64_t seed_;
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, std::pair<std::size_t, std::string>> outputs_;
    nlohmann::json checks_ = nlohmann::json::array();
    bool committed_ = false;
};

}  // namespace crcterm::io
