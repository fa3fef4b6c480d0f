#pragma once

// Scenario configuration: INI text with sections [model], [grid], [run],
// [policy], [extension], [calibration], [verify] and [io]. Key names are
// listed in the README.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

struct ScenarioConfig {
    std::string text;  // raw input, hashed into the manifest

    // [model]
    std::string family;
    ParamVec params;

    // [grid]
    double u_max = 10.0;
    std::size_t n_points = 11;
    RVec imag_pins{1.0, -1.0};

    // [run]
    std::size_t steps = 10;
    std::size_t horizon = 0;  // 0: steps + 1
    std::size_t paths = 1;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    RVec x0;
    RVec y0;
    std::string theta0 = "self";
    std::size_t snapshot_paths = 0;
    std::size_t snapshot_horizon = 0;
    std::vector<std::size_t> mc_times;

    // [policy]
    std::string policy = "constant";
    double p_switch = 0.5;
    int retries = 32;
    ParamVec second, step_sd, lower, upper;

    // [extension]
    std::string extension_mode = "parametric";
    bool with_variance = false;

    // [calibration]
    std::size_t y_window = 20;
    std::size_t estimation_window = 0;
    bool gaussian_layer = false;
    double margin_tolerance = 1e-8;

    // [verify]
    std::vector<std::string> checks;
    std::vector<std::size_t> verify_times{1, 5, 10};
    std::size_t verify_paths = 20000;
    double tolerance = 1e-9;
    double alpha_scale = 1.0;
    bool flip_rho = false;

    // [io]
    std::string out = "out";
    std::string theta_in;
    std::string x_in;

    std::size_t effective_horizon() const { return horizon == 0 ? steps + 1 : horizon; }
};

namespace config_detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    double number(const std::string& where, const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
            errors_.push_back(where + ": not a finite number '" + s + "'");
            return 0.0;
        }
        return v;
    }

    std::size_t count(const std::string& where, const std::string& s) {
        const double v = number(where, s);
        if (v < 0.0 || v != std::floor(v) || v > 1e15) {
            errors_.push_back(where + ": expected a non-negative integer, got '" + s + "'");
            return 0;
        }
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& where, const std::string& s) {
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        errors_.push_back(where + ": expected true or false, got '" + s + "'");
        return false;
    }

    RVec numbers(const std::string& where, const std::string& s) {
        RVec out;
        for (const auto& item : split_list(s)) out.push_back(number(where, item));
        return out;
    }

    std::vector<std::size_t> counts(const std::string& where, const std::string& s) {
        std::vector<std::size_t> out;
        for (const auto& item : split_list(s)) out.push_back(count(where, item));
        return out;
    }

private:
    std::vector<std::string>& errors_;
};

}  // namespace config_detail

/// Parses and validates; on failure throws Parse (with the line number) or
/// Validation (listing every violation, one per line).
inline ScenarioConfig parse_config(const std::string& text, const std::string& subcommand = "") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorCode::Parse, "line " + std::to_string(e.line()) + ": " + e.message());
    }

    ScenarioConfig c;
    c.text = text;
    std::vector<std::string> errors;
    config_detail::Reader rd(errors);
    const std::set<std::string> sections{"model", "grid", "run", "policy", "extension", "calibration", "verify", "io"};
    bool has_seed = false;

    for (const auto& [section, body] : tree) {
        if (!sections.count(section)) {
            errors.push_back(body.empty() ? "key '" + section + "' outside any section"
                                          : "unknown section [" + section + "]");
            continue;
        }
        for (const auto& [key, node] : body) {
            const std::string v = config_detail::trim(node.data());
            const std::string where = section + "." + key;
            bool known = true;
            if (section == "model") {
                if (key == "family") {
                    c.family = v;
                } else {
                    c.params[key] = rd.number(where, v);
                }
            } else if (section == "grid") {
                if (key == "u_max") c.u_max = rd.number(where, v);
                else if (key == "n_points") c.n_points = rd.count(where, v);
                else if (key == "imag_pins") c.imag_pins = rd.numbers(where, v);
                else known = false;
            } else if (section == "run") {
                if (key == "steps") c.steps = rd.count(where, v);
                else if (key == "horizon") c.horizon = rd.count(where, v);
                else if (key == "paths") c.paths = rd.count(where, v);
                else if (key == "seed") {
                    has_seed = true;
                    const double s = rd.number(where, v);
                    c.seed = static_cast<std::uint64_t>(std::strtoull(v.c_str(), nullptr, 10));
                    if (s < 0 || v.find_first_not_of("0123456789") != std::string::npos)
                        errors.push_back(where + ": seed must be a non-negative integer");
                } else if (key == "threads") c.threads = static_cast<unsigned>(rd.count(where, v));
                else if (key == "x0") c.x0 = rd.numbers(where, v);
                else if (key == "y0") c.y0 = rd.numbers(where, v);
                else if (key == "theta0") c.theta0 = v;
                else if (key == "snapshot_paths") c.snapshot_paths = rd.count(where, v);
                else if (key == "snapshot_horizon") c.snapshot_horizon = rd.count(where, v);
                else if (key == "mc_times") c.mc_times = rd.counts(where, v);
                else known = false;
            } else if (section == "policy") {
                const auto dot = key.find('.');
                const std::string head = key.substr(0, dot);
                if (key == "name") c.policy = v;
                else if (key == "p_switch") c.p_switch = rd.number(where, v);
                else if (key == "retries") c.retries = static_cast<int>(rd.count(where, v));
                else if (dot != std::string::npos && head == "second") c.second[key.substr(dot + 1)] = rd.number(where, v);
                else if (dot != std::string::npos && head == "step_sd") c.step_sd[key.substr(dot + 1)] = rd.number(where, v);
                else if (dot != std::string::npos && head == "lower") c.lower[key.substr(dot + 1)] = rd.number(where, v);
                else if (dot != std::string::npos && head == "upper") c.upper[key.substr(dot + 1)] = rd.number(where, v);
                else known = false;
            } else if (section == "extension") {
                if (key == "mode") c.extension_mode = v;
                else if (key == "with_variance") c.with_variance = rd.flag(where, v);
                else known = false;
            } else if (section == "calibration") {
                if (key == "y_window") c.y_window = rd.count(where, v);
                else if (key == "estimation_window") c.estimation_window = rd.count(where, v);
                else if (key == "gaussian_layer") c.gaussian_layer = rd.flag(where, v);
                else if (key == "margin_tolerance") c.margin_tolerance = rd.number(where, v);
                else known = false;
            } else if (section == "verify") {
                if (key == "checks") c.checks = config_detail::split_list(v);
                else if (key == "times") c.verify_times = rd.counts(where, v);
                else if (key == "paths") c.verify_paths = rd.count(where, v);
                else if (key == "tolerance") c.tolerance = rd.number(where, v);
                else if (key == "alpha_scale") c.alpha_scale = rd.number(where, v);
                else if (key == "flip_rho") c.flip_rho = rd.flag(where, v);
                else known = false;
            } else if (section == "io") {
                if (key == "out") c.out = v;
                else if (key == "theta_in") c.theta_in = v;
                else if (key == "x_in") c.x_in = v;
                else known = false;
            }
            if (!known) errors.push_back("unknown key '" + where + "'");
        }
    }

    // Invariants.
    const auto& known_families = known_models();
    if (c.family.empty()) {
        errors.push_back("model.family is required");
    } else if (std::find(known_families.begin(), known_families.end(), c.family) == known_families.end()) {
        std::string list;
        for (const auto& f : known_families) list += (list.empty() ? "" : ", ") + f;
        errors.push_back("model.family '" + c.family + "' is unknown; known models: " + list);
    } else if (subcommand != "calibrate") {
        try {
            const auto m = make_model(c.family, c.params);
            if (c.y0.empty()) c.y0 = RVec(m.m(), 0.0);
            if (c.x0.empty()) c.x0 = RVec(m.n(), 0.0);
            if (c.y0.size() != m.m()) errors.push_back("run.y0 must have " + std::to_string(m.m()) + " entries");
            if (c.x0.size() != m.n()) errors.push_back("run.x0 must have " + std::to_string(m.n()) + " entries");
        } catch (const Error& e) {
            errors.push_back(std::string("model parameters: ") + e.what());
        }
    }
    if (c.n_points % 2 == 0) errors.push_back("grid.n_points must be odd (symmetric grid containing 0)");
    if (!(c.u_max > 0.0)) errors.push_back("grid.u_max must be positive");
    if (!has_seed && (subcommand == "simulate" || subcommand == "verify"))
        errors.push_back("run.seed must be given explicitly");
    if (c.horizon != 0 && c.horizon < c.steps + 1)
        errors.push_back("run.horizon (" + std::to_string(c.horizon) + ") must be at least run.steps + 1 (" +
                         std::to_string(c.steps + 1) + ")");
    if (c.paths == 0) errors.push_back("run.paths must be positive");
    if (c.threads == 0) errors.push_back("run.threads must be positive");
    for (auto t : c.mc_times)
        if (t == 0 || t > c.steps) errors.push_back("run.mc_times entries must lie in 1..run.steps");
    if (c.policy != "constant" && c.policy != "two_state" && c.policy != "random_walk")
        errors.push_back("policy.name '" + c.policy + "' is unknown; known policies: constant, two_state, random_walk");
    if (c.policy == "two_state" && c.second.empty()) errors.push_back("policy two_state needs second.<param> keys");
    if (c.policy == "random_walk" && c.step_sd.empty()) errors.push_back("policy random_walk needs step_sd.<param> keys");
    if (c.p_switch < 0.0 || c.p_switch > 1.0) errors.push_back("policy.p_switch must lie in [0, 1]");
    if (c.extension_mode != "parametric" && c.extension_mode != "tabulated")
        errors.push_back("extension.mode must be parametric or tabulated");
    if (c.y_window < 2) errors.push_back("calibration.y_window must be at least 2");
    if (!(c.tolerance > 0.0)) errors.push_back("verify.tolerance must be positive");
    if (!(c.alpha_scale > 0.0)) errors.push_back("verify.alpha_scale must be positive");
    if (subcommand == "calibrate") {
        if (c.family != "heston") errors.push_back("calibrate supports model.family = heston only");
        if (c.theta_in.empty()) errors.push_back("io.theta_in is required for calibrate");
        if (c.x_in.empty()) errors.push_back("io.x_in is required for calibrate");
    }
    if (subcommand == "fit-hw" && c.theta_in.empty()) errors.push_back("io.theta_in is required for fit-hw");

    if (!errors.empty()) {
        std::string msg = std::to_string(errors.size()) + " configuration problem(s):";
        for (const auto& e : errors) msg += "\n  - " + e;
        fail(ErrorCode::Validation, msg);
    }
    return c;
}

}  // namespace crcterm
