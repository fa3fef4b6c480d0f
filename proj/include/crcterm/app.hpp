#pragma once

// Subcommands of the crcterm tool. Each returns an exit code and writes its
// artifacts into a RunDir; `run_command` maps failures onto the exit-code
// table (0 ok, 2 configuration, 3 numeric, 4 check failure).

#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/calibration.hpp"
#include "crcterm/config.hpp"
#include "crcterm/crc.hpp"
#include "crcterm/hull_white.hpp"
#include "crcterm/io.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/verify.hpp"

namespace crcterm::app {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericFailure = 3, kCheckFailure = 4 };

inline int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Parse:
        case ErrorCode::Validation:
        case ErrorCode::Io: return kConfigError;
        default: return kNumericFailure;
    }
}

namespace detail {

inline GridPtr config_grid(const ScenarioConfig& c) {
    return make_grid(UGrid::symmetric_1d(c.u_max, c.n_points, c.imag_pins));
}

/// Initial surface: the model's own ("self") or the first surface of a CSV.
inline CharSurface initial_surface(const ScenarioConfig& c, const AffineModel& model, std::size_t horizon) {
    if (c.theta0 == "self") return affine_forward_surface(model, c.y0, config_grid(c), horizon);
    auto seq = io::read_surfaces_csv(io::read_file(c.theta0));
    return seq.front();
}

inline ParameterPolicy make_policy(const ScenarioConfig& c, const AffineModel& model) {
    if (c.policy == "two_state") {
        ParamVec second = model.params();
        for (const auto& [k, v] : c.second) second[k] = v;
        return two_state_policy(model.params(), second, c.p_switch, c.retries);
    }
    if (c.policy == "random_walk") return random_walk_policy(c.step_sd, c.lower, c.upper, c.retries);
    return constant_policy();
}

inline void report(std::ostream& out, std::string& text, const CheckReport& r, io::RunDir& dir) {
    const std::string line = r.line();
    out << line << "\n";
    text += line + "\n";
    dir.add_check(r.name, r.pass, r.max_residual, r.tolerance);
}

inline CheckReport leaf_deviation(const PathEnsemble& ens, FlowCache& cache, const std::string& family) {
    CheckReport r("affine_reduction");
    for (std::size_t p = 0; p < ens.paths.size(); ++p) {
        const auto& rec = ens.paths[p];
        for (std::size_t s = 0; s < rec.snapshots.size(); ++s) {
            ParamVec a;
            for (std::size_t k = 0; k < ens.param_names.size(); ++k)
                a[ens.param_names[k]] = rec.a[s * ens.param_names.size() + k];
            const auto model = make_model(family, a);
            const auto& th = rec.snapshots[s];
            const auto table = cache.get(model, th.horizon());
            RVec Y(ens.m);
            for (std::size_t i = 0; i < ens.m; ++i) Y[i] = ens.Y(p, s, i);
            r.max_residual = std::max(r.max_residual, max_abs_diff(th, affine_forward_surface(*table, Y, th.horizon())));
        }
    }
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int run_riccati(const ScenarioConfig& c, io::RunDir& dir, std::ostream& log) {
    const auto model = make_model(c.family, c.params);
    const auto grid = detail::config_grid(c);
    const std::size_t H = c.effective_horizon();
    std::string csv = "model,re_u,im_u,re_v,im_v,k,re_phi,im_phi";
    for (std::size_t j = 1; j <= model.m(); ++j) csv += ",re_psi_" + std::to_string(j) + ",im_psi_" + std::to_string(j);
    csv += "\n";
    for (std::size_t g = 0; g < grid->size(); ++g) {
        auto [u, v] = model.pins(grid->point(g));
        const auto flow = riccati_flow(model, u, v, H);
        const Complex u0 = u.empty() ? Complex(0.0, 0.0) : u[0];
        const Complex v0 = v.empty() ? Complex(0.0, 0.0) : v[0];
        for (std::size_t k = 0; k <= H; ++k) {
            csv += model.family() + "," + io::fmt17(u0.real()) + "," + io::fmt17(u0.imag()) + "," +
                   io::fmt17(v0.real()) + "," + io::fmt17(v0.imag()) + "," + std::to_string(k) + "," +
                   io::fmt17(flow.phi[k].real()) + "," + io::fmt17(flow.phi[k].imag());
            for (const auto& p : flow.psi[k]) csv += "," + io::fmt17(p.real()) + "," + io::fmt17(p.imag());
            csv += "\n";
        }
    }
    dir.write("riccati.csv", csv);
    log << "riccati: " << grid->size() << " pins, horizon " << H << "\n";
    return kOk;
}

inline int run_fit_hw(const ScenarioConfig& c, io::RunDir& dir, std::ostream& log) {
    const auto model = make_model(c.family, c.params);
    const CharSurface nu0 = c.theta_in == "self"
                                ? affine_forward_surface(model, c.y0, detail::config_grid(c), c.effective_horizon())
                                : io::read_surfaces_csv(io::read_file(c.theta_in)).front();
    const auto& grid = nu0.grid_ptr();
    const std::size_t H = nu0.horizon();
    const auto table = make_flow_table(model, grid, H);
    std::string text;
    bool ok = true;

    HullWhiteExtension ext = c.extension_mode == "tabulated"
                                 ? extract_mu_tabulated(model, table, nu0, c.y0)
                                 : [&] {
                                       auto pins = imaginary_pins(*grid);
                                       require(!pins.empty(), ErrorCode::PinMissing, "fit-hw: grid has no imaginary pins");
                                       if (!c.with_variance) pins.resize(1);
                                       return extract_mu_parametric(model, table, nu0, c.y0, pins, c.with_variance);
                                   }();
    const auto rebuilt = extended_forward_surface(table, c.y0, ext.mu, H);

    std::string csv;
    CheckReport repro("reproduction");
    repro.tolerance = c.tolerance;
    if (ext.mu.parametric()) {
        csv = "k,c,q\n";
        const auto& law = ext.mu.shift_law();
        for (std::size_t k = 0; k < law.c.size(); ++k)
            csv += std::to_string(k) + "," + io::fmt17(law.c[k]) + "," + io::fmt17(law.q[k]) + "\n";
        // reproduced at the pins used
        auto pins = imaginary_pins(*grid);
        if (!c.with_variance) pins.resize(1);
        for (auto g : pins)
            for (std::size_t t = 1; t <= H; ++t)
                repro.max_residual =
                    std::max(repro.max_residual, std::abs(cumulate(rebuilt, t)[g] - cumulate(nu0, t)[g]));
        repro.note = "at the imaginary pins";
    } else {
        csv = "k,re_u_1,im_u_1,re_mu,im_mu\n";
        const auto& tab = ext.mu.table();
        for (std::size_t k = 0; k < tab.values.size(); ++k)
            for (std::size_t g = 0; g < grid->size(); ++g)
                csv += std::to_string(k) + "," + io::fmt17(grid->scalar(g).real()) + "," +
                       io::fmt17(grid->scalar(g).imag()) + "," + io::fmt17(tab.values[k][g].real()) + "," +
                       io::fmt17(tab.values[k][g].imag()) + "\n";
        repro.max_residual = max_abs_diff(rebuilt, nu0);
        repro.note = "whole grid";
    }
    repro.pass = repro.max_residual <= c.tolerance;
    dir.write("extension.csv", csv);
    detail::report(log, text, repro, dir);

    const auto val = validate_inc(ext.mu, *grid);
    std::string vtext = "valid=" + std::string(val.valid ? "true" : "false") +
                        "\nmin_eigenvalue=" + io::fmt17(val.min_eigenvalue) + "\ntolerance=" + io::fmt17(val.tolerance) +
                        "\nnormalization_defect=" + io::fmt17(val.normalization_defect) +
                        "\nhermitian_defect=" + io::fmt17(val.hermitian_defect) + "\n";
    for (std::size_t k = 0; k < val.min_eigenvalue_per_time.size(); ++k)
        vtext += "time=" + std::to_string(k) + " min_eigenvalue=" + io::fmt17(val.min_eigenvalue_per_time[k]) + "\n";
    if (!val.note.empty()) vtext += "note=" + val.note + "\n";
    dir.write("validity.txt", vtext);
    CheckReport vr("bochner_validity");
    vr.max_residual = std::max(0.0, -val.min_eigenvalue);
    vr.tolerance = -val.tolerance;
    vr.pass = val.valid;
    detail::report(log, text, vr, dir);
    ok = repro.pass && vr.pass;
    dir.write("report.txt", text);
    return ok ? kOk : kCheckFailure;
}

inline int run_simulate(const ScenarioConfig& c, io::RunDir& dir, std::ostream& log) {
    const auto model = make_model(c.family, c.params);
    const std::size_t H = c.effective_horizon();
    CharSurface theta0 = detail::initial_surface(c, model, H);
    FlowCache cache(theta0.grid_ptr());
    const auto init = c.theta0 == "self" ? make_initial_state(model, cache, c.x0, c.y0, H)
                                         : make_initial_state(model, cache, c.x0, c.y0, theta0.horizon(), theta0);
    const auto policy = detail::make_policy(c, model);
    SimulationOptions o;
    o.n_paths = c.paths;
    o.n_steps = c.steps;
    o.seed = c.seed;
    o.snapshot_paths = c.snapshot_paths;
    o.snapshot_horizon = c.snapshot_horizon;
    o.threads = c.threads;
    const auto ens = simulate_paths(init, policy, cache, o);

    std::string csv = "path,t";
    for (std::size_t i = 1; i <= ens.n; ++i) csv += ",Z_" + std::to_string(i);
    for (std::size_t i = 1; i <= ens.m; ++i) csv += ",Y_" + std::to_string(i);
    for (const auto& name : ens.param_names) csv += "," + name;
    csv += "\n";
    const std::size_t np = ens.param_names.size();
    for (std::size_t p = 0; p < ens.paths.size(); ++p) {
        const auto& rec = ens.paths[p];
        const std::size_t len = rec.Z.size() / ens.n;
        for (std::size_t s = 0; s < len; ++s) {
            csv += std::to_string(p) + "," + std::to_string(s);
            for (std::size_t i = 0; i < ens.n; ++i) csv += "," + io::fmt17(ens.Z(p, s, i));
            for (std::size_t i = 0; i < ens.m; ++i) csv += "," + io::fmt17(ens.Y(p, s, i));
            for (std::size_t k = 0; k < np; ++k) csv += "," + io::fmt17(rec.a[s * np + k]);
            csv += "\n";
        }
    }
    dir.write("paths.csv", csv);
    for (std::size_t p = 0; p < ens.paths.size() && p < c.snapshot_paths; ++p)
        dir.write("surfaces_" + std::to_string(p) + ".csv", io::surface_sequence_csv(ens.paths[p].snapshots));

    std::string text;
    int rejections = 0, fallbacks = 0;
    for (const auto& rec : ens.paths) {
        rejections += rec.rejections;
        fallbacks += rec.fallbacks;
    }
    text += "paths=" + std::to_string(ens.paths.size()) + " steps=" + std::to_string(c.steps) +
            " failed=" + std::to_string(ens.n_failed()) + " rejections=" + std::to_string(rejections) +
            " fallbacks=" + std::to_string(fallbacks) + "\n";
    for (const auto& rec : ens.paths)
        if (rec.failed) text += "failure at step " + std::to_string(rec.failed_at) + ": " + rec.failure + "\n";
    log << text;
    bool ok = true;
    for (auto t : c.mc_times) {
        const auto r = martingale_mc(ens, init.theta, t);
        detail::report(log, text, r, dir);
        ok = ok && r.pass;
        if (model.family() == "vasicek_short_rate" && init.theta.grid().find_imag(1.0)) {
            const auto b = bond_consistency(ens, init.theta, t);
            detail::report(log, text, b, dir);
            ok = ok && b.pass;
        }
    }
    dir.write("report.txt", text);
    return ok ? kOk : kCheckFailure;
}

inline int run_calibrate(const ScenarioConfig& c, io::RunDir& dir, std::ostream& log) {
    ObservationSet obs;
    obs.dt = param_or(c.params, "dt", 1.0 / 252.0);
    {
        const auto tab = io::detail::read_numeric_csv(io::read_file(c.x_in));
        const std::size_t cx = tab.has("Z_1") ? tab.column("Z_1") : tab.column("X");
        const bool by_path = tab.has("path");
        const std::size_t cp = by_path ? tab.column("path") : 0;
        for (const auto& r : tab.rows)
            if (!by_path || r[cp] == 0.0) obs.X.push_back(r[cx]);
    }
    obs.theta = io::read_surfaces_csv(io::read_file(c.theta_in));
    CalibrationOptions opt;
    opt.y_window = c.y_window;
    opt.estimation_window = c.estimation_window;
    opt.gaussian_layer = c.gaussian_layer;
    opt.substeps = static_cast<int>(param_or(c.params, "substeps", 8.0));
    const auto res = calibrate_heston(obs, opt);

    std::string y = "t,y_hat\n";
    for (std::size_t t = res.first_t; t < res.Y_hat.size(); ++t)
        y += std::to_string(t) + "," + io::fmt17(res.Y_hat[t]) + "\n";
    dir.write("y_hat.csv", y);
    std::string a =
        "window,first,last,a,b,c,rho,feller,ref_scale,profiled_scale,ratio_residual,shape_residual,level_residual,"
        "min_margin\n";
    for (std::size_t k = 0; k < res.windows.size(); ++k) {
        const auto& w = res.windows[k];
        a += std::to_string(k) + "," + std::to_string(w.first) + "," + std::to_string(w.last) + "," +
             io::fmt17(w.params.a) + "," + io::fmt17(w.params.b) + "," + io::fmt17(w.params.c) + "," +
             io::fmt17(w.params.rho) + "," + (w.feller ? "1" : "0") + "," + io::fmt17(w.ref_scale) + "," +
             io::fmt17(w.profiled_scale) + "," + io::fmt17(w.ratio_residual) + "," + io::fmt17(w.shape_residual) +
             "," + io::fmt17(w.level_residual) + "," + io::fmt17(w.min_margin) + "\n";
    }
    dir.write("a_hat.csv", a);
    std::string m = "t,margin,c0\n";
    for (std::size_t t = res.first_t; t < res.margins.size(); ++t)
        m += std::to_string(t) + "," + io::fmt17(res.margins[t]) + "," + io::fmt17(res.shift_c0[t]) + "\n";
    dir.write("margins.csv", m);

    std::string text;
    CheckReport margins("margins_above");
    margins.tolerance = c.margin_tolerance;
    for (const auto& w : res.windows) margins.max_residual = std::max(margins.max_residual, -w.min_margin);
    margins.pass = margins.max_residual <= c.margin_tolerance;
    margins.note = "largest negative margin over windows";
    for (std::size_t k = 0; k < res.windows.size(); ++k) {
        const auto& w = res.windows[k];
        char buf[256];
        std::snprintf(buf, sizeof buf, "window %zu [%zu,%zu] a=%.6g b=%.6g c=%.6g rho=%.6g feller=%s\n", k, w.first,
                      w.last, w.params.a, w.params.b, w.params.c, w.params.rho, w.feller ? "yes" : "no");
        text += buf;
        log << buf;
    }
    detail::report(log, text, margins, dir);
    dir.write("report.txt", text);
    return margins.pass ? kOk : kCheckFailure;
}

inline std::vector<std::string> default_checks(const std::string& family) {
    std::vector<std::string> out{"oracle", "short_end", "drift"};
    if (family == "heston") out.push_back("exp_martingale");
    if (family != "vasicek") {
        out.push_back("affine_reduction");
        out.push_back("fdr");
    }
    if (family == "vasicek_short_rate") {
        out.push_back("martingale_mc");
        out.push_back("bond");
    }
    return out;
}

inline int run_verify(const ScenarioConfig& c, io::RunDir& dir, std::ostream& log) {
    const auto model = make_model(c.family, c.params);
    const std::size_t H = c.effective_horizon();
    const auto theta0 = detail::initial_surface(c, model, H);
    const auto& grid = theta0.grid_ptr();
    const auto checks = c.checks.empty() ? default_checks(c.family) : c.checks;
    const auto joint = affine_joint_cumulant(model, *grid, c.y0);
    std::string text;
    bool ok = true;
    auto emit = [&](const CheckReport& r) {
        detail::report(log, text, r, dir);
        ok = ok && r.pass;
    };
    std::optional<PathEnsemble> leaf;
    FlowCache cache(grid);
    auto leaf_ensemble = [&]() -> const PathEnsemble& {
        if (!leaf) {
            const auto init = make_initial_state(model, cache, c.x0, c.y0, H);
            SimulationOptions o;
            o.n_paths = std::min<std::size_t>(c.paths, 4);
            o.n_steps = c.steps;
            o.seed = c.seed;
            o.snapshot_paths = o.n_paths;
            o.step.alpha_scale = c.alpha_scale;
            leaf = simulate_paths(init, constant_policy(), cache, o);
        }
        return *leaf;
    };

    for (const auto& name : checks) {
        if (name == "oracle") {
            const auto og = make_grid(UGrid::symmetric_1d(1.0, 9));
            const std::pair<const char*, FiniteStateModel> fixtures[] = {{"deterministic", fixture_deterministic()},
                                                                         {"coin", fixture_coin()},
                                                                         {"vol_regimes", fixture_vol_regimes()},
                                                                         {"time_dependent", fixture_time_dependent()}};
            for (const auto& [fname, fs] : fixtures) {
                std::vector<CheckReport> parts;
                for (std::size_t y = 0; y < fs.n_states; ++y) {
                    const auto oracle = oracle_forward_characteristics(fs, 0, y, og, 5);
                    CheckReport eq("oracle_equivalence");
                    eq.tolerance = 1e-12;
                    eq.max_residual = max_abs_diff(oracle, transfer_forward_surface(fs, 0, y, og, 5));
                    eq.pass = eq.max_residual <= eq.tolerance;
                    parts.push_back(eq);
                    parts.push_back(short_end_residual(oracle, finite_state_short_end(fs, 0, y, *og), 1e-12));
                    parts.push_back(drift_residual(finite_state_decomposition(fs, 0, y, og, 5),
                                                   finite_state_joint_cumulant(fs, 0, y, og), 1e-12));
                }
                emit(merge_reports(std::string("oracle_") + fname, parts));
            }
        } else if (name == "short_end") {
            CVec kappa(grid->size());
            for (std::size_t g = 0; g < grid->size(); ++g) kappa[g] = joint(g, CVec(model.m(), Complex(0.0, 0.0)));
            emit(short_end_residual(theta0, kappa, c.tolerance));
        } else if (name == "drift") {
            const auto table = make_flow_table(model, grid, H + 1);
            auto dec = affine_decomposition(table, c.y0, H);
            dec.alpha = Complex(c.alpha_scale, 0.0) * dec.alpha;
            if (c.flip_rho) {
                require(model.family() == "heston", ErrorCode::Unsupported, "verify.flip_rho needs the heston family");
                ParamVec p = model.params();
                p["rho"] = -p["rho"];
                dec.sigmas = sigma_fields(make_flow_table(make_model("heston", p), grid, H + 1), H);
            }
            emit(drift_residual(dec, joint, c.tolerance));
        } else if (name == "exp_martingale") {
            emit(exp_martingale_check(theta0, c.tolerance));
        } else if (name == "affine_reduction") {
            auto r = detail::leaf_deviation(leaf_ensemble(), cache, model.family());
            r.tolerance = c.tolerance;
            r.pass = r.max_residual <= c.tolerance;
            emit(r);
        } else if (name == "fdr") {
            const auto& ens = leaf_ensemble();
            std::vector<CharSurface> thetas;
            std::vector<std::shared_ptr<const FlowTable>> keep;
            std::vector<const FlowTable*> tables;
            std::vector<ExtensionCumulant> mus;
            for (const auto& rec : ens.paths) {
                for (const auto& th : rec.snapshots) {
                    keep.push_back(cache.get(model, th.horizon()));
                    tables.push_back(keep.back().get());
                    thetas.push_back(th);
                    mus.push_back(ExtensionCumulant::zero(th.horizon()));
                }
            }
            emit(fdr_projection_residual(thetas, tables, mus, c.tolerance));
        } else if (name == "martingale_mc" || name == "bond") {
            const auto init = make_initial_state(model, cache, c.x0, c.y0, H);
            SimulationOptions o;
            o.n_paths = c.verify_paths;
            o.n_steps = c.steps;
            o.seed = c.seed;
            o.threads = c.threads;
            const auto ens = simulate_paths(init, detail::make_policy(c, model), cache, o);
            for (auto t : c.verify_times) {
                require(t <= c.steps, ErrorCode::Validation, "verify.times entries must not exceed run.steps");
                emit(name == "bond" ? bond_consistency(ens, init.theta, t) : martingale_mc(ens, init.theta, t));
            }
        } else {
            fail(ErrorCode::Validation, "unknown check '" + name + "'");
        }
    }
    dir.write("report.txt", text);
    return ok ? kOk : kCheckFailure;
}

// ---------------------------------------------------------------------------

struct CommandLine {
    std::string subcommand;
    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

/// Runs one subcommand end to end; never throws.
inline int run_command(const CommandLine& cl, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    std::string text;
    ScenarioConfig cfg;
    try {
        text = io::read_file(cl.config_path);
        cfg = parse_config(text, cl.subcommand);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    }
    if (cl.out) cfg.out = *cl.out;
    if (cl.seed) cfg.seed = *cl.seed;
    std::optional<io::RunDir> dir;
    try {
        dir.emplace(cfg.out, cl.subcommand, text + "\nseed=" + std::to_string(cfg.seed), cfg.seed);
        int code = kOk;
        if (cl.subcommand == "riccati") code = run_riccati(cfg, *dir, log);
        else if (cl.subcommand == "fit-hw") code = run_fit_hw(cfg, *dir, log);
        else if (cl.subcommand == "simulate") code = run_simulate(cfg, *dir, log);
        else if (cl.subcommand == "calibrate") code = run_calibrate(cfg, *dir, log);
        else if (cl.subcommand == "verify") code = run_verify(cfg, *dir, log);
        else fail(ErrorCode::Validation, "unknown subcommand '" + cl.subcommand + "'");
        dir->commit(code);
        return code;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        if (dir) dir->mark_failed(e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        if (dir) dir->mark_failed(e.what());
        return kNumericFailure;
    }
}

}  // namespace crcterm::app
