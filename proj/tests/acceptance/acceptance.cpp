// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and runtime budgets are fixed below.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crcterm/calibration.hpp"
#include "crcterm/crc.hpp"
#include "crcterm/hull_white.hpp"
#include "crcterm/io.hpp"
#include "crcterm/verify.hpp"

using namespace crcterm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

int cli(const std::string& args) {
    const std::string cmd = std::string(CRCTERM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string scenario(const std::string& name) { return (fs::path(CRCTERM_SCENARIO_DIR) / name).string(); }

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("crcterm_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

// 1 ------------------------------------------------------------------------
Outcome riccati_closed_form() {
    constexpr double tol = 1e-12;
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> ua(0.01, 0.9), ub(-0.05, 0.05), us(0.0, 0.3), uu(-5.0, 5.0);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const double a = ua(gen), b = ub(gen), s = us(gen);
        const Complex u(uu(gen), uu(gen));
        const auto flow = riccati_flow(vasicek(a, b, s), {}, {u}, 30);
        for (int t = 0; t <= 30; ++t) {
            const auto [phi, psi] = vasicek_closed_form(a, b, s, u, 0, t);
            worst = std::max({worst, std::abs(flow.phi[t] - phi), std::abs(flow.psi[t][0] - psi)});
        }
    }
    return {worst < tol, "max_residual=" + sci(worst) + " tol=" + sci(tol) + " draws=100 t<=30"};
}

// 2 ------------------------------------------------------------------------
Outcome semiflow() {
    constexpr double tol_vasicek = 1e-12, tol_heston = 1e-9;
    const auto grid = UGrid::symmetric_1d(10.0, 21, {});
    HestonParams hp;
    hp.a = 1.5;
    hp.b = 0.05;
    hp.c = 0.35;
    hp.rho = -0.6;
    hp.dt = 1.0 / 52.0;
    const auto vas = vasicek(0.2, 0.01, 0.02);
    const auto hes = heston(hp);
    double wv = 0.0, wh = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const Complex iu = kI * grid.scalar(g);
        for (int r = 0; r <= 20; ++r)
            for (int s = r; s <= 20; ++s)
                for (int t = s; t <= 20; ++t) {
                    const auto [pv, fv] = semiflow_residual(vas, {}, {iu}, r, s, t);
                    const auto [ph, fh] = semiflow_residual(hes, {iu}, {Complex(0.0, 0.0)}, r, s, t);
                    wv = std::max({wv, pv, fv});
                    wh = std::max({wh, ph, fh});
                }
    }
    return {wv < tol_vasicek && wh < tol_heston, "vasicek=" + sci(wv) + " (tol " + sci(tol_vasicek) + ") heston=" +
                                                     sci(wh) + " (tol " + sci(tol_heston) + ") pins=21 t<=20"};
}

// 3 ------------------------------------------------------------------------
Outcome oracle_equivalence() {
    constexpr double tol = 1e-12;
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 9));
    const std::size_t H = 5;
    const std::vector<std::pair<const char*, FiniteStateModel>> fixtures{{"deterministic", fixture_deterministic()},
                                                                         {"coin", fixture_coin()},
                                                                         {"vol_regimes", fixture_vol_regimes()},
                                                                         {"time_dependent", fixture_time_dependent()}};
    double eq = 0.0, se = 0.0, dr = 0.0;
    for (const auto& [name, fs] : fixtures)
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t y = 0; y < fs.n_states; ++y) {
                const auto oracle = oracle_forward_characteristics(fs, s, y, grid, H);
                eq = std::max(eq, max_abs_diff(oracle, transfer_forward_surface(fs, s, y, grid, H)));
                se = std::max(se, short_end_residual(oracle, finite_state_short_end(fs, s, y, *grid), tol).max_residual);
                dr = std::max(dr, drift_residual(finite_state_decomposition(fs, s, y, grid, H),
                                                 finite_state_joint_cumulant(fs, s, y, grid), tol)
                                      .max_residual);
            }
    return {eq < tol && se < tol && dr < tol, "fixtures=4 (incl. 3-state vol regimes) equivalence=" + sci(eq) +
                                                  " short_end=" + sci(se) + " drift=" + sci(dr) + " tol=" + sci(tol)};
}

// 4 ------------------------------------------------------------------------
Outcome hull_white_exactness() {
    constexpr double tol_pin = 1e-10, tol_grid = 1e-8;
    const auto grid = make_grid(UGrid::symmetric_1d(20.0, 11));
    const std::size_t pin = *grid->find_imag(1.0);
    std::mt19937_64 gen(404);
    std::uniform_real_distribution<double> fwd(-0.01, 0.08), ud(-1.0, 1.0);
    HestonParams hp;
    hp.a = 1.5;
    hp.b = 0.05;
    hp.c = 0.35;
    hp.rho = -0.6;
    hp.dt = 1.0 / 252.0;
    const std::vector<AffineModel> models{vasicek_short_rate(0.1, 0.002, 0.006), heston(hp)};
    double wp = 0.0, wg = 0.0;
    for (const auto& model : models)
        for (std::size_t H : {1, 2, 10, 25, 50}) {
            const auto table = make_flow_table(model, grid, H);
            RVec y{model.family() == "heston" ? 0.05 : 0.02};
            RVec forwards(H);
            for (auto& f : forwards) f = fwd(gen);
            // arbitrary curve at the pin, zero elsewhere
            const auto curve = CharSurface::tabulate(grid, H, [&](std::size_t g, std::size_t x) {
                return g == pin ? Complex(-forwards[x], 0.0) : Complex(0.0, 0.0);
            });
            const auto ext = extract_mu_parametric(model, table, curve, y, {pin});
            const auto rebuilt = extended_forward_surface(table, y, ext.mu, H);
            for (std::size_t t = 1; t <= H; ++t)
                wp = std::max(wp, std::abs(cumulate(rebuilt, t)[pin] - cumulate(curve, t)[pin]));
            // arbitrary surface on the whole grid
            const auto target = CharSurface::tabulate(grid, H, [&](std::size_t g, std::size_t) {
                return g == grid->zero_index() ? Complex(0.0, 0.0) : Complex(ud(gen), ud(gen));
            });
            const auto tab = extract_mu_tabulated(model, table, target, y);
            wg = std::max(wg, max_abs_diff(extended_forward_surface(table, y, tab.mu, H), target));
        }
    return {wp < tol_pin && wg < tol_grid, "pin=" + sci(wp) + " (tol " + sci(tol_pin) + ") tabulated=" + sci(wg) +
                                               " (tol " + sci(tol_grid) + ") H<=50"};
}

// 5 ------------------------------------------------------------------------
Outcome affine_reduction() {
    constexpr double tol = 1e-9;
    const auto grid = make_grid(UGrid::symmetric_1d(10.0, 11));
    HestonParams hp;
    hp.a = 1.5;
    hp.b = 0.05;
    hp.c = 0.35;
    hp.rho = -0.6;
    hp.dt = 1.0 / 252.0;
    const std::vector<std::pair<AffineModel, RVec>> cases{{heston(hp), {0.05}},
                                                          {vasicek_short_rate(0.1, 0.002, 0.006), {0.02}}};
    double leaf = 0.0, fdr = 0.0;
    for (const auto& [model, y0] : cases) {
        FlowCache cache(grid);
        const auto init = make_initial_state(model, cache, {0.0}, y0, 30);
        SimulationOptions o;
        o.n_paths = 8;
        o.n_steps = 20;
        o.seed = 5;
        o.snapshot_paths = 8;
        const auto ens = simulate_paths(init, constant_policy(), cache, o);
        if (ens.n_failed() > 0) return {false, "path failures"};
        std::vector<CharSurface> thetas;
        std::vector<std::shared_ptr<const FlowTable>> keep;
        std::vector<const FlowTable*> tables;
        std::vector<ExtensionCumulant> mus;
        for (std::size_t p = 0; p < ens.paths.size(); ++p)
            for (std::size_t s = 0; s < ens.paths[p].snapshots.size(); ++s) {
                const auto& th = ens.paths[p].snapshots[s];
                keep.push_back(cache.get(model, th.horizon()));
                leaf = std::max(leaf, max_abs_diff(th, affine_forward_surface(*keep.back(), {ens.Y(p, s)}, th.horizon())));
                thetas.push_back(th);
                tables.push_back(keep.back().get());
                mus.push_back(ExtensionCumulant::zero(th.horizon()));
            }
        fdr = std::max(fdr, fdr_projection_residual(thetas, tables, mus, tol).max_residual);
    }
    return {leaf < tol && fdr < tol,
            "leaf_deviation=" + sci(leaf) + " fdr=" + sci(fdr) + " tol=" + sci(tol) + " steps=20 models=heston,vasicek"};
}

// 6 ------------------------------------------------------------------------
Outcome martingale_in_law() {
    const auto grid = make_grid(UGrid::symmetric_1d(20.0, 11, {1.0, -1.0}));
    const ParamVec first{{"a", 0.1}, {"b", 0.002}, {"sigma", 0.006}};
    const ParamVec second{{"a", 0.1}, {"b", 0.003}, {"sigma", 0.004}};
    FlowCache cache(grid);
    const auto init = make_initial_state(make_model("vasicek_short_rate", first), cache, {0.0}, {0.02}, 30);
    SimulationOptions o;
    o.n_paths = 100000;
    o.n_steps = 10;
    o.seed = 606;
    const auto ens = simulate_paths(init, two_state_policy(first, second, 0.3), cache, o);
    bool ok = ens.n_failed() == 0;
    double worst = 0.0, worst_bond = 0.0;
    std::size_t informative = 0, switched = 0;
    for (const auto& rec : ens.paths)
        for (std::size_t s = 0; s + 1 < rec.a.size() / 3; ++s) switched += rec.a[3 * s + 1] != rec.a[3 * (s + 1) + 1];
    for (std::size_t t : {1, 5, 10}) {
        const auto r = martingale_mc(ens, init.theta, t, 4.0);
        ok = ok && r.pass;
        worst = std::max(worst, r.max_residual);
        for (const auto& p : r.pins) informative += p.informative;
    }
    for (std::size_t T = 1; T <= 10; ++T) {
        const auto r = bond_consistency(ens, init.theta, T, 4.0);
        ok = ok && r.pass;
        worst_bond = std::max(worst_bond, r.max_residual);
    }
    return {ok && switched > 0, "N=1e5 max_cf_dev=" + sci(worst) + "SE bond_dev=" + sci(worst_bond) +
                                    "SE band=4SE informative_pin_checks=" + std::to_string(informative) +
                                    " switches=" + std::to_string(switched)};
}

// 7 ------------------------------------------------------------------------
Outcome negative_controls() {
    const auto dir = scratch("controls");
    const int good = cli("verify --config " + scenario("heston_verify.ini") + " --out " + (dir / "good").string());
    const int alpha = cli("verify --config " + scenario("heston_bad_alpha.ini") + " --out " + (dir / "alpha").string());
    const int flip = cli("verify --config " + scenario("heston_flip_rho.ini") + " --out " + (dir / "flip").string());
    return {good == 0 && alpha == 4 && flip == 4, "exit codes: clean=" + std::to_string(good) + " alpha*1.1=" +
                                                       std::to_string(alpha) + " flipped_rho=" + std::to_string(flip)};
}

// 8 ------------------------------------------------------------------------
Outcome closed_loop_calibration() {
    constexpr double rel_shape = 0.15, rel_level = 0.20, margin_floor = -1e-12;
    HestonParams hp;
    hp.a = 1.5;
    hp.b = 0.05;
    hp.c = 0.35;
    hp.rho = -0.6;
    hp.dt = 1.0 / 252.0;
    const std::size_t steps = 10000, h_obs = 30;
    const auto grid = make_grid(UGrid::symmetric_1d(10.0, 11));
    FlowCache cache(grid);
    const auto init = make_initial_state(heston(hp), cache, {0.0}, {hp.b}, steps + h_obs + 1);
    SimulationOptions o;
    o.n_steps = steps;
    o.seed = 808;
    o.snapshot_paths = 1;
    o.snapshot_horizon = h_obs;
    const auto ens = simulate_paths(init, constant_policy(), cache, o);
    if (ens.n_failed() > 0) return {false, "simulation failed: " + ens.paths[0].failure};
    ObservationSet obs;
    obs.dt = hp.dt;
    for (std::size_t t = 0; t <= steps; ++t) obs.X.push_back(ens.Z(0, t));
    obs.theta = ens.paths[0].snapshots;
    CalibrationOptions opt;
    opt.estimation_window = 2500;
    const auto res = calibrate_heston(obs, opt);
    double ea = 0, ec = 0, er = 0, eb = 0, mm = INFINITY;
    for (const auto& w : res.windows) {
        ea = std::max(ea, std::abs(w.params.a / hp.a - 1.0));
        ec = std::max(ec, std::abs(w.params.c / hp.c - 1.0));
        er = std::max(er, std::abs(w.params.rho / hp.rho - 1.0));
        eb = std::max(eb, std::abs(w.params.b / hp.b - 1.0));
        mm = std::min(mm, w.min_margin);
    }
    const bool ok = !res.windows.empty() && ea < rel_shape && ec < rel_shape && er < rel_shape && eb < rel_level &&
                    mm >= margin_floor;
    return {ok, "windows=" + std::to_string(res.windows.size()) + " rel_err a=" + sci(ea) + " c=" + sci(ec) +
                    " rho=" + sci(er) + " (tol 0.15) b=" + sci(eb) + " (tol 0.20) min_margin=" + sci(mm)};
}

// 9 ------------------------------------------------------------------------
Outcome determinism() {
    const auto dir = scratch("determinism");
    const auto a = dir / "a", b = dir / "b";
    if (cli("simulate --config " + scenario("simulate_two_state.ini") + " --out " + a.string()) != 0 ||
        cli("simulate --config " + scenario("simulate_two_state.ini") + " --out " + b.string()) != 0)
        return {false, "simulate did not exit 0"};
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        const auto name = entry.path().filename();
        if (!fs::exists(b / name)) return {false, "missing " + name.string()};
        auto ta = io::read_file(entry.path()), tb = io::read_file(b / name);
        if (name == "manifest.json") {
            // wall-clock time is the only field allowed to differ
            auto ja = nlohmann::json::parse(ta), jb = nlohmann::json::parse(tb);
            ja.erase("wall_clock_s");
            jb.erase("wall_clock_s");
            if (ja != jb) return {false, "manifest differs"};
        } else if (ta != tb) {
            return {false, name.string() + " differs"};
        }
        ++compared;
    }
    return {compared >= 4, "artifacts compared=" + std::to_string(compared) + " bit-identical"};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "riccati_closed_form", 1.0, riccati_closed_form},
        {2, "semiflow", 10.0, semiflow},
        {3, "oracle_equivalence", 30.0, oracle_equivalence},
        {4, "hull_white_exactness", 10.0, hull_white_exactness},
        {5, "crc_affine_reduction", 10.0, affine_reduction},
        {6, "crc_martingale_in_law", 300.0, martingale_in_law},
        {7, "negative_controls", 60.0, negative_controls},
        {8, "closed_loop_calibration", 300.0, closed_loop_calibration},
        {9, "determinism", 60.0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = out.pass && in_time;
        failures += !pass;
        std::printf("[%s] %d %-24s %s time=%.2fs (budget %.0fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.c_str(), secs, c.budget_s, in_time ? "" : " OVER BUDGET");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
