#pragma once

// Discrete-time affine stochastic volatility models and their Riccati flows.
//
// State (X, Y) with X in R^n unconstrained and Y in R^m. One step satisfies
//   E[exp(<u,X_1> + <v,Y_1>) | X_0, Y_0]
//     = exp(F(u,v) + <u,X_0> + <v + R_C(u,v), Y_0>),
// so the X-argument is never transported and only (phi, psi_C) evolve.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "crcterm/rng.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

using ParamVec = std::map<std::string, double>;

inline double param(const ParamVec& p, const std::string& name) {
    auto it = p.find(name);
    require(it != p.end(), ErrorCode::InvalidArgument, "missing parameter '" + name + "'");
    return it->second;
}

inline double param_or(const ParamVec& p, const std::string& name, double fallback) {
    auto it = p.find(name);
    return it == p.end() ? fallback : it->second;
}

/// How grid frequencies u map to flow arguments.
///  XBlock: the observed process is X (n = grid dim); pin (u, v) = (iu, 0).
///  State:  the observed process is Y itself (n = 0, m = grid dim); pin v = iu.
enum class ObservableMode { XBlock, State };

class AffineModel {
public:
    using ConstField = std::function<Complex(const CVec& u, const CVec& v)>;
    using StateField = std::function<CVec(const CVec& u, const CVec& v)>;
    using Domain = std::function<bool(const CVec& u, const CVec& v)>;
    /// Advances (x, y) by one period in place.
    using Sampler = std::function<void(RVec& x, RVec& y, rng::Stream& stream)>;

    AffineModel(std::string family, std::size_t n, std::size_t m, ParamVec params, ConstField F, StateField R,
                Domain admissible = {}, Sampler sampler = {})
        : family_(std::move(family)), n_(n), m_(m), params_(std::move(params)), F_(std::move(F)),
          R_(std::move(R)), admissible_(std::move(admissible)), sampler_(std::move(sampler)) {}

    const std::string& family() const noexcept { return family_; }
    std::size_t n() const noexcept { return n_; }
    std::size_t m() const noexcept { return m_; }
    const ParamVec& params() const noexcept { return params_; }
    ObservableMode mode() const noexcept { return n_ == 0 ? ObservableMode::State : ObservableMode::XBlock; }
    std::size_t observed_dim() const noexcept { return n_ == 0 ? m_ : n_; }

    Complex F(const CVec& u, const CVec& v) const { return F_(u, v); }
    CVec R(const CVec& u, const CVec& v) const { return R_(u, v); }
    bool admissible(const CVec& u, const CVec& v) const { return !admissible_ || admissible_(u, v); }
    bool has_sampler() const noexcept { return static_cast<bool>(sampler_); }

    void step(RVec& x, RVec& y, rng::Stream& stream) const {
        require(has_sampler(), ErrorCode::Unsupported, "model '" + family_ + "' has no sampler");
        sampler_(x, y, stream);
    }

    /// Flow arguments (u, v) at time-to-maturity 0 for grid frequency `freq`.
    std::pair<CVec, CVec> pins(const CVec& freq) const {
        require(freq.size() == observed_dim(), ErrorCode::InvalidArgument, "pins: frequency has wrong dimension");
        CVec iu(freq.size());
        for (std::size_t j = 0; j < freq.size(); ++j) iu[j] = kI * freq[j];
        if (mode() == ObservableMode::State) return {CVec{}, iu};
        return {iu, CVec(m_, Complex(0.0, 0.0))};
    }

    double overflow_bound = 1e100;

private:
    std::string family_;
    std::size_t n_;
    std::size_t m_;
    ParamVec params_;
    ConstField F_;
    StateField R_;
    Domain admissible_;
    Sampler sampler_;
};

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

/// Vasicek short rate R as the observed state (n = 0, m = 1):
/// R' = R + b - aR + sigma*W, so F = bv + sigma^2 v^2/2 and R_C = -av.
inline AffineModel vasicek(double a, double b, double sigma) {
    ParamVec p{{"a", a}, {"b", b}, {"sigma", sigma}};
    auto F = [=](const CVec&, const CVec& v) { return b * v[0] + 0.5 * sigma * sigma * v[0] * v[0]; };
    auto R = [=](const CVec&, const CVec& v) { return CVec{-a * v[0]}; };
    auto sampler = [=](RVec&, RVec& y, rng::Stream& s) { y[0] += b - a * y[0] + sigma * s.normal(); };
    return AffineModel("vasicek", 0, 1, std::move(p), F, R, {}, sampler);
}

/// Vasicek with the integrated rate as X-block: X' = X + R, R' = R + b - aR + sigma*W.
/// The pin u = i prices zero-coupon bonds from the X-characteristic.
inline AffineModel vasicek_short_rate(double a, double b, double sigma) {
    ParamVec p{{"a", a}, {"b", b}, {"sigma", sigma}};
    auto F = [=](const CVec&, const CVec& v) { return b * v[0] + 0.5 * sigma * sigma * v[0] * v[0]; };
    auto R = [=](const CVec& u, const CVec& v) { return CVec{u[0] - a * v[0]}; };
    auto sampler = [=](RVec& x, RVec& y, rng::Stream& s) {
        x[0] += y[0];
        y[0] += b - a * y[0] + sigma * s.normal();
    };
    return AffineModel("vasicek_short_rate", 1, 1, std::move(p), F, R, {}, sampler);
}

struct HestonParams {
    double a = 0.0;      // mean reversion speed
    double b = 0.0;      // long-run variance
    double c = 0.0;      // volatility of variance
    double rho = 0.0;
    double dt = 1.0 / 252.0;
    int substeps = 8;

    bool feller() const { return 2.0 * a * b >= c * c; }

    ParamVec to_params() const {
        return {{"a", a}, {"b", b}, {"c", c}, {"rho", rho}, {"dt", dt}, {"substeps", static_cast<double>(substeps)}};
    }

    static HestonParams from(const ParamVec& p) {
        HestonParams h;
        h.a = param(p, "a");
        h.b = param(p, "b");
        h.c = param(p, "c");
        h.rho = param(p, "rho");
        h.dt = param_or(p, "dt", 1.0 / 252.0);
        h.substeps = static_cast<int>(param_or(p, "substeps", 8.0));
        return h;
    }
};

namespace detail {

/// RK4 on d/dt (phi, psi) = (a b psi, R(u, psi)) over [0, dt].
inline std::pair<Complex, Complex> heston_rk4(const HestonParams& h, Complex u, Complex v, int steps) {
    auto R = [&](Complex w) {
        return 0.5 * u * u - 0.5 * u + h.c * h.rho * u * w + 0.5 * h.c * h.c * w * w - h.a * w;
    };
    const double step = h.dt / steps;
    Complex phi(0.0, 0.0), psi = v;
    for (int k = 0; k < steps; ++k) {
        const Complex k1 = R(psi);
        const Complex k2 = R(psi + 0.5 * step * k1);
        const Complex k3 = R(psi + 0.5 * step * k2);
        const Complex k4 = R(psi + step * k3);
        phi += h.a * h.b * step / 6.0 * (psi + 2.0 * (psi + 0.5 * step * k1) + 2.0 * (psi + 0.5 * step * k2) +
                                          (psi + step * k3));
        psi += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(std::abs(psi)) || std::abs(psi) > 1e50) return {phi, Complex(NAN, NAN)};
    }
    return {phi, psi};
}

}  // namespace detail

/// One-step discrete maps (F_d, psi_C_d) of the Heston model observed every
/// dt, obtained by integrating the continuous Riccati equations. The step is
/// halved on blow-up down to dt * 2^-20.
inline std::pair<Complex, Complex> heston_discrete_onestep(const HestonParams& h, Complex u, Complex v) {
    require(h.dt > 0.0 && h.substeps >= 1, ErrorCode::InvalidArgument, "heston: dt > 0 and substeps >= 1");
    for (int steps = h.substeps; steps <= (h.substeps << 20); steps *= 2) {
        auto [phi, psi] = detail::heston_rk4(h, u, v, steps);
        if (std::isfinite(psi.real()) && std::isfinite(psi.imag())) return {phi, psi};
    }
    fail(ErrorCode::OdeStep, "heston: Riccati ODE blew up at minimum step");
}

/// Discretized Heston: X log-price, Y variance, observed every dt.
inline AffineModel heston(const HestonParams& h) {
    require(h.a > 0.0 && h.b > 0.0 && h.c > 0.0 && std::abs(h.rho) <= 1.0, ErrorCode::InvalidArgument,
            "heston: need a, b, c > 0 and |rho| <= 1");
    auto F = [=](const CVec& u, const CVec& v) { return heston_discrete_onestep(h, u[0], v[0]).first; };
    auto R = [=](const CVec& u, const CVec& v) { return CVec{heston_discrete_onestep(h, u[0], v[0]).second - v[0]}; };
    const double v_max = 2.0 * h.a / (h.c * h.c);
    auto admissible = [=](const CVec&, const CVec& v) { return std::isfinite(std::abs(v[0])) && v[0].real() < v_max; };
    // Full-truncation Euler with `substeps` sub-intervals per observation step.
    auto sampler = [=](RVec& x, RVec& y, rng::Stream& s) {
        const double step = h.dt / h.substeps;
        const double rho_perp = std::sqrt(std::max(0.0, 1.0 - h.rho * h.rho));
        double var = y[0];
        for (int k = 0; k < h.substeps; ++k) {
            const double vp = std::max(var, 0.0);
            const double z1 = s.normal();
            const double z2 = s.normal();
            const double sq = std::sqrt(vp * step);
            x[0] += -0.5 * vp * step + sq * z1;
            var += h.a * (h.b - vp) * step + h.c * sq * (h.rho * z1 + rho_perp * z2);
        }
        y[0] = std::max(var, 0.0);
    };
    return AffineModel("heston", 1, 1, h.to_params(), F, R, admissible, sampler);
}

/// Names accepted by make_model.
inline const std::vector<std::string>& known_models() {
    static const std::vector<std::string> names{"vasicek", "vasicek_short_rate", "heston"};
    return names;
}

inline AffineModel make_model(const std::string& family, const ParamVec& p) {
    if (family == "vasicek") return vasicek(param(p, "a"), param(p, "b"), param(p, "sigma"));
    if (family == "vasicek_short_rate") return vasicek_short_rate(param(p, "a"), param(p, "b"), param(p, "sigma"));
    if (family == "heston") return heston(HestonParams::from(p));
    fail(ErrorCode::InvalidArgument, "unknown model '" + family + "'");
}

/// Same family with some parameters replaced.
inline AffineModel with_params(const AffineModel& model, const ParamVec& updates) {
    ParamVec p = model.params();
    for (const auto& [k, v] : updates) p[k] = v;
    return make_model(model.family(), p);
}

// ---------------------------------------------------------------------------
// Riccati flows
// ---------------------------------------------------------------------------

struct RiccatiFlow {
    CVec u;
    CVec v;
    CVec phi;               // phi[k], k = 0..horizon
    std::vector<CVec> psi;  // psi[k] in C^m
    std::size_t horizon() const noexcept { return phi.empty() ? 0 : phi.size() - 1; }
};

/// psi_{k+1} = psi_k + R_C(u, psi_k), phi_{k+1} = phi_k + F(u, psi_k).
inline RiccatiFlow riccati_flow(const AffineModel& model, const CVec& u, const CVec& v, std::size_t horizon) {
    require(u.size() == model.n() && v.size() == model.m(), ErrorCode::InvalidArgument,
            "riccati_flow: pin dimensions do not match model");
    RiccatiFlow flow{u, v, CVec(horizon + 1), std::vector<CVec>(horizon + 1)};
    flow.phi[0] = Complex(0.0, 0.0);
    flow.psi[0] = v;
    for (std::size_t k = 0; k < horizon; ++k) {
        const CVec& psi = flow.psi[k];
        require(model.admissible(u, psi), ErrorCode::DomainExit,
                "riccati_flow: left the admissible domain at step " + std::to_string(k));
        const CVec r = model.R(u, psi);
        CVec next(psi.size());
        for (std::size_t i = 0; i < psi.size(); ++i) next[i] = psi[i] + r[i];
        flow.phi[k + 1] = flow.phi[k] + model.F(u, psi);
        bool finite = std::isfinite(std::abs(flow.phi[k + 1])) && std::abs(flow.phi[k + 1]) <= model.overflow_bound;
        for (const auto& c : next) finite = finite && std::isfinite(std::abs(c)) && std::abs(c) <= model.overflow_bound;
        require(finite, ErrorCode::Overflow, "riccati_flow: flow exceeded bound at step " + std::to_string(k + 1));
        flow.psi[k + 1] = std::move(next);
    }
    return flow;
}

/// Closed-form Vasicek flow in the state view: returns (phi, psi) from s to t.
inline std::pair<Complex, Complex> vasicek_closed_form(double a, double b, double sigma, Complex u, int s, int t) {
    require(t >= s, ErrorCode::InvalidArgument, "vasicek_closed_form: t < s");
    Complex phi(0.0, 0.0);
    for (int k = s; k < t; ++k) {
        const double decay = std::pow(1.0 - a, t - 1 - k);
        phi += b * decay * u + 0.5 * sigma * sigma * decay * decay * u * u;
    }
    return {phi, std::pow(1.0 - a, t - s) * u};
}

/// Semiflow defect: compose the flow over t-s then s-r (restarting from the
/// intermediate psi) and compare with the direct flow over t-r.
inline std::pair<double, double> semiflow_residual(const AffineModel& model, const CVec& u, const CVec& v, int r,
                                                   int s, int t) {
    require(r <= s && s <= t && r >= 0, ErrorCode::InvalidArgument, "semiflow_residual: need r <= s <= t");
    const auto direct = riccati_flow(model, u, v, static_cast<std::size_t>(t - r));
    const auto first = riccati_flow(model, u, v, static_cast<std::size_t>(t - s));
    const auto second = riccati_flow(model, u, first.psi.back(), static_cast<std::size_t>(s - r));
    const double psi_res = max_abs_diff(second.psi.back(), direct.psi.back());
    const double phi_res = std::abs(first.phi.back() + second.phi.back() - direct.phi.back());
    return {psi_res, phi_res};
}

// ---------------------------------------------------------------------------
// Flow tables over a grid
// ---------------------------------------------------------------------------

/// Riccati flows started at every grid pin, k = 0..horizon.
struct FlowTable {
    GridPtr grid;
    std::size_t horizon = 0;
    std::vector<CVec> phi;               // [g][k]
    std::vector<std::vector<CVec>> psi;  // [g][k][i]
    /// Argument at which an X-block extension cumulant is evaluated at lag j:
    /// iu for XBlock models, psi_C(iu, j) for State models.
    std::vector<CVec> ext_arg(std::size_t g) const;
    ObservableMode mode = ObservableMode::XBlock;
};

inline std::vector<CVec> FlowTable::ext_arg(std::size_t g) const {
    std::vector<CVec> out(horizon + 1);
    for (std::size_t j = 0; j <= horizon; ++j) {
        if (mode == ObservableMode::State) {
            out[j] = psi[g][j];
        } else {
            CVec iu(grid->dim());
            for (std::size_t k = 0; k < iu.size(); ++k) iu[k] = kI * grid->point(g)[k];
            out[j] = std::move(iu);
        }
    }
    return out;
}

inline FlowTable make_flow_table(const AffineModel& model, const GridPtr& grid, std::size_t horizon) {
    require(grid->dim() == model.observed_dim(), ErrorCode::InvalidArgument,
            "flow table: grid dimension does not match the observed block");
    FlowTable t;
    t.grid = grid;
    t.horizon = horizon;
    t.mode = model.mode();
    t.phi.resize(grid->size());
    t.psi.resize(grid->size());
    for (std::size_t g = 0; g < grid->size(); ++g) {
        auto [u, v] = model.pins(grid->point(g));
        auto flow = riccati_flow(model, u, v, horizon);
        t.phi[g] = std::move(flow.phi);
        t.psi[g] = std::move(flow.psi);
    }
    return t;
}

/// Thread-safe memo of flow tables keyed by (family, params, horizon) for one
/// grid. Tables are extended by recomputation when a longer horizon is asked.
class FlowCache {
public:
    explicit FlowCache(GridPtr grid) : grid_(std::move(grid)) {}

    std::shared_ptr<const FlowTable> get(const AffineModel& model, std::size_t horizon) {
        const auto key = std::make_pair(model.family(), model.params());
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = tables_.find(key);
        if (it != tables_.end() && it->second->horizon >= horizon) return it->second;
        auto table = std::make_shared<const FlowTable>(make_flow_table(model, grid_, horizon));
        tables_[key] = table;
        return table;
    }

    const GridPtr& grid() const noexcept { return grid_; }

private:
    GridPtr grid_;
    std::mutex mutex_;
    std::map<std::pair<std::string, ParamVec>, std::shared_ptr<const FlowTable>> tables_;
};

/// Forward-characteristic surface of the homogeneous model at factor state Y:
///   sum_{k<t} theta(u,k) = phi(t) + <psi_C(t) - psi_C(0), Y>.
inline CharSurface affine_forward_surface(const FlowTable& table, const RVec& Y, std::size_t horizon,
                                          double time_stamp = 0.0) {
    require(horizon <= table.horizon, ErrorCode::HorizonExhausted, "affine_forward_surface: flow table too short");
    const GridPtr& grid = table.grid;
    return CharSurface::tabulate(
        grid, horizon,
        [&](std::size_t g, std::size_t x) {
            if (g == grid->zero_index()) return Complex(0.0, 0.0);
            Complex val = table.phi[g][x + 1] - table.phi[g][x];
            for (std::size_t i = 0; i < Y.size(); ++i) val += (table.psi[g][x + 1][i] - table.psi[g][x][i]) * Y[i];
            return val;
        },
        time_stamp);
}

inline CharSurface affine_forward_surface(const AffineModel& model, const RVec& Y, const GridPtr& grid,
                                          std::size_t horizon, double time_stamp = 0.0) {
    require(Y.size() == model.m(), ErrorCode::InvalidArgument, "affine_forward_surface: Y has wrong dimension");
    return affine_forward_surface(make_flow_table(model, grid, horizon), Y, horizon, time_stamp);
}

}  // namespace crcterm
