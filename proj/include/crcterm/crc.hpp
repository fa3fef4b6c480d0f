#pragma once

// Consistent recalibration: one-step Hull-White-extended affine dynamics, the
// forward-characteristic update theta' = S_1 theta + alpha + sum sigma^i dY^i,
// and parameter changes restricted to those that still explain theta'.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/hull_white.hpp"
#include "crcterm/rng.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

/// sigma^i(u, x) = psi_C^i(x+1) - psi_C^i(x), one surface per factor.
inline std::vector<CharSurface> sigma_fields(const FlowTable& table, std::size_t horizon) {
    require(horizon <= table.horizon, ErrorCode::HorizonExhausted, "sigma_fields: flow table too short");
    const std::size_t m = table.psi.empty() ? 0 : table.psi[0][0].size();
    std::vector<CharSurface> out;
    for (std::size_t i = 0; i < m; ++i) {
        out.push_back(CharSurface::tabulate(table.grid, horizon, [&](std::size_t g, std::size_t x) {
            if (g == table.grid->zero_index()) return Complex(0.0, 0.0);
            return table.psi[g][x + 1][i] - table.psi[g][x][i];
        }));
    }
    return out;
}

/// alpha(u, x) = -D^2 phi(x) - sum_i D^2 psi_C^i(x) Y^i with the second
/// difference D^2 f(x) = f(x+2) - 2 f(x+1) + f(x).
inline CharSurface alpha_drift(const FlowTable& table, const RVec& Y, std::size_t horizon) {
    require(horizon + 1 <= table.horizon, ErrorCode::HorizonExhausted, "alpha_drift: flow table too short");
    return CharSurface::tabulate(table.grid, horizon, [&](std::size_t g, std::size_t x) {
        if (g == table.grid->zero_index()) return Complex(0.0, 0.0);
        const auto& phi = table.phi[g];
        const auto& psi = table.psi[g];
        Complex a = -(phi[x + 2] - 2.0 * phi[x + 1] + phi[x]);
        for (std::size_t i = 0; i < Y.size(); ++i) a -= (psi[x + 2][i] - 2.0 * psi[x + 1][i] + psi[x][i]) * Y[i];
        return a;
    });
}

/// theta' = S_1 theta + alpha(Y) + sum_i sigma^i dY^i; `alpha_scale` exists
/// only to build deliberately inconsistent negative controls.
inline CharSurface update_surface(const CharSurface& theta, const FlowTable& table, const RVec& Y, const RVec& dY,
                                  double alpha_scale = 1.0) {
    require(theta.horizon() >= 2, ErrorCode::HorizonExhausted, "update_surface: horizon exhausted");
    const std::size_t H = theta.horizon() - 1;
    require(H + 1 <= table.horizon, ErrorCode::HorizonExhausted, "update_surface: flow table too short");
    return CharSurface::tabulate(
        theta.grid_ptr(), H,
        [&](std::size_t g, std::size_t x) {
            if (g == theta.grid().zero_index()) return Complex(0.0, 0.0);
            const auto& phi = table.phi[g];
            const auto& psi = table.psi[g];
            Complex alpha = -(phi[x + 2] - 2.0 * phi[x + 1] + phi[x]);
            Complex noise(0.0, 0.0);
            for (std::size_t i = 0; i < Y.size(); ++i) {
                alpha -= (psi[x + 2][i] - 2.0 * psi[x + 1][i] + psi[x][i]) * Y[i];
                noise += (psi[x + 1][i] - psi[x][i]) * dY[i];
            }
            return theta(g, x + 1) + alpha_scale * alpha + noise;
        },
        theta.time_stamp() + 1.0);
}

// ---------------------------------------------------------------------------
// State machine
// ---------------------------------------------------------------------------

struct CrcState {
    double t = 0.0;
    RVec Z;
    RVec Y;
    CharSurface theta;
    std::string family;
    ParamVec a;
    HullWhiteExtension ext;
};

/// Proposes the next parameter vector; admissibility is checked by the caller.
struct ParameterPolicy {
    std::string name = "constant";
    std::function<ParamVec(const CrcState&, rng::Stream&)> propose;
    int max_retries = 32;
};

inline ParameterPolicy constant_policy() {
    return ParameterPolicy{"constant", [](const CrcState& s, rng::Stream&) { return s.a; }, 0};
}

/// Switches between two parameter sets with probability `p_switch` per step.
inline ParameterPolicy two_state_policy(ParamVec first, ParamVec second, double p_switch, int max_retries = 32) {
    require(p_switch >= 0.0 && p_switch <= 1.0, ErrorCode::InvalidArgument, "two_state_policy: p_switch in [0,1]");
    return ParameterPolicy{
        "two_state",
        [first = std::move(first), second = std::move(second), p_switch](const CrcState& s, rng::Stream& rs) {
            const bool at_first = s.a == first;
            const ParamVec& other = at_first ? second : first;
            return rs.uniform() < p_switch ? other : s.a;
        },
        max_retries};
}

/// Gaussian random walk on the named parameters, projected onto [lower, upper].
inline ParameterPolicy random_walk_policy(ParamVec step_sd, ParamVec lower, ParamVec upper, int max_retries = 32) {
    return ParameterPolicy{"random_walk",
                           [step_sd = std::move(step_sd), lower = std::move(lower), upper = std::move(upper)](
                               const CrcState& s, rng::Stream& rs) {
                               ParamVec next = s.a;
                               for (const auto& [name, sd] : step_sd) {
                                   double v = param(next, name) + sd * rs.normal();
                                   v = std::max(v, param_or(lower, name, -INFINITY));
                                   v = std::min(v, param_or(upper, name, INFINITY));
                                   next[name] = v;
                               }
                               return next;
                           },
                           max_retries};
}

struct StepOptions {
    MembershipOptions membership;
    double alpha_scale = 1.0;  // 1 except in negative controls
};

struct StepOutcome {
    CrcState state;
    int rejected = 0;
    bool kept_current = false;
};

/// Initial CRC state on the model's own surface (theta == nullopt) or on a
/// given surface, which must admit a samplable witness.
inline CrcState make_initial_state(const AffineModel& model, FlowCache& cache, const RVec& Z0, const RVec& Y0,
                                   std::size_t horizon, const std::optional<CharSurface>& theta = std::nullopt) {
    require(model.mode() == ObservableMode::XBlock, ErrorCode::Unsupported,
            "CRC simulation needs a model with an observed X-block");
    require(Z0.size() == model.n() && Y0.size() == model.m(), ErrorCode::InvalidArgument,
            "make_initial_state: state dimensions do not match the model");
    const auto table = cache.get(model, horizon);
    CrcState s{0.0, Z0, Y0, affine_forward_surface(*table, Y0, horizon), model.family(), model.params(),
               HullWhiteExtension{model.family(), model.params(), Y0, ExtensionCumulant::zero(horizon), 0.0}};
    if (theta) {
        require(theta->horizon() == horizon, ErrorCode::InvalidArgument, "make_initial_state: horizon mismatch");
        auto ext = parametric_witness(model, *table, *theta, Y0);
        require(ext.has_value(), ErrorCode::AdmissibilityExhausted,
                "initial surface is not generated by a samplable extension of the model");
        s.theta = *theta;
        s.ext = std::move(*ext);
    }
    return s;
}

/// One period of the CRC model driven by the given streams.
inline StepOutcome crc_step(const CrcState& state, const ParameterPolicy& policy, FlowCache& cache,
                            rng::Stream& sampling, rng::Stream& auxiliary, rng::Stream& policy_stream,
                            const StepOptions& opt = {}) {
    require(state.theta.horizon() >= 2, ErrorCode::HorizonExhausted, "crc_step: surface horizon exhausted");
    require(state.ext.mu.parametric(), ErrorCode::Unsupported, "crc_step: witness extension is not samplable");
    const AffineModel model = make_model(state.family, state.a);
    const std::size_t H = state.theta.horizon();
    const auto table = cache.get(model, H);

    // (1) one step of the extended model; the extension increment acts on X_1.
    RVec Z = state.Z, Y = state.Y;
    model.step(Z, Y, sampling);
    const auto& law = state.ext.mu.shift_law();
    if (!law.c.empty()) {
        const double q0 = law.q.empty() ? 0.0 : law.q[0];
        Z[0] += law.c[0] + (q0 > 0.0 ? std::sqrt(q0) * auxiliary.normal() : 0.0);
    }
    RVec dY(Y.size());
    for (std::size_t i = 0; i < Y.size(); ++i) dY[i] = Y[i] - state.Y[i];

    // (2) surface update under the current parameters.
    CharSurface theta = update_surface(state.theta, *table, state.Y, dY, opt.alpha_scale);

    // (3) recalibration within J(Y', theta').
    StepOutcome out{CrcState{state.t + 1.0, std::move(Z), Y, theta, state.family, state.a,
                             HullWhiteExtension{state.family, state.a, Y, state.ext.mu.advanced(), state.t + 1.0}}};
    for (int attempt = 0; attempt < std::max(policy.max_retries, 1); ++attempt) {
        ParamVec candidate = policy.propose ? policy.propose(state, policy_stream) : state.a;
        if (candidate == state.a) break;  // the shifted witness stays valid
        try {
            const AffineModel cand = make_model(state.family, candidate);
            const auto ctable = cache.get(cand, H);
            if (auto ext = parametric_witness(cand, *ctable, theta, Y, opt.membership)) {
                out.state.a = std::move(candidate);
                out.state.ext = std::move(*ext);
                out.state.ext.start_time = out.state.t;
                return out;
            }
        } catch (const Error&) {
        }
        ++out.rejected;
    }
    out.kept_current = out.rejected > 0;
    return out;
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct PathRecord {
    RVec Z;                 // [step * n + i]
    RVec Y;                 // [step * m + i]
    RVec a;                 // [step * n_params + i], in ensemble.param_names order
    std::vector<CharSurface> snapshots;
    int rejections = 0;
    int fallbacks = 0;
    bool failed = false;
    std::size_t failed_at = 0;
    std::string failure;
};

struct PathEnsemble {
    std::uint64_t seed = 0;
    std::size_t n_steps = 0;
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<std::string> param_names;
    std::vector<PathRecord> paths;

    std::size_t n_failed() const {
        return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(), [](const auto& p) { return p.failed; }));
    }
    double Z(std::size_t path, std::size_t step, std::size_t i = 0) const { return paths[path].Z[step * n + i]; }
    double Y(std::size_t path, std::size_t step, std::size_t i = 0) const { return paths[path].Y[step * m + i]; }
};

struct SimulationOptions {
    std::size_t n_paths = 1;
    std::size_t n_steps = 0;
    std::uint64_t seed = 0;
    std::size_t snapshot_paths = 0;    // paths whose surfaces are recorded
    std::size_t snapshot_horizon = 0;  // maturities kept per snapshot (0: all)
    unsigned threads = 1;
    StepOptions step;
};

inline void simulate_one_path(const CrcState& initial, const ParameterPolicy& policy, FlowCache& cache,
                              const SimulationOptions& opt, std::size_t path, PathRecord& rec,
                              const std::vector<std::string>& names) {
    auto record = [&](const CrcState& s) {
        rec.Z.insert(rec.Z.end(), s.Z.begin(), s.Z.end());
        rec.Y.insert(rec.Y.end(), s.Y.begin(), s.Y.end());
        for (const auto& name : names) rec.a.push_back(param(s.a, name));
        if (path < opt.snapshot_paths) {
            const std::size_t h = opt.snapshot_horizon == 0 ? s.theta.horizon()
                                                            : std::min(opt.snapshot_horizon, s.theta.horizon());
            rec.snapshots.push_back(s.theta.truncated(h));
        }
    };
    CrcState state = initial;
    record(state);
    for (std::size_t step = 0; step < opt.n_steps; ++step) {
        try {
            rng::Stream sampling(opt.seed, path, step, rng::Purpose::Sampling);
            rng::Stream aux(opt.seed, path, step, rng::Purpose::Auxiliary);
            rng::Stream pol(opt.seed, path, step, rng::Purpose::Policy);
            auto out = crc_step(state, policy, cache, sampling, aux, pol, opt.step);
            rec.rejections += out.rejected;
            rec.fallbacks += out.kept_current ? 1 : 0;
            state = std::move(out.state);
        } catch (const Error& e) {
            rec.failed = true;
            rec.failed_at = step;
            rec.failure = e.what();
            return;
        }
        record(state);
    }
}

/// Independent CRC trajectories; path p draws only from streams keyed by
/// (seed, p, step), so results do not depend on the thread count.
inline PathEnsemble simulate_paths(const CrcState& initial, const ParameterPolicy& policy, FlowCache& cache,
                                   const SimulationOptions& opt) {
    require(initial.theta.horizon() >= opt.n_steps + 1, ErrorCode::HorizonExhausted,
            "simulate_paths: surface horizon must be at least n_steps + 1");
    PathEnsemble ens;
    ens.seed = opt.seed;
    ens.n_steps = opt.n_steps;
    ens.n = initial.Z.size();
    ens.m = initial.Y.size();
    for (const auto& [k, v] : initial.a) ens.param_names.push_back(k);
    ens.paths.resize(opt.n_paths);
    // Warm the cache so workers only read.
    cache.get(make_model(initial.family, initial.a), initial.theta.horizon());
    const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(opt.n_paths)));
    auto work = [&](unsigned w) {
        for (std::size_t p = w; p < opt.n_paths; p += threads) {
            simulate_one_path(initial, policy, cache, opt, p, ens.paths[p], ens.param_names);
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
    }
    return ens;
}

}  // namespace crcterm
